//! The two-arm counterexample: squared-Bellman pessimism with `β = N^{2/3}`
//! picks the worse arm when the noisy arm's empirical mean comes out high.

use std::io::Write;

use rand::Rng;
use rand_distr::{Binomial, Distribution};

use crate::data::{stream_rng, OfflineDataset, Transition};
use crate::error::{Error, Result};
use crate::mdp::Policy;
use crate::objectives::{atac_squared_term, l_emp, RegularizerKind};
use crate::solvers::{critic_step, run_algorithm, ActorMode, SolverConfig};
use crate::objectives::CriticObjectiveSpec;

use super::instance_file::InstanceFile;
use super::instances::{build_appendix_d_instance, CounterexampleParams};
use super::stats::mean;
use super::sweep::{atac_beta, run_jobs, run_rate_experiment, Family, RateConfig, SlopeFit, SweepResult};

/// `r̂(a2) ≥ 1/2 + 2Δ`; false when arm 2 never appears.
pub fn event_holds(ds: &OfflineDataset, delta: f64) -> bool {
    ds.summary().mean_reward(0, 1).is_some_and(|r| r >= 0.5 + 2.0 * delta)
}

/// Smallest count `k` of unit rewards among `n2` pulls with `k/n2 ≥ 1/2 + 2Δ`.
fn event_threshold(n2: usize, delta: f64) -> Option<usize> {
    (0..=n2).find(|&k| k as f64 / n2 as f64 >= 0.5 + 2.0 * delta)
}

/// Draws a dataset conditioned on the event. Arm counts are Binomial(n, μ(a2))
/// (or the rounded expectation with `exact_action_freq`); given the arm-2 count
/// `n2`, the number of unit rewards is Binomial(n2, 1/2) truncated to the
/// event region. Errors when the event is impossible for the drawn `n2`.
pub fn sample_conditioned(
    inst: &InstanceFile,
    params: &CounterexampleParams,
    seed: u64,
    exact_action_freq: bool,
) -> Result<OfflineDataset> {
    let mut rng = stream_rng(seed, 7);
    let n = params.n;
    let n2 = if exact_action_freq {
        (n as f64 * params.mu_a2).round() as usize
    } else {
        Binomial::new(n as u64, params.mu_a2)
            .map_err(|e| Error::Config(e.to_string()))?
            .sample(&mut rng) as usize
    };
    let k0 = (n2 > 0)
        .then(|| event_threshold(n2, params.delta))
        .flatten()
        .ok_or_else(|| Error::Config(format!("event impossible with {n2} pulls of arm 2")))?;
    // Binomial(n2, 1/2) weights on k0..=n2, built by the pmf ratio
    // p(k+1)/p(k) = (n2-k)/(k+1) and rescaled to avoid underflow.
    let mut w = vec![1.0f64];
    for k in k0..n2 {
        let next = w[w.len() - 1] * (n2 - k) as f64 / (k + 1) as f64;
        w.push(next);
    }
    let total: f64 = w.iter().sum();
    let u = rng.random::<f64>() * total;
    let mut acc = 0.0;
    let mut ones = n2;
    for (i, wi) in w.iter().enumerate() {
        acc += wi;
        if u < acc {
            ones = k0 + i;
            break;
        }
    }
    let r1 = inst.mdp.reward_mean()[(0, 0)];
    let mut tuples = Vec::with_capacity(n);
    tuples.extend((0..n - n2).map(|_| Transition { s: 0, a: 0, r: r1, s_next: 0 }));
    tuples.extend((0..ones).map(|_| Transition { s: 0, a: 1, r: 1.0, s_next: 0 }));
    tuples.extend((0..n2 - ones).map(|_| Transition { s: 0, a: 1, r: 0.0, s_next: 0 }));
    OfflineDataset::from_tuples(&inst.mdp, tuples, seed, "conditioned")
}

/// The four comparisons behind the reversal, evaluated on one dataset with
/// the empirical arm-2 frequency `p̂` in place of `μ(a2)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReversalChecks {
    /// `β E_D(π1, f2) ≤ β p̂ (1/4 - 4Δ²)`.
    pub squared_error_bound: bool,
    /// `L_D(π2, f1) + β E_D(π2, f1) > L_D(π2, f2) + β E_D(π2, f2)`.
    pub f2_wins_for_pi2: bool,
    /// `L_D(π2, f2) > Δ/2`.
    pub pi2_value_exceeds_half_delta: bool,
    /// `Δ/2 ≥ |L_D(π1, f^{π1})|`.
    pub half_delta_dominates_pi1: bool,
}

impl ReversalChecks {
    pub fn all(&self) -> bool {
        self.squared_error_bound
            && self.f2_wins_for_pi2
            && self.pi2_value_exceeds_half_delta
            && self.half_delta_dominates_pi1
    }
}

pub fn reversal_checks(inst: &InstanceFile, ds: &OfflineDataset, params: &CounterexampleParams) -> Result<ReversalChecks> {
    let (f1, f2) = (&inst.f_class.members()[0], &inst.f_class.members()[1]);
    let pi1 = Policy::deterministic(&[0], 2)?;
    let pi2 = Policy::deterministic(&[1], 2)?;
    let (beta, delta) = (params.beta, params.delta);
    let p_hat = ds.summary().count(0, 1) / ds.n() as f64;
    let sq = |pi: &Policy, f| atac_squared_term(ds, pi, f, f);
    let slack = 1e-12;
    let squared_error_bound = beta * sq(&pi1, f2)? <= beta * p_hat * (0.25 - 4.0 * delta * delta) + slack;
    let obj1 = l_emp(ds, &pi2, f1)? + beta * sq(&pi2, f1)?;
    let obj2 = l_emp(ds, &pi2, f2)? + beta * sq(&pi2, f2)?;
    let spec = CriticObjectiveSpec::new(beta, RegularizerKind::AtacSquared)?;
    let (idx1, _) = critic_step(ds, &pi1, &inst.f_class, None, spec)?;
    Ok(ReversalChecks {
        squared_error_bound,
        f2_wins_for_pi2: obj1 > obj2,
        pi2_value_exceeds_half_delta: l_emp(ds, &pi2, f2)? > delta / 2.0,
        half_delta_dominates_pi1: delta / 2.0 >= l_emp(ds, &pi1, &inst.f_class.members()[idx1])?.abs(),
    })
}

/// One row of the counterexample report.
#[derive(Debug, Clone, PartialEq)]
pub struct CounterexampleRow {
    pub n: usize,
    pub beta: f64,
    pub delta: f64,
    pub mu_a2: f64,
    pub seeds: usize,
    pub event_freq: f64,
    /// ATAC's rate of choosing π2 among seeds where the event holds (NaN
    /// when it never holds).
    pub atac_pi2_given_event: f64,
    pub atac_pi2_rate: f64,
    pub atac_mean_subopt: f64,
    pub acrab_pi1_rate: f64,
    pub acrab_mean_subopt: f64,
    pub conditioned_seeds: usize,
    pub conditioned_atac_pi2_rate: f64,
    pub conditioned_checks_rate: f64,
    pub conditioned_acrab_pi2_rate: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CounterexampleReport {
    pub exact_action_freq: bool,
    pub rows: Vec<CounterexampleRow>,
    pub atac_fit: SlopeFit,
    pub acrab_fit: SlopeFit,
    pub sweep: SweepResult,
}

pub const REPORT_HEADER: [&str; 17] = [
    "n",
    "beta",
    "delta",
    "mu_a2",
    "seeds",
    "event_freq",
    "atac_pi2_given_event",
    "atac_pi2_rate",
    "atac_mean_subopt",
    "acrab_pi1_rate",
    "acrab_mean_subopt",
    "conditioned_seeds",
    "conditioned_atac_pi2_rate",
    "conditioned_checks_rate",
    "conditioned_acrab_pi2_rate",
    "atac_slope",
    "acrab_slope",
];

fn fit_text(f: &SlopeFit) -> String {
    match &f.fit {
        Ok((s, _)) => s.to_string(),
        Err(_) => "undefined".to_string(),
    }
}

impl CounterexampleReport {
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(REPORT_HEADER)?;
        for r in &self.rows {
            wtr.write_record([
                r.n.to_string(),
                r.beta.to_string(),
                r.delta.to_string(),
                r.mu_a2.to_string(),
                r.seeds.to_string(),
                r.event_freq.to_string(),
                r.atac_pi2_given_event.to_string(),
                r.atac_pi2_rate.to_string(),
                r.atac_mean_subopt.to_string(),
                r.acrab_pi1_rate.to_string(),
                r.acrab_mean_subopt.to_string(),
                r.conditioned_seeds.to_string(),
                r.conditioned_atac_pi2_rate.to_string(),
                r.conditioned_checks_rate.to_string(),
                r.conditioned_acrab_pi2_rate.to_string(),
                fit_text(&self.atac_fit),
                fit_text(&self.acrab_fit),
            ])?;
        }
        wtr.flush()?;
        Ok(())
    }
}

fn rate(hits: usize, total: usize) -> f64 {
    if total == 0 {
        f64::NAN
    } else {
        hits as f64 / total as f64
    }
}

/// Plain-sampling sweep over `n_grid` for ATAC (`β = N^{2/3}`) and A-Crab
/// (`β = 2`) on paired datasets, plus `conditioned_seeds` extra datasets per
/// N drawn inside the event.
pub fn run_counterexample(
    n_grid: &[usize],
    seeds: usize,
    conditioned_seeds: usize,
    exact_action_freq: bool,
) -> Result<CounterexampleReport> {
    let family = Family::Counterexample { exact_action_freq };
    let algos = [RegularizerKind::AtacSquared, RegularizerKind::WeightedAvgBellman];
    let sweep = run_rate_experiment(&family, &algos, n_grid, seeds, &RateConfig::default())?;
    let mut rows = Vec::new();
    for &n in n_grid {
        let params = CounterexampleParams::new(n, atac_beta(n))?;
        let inst = build_appendix_d_instance(n, params.beta)?;
        let atac: Vec<_> = sweep.cells_for(algos[0]).filter(|c| c.n == n).collect();
        let acrab: Vec<_> = sweep.cells_for(algos[1]).filter(|c| c.n == n).collect();
        let events = atac.iter().filter(|c| c.cond_event == Some(true)).count();
        let pi2_on_event = atac
            .iter()
            .filter(|c| c.cond_event == Some(true) && c.chose_idx == Some(1))
            .count();

        let jobs: Vec<u64> = (0..conditioned_seeds as u64).map(|s| 1_000_000 + s).collect();
        let cond = run_jobs(
            &jobs,
            |s| format!("counterexample conditioned n={n} seed={s}"),
            |&seed| {
                let ds = sample_conditioned(&inst, &params, seed, exact_action_freq)?;
                let checks = reversal_checks(&inst, &ds, &params)?;
                let actor = ActorMode::BestResponse(inst.audit.members().to_vec());
                let atac_cfg = SolverConfig::new(RegularizerKind::AtacSquared)
                    .with_beta(params.beta)
                    .with_actor(actor.clone());
                let acrab_cfg = SolverConfig::new(RegularizerKind::WeightedAvgBellman).with_actor(actor);
                let a = run_algorithm(&ds, &inst.f_class, &inst.w_class, &atac_cfg)?.chosen();
                let b = run_algorithm(&ds, &inst.f_class, &inst.w_class, &acrab_cfg)?.chosen();
                Ok((a == Some(1), checks.all(), b == Some(1)))
            },
        )?;
        rows.push(CounterexampleRow {
            n,
            beta: params.beta,
            delta: params.delta,
            mu_a2: params.mu_a2,
            seeds,
            event_freq: rate(events, atac.len()),
            atac_pi2_given_event: rate(pi2_on_event, events),
            atac_pi2_rate: rate(atac.iter().filter(|c| c.chose_idx == Some(1)).count(), atac.len()),
            atac_mean_subopt: mean(&atac.iter().map(|c| c.subopt).collect::<Vec<_>>()),
            acrab_pi1_rate: rate(acrab.iter().filter(|c| c.chose_idx == Some(0)).count(), acrab.len()),
            acrab_mean_subopt: mean(&acrab.iter().map(|c| c.subopt).collect::<Vec<_>>()),
            conditioned_seeds,
            conditioned_atac_pi2_rate: rate(cond.iter().filter(|c| c.0).count(), cond.len()),
            conditioned_checks_rate: rate(cond.iter().filter(|c| c.1).count(), cond.len()),
            conditioned_acrab_pi2_rate: rate(cond.iter().filter(|c| c.2).count(), cond.len()),
        });
    }
    let fit_for = |algo| {
        sweep
            .fits
            .iter()
            .find(|f| f.algo == algo)
            .cloned()
            .ok_or(Error::Empty("slope fit"))
    };
    Ok(CounterexampleReport {
        exact_action_freq,
        rows,
        atac_fit: fit_for(algos[0])?,
        acrab_fit: fit_for(algos[1])?,
        sweep,
    })
}
