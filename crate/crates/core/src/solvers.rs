//! Critic argmin, the multiplicative-weights actor, and the full actor-critic
//! loops (A-Crab, its robust-policy-improvement variant, and ATAC).

use std::io::Write;

use rayon::prelude::*;

use crate::classes::{ValueClass, WeightClass};
use crate::data::OfflineDataset;
use crate::error::{Error, Result};
use crate::mdp::{compute_occupancy, j_value, mixture_j_value, Policy, TabularMdp, Table};
use crate::objectives::{
    e_emp, e_emp_atac, e_emp_rpi, l_emp, CriticObjectiveSpec, ObjectiveBreakdown, RegularizerKind,
};

/// Classes at least this large are scored on the rayon pool.
const PARALLEL_CRITIC_MIN: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepSize {
    /// `sqrt(ln |A| / K) / V_max`.
    Auto,
    Fixed(f64),
}

/// How the actor picks the next policy.
#[derive(Debug, Clone, PartialEq)]
pub enum ActorMode {
    /// `K` multiplicative-weights steps from the uniform policy.
    Npg,
    /// One best response over an explicit finite policy class: each candidate
    /// gets its own critic, the candidate with the largest `L_D(pi, f^pi)` wins.
    BestResponse(Vec<Policy>),
}

impl ActorMode {
    pub fn name(&self) -> &'static str {
        match self {
            ActorMode::Npg => "npg",
            ActorMode::BestResponse(_) => "best-response",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    pub beta: f64,
    pub k_iters: usize,
    pub eta: StepSize,
    pub regularizer: RegularizerKind,
    pub seed: u64,
    pub actor: ActorMode,
}

impl SolverConfig {
    pub fn new(regularizer: RegularizerKind) -> Self {
        SolverConfig {
            beta: 2.0,
            k_iters: 500,
            eta: StepSize::Auto,
            regularizer,
            seed: 0,
            actor: ActorMode::Npg,
        }
    }

    pub fn with_beta(mut self, beta: f64) -> Self {
        self.beta = beta;
        self
    }

    pub fn with_k(mut self, k: usize) -> Self {
        self.k_iters = k;
        self
    }

    pub fn with_eta(mut self, eta: StepSize) -> Self {
        self.eta = eta;
        self
    }

    pub fn with_actor(mut self, actor: ActorMode) -> Self {
        self.actor = actor;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    fn validate(&self) -> Result<()> {
        CriticObjectiveSpec::new(self.beta, self.regularizer)?;
        if self.k_iters == 0 {
            return Err(Error::Config("k_iters must be at least 1".into()));
        }
        if let StepSize::Fixed(eta) = self.eta {
            if !(eta > 0.0 && eta.is_finite()) {
                return Err(Error::Config(format!("eta must be positive, got {eta}")));
            }
        }
        if let ActorMode::BestResponse(ps) = &self.actor {
            if ps.is_empty() {
                return Err(Error::Config("best-response policy class is empty".into()));
            }
        }
        Ok(())
    }

    pub fn resolved_eta(&self, n_actions: usize, v_max: f64) -> f64 {
        match self.eta {
            StepSize::Fixed(eta) => eta,
            StepSize::Auto => ((n_actions as f64).ln() / self.k_iters as f64).sqrt() / v_max,
        }
    }
}

/// Scores one critic candidate under `spec`.
pub fn critic_objective(
    dataset: &OfflineDataset,
    pi: &Policy,
    f: &Table,
    f_class: &ValueClass,
    w_class: Option<&WeightClass>,
    spec: CriticObjectiveSpec,
) -> Result<ObjectiveBreakdown> {
    let l = l_emp(dataset, pi, f)?;
    let (e, w_idx) = match spec.regularizer {
        RegularizerKind::WeightedAvgBellman => {
            let w = w_class.ok_or(Error::Config("weighted regularizer needs a weight class".into()))?;
            let (e, i) = e_emp(dataset, pi, f, w)?;
            (e, Some(i))
        }
        RegularizerKind::RpiAvgBellman => (e_emp_rpi(dataset, pi, f)?, None),
        RegularizerKind::AtacSquared => (e_emp_atac(dataset, pi, f, f_class)?, None),
    };
    Ok(ObjectiveBreakdown::new(l, e, w_idx, spec.beta))
}

/// `argmin_{f ∈ F} L_D(pi, f) + β E_D(pi, f)`, lowest index on ties.
///
/// Candidates may be scored concurrently; the reduction always runs in index
/// order, so the result does not depend on scheduling.
pub fn critic_step(
    dataset: &OfflineDataset,
    pi: &Policy,
    f_class: &ValueClass,
    w_class: Option<&WeightClass>,
    spec: CriticObjectiveSpec,
) -> Result<(usize, ObjectiveBreakdown)> {
    if f_class.is_empty() {
        return Err(Error::Empty("value class"));
    }
    let score = |f: &Table| critic_objective(dataset, pi, f, f_class, w_class, spec);
    let scores: Vec<ObjectiveBreakdown> = if f_class.len() >= PARALLEL_CRITIC_MIN {
        f_class.members().par_iter().map(score).collect::<Result<_>>()?
    } else {
        f_class.members().iter().map(score).collect::<Result<_>>()?
    };
    let mut best = 0;
    for (i, b) in scores.iter().enumerate().skip(1) {
        if b.total < scores[best].total {
            best = i;
        }
    }
    Ok((best, scores[best]))
}

/// `pi'(a|s) ∝ pi(a|s) exp(η f(s, a))`, normalized per state.
///
/// The per-state maximum of `η f` is subtracted before exponentiating.
/// Entries are floored at the smallest positive normal so no action is ever
/// removed from the support.
pub fn npg_update(pi: &Policy, f: &Table, eta: f64) -> Policy {
    let (ns, na) = pi.shape();
    let mut out = Table::zeros(ns, na);
    for s in 0..ns {
        let shift = (0..na).map(|a| eta * f[(s, a)]).fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for a in 0..na {
            let x = (pi.prob(s, a) * (eta * f[(s, a)] - shift).exp()).max(f64::MIN_POSITIVE);
            out[(s, a)] = x;
            total += x;
        }
        for a in 0..na {
            out[(s, a)] /= total;
        }
    }
    Policy::from_table_unchecked(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    pub critic_idx: usize,
    pub breakdown: ObjectiveBreakdown,
    /// The actor's policy `pi_k` that the critic responded to.
    pub policy: Policy,
    /// The critic table `f_k`.
    pub critic: Table,
}

/// Per-candidate result of a best-response actor step.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateScore {
    pub critic_idx: usize,
    pub breakdown: ObjectiveBreakdown,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub regularizer: RegularizerKind,
    pub actor: &'static str,
    pub beta: f64,
    pub eta: f64,
    pub iterations: Vec<IterationRecord>,
    /// Best-response mode only: the score of every candidate and the winner.
    pub candidates: Option<(Vec<CandidateScore>, usize)>,
}

impl RunRecord {
    /// The iterates; the output policy is their uniform mixture.
    pub fn mixture(&self) -> Vec<Policy> {
        self.iterations.iter().map(|it| it.policy.clone()).collect()
    }

    pub fn mixture_j(&self, mdp: &TabularMdp) -> Result<f64> {
        mixture_j_value(mdp, &self.mixture())
    }

    /// Index of the chosen candidate in best-response mode.
    pub fn chosen(&self) -> Option<usize> {
        self.candidates.as_ref().map(|(_, c)| *c)
    }

    /// `iter,critic_idx,l_emp,e_emp,j_iterate`.
    pub fn write_trace_csv<W: Write>(&self, mdp: &TabularMdp, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["iter", "critic_idx", "l_emp", "e_emp", "j_iterate"])?;
        for (k, it) in self.iterations.iter().enumerate() {
            wtr.write_record([
                (k + 1).to_string(),
                it.critic_idx.to_string(),
                it.breakdown.l_value.to_string(),
                it.breakdown.e_value.to_string(),
                j_value(mdp, &it.policy)?.to_string(),
            ])?;
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn summary_line(&self, mdp: &TabularMdp) -> Result<String> {
        Ok(format!(
            "algo={} actor={} beta={} eta={} k={} j_mixture={}",
            self.regularizer.name(),
            self.actor,
            self.beta,
            self.eta,
            self.iterations.len(),
            self.mixture_j(mdp)?
        ))
    }
}

fn run_loop(
    dataset: &OfflineDataset,
    f_class: &ValueClass,
    w_class: Option<&WeightClass>,
    config: &SolverConfig,
) -> Result<RunRecord> {
    config.validate()?;
    let spec = CriticObjectiveSpec::new(config.beta, config.regularizer)?;
    let (ns, na) = dataset.summary().shape();
    let eta = config.resolved_eta(na, f_class.v_max());

    if let ActorMode::BestResponse(candidates) = &config.actor {
        let mut scores = Vec::with_capacity(candidates.len());
        for pi in candidates {
            let (idx, b) = critic_step(dataset, pi, f_class, w_class, spec)?;
            scores.push(CandidateScore {
                critic_idx: idx,
                breakdown: b,
            });
        }
        let mut chosen = 0;
        for (i, c) in scores.iter().enumerate().skip(1) {
            if c.breakdown.l_value > scores[chosen].breakdown.l_value {
                chosen = i;
            }
        }
        let it = IterationRecord {
            critic_idx: scores[chosen].critic_idx,
            breakdown: scores[chosen].breakdown,
            policy: candidates[chosen].clone(),
            critic: f_class.members()[scores[chosen].critic_idx].clone(),
        };
        return Ok(RunRecord {
            regularizer: config.regularizer,
            actor: config.actor.name(),
            beta: config.beta,
            eta,
            iterations: vec![it],
            candidates: Some((scores, chosen)),
        });
    }

    let mut pi = Policy::uniform(ns, na);
    let mut iterations = Vec::with_capacity(config.k_iters);
    for _ in 0..config.k_iters {
        let (idx, b) = critic_step(dataset, &pi, f_class, w_class, spec)?;
        let f = &f_class.members()[idx];
        let next = npg_update(&pi, f, eta);
        iterations.push(IterationRecord {
            critic_idx: idx,
            breakdown: b,
            policy: pi,
            critic: f.clone(),
        });
        pi = next;
    }
    Ok(RunRecord {
        regularizer: config.regularizer,
        actor: config.actor.name(),
        beta: config.beta,
        eta,
        iterations,
        candidates: None,
    })
}

fn expect_kind(config: &SolverConfig, kind: RegularizerKind) -> Result<()> {
    if config.regularizer != kind {
        return Err(Error::Config(format!(
            "expected regularizer {}, got {}",
            kind.name(),
            config.regularizer.name()
        )));
    }
    Ok(())
}

/// A-Crab: critic regularized by the weighted average Bellman error.
pub fn run_acrab(
    dataset: &OfflineDataset,
    f_class: &ValueClass,
    w_class: &WeightClass,
    config: &SolverConfig,
) -> Result<RunRecord> {
    expect_kind(config, RegularizerKind::WeightedAvgBellman)?;
    run_loop(dataset, f_class, Some(w_class), config)
}

/// A-Crab without a weight class: the regularizer is the absolute average TD
/// error.
pub fn run_acrab_rpi(dataset: &OfflineDataset, f_class: &ValueClass, config: &SolverConfig) -> Result<RunRecord> {
    expect_kind(config, RegularizerKind::RpiAvgBellman)?;
    run_loop(dataset, f_class, None, config)
}

/// ATAC baseline: squared Bellman error with the subtracted minimum.
pub fn run_atac(dataset: &OfflineDataset, f_class: &ValueClass, config: &SolverConfig) -> Result<RunRecord> {
    expect_kind(config, RegularizerKind::AtacSquared)?;
    run_loop(dataset, f_class, None, config)
}

/// Dispatches on `config.regularizer`.
pub fn run_algorithm(
    dataset: &OfflineDataset,
    f_class: &ValueClass,
    w_class: &WeightClass,
    config: &SolverConfig,
) -> Result<RunRecord> {
    match config.regularizer {
        RegularizerKind::WeightedAvgBellman => run_acrab(dataset, f_class, w_class, config),
        RegularizerKind::RpiAvgBellman => run_acrab_rpi(dataset, f_class, config),
        RegularizerKind::AtacSquared => run_atac(dataset, f_class, config),
    }
}

/// Average regret of the actor against `comparator`:
/// `(1/K) Σ_k E_{d^comparator}[f_k(s, comparator) - f_k(s, pi_k)]`.
pub fn measure_regret(trace: &RunRecord, comparator: &Policy, mdp: &TabularMdp) -> Result<f64> {
    if trace.iterations.is_empty() {
        return Err(Error::Empty("trace"));
    }
    let d = compute_occupancy(mdp, comparator)?.state_marginal();
    let mut total = 0.0;
    for it in &trace.iterations {
        let gap = comparator.state_values(&it.critic) - it.policy.state_values(&it.critic);
        total += d.dot(&gap);
    }
    Ok(total / trace.iterations.len() as f64)
}
