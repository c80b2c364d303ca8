//! Sweep drivers: rate scaling over N and robustness over β.

use std::collections::BTreeMap;
use std::io::Write;
use std::time::Instant;

use rayon::prelude::*;

use crate::data::{sample_dataset, sample_dataset_stratified, OfflineDataset};
use crate::error::{Error, Result};
use crate::mdp::j_value;
use crate::objectives::RegularizerKind;
use crate::solvers::{run_algorithm, ActorMode, SolverConfig, StepSize};

use super::instance_file::InstanceFile;
use super::instances::{build_appendix_d_instance, CounterexampleParams};
use super::stats::{fit_loglog_slope, mean};

pub const SWEEP_HEADER: [&str; 9] = [
    "family", "algo", "beta", "n", "seed", "subopt", "chose_idx", "cond_event", "runtime_ms",
];

/// One sweep cell.
#[derive(Debug, Clone, PartialEq)]
pub struct CellResult {
    pub family: String,
    pub algo: RegularizerKind,
    pub beta: f64,
    pub n: usize,
    pub seed: u64,
    pub subopt: f64,
    pub chose_idx: Option<usize>,
    pub cond_event: Option<bool>,
    pub runtime_ms: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SlopeFit {
    pub algo: RegularizerKind,
    pub points: Vec<(f64, f64)>,
    /// `Err` text when the fit is undefined (e.g. a zero mean).
    pub fit: std::result::Result<(f64, f64), String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub cells: Vec<CellResult>,
    pub fits: Vec<SlopeFit>,
}

impl SweepResult {
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(SWEEP_HEADER)?;
        for c in &self.cells {
            wtr.write_record([
                c.family.clone(),
                c.algo.name().to_string(),
                c.beta.to_string(),
                c.n.to_string(),
                c.seed.to_string(),
                c.subopt.to_string(),
                c.chose_idx.map_or(String::new(), |i| i.to_string()),
                c.cond_event.map_or(String::new(), |b| b.to_string()),
                format!("{:.3}", c.runtime_ms),
            ])?;
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn cells_for(&self, algo: RegularizerKind) -> impl Iterator<Item = &CellResult> {
        self.cells.iter().filter(move |c| c.algo == algo)
    }

    /// Mean suboptimality per N for one algorithm, ascending in N.
    pub fn means_by_n(&self, algo: RegularizerKind) -> Vec<(f64, f64)> {
        let mut groups: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
        for c in self.cells_for(algo) {
            groups.entry(c.n).or_default().push(c.subopt);
        }
        groups.into_iter().map(|(n, v)| (n as f64, mean(&v))).collect()
    }
}

/// Worker count: `ACRAB_THREADS` if set to a positive integer, otherwise the
/// available parallelism.
pub fn worker_count() -> usize {
    std::env::var("ACRAB_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

/// Runs independent jobs on a pool capped by [`worker_count`]; results come
/// back in job order. The first failing job (lowest index) is reported with
/// its label.
pub fn run_jobs<J, T, F>(jobs: &[J], label: impl Fn(&J) -> String + Sync, f: F) -> Result<Vec<T>>
where
    J: Sync,
    T: Send,
    F: Fn(&J) -> Result<T> + Sync,
{
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(worker_count())
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    let out: Vec<Result<T>> = pool.install(|| jobs.par_iter().map(&f).collect());
    out.into_iter()
        .zip(jobs)
        .map(|(r, j)| {
            r.map_err(|e| Error::Cell {
                cell: label(j),
                source: Box::new(e),
            })
        })
        .collect()
}

/// Where instances and datasets for a rate sweep come from.
#[derive(Debug, Clone, PartialEq)]
pub enum Family {
    /// The two-arm counterexample; the instance is rebuilt per N with
    /// `β = N^{2/3}` and the actor is a best response over its two policies.
    Counterexample { exact_action_freq: bool },
    /// A fixed instance, NPG actor.
    Fixed { name: String, instance: Box<InstanceFile> },
}

impl Family {
    pub fn name(&self) -> &str {
        match self {
            Family::Counterexample { .. } => "counterexample",
            Family::Fixed { name, .. } => name,
        }
    }

    pub fn instance_for(&self, n: usize) -> Result<InstanceFile> {
        match self {
            Family::Counterexample { .. } => build_appendix_d_instance(n, atac_beta(n)),
            Family::Fixed { instance, .. } => Ok((**instance).clone()),
        }
    }

    pub fn dataset(&self, inst: &InstanceFile, n: usize, seed: u64) -> Result<OfflineDataset> {
        match self {
            Family::Counterexample { exact_action_freq: true } => {
                sample_dataset_stratified(&inst.mdp, &inst.behavior, n, seed)
            }
            _ => sample_dataset(&inst.mdp, &inst.behavior, n, seed),
        }
    }

    fn actor(&self, inst: &InstanceFile) -> ActorMode {
        match self {
            Family::Counterexample { .. } => ActorMode::BestResponse(inst.audit.members().to_vec()),
            Family::Fixed { .. } => ActorMode::Npg,
        }
    }

    /// The conditioning event `r̂(a2) ≥ 1/2 + 2Δ`, for the counterexample only.
    fn event(&self, ds: &OfflineDataset, n: usize) -> Result<Option<bool>> {
        match self {
            Family::Counterexample { .. } => {
                let p = CounterexampleParams::new(n, atac_beta(n))?;
                Ok(Some(super::counterexample::event_holds(ds, p.delta)))
            }
            Family::Fixed { .. } => Ok(None),
        }
    }
}

/// ATAC's tuned `β = N^{2/3}`.
pub fn atac_beta(n: usize) -> f64 {
    (n as f64).powf(2.0 / 3.0)
}

/// Solver settings shared by every cell of a rate sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct RateConfig {
    pub k_iters: usize,
    pub eta: StepSize,
    pub acrab_beta: f64,
}

impl Default for RateConfig {
    fn default() -> Self {
        RateConfig {
            k_iters: 500,
            eta: StepSize::Auto,
            acrab_beta: 2.0,
        }
    }
}

fn check_grid(n_grid: &[usize]) -> Result<()> {
    let lo = n_grid.iter().copied().min().unwrap_or(0);
    let hi = n_grid.iter().copied().max().unwrap_or(0);
    let distinct: std::collections::BTreeSet<_> = n_grid.iter().collect();
    if distinct.len() < 3 || lo == 0 || (hi as f64) < 100.0 * lo as f64 {
        return Err(Error::Config(format!(
            "n grid needs at least 3 distinct sizes spanning two decades, got {n_grid:?}"
        )));
    }
    Ok(())
}

/// For each (N, seed) draws one dataset shared by all algorithms, runs each
/// algorithm and records `J(target) - J(output)`. A-Crab uses the configured
/// β, ATAC uses `N^{2/3}`; the robust variant reuses A-Crab's β.
pub fn run_rate_experiment(
    family: &Family,
    algorithms: &[RegularizerKind],
    n_grid: &[usize],
    seeds: usize,
    config: &RateConfig,
) -> Result<SweepResult> {
    check_grid(n_grid)?;
    if algorithms.is_empty() || seeds == 0 {
        return Err(Error::Config("need at least one algorithm and one seed".into()));
    }
    let instances: Vec<(usize, InstanceFile, f64)> = n_grid
        .iter()
        .map(|&n| {
            let inst = family.instance_for(n)?;
            let j_target = j_value(&inst.mdp, &inst.target)?;
            Ok((n, inst, j_target))
        })
        .collect::<Result<_>>()?;
    let jobs: Vec<(usize, u64)> = (0..instances.len())
        .flat_map(|i| (0..seeds as u64).map(move |s| (i, s)))
        .collect();
    let name = family.name().to_string();
    let per_job = run_jobs(
        &jobs,
        |&(i, s)| format!("{name} n={} seed={s}", instances[i].0),
        |&(i, seed)| {
            let (n, inst, j_target) = &instances[i];
            let ds = family.dataset(inst, *n, seed)?;
            let event = family.event(&ds, *n)?;
            let mut out = Vec::with_capacity(algorithms.len());
            for &algo in algorithms {
                let beta = match algo {
                    RegularizerKind::AtacSquared => atac_beta(*n),
                    _ => config.acrab_beta,
                };
                let cfg = SolverConfig::new(algo)
                    .with_beta(beta)
                    .with_k(config.k_iters)
                    .with_eta(config.eta)
                    .with_seed(seed)
                    .with_actor(family.actor(inst));
                let start = Instant::now();
                let rec = run_algorithm(&ds, &inst.f_class, &inst.w_class, &cfg)?;
                let subopt = j_target - rec.mixture_j(&inst.mdp)?;
                out.push(CellResult {
                    family: name.clone(),
                    algo,
                    beta,
                    n: *n,
                    seed,
                    subopt,
                    chose_idx: rec.chosen(),
                    cond_event: event,
                    runtime_ms: start.elapsed().as_secs_f64() * 1e3,
                });
            }
            Ok(out)
        },
    )?;
    let cells: Vec<CellResult> = per_job.into_iter().flatten().collect();
    let mut result = SweepResult { cells, fits: Vec::new() };
    result.fits = algorithms
        .iter()
        .map(|&algo| {
            let points = result.means_by_n(algo);
            let fit = fit_loglog_slope(&points).map_err(|e| e.to_string());
            SlopeFit { algo, points, fit }
        })
        .collect();
    Ok(result)
}

/// Per-(algorithm, β) summary of `J(μ) - J(π̄)`.
#[derive(Debug, Clone, PartialEq)]
pub struct BetaSummary {
    pub algo: RegularizerKind,
    pub beta: f64,
    pub mean: f64,
    pub worst: f64,
}

/// Runs A-Crab and its robust variant at every β on shared datasets and
/// records the shortfall against the behavior policy, `J(μ) - J(π̄)`.
pub fn run_beta_sweep(
    instance: &InstanceFile,
    family: &str,
    beta_grid: &[f64],
    n: usize,
    seeds: usize,
    config: &RateConfig,
) -> Result<(SweepResult, Vec<BetaSummary>)> {
    if beta_grid.is_empty() || seeds == 0 {
        return Err(Error::Config("need at least one beta and one seed".into()));
    }
    if let Some(b) = beta_grid.iter().find(|b| b.is_nan() || **b < 0.0) {
        return Err(Error::Config(format!("beta must be nonnegative, got {b}")));
    }
    let j_mu = j_value(&instance.mdp, &instance.behavior)?;
    let algos = [RegularizerKind::WeightedAvgBellman, RegularizerKind::RpiAvgBellman];
    let jobs: Vec<u64> = (0..seeds as u64).collect();
    let per_seed = run_jobs(
        &jobs,
        |s| format!("{family} beta-sweep n={n} seed={s}"),
        |&seed| {
            let ds = sample_dataset(&instance.mdp, &instance.behavior, n, seed)?;
            let mut out = Vec::new();
            for &beta in beta_grid {
                for algo in algos {
                    let cfg = SolverConfig::new(algo)
                        .with_beta(beta)
                        .with_k(config.k_iters)
                        .with_eta(config.eta)
                        .with_seed(seed);
                    let start = Instant::now();
                    let rec = run_algorithm(&ds, &instance.f_class, &instance.w_class, &cfg)?;
                    out.push(CellResult {
                        family: family.to_string(),
                        algo,
                        beta,
                        n,
                        seed,
                        subopt: j_mu - rec.mixture_j(&instance.mdp)?,
                        chose_idx: None,
                        cond_event: None,
                        runtime_ms: start.elapsed().as_secs_f64() * 1e3,
                    });
                }
            }
            Ok(out)
        },
    )?;
    let cells: Vec<CellResult> = per_seed.into_iter().flatten().collect();
    let mut summaries = Vec::new();
    for &beta in beta_grid {
        for algo in algos {
            let v: Vec<f64> = cells
                .iter()
                .filter(|c| c.algo == algo && c.beta == beta)
                .map(|c| c.subopt)
                .collect();
            summaries.push(BetaSummary {
                algo,
                beta,
                mean: mean(&v),
                worst: v.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            });
        }
    }
    Ok((SweepResult { cells, fits: Vec::new() }, summaries))
}

/// A gnuplot script plotting mean suboptimality against N on log axes from a
/// sweep CSV.
pub fn gnuplot_script(csv_path: &str, result: &SweepResult, title: &str) -> String {
    let mut s = String::new();
    s.push_str("set datafile separator ','\nset logscale xy\nset key top right\n");
    s.push_str(&format!("set title '{title}'\nset xlabel 'N'\nset ylabel 'mean suboptimality'\n"));
    let mut algos: Vec<RegularizerKind> = result.cells.iter().map(|c| c.algo).collect();
    algos.dedup();
    algos.sort_by_key(|a| a.name());
    algos.dedup();
    let plots: Vec<String> = algos
        .iter()
        .map(|a| {
            format!(
                "'{csv_path}' using (stringcolumn(2) eq '{n}' ? $4 : 1/0):6 smooth unique with linespoints title '{n}'",
                n = a.name()
            )
        })
        .collect();
    s.push_str("plot ");
    s.push_str(&plots.join(", \\\n     "));
    s.push('\n');
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiments::instances::build_realizable_family;

    #[test]
    fn grid_must_span_two_decades() {
        let fam = Family::Counterexample { exact_action_freq: false };
        let algos = [RegularizerKind::AtacSquared];
        let cfg = RateConfig::default();
        assert!(run_rate_experiment(&fam, &algos, &[1000, 2000, 5000], 1, &cfg).is_err());
        assert!(run_rate_experiment(&fam, &algos, &[1000, 100000], 1, &cfg).is_err());
    }

    #[test]
    fn paired_cells_share_datasets_and_sizes() {
        let inst = build_realizable_family(2, 2, 0).unwrap();
        let fam = Family::Fixed {
            name: "fam".into(),
            instance: Box::new(inst),
        };
        let algos = [RegularizerKind::WeightedAvgBellman, RegularizerKind::RpiAvgBellman];
        let cfg = RateConfig {
            k_iters: 5,
            ..RateConfig::default()
        };
        let r = run_rate_experiment(&fam, &algos, &[100, 1000, 10000], 2, &cfg).unwrap();
        assert_eq!(r.cells.len(), 3 * 2 * 2);
        assert_eq!(r.fits.len(), 2);
        let again = run_rate_experiment(&fam, &algos, &[100, 1000, 10000], 2, &cfg).unwrap();
        let strip = |r: &SweepResult| r.cells.iter().map(|c| (c.n, c.seed, c.subopt)).collect::<Vec<_>>();
        assert_eq!(strip(&r), strip(&again));
        let mut buf = Vec::new();
        r.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("family,algo,beta,n,seed,subopt,chose_idx,cond_event,runtime_ms\n"));
        assert!(gnuplot_script("x.csv", &r, "t").contains("'acrab-rpi'"));
    }

    #[test]
    fn cell_errors_name_the_cell() {
        let jobs = [1u64, 2, 3];
        let err = run_jobs(&jobs, |j| format!("job {j}"), |&j| {
            if j == 2 {
                Err(Error::Empty("x"))
            } else {
                Ok(j)
            }
        })
        .unwrap_err();
        assert!(matches!(err, Error::Cell { ref cell, .. } if cell == "job 2"));
    }

    #[test]
    fn beta_sweep_has_zero_beta_and_rpi_matches_all_ones() {
        let mut inst = build_realizable_family(2, 2, 1).unwrap();
        let cfg = RateConfig {
            k_iters: 10,
            ..RateConfig::default()
        };
        let (r, s) = run_beta_sweep(&inst, "fam", &[0.0, 2.0], 500, 2, &cfg).unwrap();
        assert_eq!(s.len(), 4);
        assert!(r.cells.iter().any(|c| c.beta == 0.0));
        // With W = {all-ones} both algorithms are the same program.
        inst.w_class = crate::classes::WeightClass::all_ones(2, 2);
        let (r, _) = run_beta_sweep(&inst, "fam", &[0.0, 2.0], 500, 2, &cfg).unwrap();
        for pair in r.cells.chunks(2) {
            assert_eq!(pair[0].subopt.to_bits(), pair[1].subopt.to_bits());
        }
    }
}
