use std::fs::File;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use acrab::classes::{
    audit_realizability_f, audit_w_realizability, audit_weight_class, stat_envelope, ConcentrabilityReport,
};
use acrab::data::{exact_mu, sample_dataset};
use acrab::experiments::sweep::gnuplot_script;
use acrab::experiments::{
    build_appendix_d_instance, build_example_27_instance, build_realizable_family_with, run_beta_sweep,
    run_counterexample, run_rate_experiment, Family, FamilyParams, InstanceFile, RateConfig,
};
use acrab::mdp::j_value;
use acrab::objectives::RegularizerKind;
use acrab::solvers::{run_algorithm, SolverConfig, StepSize};
use acrab::{Error, Result};

#[derive(Parser)]
#[command(name = "acrab", version, about = "Offline actor-critic experiments on tabular MDPs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Algo {
    Acrab,
    AcrabRpi,
    Atac,
}

impl From<Algo> for RegularizerKind {
    fn from(a: Algo) -> Self {
        match a {
            Algo::Acrab => RegularizerKind::WeightedAvgBellman,
            Algo::AcrabRpi => RegularizerKind::RpiAvgBellman,
            Algo::Atac => RegularizerKind::AtacSquared,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum FamilyKind {
    Realizable,
    Counterexample,
    Example27,
}

/// Shape of a generated random family.
#[derive(clap::Args, Clone)]
struct FamilyArgs {
    #[arg(long, default_value_t = 4)]
    states: usize,
    #[arg(long, default_value_t = 3)]
    actions: usize,
    /// Probability the behavior puts on the optimal action (random behavior if omitted).
    #[arg(long)]
    behavior_greed: Option<f64>,
}

impl FamilyArgs {
    fn params(&self) -> FamilyParams {
        let mut p = FamilyParams::new(self.states, self.actions);
        p.behavior_greed = self.behavior_greed;
        p
    }
}

#[derive(Subcommand)]
enum Command {
    /// Concentrability and realizability report for an instance file.
    Audit {
        instance: PathBuf,
        /// Dataset size used for the statistical envelope.
        #[arg(long, default_value_t = 10_000)]
        n: usize,
        #[arg(long, default_value_t = 0.05)]
        delta: f64,
    },
    /// One run on a sampled dataset; prints a summary and writes the trace CSV.
    Run {
        instance: PathBuf,
        #[arg(long, value_enum)]
        algo: Algo,
        #[arg(long, default_value_t = 2.0)]
        beta: f64,
        #[arg(long, default_value_t = 500)]
        k: usize,
        #[arg(long, default_value_t = 10_000)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Fixed NPG step size (default: sqrt(ln|A|/K)/V_max).
        #[arg(long)]
        eta: Option<f64>,
        /// Trace CSV destination (stdout if omitted).
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Two-arm counterexample report: ATAC with β = N^{2/3} against A-Crab with β = 2.
    Counterexample {
        #[arg(long, value_delimiter = ',', default_value = "1000,10000,100000")]
        n_grid: Vec<usize>,
        #[arg(long, default_value_t = 200)]
        seeds: usize,
        /// Extra datasets per N drawn conditioned on the reversal event.
        #[arg(long, default_value_t = 50)]
        conditioned_seeds: usize,
        /// Fix arm counts to their expectations instead of i.i.d. sampling.
        #[arg(long)]
        exact_action_freq: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Suboptimality against N with log-log slope fits.
    Rates {
        #[arg(long, value_enum, default_value = "realizable")]
        family: FamilyKind,
        #[arg(long, value_delimiter = ',', default_value = "1000,10000,100000")]
        n_grid: Vec<usize>,
        #[arg(long, default_value_t = 50)]
        seeds: usize,
        #[arg(long, default_value_t = 0)]
        family_seed: u64,
        #[command(flatten)]
        shape: FamilyArgs,
        #[arg(long, default_value_t = 500)]
        k: usize,
        #[arg(long)]
        eta: Option<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also write a gnuplot script plotting the CSV given by --out.
        #[arg(long)]
        plot: Option<PathBuf>,
    },
    /// J(μ) − J(π̄) for A-Crab and its robust variant over a β grid.
    BetaSweep {
        #[arg(long, value_delimiter = ',', default_value = "0,0.5,2,8,32")]
        beta_grid: Vec<f64>,
        /// Instance file; a random family instance is generated if omitted.
        #[arg(long)]
        instance: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        family_seed: u64,
        #[command(flatten)]
        shape: FamilyArgs,
        #[arg(long, default_value_t = 10_000)]
        n: usize,
        #[arg(long, default_value_t = 50)]
        seeds: usize,
        #[arg(long, default_value_t = 500)]
        k: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Emit an instance file.
    Gen {
        #[arg(long, value_enum)]
        family: FamilyKind,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        shape: FamilyArgs,
        /// Dataset size the counterexample is tuned for.
        #[arg(long, default_value_t = 10_000)]
        n: usize,
        /// Counterexample β (default N^{2/3}).
        #[arg(long)]
        beta: Option<f64>,
        #[arg(long, default_value_t = 0.1)]
        epsilon: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn output(path: &Option<PathBuf>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(File::create(p).map_err(|e| Error::Io(format!("{}: {e}", p.display())))?),
        None => Box::new(io::stdout()),
    })
}

fn step(eta: Option<f64>) -> StepSize {
    eta.map_or(StepSize::Auto, StepSize::Fixed)
}

fn fmt_fit(fit: &std::result::Result<(f64, f64), String>) -> String {
    match fit {
        Ok((s, se)) => format!("{s:.4} (stderr {se:.4})"),
        Err(e) => format!("undefined ({e})"),
    }
}

fn audit(path: &Path, n: usize, delta: f64) -> Result<()> {
    let inst = InstanceFile::load(path)?;
    let mu = exact_mu(&inst.mdp, &inst.behavior)?;
    println!("instance: {}", path.display());
    if !inst.provenance.is_empty() {
        println!("provenance: {}", inst.provenance.replace('\n', " / "));
    }
    let mut targets = vec![("target".to_string(), inst.target.clone())];
    for (i, p) in inst.audit.members().iter().enumerate() {
        targets.push((format!("audit[{i}]"), p.clone()));
    }
    for (name, p) in &targets {
        let r = ConcentrabilityReport::compute(&inst.mdp, p, &mu, &inst.f_class)?;
        let cb = r.c_bellman.map_or("n/a".to_string(), |v| format!("{v:.6}"));
        print!("{name}: J={:.6} c_l2={:.6} c_linf={:.6} c_bellman={cb}", j_value(&inst.mdp, p)?, r.c_l2, r.c_linf);
        if let Some((s, a)) = r.uncovered {
            print!(" uncovered=({s},{a})");
        }
        println!();
    }
    let gap = audit_realizability_f(&inst.mdp, &inst.f_class, &inst.audit)?;
    println!("realizability gap of F over audit set: {gap:.3e}");
    let c_star = audit_weight_class(&inst.w_class, &mu)?;
    println!("C* (max ||w||_2,mu over W): {c_star:.6}");
    match audit_w_realizability(&inst.mdp, &inst.target, &mu, &inst.w_class) {
        Ok((ok, dist)) => println!("w^target in W: {ok} (sup distance {dist:.3e})"),
        Err(Error::Coverage { state, action, .. }) => {
            println!("w^target undefined: target uncovered at ({state},{action})")
        }
        Err(e) => return Err(e),
    }
    let env = stat_envelope(
        inst.mdp.v_max(),
        c_star,
        inst.f_class.len(),
        inst.audit.len(),
        inst.w_class.len(),
        n,
        delta,
    );
    println!("envelope (convention) at n={n}, delta={delta}: {env:.6}");
    Ok(())
}

fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::Audit { instance, n, delta } => audit(&instance, n, delta),
        Command::Run {
            instance,
            algo,
            beta,
            k,
            n,
            seed,
            eta,
            trace,
        } => {
            let inst = InstanceFile::load(&instance)?;
            let ds = sample_dataset(&inst.mdp, &inst.behavior, n, seed)?;
            let cfg = SolverConfig::new(algo.into())
                .with_beta(beta)
                .with_k(k)
                .with_eta(step(eta))
                .with_seed(seed);
            let rec = run_algorithm(&ds, &inst.f_class, &inst.w_class, &cfg)?;
            let subopt = j_value(&inst.mdp, &inst.target)? - rec.mixture_j(&inst.mdp)?;
            eprintln!("{} n={n} seed={seed} subopt_vs_target={subopt}", rec.summary_line(&inst.mdp)?);
            rec.write_trace_csv(&inst.mdp, output(&trace)?)
        }
        Command::Counterexample {
            n_grid,
            seeds,
            conditioned_seeds,
            exact_action_freq,
            out,
        } => {
            let report = run_counterexample(&n_grid, seeds, conditioned_seeds, exact_action_freq)?;
            report.write_csv(output(&out)?)?;
            eprintln!("atac slope: {}", fmt_fit(&report.atac_fit.fit));
            eprintln!("acrab slope: {}", fmt_fit(&report.acrab_fit.fit));
            Ok(())
        }
        Command::Rates {
            family,
            n_grid,
            seeds,
            family_seed,
            shape,
            k,
            eta,
            out,
            plot,
        } => {
            let (fam, algos) = match family {
                FamilyKind::Realizable => (
                    Family::Fixed {
                        name: format!("realizable-{}x{}-{family_seed}", shape.states, shape.actions),
                        instance: Box::new(build_realizable_family_with(&shape.params(), family_seed)?),
                    },
                    vec![RegularizerKind::WeightedAvgBellman, RegularizerKind::AtacSquared],
                ),
                FamilyKind::Counterexample => (
                    Family::Counterexample { exact_action_freq: false },
                    vec![RegularizerKind::WeightedAvgBellman, RegularizerKind::AtacSquared],
                ),
                FamilyKind::Example27 => {
                    return Err(Error::Config("rates supports the realizable and counterexample families".into()))
                }
            };
            let cfg = RateConfig {
                k_iters: k,
                eta: step(eta),
                ..RateConfig::default()
            };
            let result = run_rate_experiment(&fam, &algos, &n_grid, seeds, &cfg)?;
            result.write_csv(output(&out)?)?;
            for f in &result.fits {
                eprintln!("{} slope: {}", f.algo.name(), fmt_fit(&f.fit));
            }
            if let Some(p) = plot {
                let csv = out.as_ref().map_or("sweep.csv".to_string(), |o| o.display().to_string());
                std::fs::write(&p, gnuplot_script(&csv, &result, fam.name()))?;
            }
            Ok(())
        }
        Command::BetaSweep {
            beta_grid,
            instance,
            family_seed,
            shape,
            n,
            seeds,
            k,
            out,
        } => {
            let (inst, name) = match instance {
                Some(p) => (InstanceFile::load(&p)?, p.display().to_string()),
                None => (
                    build_realizable_family_with(&shape.params(), family_seed)?,
                    format!("realizable-{}x{}-{family_seed}", shape.states, shape.actions),
                ),
            };
            let cfg = RateConfig {
                k_iters: k,
                ..RateConfig::default()
            };
            let (result, summaries) = run_beta_sweep(&inst, &name, &beta_grid, n, seeds, &cfg)?;
            result.write_csv(output(&out)?)?;
            let v_max = inst.mdp.v_max();
            for s in summaries {
                eprintln!(
                    "{} beta={} mean={:.6} ({:.4} V_max) worst={:.6} ({:.4} V_max)",
                    s.algo.name(),
                    s.beta,
                    s.mean,
                    s.mean / v_max,
                    s.worst,
                    s.worst / v_max
                );
            }
            Ok(())
        }
        Command::Gen {
            family,
            seed,
            shape,
            n,
            beta,
            epsilon,
            out,
        } => {
            let inst = match family {
                FamilyKind::Realizable => build_realizable_family_with(&shape.params(), seed)?,
                FamilyKind::Counterexample => {
                    build_appendix_d_instance(n, beta.unwrap_or_else(|| (n as f64).powf(2.0 / 3.0)))?
                }
                FamilyKind::Example27 => build_example_27_instance(epsilon)?,
            };
            output(&out)?.write_all(inst.to_text().as_bytes())?;
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_validation() { 1 } else { 2 })
        }
    }
}
