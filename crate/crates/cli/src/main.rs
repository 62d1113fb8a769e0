use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use nqmix_core::check;
use nqmix_core::harness::{
    checkpoint_path, emit_plot, evaluate, run_ablation, run_experiment, success_threshold, RunConfig, RunManifest,
};
use nqmix_core::learner::LearnerState;
use nqmix_core::{envs, Error, Result};

#[derive(Parser)]
#[command(name = "nqmix", version, about = "Train and compare NQMIX, NQMIX-M, QMIX and VDN on toy cooperative games")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one algorithm over one or more seeds.
    Train(RunArgs),
    /// Evaluate the checkpoints written by `train`.
    Eval(EvalArgs),
    /// Train nqmix, nqmix_m and qmix under identical seeds and budgets.
    Ablate(RunArgs),
    /// Render metrics CSVs as an SVG line plot.
    Plot(PlotArgs),
    /// Run the gradient, mixer and update-rule self-checks.
    Check,
}

#[derive(Args)]
struct RunArgs {
    /// TOML run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Comma-separated seeds, e.g. `0,1,2`.
    #[arg(long, value_delimiter = ',')]
    seed: Option<Vec<u64>>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// nqmix, nqmix_m, nqmix_continuous, qmix or vdn.
    #[arg(long)]
    algo: Option<String>,
    /// matrix, two_step or product.
    #[arg(long)]
    env: Option<String>,
    /// Total environment steps per seed.
    #[arg(long)]
    steps: Option<u64>,
}

#[derive(Args)]
struct EvalArgs {
    /// Directory produced by `train`.
    #[arg(long)]
    out: PathBuf,
    /// Evaluation episodes per checkpoint (defaults to the run's setting).
    #[arg(long)]
    episodes: Option<usize>,
}

#[derive(Args)]
struct PlotArgs {
    /// Metrics, aggregate or ablation CSV files.
    #[arg(required = true)]
    csv: Vec<PathBuf>,
    /// SVG file to write.
    #[arg(long)]
    out: PathBuf,
}

impl RunArgs {
    fn resolve(&self) -> Result<RunConfig> {
        let mut config = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        if let Some(seeds) = &self.seed {
            config.seeds = seeds.clone();
        }
        if let Some(out) = &self.out {
            config.out_dir = out.clone();
        }
        if let Some(algo) = &self.algo {
            config.algo = algo.clone();
        }
        if let Some(env) = &self.env {
            config.env = env.clone();
        }
        if let Some(steps) = self.steps {
            config.total_steps = steps;
        }
        config.validate()?;
        Ok(config)
    }
}

fn print_manifest(m: &RunManifest) {
    for r in &m.runs {
        let ret = r.final_mean_return.map_or("-".to_string(), |v| format!("{v:.4}"));
        let success = r.final_success.map_or("-".to_string(), |v| format!("{v:.3}"));
        println!(
            "{:<16} seed {:<4} {:?}  steps {:>7}  return {ret:>9}  success {success:>5}  {} ms",
            m.algo, r.seed, r.status, r.env_steps, r.wall_ms
        );
        if let Some(e) = &r.error {
            println!("    {e}");
        }
    }
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Train(args) => {
            let config = args.resolve()?;
            let out = run_experiment(&config)?;
            print_manifest(&out.manifest);
            println!("wrote {}", out.dir.display());
            Ok(out.manifest.all_completed())
        }
        Command::Ablate(args) => {
            let config = args.resolve()?;
            let out = run_ablation(&config)?;
            for e in &out.experiments {
                print_manifest(&e.manifest);
            }
            for p in &out.probes {
                println!(
                    "probe {:<8} negative slopes in {}/{} probes (min slope {:.3e})",
                    p.mixer, p.negative_probes, p.probes, p.min_slope
                );
            }
            println!("wrote {} and {}", out.merged_csv.display(), out.plot.display());
            Ok(out.experiments.iter().all(|e| e.manifest.all_completed()))
        }
        Command::Eval(args) => {
            let config = RunConfig::load(&args.out.join("config.toml"))?;
            let env = envs::make_env(&config.env, config.payoff_path())?;
            let threshold = success_threshold(env.as_ref())?;
            for &seed in &config.seeds {
                let path = checkpoint_path(&args.out, seed);
                let state = LearnerState::load(&path)?;
                let n = args.episodes.unwrap_or(state.config.eval_episodes);
                let e = evaluate(&state, env.as_ref(), n, &threshold)?;
                println!(
                    "{:<16} seed {:<4} episodes {n:<5} return {:.4} ± {:.4}  success {:.3}",
                    state.algo, seed, e.mean_return, e.return_stddev, e.success_rate
                );
            }
            Ok(true)
        }
        Command::Plot(args) => {
            emit_plot(&args.csv, &args.out)?;
            println!("wrote {}", args.out.display());
            Ok(true)
        }
        Command::Check => {
            let reports = check::run_all()?;
            for r in &reports {
                println!("{} {:<40} {}", if r.passed { "PASS" } else { "FAIL" }, r.name, r.detail);
            }
            Ok(reports.iter().all(|r| r.passed))
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::MissingFile(_) | Error::UnknownKey { .. } | Error::InvalidValue { .. } => ExitCode::from(2),
                _ => ExitCode::FAILURE,
            }
        }
    }
}
