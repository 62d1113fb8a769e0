use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use super::metrics::{
    aggregate, write_metrics, write_rows, AblationRow, MetricsRow, ABLATION_HEADER, AGGREGATE_HEADER,
};
use super::plot::{emit_plot, render_svg, Series};
use crate::envs::make_env;
use crate::error::{Error, Result};
use crate::learner::{run_training, Algo, LearnerState};
use crate::mixers::{Mixer, MixerKind};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Completed,
    /// Training stopped on a NaN or infinity.
    NonFinite,
    Failed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedRecord {
    pub seed: u64,
    pub status: RunStatus,
    pub error: Option<String>,
    pub wall_ms: u64,
    pub env_steps: u64,
    pub updates: u64,
    pub final_mean_return: Option<f64>,
    pub final_success: Option<f64>,
    pub metrics_csv: PathBuf,
    pub checkpoint: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub algo: String,
    pub env: String,
    pub seeds: Vec<u64>,
    pub total_steps: u64,
    pub runs: Vec<SeedRecord>,
    pub aggregate_csv: PathBuf,
    pub plot: Option<PathBuf>,
}

impl RunManifest {
    pub fn all_completed(&self) -> bool {
        self.runs.iter().all(|r| r.status == RunStatus::Completed)
    }
}

/// Result of training one algorithm over all configured seeds.
#[derive(Clone, Debug)]
pub struct ExperimentOutput {
    pub dir: PathBuf,
    pub manifest: RunManifest,
    pub metrics: Vec<Vec<MetricsRow>>,
}

pub fn metrics_path(dir: &Path, seed: u64) -> PathBuf {
    dir.join(format!("seed_{seed}.csv"))
}

pub fn checkpoint_path(dir: &Path, seed: u64) -> PathBuf {
    dir.join(format!("seed_{seed}.state.json"))
}

/// Trains one seed and writes its metrics CSV and final learner checkpoint.
fn run_seed(config: &RunConfig, algo: Algo, seed: u64, dir: &Path) -> Result<(Vec<MetricsRow>, SeedRecord)> {
    let mut env = make_env(&config.env, config.payoff_path())?;
    let mut state = LearnerState::new(algo, config.learner_config(), env.descriptor(), seed)?;
    let start = Instant::now();
    let mut rows = Vec::new();
    let result = run_training(&mut state, env.as_mut(), |_, p| {
        rows.push(MetricsRow {
            env_steps: p.env_steps,
            episode_count: p.episode_count,
            mean_eval_return: p.evaluation.mean_return,
            eval_return_stddev: p.evaluation.return_stddev,
            mean_eval_success: p.evaluation.success_rate,
            wall_ms: if config.record_wall_time { start.elapsed().as_millis() as u64 } else { 0 },
            seed,
        });
        Ok(())
    });
    let wall_ms = start.elapsed().as_millis() as u64;
    let csv = metrics_path(dir, seed);
    write_metrics(&csv, &rows)?;
    let (status, error, checkpoint) = match result {
        Ok(_) => {
            let ckpt = checkpoint_path(dir, seed);
            state.save(&ckpt)?;
            (RunStatus::Completed, None, Some(ckpt))
        }
        Err(e @ Error::NonFinite(_)) => (RunStatus::NonFinite, Some(e.to_string()), None),
        Err(e) => (RunStatus::Failed, Some(e.to_string()), None),
    };
    let last = rows.last();
    let record = SeedRecord {
        seed,
        status,
        error,
        wall_ms,
        env_steps: state.env_steps,
        updates: state.updates,
        final_mean_return: last.map(|r| r.mean_eval_return),
        final_success: last.map(|r| r.mean_eval_success),
        metrics_csv: csv,
        checkpoint,
    };
    Ok((rows, record))
}

fn write_manifest(dir: &Path, manifest: &RunManifest) -> Result<()> {
    std::fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(manifest)?)?;
    Ok(())
}

/// Trains `config.algo` once per seed into `config.out_dir`.
///
/// Writes `seed_<s>.csv` per seed, `aggregate.csv`, `plot.svg`, `manifest.json`
/// and a copy of the configuration. Runs that hit a NaN are recorded in the
/// manifest rather than aborting the remaining seeds.
pub fn run_experiment(config: &RunConfig) -> Result<ExperimentOutput> {
    config.validate()?;
    let algo = config.algo()?;
    let dir = config.out_dir.clone();
    std::fs::create_dir_all(&dir)?;
    std::fs::write(dir.join("config.toml"), config.to_toml_string())?;

    let mut metrics = Vec::new();
    let mut runs = Vec::new();
    for &seed in &config.seeds {
        let (rows, record) = run_seed(config, algo, seed, &dir)?;
        metrics.push(rows);
        runs.push(record);
    }
    let agg = aggregate(&metrics);
    let aggregate_csv = dir.join("aggregate.csv");
    write_rows(&aggregate_csv, &agg, &AGGREGATE_HEADER)?;
    let plot = if agg.is_empty() {
        None
    } else {
        let series = Series {
            label: algo.name().to_string(),
            points: agg.iter().map(|r| (r.env_steps as f64, r.mean_eval_return, r.eval_return_stddev)).collect(),
        };
        let path = dir.join("plot.svg");
        std::fs::write(&path, render_svg(&[series])?)?;
        Some(path)
    };
    let manifest = RunManifest {
        algo: algo.name().to_string(),
        env: config.env.clone(),
        seeds: config.seeds.clone(),
        total_steps: config.total_steps,
        runs,
        aggregate_csv,
        plot,
    };
    write_manifest(&dir, &manifest)?;
    Ok(ExperimentOutput { dir, manifest, metrics })
}

/// Finite-difference monotonicity statistics for randomly drawn mixers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeReport {
    pub mixer: String,
    pub probes: usize,
    /// Probes in which at least one agent's slope was below `-NEGATIVE_SLOPE_TOL`.
    pub negative_probes: usize,
    pub negative_fraction: f64,
    pub min_slope: f64,
}

pub const PROBE_STEP: f64 = 1e-5;
pub const NEGATIVE_SLOPE_TOL: f64 = 1e-9;

/// Central finite-difference slopes `∂Q_tot/∂Q_a`, one freshly initialised
/// mixer and one random `(q, s)` input per probe.
pub fn monotonicity_probe(
    kind: MixerKind,
    n_agents: usize,
    state_width: usize,
    probes: usize,
    rng: &mut ChaCha8Rng,
) -> Result<ProbeReport> {
    let mut negative = 0;
    let mut min_slope = f64::INFINITY;
    for _ in 0..probes {
        let mixer = Mixer::new(kind, n_agents, state_width, rng);
        let q: Vec<f64> = (0..n_agents).map(|_| rng.random_range(-5.0..5.0)).collect();
        let s: Vec<f64> = (0..state_width).map(|_| rng.random_range(0.0..1.0)).collect();
        let mut any_negative = false;
        for a in 0..n_agents {
            let mut up = q.clone();
            let mut down = q.clone();
            up[a] += PROBE_STEP;
            down[a] -= PROBE_STEP;
            let slope = (mixer.mix(&up, &s)? - mixer.mix(&down, &s)?) / (2.0 * PROBE_STEP);
            min_slope = min_slope.min(slope);
            any_negative |= slope < -NEGATIVE_SLOPE_TOL;
        }
        negative += usize::from(any_negative);
    }
    Ok(ProbeReport {
        mixer: format!("{kind:?}"),
        probes,
        negative_probes: negative,
        negative_fraction: if probes == 0 { 0.0 } else { negative as f64 / probes as f64 },
        min_slope,
    })
}

pub const ABLATION_ALGOS: [Algo; 3] = [Algo::Nqmix, Algo::NqmixM, Algo::Qmix];
pub const ABLATION_PROBES: usize = 1000;

#[derive(Clone, Debug)]
pub struct AblationOutput {
    pub merged_csv: PathBuf,
    pub plot: PathBuf,
    pub probes: Vec<ProbeReport>,
    pub experiments: Vec<ExperimentOutput>,
}

/// Trains NQMIX, NQMIX-M and QMIX with identical seeds and budgets.
///
/// Each algorithm gets its own subdirectory; the merged `ablation.csv`,
/// `ablation.svg` and the mixer probe log `probe.json` sit at the top level.
pub fn run_ablation(config: &RunConfig) -> Result<AblationOutput> {
    let probe_env = make_env(&config.env, config.payoff_path())?;
    if !probe_env.descriptor().is_discrete() {
        return Err(Error::InvalidValue { field: "env".into(), reason: "the ablation needs a discrete game".into() });
    }
    let root = config.out_dir.clone();
    std::fs::create_dir_all(&root)?;
    let mut experiments = Vec::new();
    let mut merged = Vec::new();
    for algo in ABLATION_ALGOS {
        let sub = RunConfig { algo: algo.name().into(), out_dir: root.join(algo.name()), ..config.clone() };
        let out = run_experiment(&sub)?;
        for rows in &out.metrics {
            merged.extend(rows.iter().map(|r| AblationRow::new(algo.name(), r)));
        }
        experiments.push(out);
    }
    let merged_csv = root.join("ablation.csv");
    write_rows(&merged_csv, &merged, &ABLATION_HEADER)?;
    let plot = root.join("ablation.svg");
    emit_plot(std::slice::from_ref(&merged_csv), &plot)?;

    let desc = probe_env.descriptor();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seeds[0]);
    let probes = vec![
        monotonicity_probe(MixerKind::NqmixM, desc.n_agents, desc.state_width, ABLATION_PROBES, &mut rng)?,
        monotonicity_probe(MixerKind::Qmix, desc.n_agents, desc.state_width, ABLATION_PROBES, &mut rng)?,
    ];
    std::fs::write(root.join("probe.json"), serde_json::to_string_pretty(&probes)?)?;
    Ok(AblationOutput { merged_csv, plot, probes, experiments })
}
