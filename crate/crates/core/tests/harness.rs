// End-to-end checks of evaluation, experiment output, the ablation pipeline,
// configuration files and aggregation.

use std::path::Path;

use nqmix_core::agents::{AgentNetworks, CriticHead, NetworkShape};
use nqmix_core::envs::{make_env, MatrixGame};
use nqmix_core::harness::{
    aggregate, emit_plot, eval_rng, evaluate_networks, metrics_path, read_metrics, read_rows, run_ablation,
    run_experiment, success_threshold, AblationRow, AggregateRow, MetricsRow, RunConfig, RunStatus,
};
use nqmix_core::learner::{ActMode, Algo};
use nqmix_core::nn::Parameterized;
use nqmix_core::{Error, Env};
use rand::SeedableRng;

fn zero_networks(env: &dyn Env, with_policies: bool) -> AgentNetworks {
    let shape = NetworkShape::from_descriptor(env.descriptor(), 8).unwrap();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
    let mut nets = AgentNetworks::new(shape, with_policies, &mut rng);
    for t in nets.params_mut() {
        t.value_mut().fill(0.0);
    }
    nets
}

#[test]
fn coordinated_greedy_policy_scores_the_optimum() {
    let env = MatrixGame::default_game();
    let mut nets = zero_networks(&env, false);
    let CriticHead::Discrete(head) = &mut nets.critic.head else { unreachable!() };
    head.bias.value_mut()[[0, 0]] = 1.0;
    let threshold = success_threshold(&env).unwrap();
    let mut rng = eval_rng(0, 0);
    let e = evaluate_networks(&nets, Algo::Qmix, &env, 32, ActMode::Greedy, &mut rng, &threshold).unwrap();
    assert_eq!(e.mean_return, 8.0);
    assert_eq!(e.return_stddev, 0.0);
    assert_eq!(e.success_rate, 1.0);
}

#[test]
fn uniform_policy_scores_the_table_average() {
    let env = MatrixGame::default_game();
    let nets = zero_networks(&env, true);
    let threshold = success_threshold(&env).unwrap();
    let mut rng = eval_rng(3, 0);
    let e = evaluate_networks(&nets, Algo::Nqmix, &env, 10_000, ActMode::Sample, &mut rng, &threshold).unwrap();
    // (8 − 4·12) / 9
    let expected = -40.0 / 9.0;
    assert!((e.mean_return - expected).abs() < 0.3, "{}", e.mean_return);
    assert!((e.success_rate - 1.0 / 9.0).abs() < 0.02, "{}", e.success_rate);
    let mut rng = eval_rng(3, 0);
    assert!(evaluate_networks(&nets, Algo::Nqmix, &env, 0, ActMode::Sample, &mut rng, &threshold).is_err());
}

fn tiny_config(dir: &Path, algo: &str, env: &str) -> RunConfig {
    RunConfig {
        env: env.into(),
        algo: algo.into(),
        out_dir: dir.to_path_buf(),
        total_steps: 120,
        eval_interval_steps: 40,
        eval_episodes: 4,
        batch_episodes: 4,
        buffer_capacity: 64,
        hidden_width: 8,
        ..Default::default()
    }
}

#[test]
fn experiment_writes_per_seed_and_aggregate_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let config = tiny_config(&dir.path().join("run"), "nqmix", "two_step");
    let out = run_experiment(&config).unwrap();
    assert!(out.manifest.all_completed());
    assert_eq!(out.manifest.runs.len(), 3);
    for seed in [0, 1, 2] {
        let rows = read_metrics(&metrics_path(&out.dir, seed)).unwrap();
        let steps: Vec<u64> = rows.iter().map(|r| r.env_steps).collect();
        assert_eq!(steps, vec![0, 40, 80, 120]);
        assert!(rows.iter().all(|r| r.seed == seed && r.wall_ms == 0));
        assert!(out.dir.join(format!("seed_{seed}.state.json")).exists());
    }
    let agg: Vec<AggregateRow> = read_rows(&out.dir.join("aggregate.csv")).unwrap();
    assert_eq!(agg.len(), 4);
    assert!(agg.iter().all(|r| r.seeds == 3));
    for f in ["plot.svg", "manifest.json", "config.toml"] {
        assert!(out.dir.join(f).exists(), "{f}");
    }
    let reloaded = RunConfig::load(&out.dir.join("config.toml")).unwrap();
    assert_eq!(reloaded, config);
}

#[test]
fn reruns_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let read = |p: &Path| std::fs::read(p).unwrap();
    for (algo, env) in [("qmix", "matrix"), ("nqmix_continuous", "product")] {
        let a = run_experiment(&tiny_config(&dir.path().join(format!("{algo}_a")), algo, env)).unwrap();
        let b = run_experiment(&tiny_config(&dir.path().join(format!("{algo}_b")), algo, env)).unwrap();
        for seed in [0, 1, 2] {
            assert_eq!(read(&metrics_path(&a.dir, seed)), read(&metrics_path(&b.dir, seed)));
        }
        assert_eq!(read(&a.dir.join("aggregate.csv")), read(&b.dir.join("aggregate.csv")));
    }
}

#[test]
fn zero_step_budget_produces_empty_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let config = RunConfig { total_steps: 0, seeds: vec![5], ..tiny_config(dir.path(), "vdn", "matrix") };
    let out = run_experiment(&config).unwrap();
    assert!(out.metrics[0].is_empty());
    assert_eq!(out.manifest.runs[0].updates, 0);
    assert_eq!(out.manifest.runs[0].status, RunStatus::Completed);
    assert!(out.manifest.plot.is_none());
}

#[test]
fn ablation_covers_every_algorithm_and_seed() {
    let dir = tempfile::tempdir().unwrap();
    let config = tiny_config(dir.path(), "nqmix", "matrix");
    let out = run_ablation(&config).unwrap();
    let rows: Vec<AblationRow> = read_rows(&out.merged_csv).unwrap();
    assert_eq!(rows.len(), 3 * 3 * 4);
    for algo in ["nqmix", "nqmix_m", "qmix"] {
        for seed in [0, 1, 2] {
            assert_eq!(rows.iter().filter(|r| r.algo == algo && r.seed == seed).count(), 4);
        }
        assert!(dir.path().join(algo).join("aggregate.csv").exists());
    }
    assert!(std::fs::read_to_string(&out.plot).unwrap().contains("<svg"));
    assert!(dir.path().join("probe.json").exists());
    let nqmix_m = &out.probes[0];
    let qmix = &out.probes[1];
    assert!(nqmix_m.negative_probes > 0);
    assert_eq!(qmix.negative_probes, 0);
}

#[test]
fn ablation_rejects_continuous_games() {
    let dir = tempfile::tempdir().unwrap();
    let config = tiny_config(dir.path(), "nqmix", "product");
    assert!(matches!(run_ablation(&config), Err(Error::InvalidValue { .. })));
}

#[test]
fn config_files_report_distinct_errors() {
    let dir = tempfile::tempdir().unwrap();
    let write = |name: &str, text: &str| {
        let p = dir.path().join(name);
        std::fs::write(&p, text).unwrap();
        p
    };
    let ok = write("ok.toml", "algo = \"qmix\"\ntotal_steps = 500\nseeds = [4]\n");
    let c = RunConfig::load(&ok).unwrap();
    assert_eq!((c.algo.as_str(), c.total_steps, c.seeds.clone()), ("qmix", 500, vec![4]));
    assert_eq!(c.gamma, 0.99);

    let unknown = write("unknown.toml", "algo = \"qmix\"\nlearning_rate = 0.1\n");
    assert!(matches!(RunConfig::load(&unknown), Err(Error::UnknownKey { .. })));
    let bad_type = write("bad.toml", "total_steps = \"many\"\n");
    assert!(matches!(RunConfig::load(&bad_type), Err(Error::InvalidValue { .. })));
    let bad_algo = write("algo.toml", "algo = \"iql\"\n");
    assert!(RunConfig::load(&bad_algo).and_then(|c| c.algo()).is_err());
    assert!(matches!(RunConfig::load(&dir.path().join("nope.toml")), Err(Error::MissingFile(_))));
    assert!(make_env("grid", None).is_err());
}

#[test]
fn aggregate_uses_sample_standard_deviation() {
    let row = |seed, ret: f64, success: f64| MetricsRow {
        env_steps: 10,
        episode_count: 10,
        mean_eval_return: ret,
        eval_return_stddev: 0.0,
        mean_eval_success: success,
        wall_ms: 0,
        seed,
    };
    let runs = vec![vec![row(0, 2.0, 0.0)], vec![row(1, 4.0, 1.0)], vec![row(2, 9.0, 1.0)]];
    let agg = aggregate(&runs);
    assert_eq!(agg.len(), 1);
    assert_eq!(agg[0].mean_eval_return, 5.0);
    // ((−3)² + (−1)² + 4²) / 2 = 13
    assert!((agg[0].eval_return_stddev - 13f64.sqrt()).abs() < 1e-12);
    assert!((agg[0].mean_eval_success - 2.0 / 3.0).abs() < 1e-12);
    assert_eq!(agg[0].seeds, 3);
}

#[test]
fn plots_render_from_metrics_files() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_experiment(&tiny_config(&dir.path().join("run"), "vdn", "matrix")).unwrap();
    let svg = dir.path().join("seeds.svg");
    let inputs: Vec<_> = [0, 1].iter().map(|s| metrics_path(&out.dir, *s)).collect();
    emit_plot(&inputs, &svg).unwrap();
    assert!(std::fs::read_to_string(&svg).unwrap().starts_with("<svg"));

    let empty = dir.path().join("empty.csv");
    std::fs::write(&empty, "").unwrap();
    let not_written = dir.path().join("none.svg");
    assert!(emit_plot(&[empty], &not_written).is_err());
    assert!(!not_written.exists());
}
