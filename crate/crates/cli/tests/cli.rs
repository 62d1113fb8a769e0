use std::path::Path;
use std::process::{Command, Output};

fn nqmix(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nqmix")).args(args).output().expect("binary runs")
}

fn small_config(dir: &Path) -> std::path::PathBuf {
    let path = dir.join("run.toml");
    std::fs::write(
        &path,
        "total_steps = 60\neval_interval_steps = 30\neval_episodes = 4\nbatch_episodes = 4\nhidden_width = 8\n",
    )
    .unwrap();
    path
}

#[test]
fn train_eval_and_plot_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let config = small_config(dir.path());
    let out = dir.path().join("out");
    let res = nqmix(&[
        "train",
        "--config",
        config.to_str().unwrap(),
        "--algo",
        "qmix",
        "--seed",
        "3,4",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    let stdout = String::from_utf8_lossy(&res.stdout);
    assert!(stdout.contains("seed 3") && stdout.contains("seed 4"), "{stdout}");
    for f in ["seed_3.csv", "seed_4.csv", "aggregate.csv", "plot.svg", "manifest.json"] {
        assert!(out.join(f).exists(), "{f}");
    }

    let res = nqmix(&["eval", "--out", out.to_str().unwrap(), "--episodes", "5"]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    assert_eq!(String::from_utf8_lossy(&res.stdout).lines().count(), 2);

    let svg = dir.path().join("both.svg");
    let res = nqmix(&[
        "plot",
        out.join("seed_3.csv").to_str().unwrap(),
        out.join("seed_4.csv").to_str().unwrap(),
        "--out",
        svg.to_str().unwrap(),
    ]);
    assert!(res.status.success());
    assert!(std::fs::read_to_string(&svg).unwrap().contains("<svg"));
}

#[test]
fn configuration_errors_exit_with_code_two() {
    let dir = tempfile::tempdir().unwrap();
    let unknown = dir.path().join("unknown.toml");
    std::fs::write(&unknown, "total_steps = 10\nwarp_factor = 9\n").unwrap();
    let res = nqmix(&["train", "--config", unknown.to_str().unwrap()]);
    assert_eq!(res.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&res.stderr).contains("warp_factor"));

    let res = nqmix(&["train", "--config", dir.path().join("missing.toml").to_str().unwrap()]);
    assert_eq!(res.status.code(), Some(2));

    let res = nqmix(&["train", "--algo", "iql", "--steps", "0", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(res.status.code(), Some(2));

    let res = nqmix(&["eval", "--out", dir.path().join("nothing").to_str().unwrap()]);
    assert_eq!(res.status.code(), Some(2));
}

#[test]
fn plotting_an_empty_file_fails_without_output() {
    let dir = tempfile::tempdir().unwrap();
    let empty = dir.path().join("empty.csv");
    std::fs::write(&empty, "").unwrap();
    let svg = dir.path().join("x.svg");
    let res = nqmix(&["plot", empty.to_str().unwrap(), "--out", svg.to_str().unwrap()]);
    assert!(!res.status.success());
    assert!(!svg.exists());
}

#[test]
fn ablate_writes_merged_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let config = small_config(dir.path());
    let out = dir.path().join("ablation");
    let res = nqmix(&["ablate", "--config", config.to_str().unwrap(), "--seed", "0", "--out", out.to_str().unwrap()]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    for f in ["ablation.csv", "ablation.svg", "probe.json"] {
        assert!(out.join(f).exists(), "{f}");
    }
}
