use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const SMALL_GRID: &str = "\
[grid]
theta_a = { min = -0.2, max = 0.2, count = 5 }
theta_a_dot = { min = -1.0, max = 1.0, count = 5 }
";

fn lippfm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lippfm"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, text: &str) -> String {
    let path = dir.join("config.toml");
    fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn sweep_writes_all_artifacts_reproducibly() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), SMALL_GRID);
    let out_a = dir.path().join("a");
    let out_b = dir.path().join("b");

    let run = |out: &Path, jobs: &str| {
        let o = lippfm(&[
            "sweep",
            "--config",
            &config,
            "--out",
            out.to_str().unwrap(),
            "--svg",
            "--jobs",
            jobs,
        ]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    };
    run(&out_a, "1");
    run(&out_b, "3");

    for name in ["region.csv", "region.svg", "warnings.txt"] {
        let a = fs::read(out_a.join(name)).unwrap();
        assert_eq!(a, fs::read(out_b.join(name)).unwrap(), "{name} differs");
    }
    let csv = fs::read_to_string(out_a.join("region.csv")).unwrap();
    assert_eq!(csv.lines().count(), 26);

    // The echo carries the command-line overrides, so feeding it back in
    // reproduces every artifact.
    let echo = out_a.join("resolved_config.toml");
    let out_c = dir.path().join("c");
    let o = lippfm(&[
        "sweep",
        "--config",
        echo.to_str().unwrap(),
        "--out",
        out_c.to_str().unwrap(),
    ]);
    assert!(o.status.success());
    assert_eq!(fs::read(out_c.join("region.csv")).unwrap(), csv.as_bytes());
    assert_eq!(
        fs::read(out_c.join("region.svg")).unwrap(),
        fs::read(out_a.join("region.svg")).unwrap()
    );
}

#[test]
fn episode_writes_trajectory_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(
        dir.path(),
        "[episode]\nduration = 1.0\ninitial_state = { theta_a = 0.05 }\n",
    );
    let out = dir.path().join("ep");
    let o = lippfm(&[
        "episode",
        "--config",
        &config,
        "--out",
        out.to_str().unwrap(),
        "--seed",
        "7",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let traj = fs::read_to_string(out.join("trajectory.csv")).unwrap();
    assert!(traj.starts_with("t,theta_a,"));
    assert_eq!(traj.lines().count(), 1 + 1001);
    let summary = fs::read_to_string(out.join("episode.json")).unwrap();
    assert!(summary.contains("\"classification\""));
    assert!(out.join("resolved_config.toml").exists());
}

#[test]
fn design_prints_the_report() {
    let o = lippfm(&["design"]);
    assert!(o.status.success());
    let text = String::from_utf8(o.stdout).unwrap();
    for block in ["P =", "K =", "closed-loop eigenvalues", "CARE residual"] {
        assert!(text.contains(block), "missing {block}");
    }
}

#[test]
fn invalid_config_exits_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), "[episode]\ndt = 0.0\n");
    let o = lippfm(&[
        "sweep",
        "--config",
        &config,
        "--out",
        dir.path().join("x").to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("episode.dt"));

    let config = write_config(dir.path(), "[model]\nflywheel_mass = \n");
    assert_eq!(
        lippfm(&["design", "--config", &config]).status.code(),
        Some(1)
    );
}

#[test]
fn indefinite_input_weight_exits_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), "[controller]\nr = [[1.0, 0.0], [0.0, -1.0]]\n");
    let o = lippfm(&["design", "--config", &config]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn io_failures_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.toml");
    assert_eq!(
        lippfm(&["design", "--config", missing.to_str().unwrap()])
            .status
            .code(),
        Some(2)
    );

    let blocker = dir.path().join("file");
    fs::write(&blocker, "").unwrap();
    let config = write_config(dir.path(), "[grid]\ntheta_a = { min = 0.0, max = 0.0, count = 1 }\ntheta_a_dot = { min = 0.0, max = 0.0, count = 1 }\n");
    let o = lippfm(&[
        "sweep",
        "--config",
        &config,
        "--out",
        blocker.join("sub").to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2));
}
