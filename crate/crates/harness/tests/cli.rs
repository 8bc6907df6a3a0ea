use std::path::Path;
use std::process::Command;

use framecache_harness::scenarios::recompute_totals;
use framecache_harness::Table;

const SMALL: &str = r#"{
    "version": 1,
    "seed": 3,
    "frames": 10,
    "network": {"type": "unet", "depth": 3, "base_channels": 4},
    "scene": {"height": 24, "width": 24, "pan_speed": 0.5},
    "scenarios": ["policy_sweep", "memory_report"]
}"#;

fn framecache(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_framecache"))
        .args(args)
        .env("FRAMECACHE_THREADS", "2")
        .output()
        .expect("binary runs")
}

fn read_csv(path: &Path, name: &str) -> Table {
    let text = std::fs::read_to_string(path).unwrap();
    let mut lines = text
        .lines()
        .map(|l| l.split(',').map(String::from).collect::<Vec<_>>());
    let headers = lines.next().unwrap();
    Table {
        name: name.into(),
        headers,
        rows: lines.collect(),
    }
}

#[test]
fn run_writes_consistent_tables() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("run.json");
    std::fs::write(&config, SMALL).unwrap();
    let out = dir.path().join("out");
    let res = framecache(&[
        "run",
        "--config",
        config.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(
        res.status.success(),
        "{}",
        String::from_utf8_lossy(&res.stderr)
    );
    let stdout = String::from_utf8_lossy(&res.stdout);
    assert!(stdout.contains("== policy_sweep =="));
    assert!(!stdout.contains("FAIL"));

    for name in ["policy_sweep", "policy_sweep_frames", "memory_report"] {
        assert!(out.join(format!("{name}.csv")).exists());
        assert!(out.join(format!("{name}.txt")).exists());
    }
    let frames = read_csv(&out.join("policy_sweep_frames.csv"), "frames");
    let totals = read_csv(&out.join("policy_sweep.csv"), "totals");
    assert_eq!(frames.rows.len(), 8 * 10);
    assert!(recompute_totals(&frames, &totals).unwrap().is_empty());
    let n5 = totals.rows.iter().find(|r| r[0] == "n5").unwrap();
    let n2 = totals.rows.iter().find(|r| r[0] == "n2").unwrap();
    assert_eq!((n5[2].as_str(), n2[2].as_str()), ("2", "5"));
}

#[test]
fn runs_are_reproducible_and_seeded() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("run.json");
    std::fs::write(&config, SMALL).unwrap();
    let cfg = config.to_str().unwrap();
    let run = |seed: &str, out: &str| {
        let out = dir.path().join(out);
        let res = framecache(&[
            "run",
            "--config",
            cfg,
            "--out",
            out.to_str().unwrap(),
            "--seed",
            seed,
            "--scenario",
            "policy_sweep",
        ]);
        assert!(res.status.success());
        assert!(!out.join("memory_report.csv").exists());
        std::fs::read(out.join("policy_sweep_frames.csv")).unwrap()
    };
    let a = run("5", "a");
    assert_eq!(a, run("5", "b"));
    assert_ne!(a, run("6", "c"));
}

#[test]
fn bad_inputs_exit_with_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("run.json");
    std::fs::write(&config, SMALL.replace("\"version\": 1", "\"version\": 9")).unwrap();
    let res = framecache(&["run", "--config", config.to_str().unwrap()]);
    assert_eq!(res.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&res.stderr).contains("version"));

    std::fs::write(&config, SMALL).unwrap();
    let res = framecache(&[
        "run",
        "--config",
        config.to_str().unwrap(),
        "--scenario",
        "nope",
    ]);
    assert_eq!(res.status.code(), Some(2));
    let res = framecache(&["run", "--config", "/nonexistent/run.json"]);
    assert_eq!(res.status.code(), Some(2));
}
