use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const TINY: &str = r#"{
  "starts": {"count": 1},
  "goal_line": {"count": 2},
  "planner": {"budget": 1500},
  "loop": {"iterations": 1, "train": {"epochs": 2}}
}"#;

fn advplan(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_advplan"))
        .current_dir(dir)
        .args(args)
        .output()
        .unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn usage_errors_exit_with_1() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&advplan(dir.path(), &[])), 1);
    assert_eq!(code(&advplan(dir.path(), &["frobnicate"])), 1);
    let o = advplan(dir.path(), &["--preset", "nope", "gen-targets"]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("unknown preset"));
    fs::write(dir.path().join("bad.json"), "{\"seed\": \"x\"}").unwrap();
    assert_eq!(code(&advplan(dir.path(), &["--config", "bad.json", "gen-targets"])), 1);
    assert_eq!(code(&advplan(dir.path(), &["--config", "missing.json", "loop"])), 1);
    assert_eq!(code(&advplan(dir.path(), &["--help"])), 0);
}

#[test]
fn logs_carry_timestamps() {
    let dir = tempfile::tempdir().unwrap();
    let o = advplan(dir.path(), &["grad-check", "--seeds", "0"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let line = stderr(&o).lines().next().unwrap().to_string();
    // [2026-01-01T00:00:00.000Z INFO ...
    assert!(line.starts_with('[') && line.as_bytes()[11] == b'T', "{line}");
    let rows: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert!(rows[0]["max_relative_error"].as_f64().unwrap() < 1e-5);
}

#[test]
fn ik_probe_prints_verified_states() {
    let dir = tempfile::tempdir().unwrap();
    let o = advplan(dir.path(), &["ik-probe", "--target", "0.3,-0.1,0.2", "--count", "4"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let rows: Vec<serde_json::Value> = serde_json::from_slice(&o.stdout).unwrap();
    assert!(!rows.is_empty() && rows.len() <= 4);
    for r in &rows {
        assert!(r["hand_error"].as_f64().unwrap() <= 1e-4);
        assert_eq!(r["state"].as_array().unwrap().len(), 7);
    }
    let o = advplan(dir.path(), &["ik-probe", "--target", "3,0,0"]);
    assert_eq!(code(&o), 0);
    assert_eq!(String::from_utf8_lossy(&o.stdout).trim(), "[]");
}

#[test]
fn full_pipeline_on_a_tiny_config() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(d.join("tiny.json"), TINY).unwrap();
    let base = ["--config", "tiny.json", "--out", "out"];
    let with = |extra: &[&str]| -> Vec<String> {
        base.iter().chain(extra).map(|s| s.to_string()).collect()
    };
    let run = |extra: &[&str]| {
        let args = with(extra);
        advplan(d, &args.iter().map(String::as_str).collect::<Vec<_>>())
    };

    // The loop needs targets first.
    assert_eq!(code(&run(&["loop"])), 1);

    let o = run(&["gen-targets"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let summary: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(summary["queries"], 2);
    assert!(d.join("out/targets/queries.json").is_file());

    // Refuses to overwrite without --force.
    let o = run(&["gen-targets"]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("--force"));
    assert_eq!(code(&run(&["gen-targets", "--force"])), 0);

    let o = run(&["loop", "--jobs", "1"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let reports: Vec<serde_json::Value> = serde_json::from_slice(&o.stdout).unwrap();
    // Naive generation plus the final evaluation pass.
    assert_eq!(reports.len(), 2);
    assert_eq!(reports[0]["objective"], "naive");
    assert_eq!(reports[1]["objective"], "adversarial");
    for r in &reports {
        let s = r["success_rate"].as_f64().unwrap();
        assert!((0.0..=1.0).contains(&s));
    }
    let run_dir = d.join("out/run");
    assert!(run_dir.join("iter_0/model.idsc").is_file());
    assert!(run_dir.join("run.json").is_file());
    let on_disk: Vec<serde_json::Value> =
        serde_json::from_str(&fs::read_to_string(run_dir.join("report.json")).unwrap()).unwrap();
    assert_eq!(on_disk, reports);
    assert_eq!(code(&run(&["loop"])), 1);

    let o = run(&["eval"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let rows: Vec<serde_json::Value> = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(rows.len(), 2);
    assert_eq!(rows[0]["success_rate"], reports[0]["success_rate"]);

    for kind in ["endpoints", "paths"] {
        let o = run(&["export-plot", "--iteration", "0", "--kind", kind]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        let svg = fs::read_to_string(d.join(format!("out/plots/iter_0_{kind}.svg"))).unwrap();
        assert!(svg.starts_with("<svg") && svg.contains("<circle"));
        let csv = fs::read_to_string(d.join(format!("out/plots/iter_0_{kind}.csv"))).unwrap();
        assert!(csv.starts_with("motion,collides,point,x,y\n"));
    }
    assert_eq!(code(&run(&["export-plot", "--iteration", "0"])), 1);
    assert_eq!(code(&run(&["export-plot", "--iteration", "7", "--force"])), 1);
}
