use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use microswim::distill::{DimModel, MathPolicy};
use microswim::harness::checkpoint::{load_actor, load_agent};
use microswim::harness::logs::{load_transitions, parse_eval_log, parse_metrics, EvalSummary, MathPolicyFile};

fn microswim(args: &[&str]) -> Output {
    let out = Command::new(env!("CARGO_BIN_EXE_microswim")).args(args).output().expect("running microswim");
    assert!(
        out.status.success(),
        "microswim {args:?} failed\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn train(dir: &Path) {
    microswim(&[
        "train",
        "--seed",
        "7",
        "--steps",
        "200",
        "--set",
        "sac.batch_size=32",
        "--out",
        dir.to_str().unwrap(),
    ]);
}

#[test]
fn train_eval_analyze_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    let run = tmp.path().join("run");
    train(&run);

    for f in ["manifest.json", "metrics.csv", "transitions.jsonl", "best_actor.ckpt", "final_agent.ckpt"] {
        assert!(run.join(f).is_file(), "{f} missing");
    }
    let manifest: serde_json::Value = serde_json::from_str(&fs::read_to_string(run.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seed"], 7);
    assert_eq!(manifest["config"]["sac"]["total_steps"], 200);

    let metrics = fs::read_to_string(run.join("metrics.csv")).unwrap();
    let rows = parse_metrics(&metrics).unwrap();
    assert!(!rows.is_empty());
    assert!(rows.windows(2).all(|w| w[0].step < w[1].step));

    let transitions = load_transitions(&run.join("transitions.jsonl")).unwrap();
    assert_eq!(transitions.lines.len(), 200);
    assert_eq!(transitions.skipped, 0);
    assert!(transitions.lines.iter().all(|l| l.s.as_ref().is_some_and(|s| s.len() == 21)));

    let agent = load_agent(&run.join("final_agent.ckpt")).unwrap();
    assert_eq!(agent.agent.updates, 200 - 32 + 1);
    let best = load_actor(&run.join("best_actor.ckpt")).unwrap();
    assert_eq!(best.meta.get("provisional"), Some("true"));

    // same seed and config: identical metrics, byte for byte
    let again = tmp.path().join("again");
    train(&again);
    assert_eq!(fs::read(run.join("metrics.csv")).unwrap(), fs::read(again.join("metrics.csv")).unwrap());
    assert_eq!(fs::read(run.join("final_agent.ckpt")).unwrap(), fs::read(again.join("final_agent.ckpt")).unwrap());

    let eval = tmp.path().join("eval.csv");
    microswim(&[
        "eval",
        "--checkpoint",
        run.join("best_actor.ckpt").to_str().unwrap(),
        "--steps",
        "60",
        "--out",
        eval.to_str().unwrap(),
    ]);
    let log = parse_eval_log(&fs::read_to_string(&eval).unwrap()).unwrap();
    assert_eq!(log.records.len(), 60);
    let summary: EvalSummary = serde_json::from_str(&fs::read_to_string(tmp.path().join("eval.csv.summary.json")).unwrap()).unwrap();
    assert_eq!(summary.steps, 60);
    assert!((summary.total_progress_deg - log.total_progress()).abs() < 1e-9);

    let analysis = tmp.path().join("analysis");
    let out = microswim(&[
        "analyze",
        "--transitions",
        run.join("transitions.jsonl").to_str().unwrap(),
        "--window",
        "50",
        "--out-dir",
        analysis.to_str().unwrap(),
    ]);
    assert!(String::from_utf8_lossy(&out.stdout).contains("200 steps in 4 windows"));
    let hist = fs::read_to_string(analysis.join("histograms.csv")).unwrap();
    assert_eq!(hist.lines().count(), 1 + 41 + 2);
    assert_eq!(fs::read_to_string(analysis.join("velocity.csv")).unwrap().lines().count(), 5);
    assert_eq!(fs::read_to_string(analysis.join("angle.csv")).unwrap().lines().count(), 201);
}

#[test]
fn math_policy_runs() {
    let tmp = tempfile::tempdir().unwrap();
    let policy = MathPolicy {
        dims: vec![
            DimModel::Constant { value: 1.0, rmse: 0.0 },
            DimModel::Constant { value: 1.0, rmse: 0.0 },
            DimModel::Sine { amplitude: 0.8, phase: 0.3, offset: 0.0, rmse: 0.0 },
            DimModel::Square { amplitude: 1.0, phase: 1.0, offset: 0.0, rmse: 0.0 },
        ],
    };
    let path = tmp.path().join("policy.toml");
    fs::write(&path, MathPolicyFile::new(&policy, 3.0, 10).to_toml_string()).unwrap();
    let out = tmp.path().join("math.csv");
    microswim(&["run-math", "--policy", path.to_str().unwrap(), "--steps", "40", "--out", out.to_str().unwrap()]);
    let log = parse_eval_log(&fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(log.records.len(), 40);
    assert!(log.records.iter().all(|r| r.action.iter().all(|a| a.abs() <= 1.0)));
}

#[test]
fn field_probe_reports_drive_rate() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("field.csv");
    // ten whole drive periods, so an elliptical field still averages to the drive rate
    let duration = (20.0 * std::f64::consts::PI / 100.0).to_string();
    microswim(&["field-probe", "--action", "0,1,0,-0.5", "--duration", &duration, "--out", out.to_str().unwrap()]);
    let summary: serde_json::Value = serde_json::from_str(&fs::read_to_string(tmp.path().join("field.csv.summary.json")).unwrap()).unwrap();
    let rate = summary["rate_rad_per_s"].as_f64().unwrap();
    assert!((rate - 100.0).abs() < 1.0, "rate {rate}");
    assert_eq!(fs::read_to_string(&out).unwrap().lines().count(), 629);
}

#[test]
fn bad_config_key_names_line() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("bad.toml");
    fs::write(&cfg, "seed = 1\n[sac]\ngama = 0.9\n").unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_microswim"))
        .args(["train", "--config", cfg.to_str().unwrap(), "--out", tmp.path().join("x").to_str().unwrap()])
        .output()
        .unwrap();
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("gama") && err.contains("line 3"), "{err}");
    assert!(!tmp.path().join("x").exists());
}
