use std::path::Path;
use std::process::{Command, Output};

use taea::pipeline::{read_report, TtaConfig};
use tempfile::tempdir;

fn taea(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_taea")).args(args).output().unwrap()
}

fn stdout(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn synth(dir: &Path) -> String {
    let out = taea(&[
        "synth", "--classes", "4", "--dim", "12", "--samples", "200", "--sigma", "0.3", "--shift-angle", "0.4",
        "--out", dir.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    stdout(&out).trim().to_string()
}

#[test]
fn run_writes_report() {
    let dir = tempdir().unwrap();
    let manifest = synth(dir.path());
    let report = dir.path().join("out.json");
    let out = taea(&["run", "--manifest", &manifest, "--report", report.to_str().unwrap(), "--gamma", "0.4"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(stdout(&out).trim(), report.to_str().unwrap());
    let r = read_report(&report).unwrap();
    assert_eq!(r.n_samples, 200);
    assert_eq!(r.config, TtaConfig { gamma: 0.4, ..TtaConfig::default() });
}

#[test]
fn echoed_config_reparses_identically() {
    let dir = tempdir().unwrap();
    let manifest = synth(dir.path());
    let out = taea(&[
        "run", "--manifest", &manifest, "--gamma", "0.37", "--lam", "0.3", "--lr", "0.0021", "--epochs", "2",
        "--batch", "5", "--neg-cache", "off", "--seed", "17", "--per-sample",
    ]);
    assert_eq!(out.status.code(), Some(0));
    let report: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    let cfg: TtaConfig = serde_json::from_value(report["config"].clone()).unwrap();
    let want = TtaConfig {
        gamma: 0.37,
        lambda_frac: 0.3,
        lr: 0.0021,
        epochs: 2,
        batch: 5,
        use_neg_cache: false,
        seed: 17,
        per_sample_adaptation: true,
        ..TtaConfig::default()
    };
    assert_eq!(cfg, want);
    assert!(report["cache_stats"].is_null());
}

#[test]
fn run_without_manifest_is_usage_error() {
    let out = taea(&["run"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stdout(&out).is_empty());
    assert!(String::from_utf8_lossy(&out.stderr).contains("--manifest"));
}

#[test]
fn unknown_flag_is_usage_error() {
    let out = taea(&["run", "--manifest", "m.json", "--momentum", "0.9"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn bad_data_exits_two() {
    let dir = tempdir().unwrap();
    let missing = dir.path().join("nope.json");
    assert_eq!(taea(&["run", "--manifest", missing.to_str().unwrap()]).status.code(), Some(2));

    let manifest = synth(dir.path());
    assert_eq!(taea(&["run", "--manifest", &manifest, "--lam", "0"]).status.code(), Some(2));
    let out = taea(&["sweep", "--manifest", &manifest, "--param", "momentum", "--values", "1"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn sweep_prints_csv() {
    let dir = tempdir().unwrap();
    let manifest = synth(dir.path());
    let out = taea(&["sweep", "--param", "gamma", "--values", "0,0.2,0.4,0.6,0.8,1.0", "--manifest", &manifest]);
    assert_eq!(out.status.code(), Some(0));
    let text = stdout(&out);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 7);
    assert!(lines[0].starts_with("value,overall_top1"));
    assert!(lines[4].starts_with("0.6,"));
}

#[test]
fn gradcheck_reports_json() {
    let out = taea(&["gradcheck", "--seed", "3"]);
    assert_eq!(out.status.code(), Some(0));
    let v: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert!(v["max_rel_err"].as_f64().unwrap() < 1e-3);
    assert_eq!(v["pass"], true);
}

#[test]
fn inspect_summarizes_manifest_and_report() {
    let dir = tempdir().unwrap();
    let manifest = synth(dir.path());
    let out = taea(&["inspect", "--manifest", &manifest]);
    let v: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!((v["n_samples"].as_u64(), v["n_labeled"].as_u64(), v["dim"].as_u64()), (Some(200), Some(200), Some(12)));

    let report = dir.path().join("r.json");
    taea(&["run", "--manifest", &manifest, "--report", report.to_str().unwrap()]);
    let out = taea(&["inspect", "--report", report.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(stdout(&out), std::fs::read_to_string(&report).unwrap() + "\n");
}

#[test]
fn help_documents_every_flag() {
    let cases: [(&str, &[&str]); 5] = [
        ("run", &["--manifest", "--report", "--gamma", "--lam", "--lr", "--epochs", "--batch", "--neg-cache", "--seed", "--per-sample"]),
        ("synth", &["--classes", "--dim", "--samples", "--sigma", "--shift-angle", "--drift", "--noise", "--seed", "--out"]),
        ("gradcheck", &["--classes", "--dim", "--samples", "--seed", "--eps"]),
        ("sweep", &["--manifest", "--param", "--values", "--out", "--gamma", "--lam"]),
        ("inspect", &["--manifest", "--report"]),
    ];
    for (sub, flags) in cases {
        let out = taea(&[sub, "--help"]);
        assert_eq!(out.status.code(), Some(0), "{sub}");
        let text = stdout(&out);
        for flag in flags {
            assert!(text.contains(flag), "{sub} help lacks {flag}");
        }
    }
    let run_help = stdout(&taea(&["run", "--help"]));
    for default in ["[default: 0.6]", "[default: 0.25]", "[default: 0.001]", "[default: 3]", "[default: on]"] {
        assert!(run_help.contains(default), "missing {default}");
    }
    assert_eq!(taea(&["--help"]).status.code(), Some(0));
}
