use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_polytope-scope"));
    c.env("RUST_LOG", "warn");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn polytope-scope")
}

fn ok(args: &[&str]) {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

fn write_config(dir: &Path, body: &str) -> PathBuf {
    let p = dir.join("config.json");
    std::fs::write(&p, body).unwrap();
    p
}

const CIRCLES: &str = r#"{
  "task": "circles",
  "seed": 3,
  "data": { "n": 60 },
  "trainer": { "epochs": 40, "checkpoint_every": 20 },
  "homology": { "n_trials": 2, "bins": 50 }
}"#;

const PINN: &str = r#"{
  "task": "pinn-duffing",
  "seed": 1,
  "architecture": [2, 4, 4, 1],
  "data": { "n_steps": 40, "dt": 0.1 },
  "trainer": { "epochs": 30, "checkpoint_every": 10 },
  "decomposition": { "zoom": { "x_min": -0.3, "x_max": 0.3, "y_min": -0.3, "y_max": 0.3 } },
  "homology": { "n_trials": 2 }
}"#;

fn snapshot(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    std::fs::read_dir(dir)
        .unwrap()
        .flatten()
        .filter(|e| e.path().is_file())
        .map(|e| (e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path()).unwrap()))
        .collect()
}

fn manifest_files(dir: &Path) -> Vec<String> {
    let m: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.join("manifest.json")).unwrap()).unwrap();
    m["commands"]
        .as_object()
        .unwrap()
        .values()
        .flat_map(|v| v.as_array().unwrap().iter().map(|s| s.as_str().unwrap().to_string()))
        .collect()
}

#[test]
fn classification_pipeline_end_to_end() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), CIRCLES);
    let out = tmp.path().join("run");
    let (c, o) = (cfg.to_str().unwrap(), out.to_str().unwrap());
    for cmd in ["gen-data", "train", "decompose", "fiedler", "homology", "sweep", "plot"] {
        ok(&[cmd, "--config", c, "--out", o]);
    }
    ok(&["decompose", "--config", c, "--out", o, "--epoch", "20"]);

    for f in manifest_files(&out) {
        assert!(out.join(&f).exists(), "manifest lists missing file {f}");
    }
    let ckpts: Vec<String> = snapshot(&out).into_keys().filter(|k| k.starts_with("ckpt_")).collect();
    assert_eq!(ckpts.len(), 3);

    let heat = std::fs::read_to_string(out.join("heatmap_beta0.csv")).unwrap();
    let epochs: std::collections::BTreeSet<&str> =
        heat.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(epochs.len(), 3);

    let summary = std::fs::read_to_string(out.join("summary.csv")).unwrap();
    let lines: Vec<&str> = summary.lines().collect();
    assert_eq!(
        lines[1],
        "Dataset,Architecture,Train,Test,Missclass. (%),L2 Error,Missclass. (%),L2 Error"
    );
    assert!(lines[2].starts_with("Circles,\"(2,6,6,2)\","));

    let corr = std::fs::read_to_string(out.join("correlation.csv")).unwrap();
    assert!(corr.starts_with("dim,n_deltas,pearson\n"));
    assert_eq!(corr.lines().count(), 3);

    let echo: serde_json::Value =
        serde_json::from_slice(&std::fs::read(out.join("run.json")).unwrap()).unwrap();
    assert_eq!(echo["architecture"], serde_json::json!([2, 6, 6, 2]));
    assert_eq!(echo["homology"]["seed"], serde_json::json!(3));
}

#[test]
fn reruns_are_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), CIRCLES);
    let out = tmp.path().join("run");
    let (c, o) = (cfg.to_str().unwrap(), out.to_str().unwrap());
    ok(&["all", "--config", c, "--out", o]);
    ok(&["fiedler", "--config", c, "--out", o]);
    let first = snapshot(&out);
    ok(&["all", "--config", c, "--out", o]);
    ok(&["fiedler", "--config", c, "--out", o]);
    assert_eq!(first, snapshot(&out));
}

#[test]
fn pinn_pipeline_with_zoom() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), PINN);
    let out = tmp.path().join("run");
    let (c, o) = (cfg.to_str().unwrap(), out.to_str().unwrap());
    ok(&["all", "--config", c, "--out", o]);
    ok(&["homology", "--config", c, "--out", o, "--epoch", "0"]);
    let files = snapshot(&out);
    for f in ["trajectory.csv", "f_vector.csv", "curves_0.csv", "decomposition_30_zoom.svg", "critical.csv"] {
        assert!(files.contains_key(f), "missing {f}");
    }
    let fv = String::from_utf8(files["f_vector.csv"].clone()).unwrap();
    assert_eq!(fv.lines().next(), Some("epoch,f0,f1,f2"));
    assert_eq!(fv.lines().count(), 5);
}

#[test]
fn seed_override_changes_data() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), CIRCLES);
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    let c = cfg.to_str().unwrap();
    ok(&["gen-data", "--config", c, "--out", a.to_str().unwrap()]);
    ok(&["gen-data", "--config", c, "--out", b.to_str().unwrap(), "--seed", "4"]);
    assert_ne!(
        std::fs::read(a.join("data.csv")).unwrap(),
        std::fs::read(b.join("data.csv")).unwrap()
    );
}

fn error_report(out: &Output) -> serde_json::Value {
    let text = String::from_utf8_lossy(&out.stderr);
    let line = text.lines().last().unwrap_or_default();
    serde_json::from_str(line).unwrap_or_else(|_| panic!("not a JSON report: {text}"))
}

#[test]
fn failures_exit_nonzero_with_reports() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("run");
    let o = out.to_str().unwrap();

    let missing = run(&["train", "--config", tmp.path().join("nope.json").to_str().unwrap()]);
    assert!(!missing.status.success());
    assert_eq!(error_report(&missing)["error"], "missing_input");

    let cfg = write_config(tmp.path(), r#"{"task":"circles","trainer":{"epochs":10,"bogus":1}}"#);
    let bad = run(&["gen-data", "--config", cfg.to_str().unwrap(), "--out", o]);
    assert_eq!(bad.status.code(), Some(2));
    assert_eq!(error_report(&bad)["error"], "config");

    let cfg = write_config(tmp.path(), r#"{"task":"circles","trainer":{"epochs":10,"checkpoint_every":20}}"#);
    let bad = run(&["gen-data", "--config", cfg.to_str().unwrap(), "--out", o]);
    assert_eq!(bad.status.code(), Some(2));

    let cfg = write_config(tmp.path(), CIRCLES);
    let early = run(&["train", "--config", cfg.to_str().unwrap(), "--out", o]);
    assert_eq!(early.status.code(), Some(1));
    assert_eq!(error_report(&early)["error"], "missing_input");

    let cfg = write_config(tmp.path(), PINN);
    let c = cfg.to_str().unwrap();
    ok(&["gen-data", "--config", c, "--out", o]);
    ok(&["train", "--config", c, "--out", o]);
    let f = run(&["fiedler", "--config", c, "--out", o]);
    assert_eq!(f.status.code(), Some(2));
    assert_eq!(error_report(&f)["error"], "unsupported");
    let e = run(&["decompose", "--config", c, "--out", o, "--epoch", "7"]);
    assert_eq!(error_report(&e)["error"], "missing_input");
}
