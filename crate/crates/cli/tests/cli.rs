//! End-to-end runs of the `contact4d` binary on small configurations.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use contact4d::io::SequenceBundle;
use serde_json::{json, Value};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_contact4d"));
    c.env_remove("CONTACT4D_SEED");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn stdout_lines(o: &Output) -> Vec<Value> {
    String::from_utf8_lossy(&o.stdout)
        .lines()
        .map(|l| serde_json::from_str(l).expect("json line"))
        .collect()
}

fn stderr_json(o: &Output) -> Value {
    serde_json::from_str(String::from_utf8_lossy(&o.stderr).trim()).expect("json error record")
}

fn small_config(bundles: usize, noise: f64) -> Value {
    json!({
        "protocol": {"segment_length": 5},
        "pipeline": {
            "width": 8, "heads": 2, "depth": 1, "state_tokens": 4, "prior_width": 5,
            "vertices": 20, "joints": 5, "window": 3, "patch": 2, "seed": 3
        },
        "synth": {
            "frames": 12, "persons": 2, "pointmap": [6, 8], "bundles": bundles,
            "drift_m_per_frame": 0.0,
            "noise": {"pose_rad": noise, "translation_m": noise, "contact_flip": 0.0},
            "template": {"v_per_bone": 3, "joints": 5, "vertices": 20, "seed": 1},
            "seed": 7
        }
    })
}

struct Workspace {
    dir: tempfile::TempDir,
}

impl Workspace {
    fn new() -> Self {
        Workspace { dir: tempfile::tempdir().expect("tempdir") }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn s(&self, name: &str) -> String {
        self.path(name).display().to_string()
    }

    fn write_config(&self, name: &str, cfg: &Value) -> String {
        fs::write(self.path(name), cfg.to_string()).expect("write config");
        self.s(name)
    }

    /// Synthesises bundles and weights; returns the bundle directories.
    fn synth(&self, cfg: &Value) -> Vec<String> {
        let config = self.write_config("config.json", cfg);
        let o = run(&["synth", "--config", &config, "--out", &self.s("data"), "--init-weights", &self.s("weights")]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        stdout_lines(&o)
            .iter()
            .filter_map(|v| v.get("bundle").and_then(Value::as_str).map(str::to_string))
            .collect()
    }
}

fn read_json(p: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(p).expect("report")).expect("json")
}

#[test]
fn usage_errors_exit_two() {
    assert_eq!(run(&["--bogus"]).status.code(), Some(2));
    assert_eq!(run(&[]).status.code(), Some(2));
    assert_eq!(run(&["eval", "--report", "r.json"]).status.code(), Some(2));
}

#[test]
fn missing_bundle_is_a_domain_failure() {
    let ws = Workspace::new();
    let o = run(&["eval", "--bundle", &ws.s("nowhere"), "--report", &ws.s("r.json")]);
    assert_eq!(o.status.code(), Some(1));
    assert_eq!(stderr_json(&o)["kind"], "integrity");
    assert!(!ws.path("r.json").exists());
}

#[test]
fn unknown_config_key_is_a_schema_error() {
    let ws = Workspace::new();
    let mut cfg = small_config(1, 0.0);
    cfg["protocol"]["segment_lenght"] = json!(5);
    let config = ws.write_config("bad.json", &cfg);
    let o = run(&["synth", "--config", &config, "--out", &ws.s("data")]);
    assert_eq!(o.status.code(), Some(1));
    assert_eq!(stderr_json(&o)["kind"], "schema");
}

#[test]
fn zero_noise_eval_is_exact_and_reproducible() {
    let ws = Workspace::new();
    let bundles = ws.synth(&small_config(1, 0.0));
    assert_eq!(bundles.len(), 1);
    let config = ws.s("config.json");
    for name in ["a", "b"] {
        let report = ws.s(&format!("{name}.json"));
        let csv = ws.s(&format!("{name}.csv"));
        let o = run(&["eval", "--bundle", &bundles[0], "--config", &config, "--report", &report, "--csv", &csv]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    assert_eq!(fs::read(ws.path("a.json")).unwrap(), fs::read(ws.path("b.json")).unwrap());
    assert_eq!(fs::read(ws.path("a.csv")).unwrap(), fs::read(ws.path("b.csv")).unwrap());

    let r = read_json(&ws.path("a.json"));
    let m = &r["metrics"];
    for k in ["pa_mpjpe_mm", "wa_mpjpe_mm", "w_mpjpe_mm", "rte_pct", "mpjpe_mm", "pve_mm", "geo_contact_error_cm"] {
        assert_eq!(m[k].as_f64(), Some(0.0), "{k}");
    }
    for k in ["contact_precision", "contact_recall", "contact_f1"] {
        assert_eq!(m[k].as_f64(), Some(1.0), "{k}");
    }
    assert_eq!(r["protocol"]["config"]["segment_length"], 5);
}

#[test]
fn several_bundles_write_report_directories() {
    let ws = Workspace::new();
    let bundles = ws.synth(&small_config(2, 0.05));
    assert_eq!(bundles.len(), 2);
    let mut args = vec!["--jobs", "2", "contact-eval", "--bundle"];
    args.extend(bundles.iter().map(String::as_str));
    let (reports, csvs) = (ws.s("reports"), ws.s("csvs"));
    args.extend(["--report", &reports, "--csv", &csvs]);
    let o = run(&args);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for b in &bundles {
        let stem = Path::new(b).file_name().unwrap().to_string_lossy().into_owned();
        let r = read_json(&ws.path("reports").join(format!("{stem}.json")));
        let keys: Vec<&String> = r["metrics"].as_object().unwrap().keys().collect();
        assert_eq!(keys, ["contact_f1", "contact_precision", "contact_recall", "geo_contact_error_cm"]);
        assert!(ws.path("csvs").join(format!("{stem}.csv")).exists());
    }
}

#[test]
fn grad_check_passes_and_rejects_frozen_groups() {
    let ws = Workspace::new();
    ws.synth(&small_config(1, 0.0));
    let weights = ws.s("weights");
    let o = run(&["grad-check", "--weights", &weights, "--group", "all"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let reports = stdout_lines(&o);
    assert!(reports.len() >= 4);
    for r in &reports {
        assert_eq!(r["passed"], true, "{r}");
        assert!(r["checked"].as_u64().unwrap() > 0);
    }
    for group in ["contact_head", "fusion", "gate", "residual"] {
        assert!(reports.iter().any(|r| r["group"] == group), "{group}");
    }
    let o = run(&["grad-check", "--weights", &weights, "--group", "decoder"]);
    assert_eq!(o.status.code(), Some(1));
    assert_eq!(stderr_json(&o)["kind"], "invalid_argument");
}

#[test]
fn ablation_ladder_reports_the_readout_identity() {
    let ws = Workspace::new();
    let bundles = ws.synth(&small_config(1, 0.02));
    let config = ws.s("config.json");
    let report = ws.s("ablate.json");
    let o = run(&["ablate", "--bundle", &bundles[0], "--weights", &ws.s("weights"), "--config", &config, "--report", &report]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let r = read_json(&ws.path("ablate.json"));
    assert_eq!(r["zero_residual_matches_parallel_readout"], true);
    let runs: Vec<&String> = r["runs"].as_object().unwrap().keys().collect();
    assert_eq!(runs, ["full", "no_geometry", "no_momentum", "parallel_readout", "zero_residual"]);
    assert_eq!(r["deltas_vs_full"].as_object().unwrap().len(), 4);
}

#[test]
fn demo_is_causal_under_truncation() {
    let ws = Workspace::new();
    let bundles = ws.synth(&small_config(1, 0.02));
    let full = SequenceBundle::load(Path::new(&bundles[0])).unwrap();
    full.truncated(5).unwrap().save(&ws.path("short")).unwrap();
    let weights = ws.s("weights");
    for (input, out) in [(bundles[0].clone(), "pred_full"), (ws.s("short"), "pred_short")] {
        let o = run(&["demo", "--bundle", &input, "--weights", &weights, "--out", &ws.s(out)]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        let line = &stdout_lines(&o)[0];
        assert!(line["fps"].as_f64().unwrap() > 0.0);
    }
    let a = SequenceBundle::load(&ws.path("pred_full")).unwrap();
    let b = SequenceBundle::load(&ws.path("pred_short")).unwrap();
    assert_eq!(a.frames(), 12);
    assert_eq!(b.frames(), 5);
    assert_eq!(a.pred.params.as_ref().unwrap()[..5], b.pred.params.as_ref().unwrap()[..]);
    assert_eq!(a.pred.vertices.as_ref().unwrap()[..5], b.pred.vertices.as_ref().unwrap()[..]);
    assert_eq!(a.contact_pred.as_ref().unwrap()[..5], b.contact_pred.as_ref().unwrap()[..]);
}

#[test]
fn weights_that_do_not_fit_the_bundle_are_rejected() {
    let ws = Workspace::new();
    let bundles = ws.synth(&small_config(1, 0.0));
    let mut cfg = small_config(1, 0.0);
    cfg["pipeline"]["vertices"] = json!(30);
    cfg["synth"]["template"]["vertices"] = json!(30);
    let config = ws.write_config("other.json", &cfg);
    let o = run(&["synth", "--config", &config, "--out", &ws.s("other"), "--init-weights", &ws.s("other_w")]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let o = run(&["demo", "--bundle", &bundles[0], "--weights", &ws.s("other_w"), "--out", &ws.s("x")]);
    assert_eq!(o.status.code(), Some(1));
    assert_eq!(stderr_json(&o)["kind"], "schema");
}

fn synth_bytes(ws: &Workspace, out: &str, cfg: &Value, env_seed: Option<&str>) -> (Output, Vec<Vec<u8>>) {
    let config = ws.write_config(&format!("{out}.json"), cfg);
    let mut c = bin();
    c.args(["synth", "--config", &config, "--out", &ws.s(out)]);
    if let Some(s) = env_seed {
        c.env("CONTACT4D_SEED", s);
    }
    let o = c.output().unwrap();
    let mut files = Vec::new();
    if o.status.success() {
        for line in stdout_lines(&o) {
            let dir = PathBuf::from(line["bundle"].as_str().unwrap());
            let mut names: Vec<PathBuf> = fs::read_dir(&dir).unwrap().map(|e| e.unwrap().path()).collect();
            names.sort();
            files.extend(names.iter().map(|p| fs::read(p).unwrap()));
        }
    }
    (o, files)
}

#[test]
fn seed_variable_overrides_the_config() {
    let ws = Workspace::new();
    let mut cfg = small_config(1, 0.05);
    let (_, base) = synth_bytes(&ws, "base", &cfg, None);
    let (_, again) = synth_bytes(&ws, "again", &cfg, None);
    assert_eq!(base, again);
    let (_, from_env) = synth_bytes(&ws, "env", &cfg, Some("41"));
    assert_ne!(base, from_env);
    cfg["seed"] = json!(41);
    let (_, from_cfg) = synth_bytes(&ws, "cfg", &cfg, None);
    assert_eq!(from_env, from_cfg);
    let (o, _) = synth_bytes(&ws, "bad", &cfg, Some("minus one"));
    assert_eq!(o.status.code(), Some(1));
    assert_eq!(stderr_json(&o)["kind"], "schema");
}
