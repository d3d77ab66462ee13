use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use msda::data::synthetic::{generate, SyntheticSpec};
use msda::data::write_canonical;
use msda::evaluation::LooReport;

fn msda(args: &[&str], envs: &[(&str, &Path)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_msda"));
    cmd.args(args).env_remove("MSDA_OUTPUT_ROOT");
    for (k, v) in envs {
        cmd.env(k, v);
    }
    cmd.output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

struct Workspace {
    dir: tempfile::TempDir,
}

impl Workspace {
    fn new(domains: &[&str]) -> Self {
        let dir = tempfile::tempdir().unwrap();
        let mut spec = SyntheticSpec::new(domains, 24, 3);
        spec.min_fillers = 2;
        spec.max_fillers = 5;
        write_canonical(&generate(&spec).unwrap(), &dir.path().join("data")).unwrap();
        Self { dir }
    }

    fn path(&self, rel: &str) -> PathBuf {
        self.dir.path().join(rel)
    }

    fn config(&self, name: &str, variant: &str, extra: &str) -> PathBuf {
        let p = self.path(name);
        fs::write(
            &p,
            format!(
                r#"{{"dataset": "data", "variant": "{variant}",
                    "encoder": {{"backbone": "toy-cnn", "dim": 8, "num_layers": 1, "vocab_hash_size": 64, "max_len": 12, "seed": 1}},
                    "train": {{"learning_rate": 0.005, "epochs": 1, "warmup_steps": 2, "batch_size": 8}}{extra}}}"#
            ),
        )
        .unwrap();
        p
    }
}

#[test]
fn train_writes_a_loadable_run_directory() {
    let ws = Workspace::new(&["books", "dvd", "kitchen"]);
    let cfg = ws.config("c.json", "MoE-Att", r#", "held_out": "kitchen""#);
    let run = ws.path("run");
    let o = msda(&["train", "--config", s(&cfg), "--output", s(&run)], &[]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    for f in [
        "config.json",
        "manifest.json",
        "history.jsonl",
        "mixing.bin",
        "mixing.json",
        "report.json",
        "encoders/global.bin",
        "encoders/expert-books.bin",
        "encoders/expert-dvd.bin",
    ] {
        assert!(run.join(f).is_file(), "missing {f}");
    }
    let (_, model) = msda::run::load_model(&run).unwrap();
    assert_eq!(model.num_experts(), 2);
    let mixing: serde_json::Value = serde_json::from_slice(&fs::read(run.join("mixing.json")).unwrap()).unwrap();
    assert_eq!(mixing["rule"], "attention");
    for line in fs::read_to_string(run.join("history.jsonl")).unwrap().lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        assert!(v["kind"].is_string());
    }

    let out = ws.path("agreement");
    let o = msda(&["analyze", "agreement", "--run", s(&run), "--out", s(&out)], &[]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let svg = fs::read_to_string(out.join("agreement-0.svg")).unwrap();
    assert!(svg.starts_with("<svg") || svg.starts_with("<?xml"));
    assert!(svg.contains("<metadata>"));

    let out = ws.path("projection");
    let o = msda(
        &["analyze", "project", "--run", s(&run), "--encoder", "expert-dvd", "--sample-size", "10", "--out", s(&out)],
        &[],
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let proj: serde_json::Value = serde_json::from_slice(&fs::read(out.join("projection.json")).unwrap()).unwrap();
    assert_eq!(proj["coordinates"].as_array().unwrap().len(), 20);

    let o = msda(&["analyze", "project", "--run", s(&run), "--encoder", "nope", "--out", s(&out)], &[]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("expert-books"));
}

#[test]
fn output_root_comes_from_the_environment() {
    let ws = Workspace::new(&["books", "dvd"]);
    let cfg = ws.config("c.json", "Basic", "");
    let root = ws.path("runs-root");
    let o = msda(&["train", "--config", s(&cfg)], &[("MSDA_OUTPUT_ROOT", &root)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(root.join("Basic/manifest.json").is_file());
}

#[test]
fn usage_errors_exit_with_two() {
    let ws = Workspace::new(&["books", "dvd"]);
    let missing = ws.path("absent.json");
    let o = msda(&["train", "--config", s(&missing)], &[]);
    assert_eq!(code(&o), 2);

    let bad = ws.config("bad.json", "MoE-Max", "");
    let o = msda(&["train", "--config", s(&bad)], &[]);
    assert_eq!(code(&o), 2);
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("MoE-Att-Adv-X"), "{err}");

    let deep = ws.config("deep.json", "Adv-6", "");
    let o = msda(&["train", "--config", s(&deep)], &[]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("layer 6"));

    let unknown = ws.config("unknown.json", "Basic", r#", "epochz": 3"#);
    assert_eq!(code(&msda(&["train", "--config", s(&unknown)], &[])), 2);

    let two = ws.config("loo.json", "Basic", "");
    let o = msda(&["eval-loo", "--config", s(&two), "--output", s(&ws.path("loo"))], &[]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("at least 3"));

    let o = msda(&["ingest", "--kind", "amazon", "--in", s(&ws.path("nowhere")), "--out", s(&ws.path("x"))], &[]);
    assert_eq!(code(&o), 2);
    assert_eq!(code(&msda(&["frobnicate"], &[])), 2);
}

#[test]
fn eval_loo_reports_a_table_and_failed_cells() {
    let ws = Workspace::new(&["books", "dvd", "kitchen"]);
    let cfg = ws.config("ok.json", "MoE-Avg", r#", "seeds": [0, 1]"#);
    let out = ws.path("loo");
    let o = msda(&["eval-loo", "--config", s(&cfg), "--jobs", "2", "--output", s(&out)], &[]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.contains("Model") && stdout.contains("macroA") && stdout.contains("MoE-Avg"));
    let report: LooReport = serde_json::from_slice(&fs::read(out.join("loo_report.json")).unwrap()).unwrap();
    assert_eq!(report.reports.len(), 3);
    assert!(report.reports.iter().all(|r| r.seeds.len() == 2));
    assert_eq!(report.aggregate, report.recompute_aggregate());
    assert_eq!(fs::read_to_string(out.join("loo_table.txt")).unwrap(), stdout.lines().take(2).map(|l| format!("{l}\n")).collect::<String>());

    // fine-tuned averaging needs validation data, so every cell fails
    let text = r#"{"dataset": "data", "variant": "Independent-Ft",
            "encoder": {"backbone": "toy-cnn", "dim": 8, "num_layers": 1, "vocab_hash_size": 64, "max_len": 12, "seed": 1},
            "train": {"epochs": 1, "val_fraction": 0.0, "learning_rate": 0.005}}"#;
    let cfg = ws.path("fail.json");
    fs::write(&cfg, text).unwrap();
    let out = ws.path("loo-fail");
    let o = msda(&["eval-loo", "--config", s(&cfg), "--output", s(&out)], &[]);
    assert_eq!(code(&o), 1);
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.contains("fail"), "{stdout}");
    let report: LooReport = serde_json::from_slice(&fs::read(out.join("loo_report.json")).unwrap()).unwrap();
    assert!(report.any_failed() && report.aggregate.is_none());
    assert!(report.reports.iter().all(|r| !r.failures.is_empty()));
}
