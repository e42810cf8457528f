use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use crowdmeta_cli::metrics::Metrics;
use tempfile::TempDir;

const SMALL: &str = "\
seed = 5
max_iterations = 40
validation_interval = 20
val_tasks = 8
test_tasks = 8
";

fn crowdmeta(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_crowdmeta"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

struct Workspace {
    dir: TempDir,
    config: PathBuf,
}

impl Workspace {
    fn new(config: &str) -> Self {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.cfg");
        fs::write(&path, config).unwrap();
        Self { dir, config: path }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn cfg(&self) -> &str {
        self.config.to_str().unwrap()
    }

    fn run(&self, args: &[&str]) -> Output {
        let mut full = args.to_vec();
        full.extend(["--config", self.cfg()]);
        crowdmeta(&full)
    }

    fn train(&self, out: &str) -> PathBuf {
        let dir = self.path(out);
        let o = self.run(&["meta-train", "--out", dir.to_str().unwrap()]);
        assert!(o.status.success(), "{}", stderr(&o));
        dir
    }
}

fn metrics(dir: &Path) -> Metrics {
    Metrics::read(&dir.join("metrics.json")).unwrap()
}

#[test]
fn meta_train_writes_all_artifacts() {
    let ws = Workspace::new(SMALL);
    let out = ws.train("run");
    for name in ["checkpoint.bin", "train_log.csv", "metrics.json"] {
        assert!(out.join(name).is_file(), "missing {name}");
    }
    let log = fs::read_to_string(out.join("train_log.csv")).unwrap();
    let mut lines = log.lines();
    assert_eq!(lines.next(), Some("iteration,loss,wall_ms,pseudo_hash"));
    assert_eq!(lines.count(), 40);
    let m = metrics(&out);
    assert_eq!(m.command, "meta-train");
    assert_eq!(m.ablation, "none");
    assert!(m.training.is_some());
}

#[test]
fn ablation_flag_is_recorded() {
    let ws = Workspace::new(SMALL);
    let out = ws.path("abl");
    let o = ws.run(&["meta-train", "--out", out.to_str().unwrap(), "--ablation", "no-pseudo-annotation"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(metrics(&out).ablation, "no-pseudo-annotation");
}

#[test]
fn rerun_is_byte_identical() {
    let ws = Workspace::new(SMALL);
    let a = ws.train("a");
    let b = ws.train("b");
    assert_eq!(fs::read(a.join("metrics.json")).unwrap(), fs::read(b.join("metrics.json")).unwrap());
    assert_eq!(fs::read(a.join("checkpoint.bin")).unwrap(), fs::read(b.join("checkpoint.bin")).unwrap());
}

#[test]
fn seed_flag_changes_run() {
    let ws = Workspace::new(SMALL);
    let a = ws.train("a");
    let b = ws.path("b");
    let o = ws.run(&["meta-train", "--out", b.to_str().unwrap(), "--seed", "6"]);
    assert!(o.status.success());
    assert_ne!(metrics(&a).run_id, metrics(&b).run_id);
}

#[test]
fn unknown_config_key_is_named() {
    let ws = Workspace::new("seed = 1\nshotz = 3\n");
    let o = ws.run(&["meta-train", "--out", ws.path("x").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("shotz"));
}

#[test]
fn unwritable_out_dir_fails() {
    let ws = Workspace::new(SMALL);
    let blocker = ws.path("file");
    fs::write(&blocker, "").unwrap();
    let o = ws.run(&["meta-train", "--out", blocker.join("sub").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn evaluate_grid_has_one_row_per_cell() {
    let ws = Workspace::new(SMALL);
    let run = ws.train("run");
    let ckpt = run.join("checkpoint.bin");
    let out = ws.path("grid");
    let o = ws.run(&[
        "evaluate",
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--shots",
        "1,3,5",
        "--annotators",
        "3,5,7",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let cells = metrics(&out).cells;
    assert_eq!(cells.len(), 9);
    let axes: Vec<(usize, usize)> = cells.iter().map(|c| (c.shots, c.annotators)).collect();
    assert_eq!(axes[0], (1, 3));
    assert_eq!(axes[8], (5, 7));

    let single = ws.path("single");
    let o = ws.run(&["evaluate", "--checkpoint", ckpt.to_str().unwrap(), "--out", single.to_str().unwrap()]);
    assert!(o.status.success());
    assert_eq!(metrics(&single).cells.len(), 1);
}

#[test]
fn spammer_sweep_rows_follow_ratio() {
    let ws = Workspace::new(SMALL);
    let run = ws.train("run");
    let out = ws.path("sweep");
    let o = ws.run(&[
        "evaluate",
        "--checkpoint",
        run.join("checkpoint.bin").to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--spammer-ratio",
        "0.1,0.2,0.3,0.4",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let dists: Vec<String> = metrics(&out).cells.into_iter().map(|c| c.dist).collect();
    assert_eq!(dists.len(), 4);
    assert!(dists.iter().all(|d| !d.contains("0000000")), "{dists:?}");
}

#[test]
fn checkpoint_dimension_mismatch_is_rejected() {
    let ws = Workspace::new(SMALL);
    let run = ws.train("run");
    let other = Workspace::new(&format!("{SMALL}dim = 6\n"));
    let o = other.run(&[
        "evaluate",
        "--checkpoint",
        run.join("checkpoint.bin").to_str().unwrap(),
        "--out",
        other.path("x").to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn baselines_report_recovery_and_accuracy() {
    let ws = Workspace::new(&format!("{SMALL}target_dists = 0:0.4:0.6\n"));
    for method in ["mv", "ds"] {
        let out = ws.path(method);
        let o = ws.run(&["baseline", method, "--out", out.to_str().unwrap()]);
        assert!(o.status.success(), "{}", stderr(&o));
        let cell = &metrics(&out).cells[0];
        assert_eq!(cell.method, method);
        assert!(cell.label_recovery.is_some());
        assert!((0.0..=1.0).contains(&cell.mean_acc));
    }
}

#[test]
fn mv_and_ds_coincide_with_one_annotator() {
    let ws = Workspace::new(&format!("{SMALL}em_steps = 1\nshots = 3\n"));
    let cell = |method: &str| {
        let out = ws.path(method);
        let o = ws.run(&["baseline", method, "--out", out.to_str().unwrap(), "--annotators", "1"]);
        assert!(o.status.success(), "{}", stderr(&o));
        metrics(&out).cells.remove(0)
    };
    let (mv, ds) = (cell("mv"), cell("ds"));
    assert_eq!(mv.label_recovery, ds.label_recovery);
    assert_eq!(mv.mean_acc, ds.mean_acc);
}

#[test]
fn proto_baselines_need_checkpoint() {
    let ws = Workspace::new(SMALL);
    let o = ws.run(&["baseline", "proto-ds", "--out", ws.path("x").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    let run = ws.train("run");
    let out = ws.path("pds");
    let o = ws.run(&[
        "baseline",
        "proto-ds",
        "--checkpoint",
        run.join("checkpoint.bin").to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(metrics(&out).cells[0].method, "proto-ds");
}

#[test]
fn unknown_baseline_is_usage_error() {
    let ws = Workspace::new(SMALL);
    let o = ws.run(&["baseline", "snorkel", "--out", ws.path("x").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("snorkel"));
}

#[test]
fn verify_reports_and_exits_zero() {
    let o = crowdmeta(&["verify", "gradcheck"]);
    assert_eq!(o.status.code(), Some(0));
    let text = String::from_utf8_lossy(&o.stdout);
    assert!(text.contains("max relative error"));
    assert!(text.contains("1.0e-4"));

    let o = crowdmeta(&["verify", "em-monotone"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&o.stdout).contains("PASS"));
}

#[test]
fn verify_unknown_suite_is_usage_error() {
    assert_eq!(crowdmeta(&["verify", "everything"]).status.code(), Some(1));
}

#[test]
fn simulate_writes_annotations() {
    let ws = Workspace::new(SMALL);
    let out = ws.path("sim");
    let o = ws.run(&["simulate", "--out", out.to_str().unwrap(), "--annotators", "4"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let doc: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("simulate.json")).unwrap()).unwrap();
    let task = &doc["tasks"][0];
    assert_eq!(task["profiles"].as_array().unwrap().len(), 4);
    assert_eq!(task["R"], 4);
}

#[test]
fn bad_arguments_exit_one_and_help_exits_zero() {
    assert_eq!(crowdmeta(&["--frobnicate"]).status.code(), Some(1));
    assert_eq!(crowdmeta(&["--help"]).status.code(), Some(0));
}
