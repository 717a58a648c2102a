use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use cyclexplain::image::ImageTensor;
use cyclexplain::models::ExplainerBundle;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_cyclexplain"));
    c.env("RUST_LOG", "warn");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

const TINY: &str = r#"
seed = 5

[data]
count = 24
image_size = 32

[classifier]
blocks = [[4, 1], [8, 2], [8, 2], [8, 2]]

[classifier_training]
batch_size = 8
max_epochs = 2
n_boot = 50

[generator]
stage_kernels = [2, 4, 4, 8]
convs_per_stage = 2

[discriminator.backbone]
stage_kernels = [2, 4, 4, 8]
convs_per_stage = 2

[training]
batch_size = 4
max_epochs = 1
probe_every = 2

[evaluation]
n_boot = 50
probe_size = 4
"#;

fn tiny_config(dir: &Path) -> PathBuf {
    let path = dir.join("tiny.toml");
    fs::write(&path, format!("output_dir = {:?}\n{TINY}", dir.join("run").to_str().unwrap())).unwrap();
    path
}

fn train_both(dir: &Path) -> PathBuf {
    let cfg = tiny_config(dir);
    let c = cfg.to_str().unwrap();
    let o = run(&["train-classifier", "--config", c]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let o = run(&["train-explainer", "--config", c]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    cfg
}

#[test]
fn usage_errors_exit_with_one() {
    assert_eq!(code(&run(&[])), 1);
    assert_eq!(code(&run(&["no-such-command"])), 1);
    assert_eq!(code(&run(&["--help"])), 0);
}

#[test]
fn invalid_config_names_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let o = run(&["train-classifier", "--config", cfg.to_str().unwrap(), "--set", "classifier_training.batch_size=1"]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("classifier_training") && stderr(&o).contains("batch_size"), "{}", stderr(&o));

    let o = run(&["train-explainer", "--set", "training.optimizer.learning_rat=0.1"]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("training.optimizer"), "{}", stderr(&o));
    assert!(stderr(&o).contains("learning_rat"), "{}", stderr(&o));
}

#[test]
fn classifier_training_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let c = cfg.to_str().unwrap();
    let o = run(&["train-classifier", "--config", c]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let run_dir = dir.path().join("run");
    let first = fs::read(run_dir.join("classifier_metrics.json")).unwrap();
    assert!(run_dir.join("classifier/meta.json").is_file());
    let resolved = run_dir.join("train-classifier.config.toml");
    assert!(fs::read_to_string(&resolved).unwrap().contains("image_size = 32"));

    let o = run(&["train-classifier", "--config", resolved.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(fs::read(run_dir.join("classifier_metrics.json")).unwrap(), first);
}

#[test]
fn explainer_requires_a_classifier() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let o = run(&["train-explainer", "--config", cfg.to_str().unwrap()]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("train-classifier"), "{}", stderr(&o));
    assert!(!dir.path().join("run/explainer").exists());
}

#[test]
fn end_to_end_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = train_both(dir.path());
    let run_dir = dir.path().join("run");

    let summary: serde_json::Value = serde_json::from_slice(&fs::read(run_dir.join("train_summary.json")).unwrap()).unwrap();
    let log = fs::read_to_string(run_dir.join("train_log.jsonl")).unwrap();
    assert_eq!(log.lines().count() as u64, summary["steps"].as_u64().unwrap());
    assert_eq!(log.lines().count(), 4, "16 train images in batches of 4");
    let report: serde_json::Value = serde_json::from_slice(&fs::read(run_dir.join("transfer_report.json")).unwrap()).unwrap();
    assert_eq!(report["n"], 8);
    assert!(run_dir.join("explainer/meta.json").is_file());

    let synth = dir.path().join("synth");
    let o = run(&["gen-synthetic", "--count", "4", "--size", "32", "--seed", "3", "--out", synth.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let imgs: Vec<PathBuf> = (0..3).map(|i| synth.join(format!("images/syn{i:05}.png"))).collect();
    let mut args: Vec<&str> = vec!["explain", "--config", cfg.to_str().unwrap()];
    args.extend(imgs.iter().map(|p| p.to_str().unwrap()));
    let o = run(&args);
    assert_eq!(code(&o), 0, "{}", stderr(&o));

    let out = run_dir.join("explanations");
    let bundle = ExplainerBundle::load(&run_dir.join("explainer")).unwrap();
    for (i, p) in imgs.iter().enumerate() {
        let id = format!("syn{i:05}");
        assert!(out.join(format!("{id}_overlay.png")).is_file());
        assert!(out.join(format!("{id}_relevance.json")).is_file());
        let rec: serde_json::Value =
            serde_json::from_slice(&fs::read(out.join(format!("{id}_probabilities.json"))).unwrap()).unwrap();
        let direct = bundle.classifier.classify(&ImageTensor::read(p).unwrap()).unwrap();
        assert_eq!(rec["prob_before"].as_f64().unwrap(), direct);
    }
    assert!(out.join("explain.config.toml").is_file());
}

#[test]
fn explain_continues_past_bad_inputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = train_both(dir.path());
    let synth = dir.path().join("synth");
    let o = run(&["gen-synthetic", "--count", "2", "--size", "32", "--out", synth.to_str().unwrap()]);
    assert_eq!(code(&o), 0);
    let good = synth.join("images/syn00000.png");
    let other = dir.path().join("copy");
    fs::create_dir_all(&other).unwrap();
    fs::copy(&good, other.join("syn00000.png")).unwrap();
    let broken = dir.path().join("broken.png");
    fs::write(&broken, b"not a png").unwrap();
    let o = run(&[
        "explain",
        "--config",
        cfg.to_str().unwrap(),
        "--set",
        &format!("explain.out_dir={:?}", dir.path().join("ex").to_str().unwrap()),
        broken.to_str().unwrap(),
        good.to_str().unwrap(),
        other.join("syn00000.png").to_str().unwrap(),
        synth.join("images/syn00001.png").to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 2);
    let report: serde_json::Value =
        serde_json::from_slice(&fs::read(dir.path().join("ex/explain_report.json")).unwrap()).unwrap();
    let entries = report.as_array().unwrap();
    assert_eq!(entries.len(), 4);
    assert!(entries[0]["error"].is_string());
    assert!(entries[1]["error"].is_null());
    assert!(entries[2]["error"].as_str().unwrap().contains("collides"));
    assert!(entries[3]["error"].is_null());
    assert!(dir.path().join("ex/syn00001_overlay.png").is_file());
}

#[test]
fn study_commands() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("responses.csv");
    let o = run(&["gen-responses", "--seed", "2", "--out", csv.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let out = dir.path().join("report");
    let o = run(&["study-report", "--responses", csv.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let report: serde_json::Value = serde_json::from_slice(&fs::read(out.join("study_report.json")).unwrap()).unwrap();
    for block in ["means", "ranks", "method_tests", "interobserver_rho", "kmo", "general_factor", "order_effects"] {
        assert!(!report[block].is_null(), "missing {block}");
    }
    assert!(out.join("study_summary.txt").is_file());

    let empty = dir.path().join("empty.csv");
    fs::write(&empty, "").unwrap();
    let o = run(&["study-report", "--responses", empty.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_ne!(code(&o), 0);
    let header_only = dir.path().join("header.csv");
    fs::write(&header_only, "rater_id,item_id,method,criterion,score,variant\n").unwrap();
    let o = run(&["study-report", "--responses", header_only.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_ne!(code(&o), 0);
    let bad = dir.path().join("bad.csv");
    fs::write(&bad, "rater_id,item_id,method,criterion,score,variant\nr1,i1,m1,quality,9,A\n").unwrap();
    let o = run(&["study-report", "--responses", bad.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("row 1"), "{}", stderr(&o));

    let plan = dir.path().join("plan.json");
    let o = run(&["make-plan", "--items", "24", "--methods", "a,b,c,d", "--seed", "1", "--out", plan.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let p: serde_json::Value = serde_json::from_slice(&fs::read(&plan).unwrap()).unwrap();
    assert_eq!(p["variants"].as_array().unwrap().len(), 2);
}

#[test]
fn study_report_matches_golden_file() {
    let dir = tempfile::tempdir().unwrap();
    let fixture = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures");
    let out = dir.path().join("report");
    let o = run(&[
        "study-report",
        "--responses",
        fixture.join("responses.csv").to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let got = fs::read_to_string(out.join("study_report.json")).unwrap();
    let want = fs::read_to_string(fixture.join("study_report.golden.json")).unwrap();
    assert!(got == want, "study report drifted from the golden file");
}
