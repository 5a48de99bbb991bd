use std::path::Path;
use std::process::{Command, Output};

fn eblab(args: &[&str], seed: Option<&str>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_eblab"));
    cmd.args(args).env_remove("EBLAB_SEED");
    if let Some(s) = seed {
        cmd.env("EBLAB_SEED", s);
    }
    cmd.output().expect("binary runs")
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

const TINY: &str = "dataset = ring\nnLayerG = 2\nnLayerD = 2\nsizeG = 16\nsizeD = 16\n\
batch_size = 16\ntotal_steps = 30\neval_samples = 200\nmargin = 1\nlambda_pt = 0.1\n";

#[test]
fn oracle_reports_json_and_succeeds() {
    let out = eblab(&["oracle", "--suite", "lemma2", "--trials", "200"], None);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["all_passed"], true);
}

#[test]
fn train_writes_the_run_and_eval_rescoring_agrees() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "cfg", TINY);
    let run = dir.path().join("run");
    let out = eblab(&["train", "--config", &cfg, "--out", run.to_str().unwrap()], Some("3"));
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let trained: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(trained["seed"], 3);
    assert!(trained["mode_coverage"].is_number());
    let out = eblab(&["eval", "--run", run.to_str().unwrap()], None);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let evaluated: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(evaluated["mode_coverage"], trained["mode_coverage"]);
}

#[test]
fn grid_reruns_are_identical_under_a_pinned_seed() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write(dir.path(), "grid", &format!("grid_id = g\nseeds = 2\nsizeG = 8,16\n{TINY}").replace("sizeG = 16\n", ""));
    let out_dir = dir.path().join("out");
    let args = ["grid", "--spec", &spec, "--parallel", "2", "--out", out_dir.to_str().unwrap()];
    assert!(eblab(&args, Some("11")).status.success());
    let first = std::fs::read(out_dir.join("g/scores.csv")).unwrap();
    assert!(eblab(&args, Some("11")).status.success());
    assert_eq!(std::fs::read(out_dir.join("g/scores.csv")).unwrap(), first);
    let text = String::from_utf8(first).unwrap();
    assert_eq!(text.lines().count(), 5);
    assert!(text.lines().nth(1).unwrap().contains(",11,ring,completed,"));
}

#[test]
fn make_data_and_estimate_margin() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write(dir.path(), "ring.spec", "samples = 50\nmodes = 4\n");
    let csv = dir.path().join("ring.csv");
    assert!(eblab(&["make-data", "ring", "--spec", &spec, "--out", csv.to_str().unwrap()], None).status.success());
    let text = std::fs::read_to_string(&csv).unwrap();
    // Comment line, header, then one row per sample.
    assert_eq!(text.lines().count(), 52);

    let cfg = write(dir.path(), "cfg", &format!("{TINY}dataset = csv:{}\n", csv.display()).replace("dataset = ring\n", ""));
    let out = eblab(&["estimate-margin", "--config", &cfg, "--steps", "50"], None);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let m: f64 = String::from_utf8(out.stdout).unwrap().trim().parse().unwrap();
    assert!(m.is_finite() && m > 0.0);
}

#[test]
fn bad_inputs_fail_with_nonzero_exit() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "cfg", "grid = table1\nnLayerD = 7\n");
    let out = eblab(&["train", "--config", &cfg], None);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("legal values"));
    let cfg = write(dir.path(), "cfg2", TINY);
    assert!(!eblab(&["train", "--config", &cfg], Some("not-a-number")).status.success());
    let cfg = write(dir.path(), "cfg3", "framework = gan\noptimD = sgd\noptimG = sgd\nlr = 1e300\ndataset = ring\ntotal_steps = 5\n");
    assert!(!eblab(&["train", "--config", &cfg], None).status.success());
}
