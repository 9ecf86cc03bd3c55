use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn cfseg(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cfseg")).current_dir(dir).args(args).output().expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = cfseg(dir, args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn phantom_and_prepare(dir: &Path, variant: &str) {
    ok(dir, &["phantom", "--out", "ph", "--n", "9", "--size", "32", "--seed", "5", "--noise", "0.05", "--hole-rate", "0.05"]);
    ok(dir, &["prepare", "--in", "ph", "--out", "prep", "--variant", variant, "--seed", "2", "--window", "-200:-30"]);
}

fn train(dir: &Path, variant: &str) {
    ok(
        dir,
        &[
            "train", "--data", "prep", "--variant", variant, "--preset", "toy", "--epochs", "1", "--batch", "2", "--lr",
            "2e-4", "--lambda", "100", "--seed", "7", "--out", "m.ckpt",
        ],
    );
}

#[test]
fn e1_workflow_runs_end_to_end() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    phantom_and_prepare(d, "e1");
    for f in ["ph/phantom.json", "ph/hu/img_0000.huim", "ph/masks/img_0000.png", "ph/holey/img_0000.png", "prep/manifest.json"] {
        assert!(d.join(f).is_file(), "{f}");
    }
    train(d, "e1");
    ok(d, &["segment", "--ckpt", "m.ckpt", "--in", "prep/test", "--out", "seg"]);
    let meta: serde_json::Value = serde_json::from_slice(&fs::read(d.join("seg/segment.json")).unwrap()).unwrap();
    assert_eq!(meta["variant"], "e1");
    let n_test = fs::read_dir(d.join("prep/test")).unwrap().count();
    assert_eq!(meta["images"].as_array().unwrap().len(), n_test);

    ok(d, &["evaluate", "--pred", "seg", "--truth", "prep/truth", "--out", "r.csv", "--format", "csv"]);
    let csv = fs::read_to_string(d.join("r.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 3);
    assert!(csv.lines().nth(1).unwrap().starts_with("e1,epicardial,"));

    ok(d, &["bench", "--ckpt", "m.ckpt", "--in", "ph/hu", "--out", "b.json"]);
    let b: serde_json::Value = serde_json::from_slice(&fs::read(d.join("b.json")).unwrap()).unwrap();
    assert_eq!(b["timing"][0]["stats"]["n"], 9);
}

#[test]
fn e2_segmentation_writes_overlays() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    phantom_and_prepare(d, "e2");
    train(d, "e2");
    ok(d, &["segment", "--ckpt", "m.ckpt", "--in", "prep/test", "--out", "seg", "--postprocess"]);
    let overlays = fs::read_dir(d.join("seg")).unwrap().filter(|e| e.as_ref().unwrap().file_name().to_string_lossy().ends_with("_overlay.png")).count();
    assert!(overlays > 0);
    ok(d, &["evaluate", "--pred", "seg", "--truth", "prep/truth", "--out", "r.md", "--format", "markdown"]);
    let md = fs::read_to_string(d.join("r.md")).unwrap();
    assert!(md.contains("## e2_closing"));
    assert!(!md.contains("mediastinal"));
}

#[test]
fn config_file_is_overridden_by_flags() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    fs::write(d.join("p.json"), r#"{"n_images": 3, "size": 32, "seed": 1}"#).unwrap();
    ok(d, &["--config", "p.json", "phantom", "--out", "ph", "--n", "2"]);
    assert_eq!(fs::read_dir(d.join("ph/hu")).unwrap().count(), 2);
    let cfg: serde_json::Value = serde_json::from_slice(&fs::read(d.join("ph/phantom.json")).unwrap()).unwrap();
    assert_eq!(cfg["size"], 32);
    assert_eq!(cfg["seed"], 1);
}

#[test]
fn exit_codes_follow_the_error_kind() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    assert_eq!(code(&cfseg(d, &["frobnicate"])), 2);
    assert_eq!(code(&cfseg(d, &["prepare", "--in", "x", "--out", "y", "--variant", "e9"])), 2);
    assert_eq!(code(&cfseg(d, &["phantom", "--out", "ph", "--size", "4"])), 2);
    assert_eq!(code(&cfseg(d, &["train", "--data", "missing", "--variant", "e1", "--out", "m.ckpt"])), 3);

    fs::write(d.join("junk.ckpt"), b"not a checkpoint").unwrap();
    assert_eq!(code(&cfseg(d, &["bench", "--ckpt", "junk.ckpt", "--in", ".", "--out", "b.json"])), 3);
    assert_eq!(code(&cfseg(d, &["bench", "--ckpt", "absent.ckpt", "--in", ".", "--out", "b.json"])), 4);
    assert_eq!(code(&cfseg(d, &["--config", "absent.json", "phantom", "--out", "ph"])), 4);
}

#[test]
fn postprocess_on_e1_checkpoint_is_a_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    phantom_and_prepare(d, "e1");
    train(d, "e1");
    let out = cfseg(d, &["segment", "--ckpt", "m.ckpt", "--in", "prep/test", "--out", "seg", "--postprocess"]);
    assert_eq!(code(&out), 2);
    let out = cfseg(d, &["train", "--data", "prep", "--variant", "e3", "--out", "n.ckpt"]);
    assert_eq!(code(&out), 2, "variant differs from the prepared one");
}
