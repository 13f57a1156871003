//! Exit-code contract and a small end-to-end smoke pass through the binary.

use std::path::Path;
use std::process::Command;

fn frebis(args: &[&str], cwd: &Path) -> (i32, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_frebis"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("spawn frebis");
    let text = format!(
        "{}{}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    (out.status.code().unwrap_or(-1), text)
}

#[test]
fn help_and_version_exit_zero() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(frebis(&["--help"], dir.path()).0, 0);
    assert_eq!(frebis(&["--version"], dir.path()).0, 0);
    assert_eq!(frebis(&["train", "--help"], dir.path()).0, 0);
}

#[test]
fn usage_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(frebis(&["no-such-command"], dir.path()).0, 1);
    assert_eq!(frebis(&["train"], dir.path()).0, 1); // missing --config
    assert_eq!(frebis(&["render", "--checkpoint", "x"], dir.path()).0, 1); // no pose source
}

#[test]
fn validation_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let (code, text) = frebis(
        &["generate-scene", "--scene", "nope", "--out", "ds"],
        dir.path(),
    );
    assert_eq!(code, 2, "output: {text}");
    assert!(text.contains("unknown scene"), "output: {text}");

    // A config that parses but fails validation.
    std::fs::write(dir.path().join("bad.toml"), "version = 99\ndataset_dir = \"ds\"\noutput_dir = \"out\"\n").unwrap();
    let (code, text) = frebis(&["train", "--config", "bad.toml"], dir.path());
    assert_eq!(code, 2, "output: {text}");
}

#[test]
fn runtime_errors_exit_three() {
    let dir = tempfile::tempdir().unwrap();
    let (code, _) = frebis(&["train", "--config", "missing.toml"], dir.path());
    assert_eq!(code, 3);
    let (code, _) = frebis(
        &["extract-mesh", "--checkpoint", "missing.frebis", "--out", "m.obj"],
        dir.path(),
    );
    assert_eq!(code, 3);
}

#[test]
fn scene_train_inspect_smoke() {
    let dir = tempfile::tempdir().unwrap();
    let (code, text) = frebis(
        &["generate-scene", "--scene", "sphere", "--out", "ds", "--views", "4", "--size", "12"],
        dir.path(),
    );
    assert_eq!(code, 0, "output: {text}");
    assert!(dir.path().join("ds/cameras.json").exists());

    std::fs::write(
        dir.path().join("run.toml"),
        r#"
version = 1
dataset_dir = "ds"
output_dir = "out"

[field]
encoder_layers = [1, 1, 1]
encoder_width = 8
feature_width = 4
decoder_layers = 1
decoder_width = 8
appearance_width = 4
color_layers = 1
color_width = 8

[render]
n_coarse = 4
n_importance = 4

[train]
iterations = 3
ray_batch = 8
log_interval = 2
"#,
    )
    .unwrap();
    let (code, text) = frebis(&["train", "--config", "run.toml"], dir.path());
    assert_eq!(code, 0, "output: {text}");
    let ckpt = dir.path().join("out/checkpoint_final.frebis");
    assert!(ckpt.exists());
    assert!(dir.path().join("out/metrics.jsonl").exists());

    std::fs::write(dir.path().join("points.json"), "[[0.0, 0.0, 0.0], [0.5, 0.1, -0.2]]").unwrap();
    let (code, text) = frebis(
        &[
            "inspect-weights",
            "--checkpoint",
            "out/checkpoint_final.frebis",
            "--points",
            "points.json",
            "--out",
            "weights.json",
        ],
        dir.path(),
    );
    assert_eq!(code, 0, "output: {text}");
    let report = std::fs::read_to_string(dir.path().join("weights.json")).unwrap();
    assert!(report.contains("weights"), "report: {report}");
}
