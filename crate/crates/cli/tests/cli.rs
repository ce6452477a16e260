use std::path::Path;
use std::process::{Command, Output};

fn sw(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sharedworld")).args(args).output().unwrap()
}

fn s(p: &Path) -> String {
    p.to_string_lossy().into_owned()
}

fn write_conf(dir: &Path, text: &str) -> String {
    let p = dir.join("c.conf");
    std::fs::write(&p, text).unwrap();
    s(&p)
}

#[test]
fn gen_data_then_one_training_step() {
    let dir = tempfile::tempdir().unwrap();
    let conf = write_conf(dir.path(), "# smoke\ntrain.steps=1\n");
    let data = dir.path().join("data");
    let out = sw(&["gen-data", "--config", &conf, "--out", &s(&data), "--pairs", "2", "--seed", "4"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(String::from_utf8_lossy(&out.stderr).lines().count(), 2, "one progress line per clip");
    assert!(out.stdout.is_empty());
    assert!(data.join("clip_00001/agent2_video.svt").exists());

    let ckpt = dir.path().join("m.ckpt");
    let out = sw(&["train", "--config", &conf, "--data", &s(&data), "--out", &s(&ckpt)]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(ckpt.exists());
    assert!(String::from_utf8_lossy(&out.stderr).contains("step 1/1"));
}

#[test]
fn unknown_config_key_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let conf = write_conf(dir.path(), "model.depht=4\n");
    let out = sw(&["gen-data", "--config", &conf, "--out", &s(&dir.path().join("d")), "--pairs", "1", "--seed", "0"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("model.depht"));
}

#[test]
fn bad_arguments_exit_one_and_help_exits_zero() {
    assert_eq!(sw(&["train", "--bogus"]).status.code(), Some(1));
    assert_eq!(sw(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(sw(&[]).status.code(), Some(1));
    assert_eq!(sw(&["--help"]).status.code(), Some(0));
    assert_eq!(sw(&["gradcheck", "--tol", "abc"]).status.code(), Some(1));
}

#[test]
fn missing_data_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let conf = write_conf(dir.path(), "");
    let out = sw(&["train", "--config", &conf, "--data", &s(&dir.path().join("none")), "--out", &s(&dir.path().join("x"))]);
    assert_eq!(out.status.code(), Some(2));
    let out = sw(&["sample", "--ckpt", &s(&dir.path().join("none.ckpt")), "--clip", "x", "--out", "y"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn mismatched_clips_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let front = dir.path().join("front.conf");
    std::fs::write(&front, "ablate.four_views=false\n").unwrap();
    let data = dir.path().join("data");
    let out = sw(&["gen-data", "--config", &s(&front), "--out", &s(&data), "--pairs", "1", "--seed", "0"]);
    assert_eq!(out.status.code(), Some(0));
    let conf = write_conf(dir.path(), "train.steps=1\n");
    let out = sw(&["train", "--config", &conf, "--data", &s(&data), "--out", &s(&dir.path().join("m"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("four_views"));
}

#[test]
fn gradcheck_prints_a_table_and_fails_on_impossible_tolerance() {
    let out = sw(&["gradcheck"]);
    assert_eq!(out.status.code(), Some(0));
    let table = String::from_utf8_lossy(&out.stdout);
    assert!(table.lines().next().unwrap().starts_with("name"));
    assert!(table.contains("cross.0.proj.weight"));
    assert!(table.contains("raymap.0.fc2.weight"));
    assert!(!table.contains("FAIL"));

    let out = sw(&["gradcheck", "--tol", "1e-15"]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn invariants_pass_on_the_default_config() {
    let out = sw(&["invariants"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stdout));
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.lines().count() >= 14);
    assert!(text.lines().all(|l| l.starts_with("PASS")));
}
