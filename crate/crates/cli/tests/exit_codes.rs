use std::fs;
use std::path::Path;
use std::process::Command;

fn status(args: &[&str], cwd: &Path) -> i32 {
    Command::new(env!("CARGO_BIN_EXE_thyme"))
        .args(args)
        .current_dir(cwd)
        .env_remove("THYME_CONFIG")
        .output()
        .unwrap()
        .status
        .code()
        .unwrap()
}

#[test]
fn config_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("bad.json"), r#"{"sede": 3}"#).unwrap();
    assert_eq!(status(&["--config", "bad.json", "train"], dir.path()), 2);
    fs::write(dir.path().join("zero.json"), r#"{"ks": [0]}"#).unwrap();
    assert_eq!(status(&["--config", "zero.json", "eval"], dir.path()), 2);
    assert_eq!(status(&["ablate", "--axis", "depth"], dir.path()), 2);
}

#[test]
fn missing_inputs_exit_3() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(status(&["train", "--data", "nowhere"], dir.path()), 3);
    assert_eq!(status(&["--config", "absent.json", "train"], dir.path()), 3);
}

#[test]
fn malformed_data_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let fixture = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/annotations/invalid/self_edge.jsonl");
    fs::create_dir_all(dir.path().join("data/features")).unwrap();
    fs::copy(fixture, dir.path().join("data/annotations.jsonl")).unwrap();
    assert_eq!(status(&["train"], dir.path()), 2);
}

#[test]
fn corrupted_gradient_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(status(&["gradcheck", "--corrupt-gradient", "0.01"], dir.path()), 1);
    assert_eq!(status(&["gradcheck"], dir.path()), 0);
}

#[test]
fn eval_without_checkpoint_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(status(&["synth"], dir.path()), 0);
    assert_eq!(status(&["eval"], dir.path()), 3);
}
