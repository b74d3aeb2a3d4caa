use std::path::Path;
use std::process::{Command, Output};

const TWO_LEVEL: &str = r#"
name = "cli-two-level"
budget = 300
seeds = [1]

[env]
kind = "overcooked"

[hierarchy]
levels = [
    { actions = 16, period = 1 },
    { actions = 5, period = 4 },
]
policy_hidden = [8]
ppo = { actors = 2, horizon = 32, minibatch_size = 16 }

[hierarchy.predictor]
hidden = [8]
"#;

fn dehrl(args: &[&str], root: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dehrl"))
        .args(args)
        .env("DEHRL_OUTPUT_ROOT", root)
        .output()
        .unwrap()
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn write_config(dir: &Path, text: &str) -> String {
    let path = dir.join("config.toml");
    std::fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn presets_are_listed_and_printed() {
    let tmp = tempfile::tempdir().unwrap();
    let list = dehrl(&["presets"], tmp.path());
    assert_eq!(list.status.code(), Some(0));
    assert!(stdout(&list).lines().any(|l| l == "overcooked-discovery"));

    let one = dehrl(&["presets", "overcooked-1-any"], tmp.path());
    assert_eq!(one.status.code(), Some(0));
    assert!(stdout(&one).contains("[hierarchy]"));

    assert_eq!(dehrl(&["presets", "no-such-preset"], tmp.path()).status.code(), Some(1));
}

#[test]
fn run_with_probe_prints_summary_and_labels() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(tmp.path(), TWO_LEVEL);
    let out = dehrl(&["run", &config, "--probe"], tmp.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let text = stdout(&out);
    assert!(text.contains("seed 1: 300 steps"), "{text}");
    let labels = text.lines().find(|l| l.contains("distinct useful")).unwrap();
    assert_eq!(labels.split_whitespace().count(), 2 + 5 + 3);
    assert!(tmp.path().join("cli-two-level").join("metrics.jsonl").exists());

    // the same name again is refused at runtime
    assert_eq!(dehrl(&["run", &config], tmp.path()).status.code(), Some(2));
}

#[test]
fn configuration_problems_exit_with_one() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(dehrl(&["run", "no-such-preset"], tmp.path()).status.code(), Some(1));
    let bad = TWO_LEVEL.replace("period = 4", "period = 0");
    let config = write_config(tmp.path(), &bad);
    let out = dehrl(&["run", &config], tmp.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("config error"));
    let config = write_config(tmp.path(), TWO_LEVEL);
    assert_eq!(dehrl(&["run", &config, "--seeds", "3,3"], tmp.path()).status.code(), Some(1));
}

#[test]
fn corrupt_checkpoint_exits_with_two() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(tmp.path(), TWO_LEVEL);
    let run_dir = tmp.path().join("explicit");
    let out = dehrl(
        &["run", &config, "--budget", "50", "--output", run_dir.to_str().unwrap()],
        tmp.path(),
    );
    assert_eq!(out.status.code(), Some(0));
    std::fs::write(run_dir.join("checkpoints").join("seed-1.json"), "not json").unwrap();
    assert_eq!(dehrl(&["resume", run_dir.to_str().unwrap()], tmp.path()).status.code(), Some(2));
}
