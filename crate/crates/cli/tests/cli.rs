use std::process::Command;

fn hyperzero() -> Command {
    Command::new(env!("CARGO_BIN_EXE_hyperzero"))
}

#[test]
fn help_lists_every_verb() {
    let out = hyperzero().arg("--help").output().unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    for verb in [
        "train-rl",
        "collect",
        "split",
        "train-hz",
        "train-baseline",
        "eval",
        "oracle",
        "report",
        "serve",
        "all",
        "ablate",
        "export",
    ] {
        assert!(text.contains(verb), "{verb} missing");
    }
    for flag in [
        "--family",
        "--axis",
        "--profile",
        "--seed",
        "--jobs",
        "--out",
    ] {
        assert!(text.contains(flag), "{flag} missing");
    }
}

#[test]
fn oracle_prints_a_value_table() {
    let out = hyperzero()
        .args(["oracle", "--psi", "2", "--horizon", "50"])
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["oracle"]["values"].as_array().unwrap().len(), 81);
    assert_eq!(v["oracle"]["horizon"], 50);
    assert!(v["critic"].is_null());
}

#[test]
fn bad_inputs_fail_cleanly() {
    let out = hyperzero()
        .args(["--family", "cartpole", "oracle", "--psi", "1"])
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("cartpole"));
    let out = hyperzero()
        .args(["--family", "pendulumspin", "oracle", "--psi", "1"])
        .output()
        .unwrap();
    assert!(!out.status.success());
    let out = hyperzero()
        .args(["all", "--agents", "hz"])
        .output()
        .unwrap();
    assert!(!out.status.success());
}

#[test]
fn collect_without_specialists_fails() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let r = hyperzero()
        .args(["--out", out, "collect"])
        .output()
        .unwrap();
    assert!(!r.status.success());
    assert!(String::from_utf8_lossy(&r.stderr).contains("train-rl"));
}
