use std::fs;
use std::process::{Command, Output};

fn evsync(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_evsync"))
        .args(args)
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn lists_and_shows_presets() {
    let o = evsync(&["--list-presets"]);
    assert!(o.status.success());
    assert_eq!(
        stdout(&o).lines().collect::<Vec<_>>(),
        ["ring_example", "sync_demo"]
    );
    let o = evsync(&["--preset", "sync_demo", "--show-preset"]);
    assert!(o.status.success());
    assert!(stdout(&o).contains("mode = \"sync_only\""));
}

#[test]
fn runs_preset_with_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let o = evsync(&[
        "--preset",
        "ring_example",
        "--trials",
        "3",
        "--horizon",
        "25",
        "--seed",
        "5",
        "--workers",
        "2",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("wrote"));
    let json: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("aggregate.json")).unwrap()).unwrap();
    assert_eq!(json["config"]["run"]["trials"], 3);
    assert_eq!(json["config"]["run"]["horizon"], 25);
    assert_eq!(json["seed"], 5);
    for f in [
        "trace_event.csv",
        "trace_full.csv",
        "mse_mean.csv",
        "events.csv",
    ] {
        assert!(out.join(f).is_file(), "{f}");
    }
}

#[test]
fn runs_config_file_in_sync_mode() {
    let dir = tempfile::tempdir().unwrap();
    let shown = evsync(&["--preset", "sync_demo", "--show-preset"]);
    let path = dir.path().join("demo.toml");
    fs::write(&path, stdout(&shown)).unwrap();
    let out = dir.path().join("out");
    let o = evsync(&[
        "--config",
        path.to_str().unwrap(),
        "--trials",
        "5",
        "--horizon",
        "40",
        "--precision",
        "double-double",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(out.join("sync_trace.csv").is_file());
}

#[test]
fn infeasible_config_fails_with_reason() {
    let dir = tempfile::tempdir().unwrap();
    let shown = stdout(&evsync(&["--preset", "ring_example", "--show-preset"]));
    let path = dir.path().join("bad.toml");
    fs::write(&path, shown.replace("[0.0, 1.1]]", "[0.0, 5.0]]")).unwrap();
    let out = dir.path().join("out");
    let o = evsync(&[
        "--config",
        path.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("infeasible"), "{}", stderr(&o));
    assert!(!out.exists());
}

#[test]
fn bad_invocations() {
    assert!(!evsync(&[]).status.success());
    assert!(!evsync(&["--preset", "sync_demo", "--config", "x.toml"])
        .status
        .success());
    let o = evsync(&["--preset", "nope", "--trials", "1"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("unknown preset"));
    let o = evsync(&["--preset", "ring_example", "--trials", "0"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("run.trials"));
}
