use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn lipmp(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lipmp"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("spawn lipmp")
}

fn ok(out: &Output) -> String {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout.clone()).unwrap()
}

const CONFIG: &str = r#"
mode = "finite"
sigma = 1.1
[grid]
kind = "reuter"
gamma = 10
[pursuit]
lambda0 = 1e-6
max_iterations = 8
[dictionary]
sh_max = 4
[data]
model = { kind = "random", band_limit = 3, decay = 1.0, seed = 3 }
noise = { level = 0.05 }
[evaluation]
grid = { kind = "reuter", gamma = 6 }
"#;

#[test]
fn grid_lists_points() {
    let dir = tempfile::tempdir().unwrap();
    let text = ok(&lipmp(&["grid", "reuter:10"], dir.path()));
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("phi,t"));
    assert_eq!(lines.count(), 123);
}

#[test]
fn synth_needs_seed_when_noisy() {
    let dir = tempfile::tempdir().unwrap();
    let out = lipmp(&["synth", "--model", "contrived", "--grid", "reuter:6", "--noise", "0.05"], dir.path());
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("--seed"));
    let text = ok(&lipmp(
        &["synth", "--model", "contrived", "--grid", "reuter:6", "--noise", "0.05", "--seed", "4"],
        dir.path(),
    ));
    assert!(text.starts_with("phi,t,value"));
    assert_eq!(text.lines().count(), 45);
}

#[test]
fn run_eval_and_dict() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(d.join("exp.toml"), CONFIG).unwrap();
    let denied = lipmp(&["run", "rofmp", "-c", "exp.toml"], d);
    assert!(!denied.status.success());

    let summary = ok(&lipmp(&["run", "rofmp", "-c", "exp.toml", "--seed", "9", "-o", "a"], d));
    let report: serde_json::Value = serde_json::from_str(&summary).unwrap();
    assert!(report["iterations"].as_u64().unwrap() >= 1);
    for f in ["log.csv", "timings.csv", "dictionary.txt", "approximation.csv", "summary.json"] {
        assert!(d.join("a").join(f).exists(), "{f}");
    }

    ok(&lipmp(&["run", "rofmp", "-c", "exp.toml", "--seed", "9", "-o", "b"], d));
    for f in ["log.csv", "dictionary.txt", "approximation.csv"] {
        assert_eq!(fs::read(d.join("a").join(f)).unwrap(), fs::read(d.join("b").join(f)).unwrap(), "{f}");
    }

    let rmse: f64 = ok(&lipmp(&["eval", "a/approximation.csv", "--model", "random:3:1:3"], d))
        .trim()
        .parse()
        .unwrap();
    assert!((rmse - report["rel_rmse"].as_f64().unwrap()).abs() < 1e-12);
    let zero: f64 = ok(&lipmp(&["eval", "a/approximation.csv", "--truth", "a/approximation.csv"], d))
        .trim()
        .parse()
        .unwrap();
    assert_eq!(zero, 0.0);

    let shown = ok(&lipmp(&["dict", "inspect", "a/dictionary.txt"], d));
    assert!(shown.contains(&format!("elements: {}", report["iterations"])));
    ok(&lipmp(&["dict", "export", "a/dictionary.txt", "--first", "2", "-o", "two.txt"], d));
    let two = fs::read_to_string(d.join("two.txt")).unwrap();
    assert_eq!(two.lines().filter(|l| !l.is_empty() && !l.starts_with('#')).count(), 2);
}

#[test]
fn replay_reproduces_selection() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(d.join("exp.toml"), CONFIG).unwrap();
    ok(&lipmp(&["run", "rofmp", "-c", "exp.toml", "--seed", "9", "--lambda0", "0", "-o", "a"], d));
    ok(&lipmp(
        &[
            "run", "rofmp", "-c", "exp.toml", "--seed", "9", "--lambda0", "0", "-o", "b",
            "--dictionary", "a/dictionary.txt", "--replay",
        ],
        d,
    ));
    let elements = |p: &str| -> Vec<String> {
        fs::read_to_string(d.join(p))
            .unwrap()
            .lines()
            .skip(1)
            .map(|l| l.split(',').nth(1).unwrap().to_string())
            .collect()
    };
    assert_eq!(elements("a/log.csv"), elements("b/log.csv"));
}

#[test]
fn bad_config_fails_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("bad.toml"), "mode = \"finite\"\nbogus = 1\n").unwrap();
    let out = lipmp(&["run", "rfmp", "-c", "bad.toml"], dir.path());
    assert!(!out.status.success());
    assert!(!out.stderr.is_empty());
}
