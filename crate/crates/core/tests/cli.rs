use std::path::Path;
use std::process::{Command, Output};

fn miolab(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_miolab"))
        .args(args)
        .arg("--out")
        .arg(out)
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, text: &str) -> String {
    let path = dir.join("config.toml");
    std::fs::write(&path, text).unwrap();
    path.display().to_string()
}

#[test]
fn gradcheck_exits_zero() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), "[gradcheck]\npoints = 200\n");
    let out = miolab(&["gradcheck", "--config", &config, "--jobs", "1"], &dir.path().join("run"));
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("PASS  gradcheck dpo-probability"));
    assert!(dir.path().join("run/gradcheck.csv").exists());
    assert!(dir.path().join("run/manifest-gradcheck.toml").exists());
}

#[test]
fn unknown_key_is_named_and_exit_is_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), "[toy]\nstepz = 10\n");
    let out = miolab(&["toy", "--config", &config], &dir.path().join("run"));
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("stepz"));
}

#[test]
fn failing_invariant_gives_exit_one() {
    // Under the default toy settings DPO's chosen mean rises in scenario 2,
    // so the collapse invariant fails.
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), "[toy]\nmethods = [\"dpo\"]\nscenarios = [2]\nsteps = 200\n");
    let out = miolab(&["toy", "--config", &config], &dir.path().join("run"));
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("chosen collapses"));
}

#[test]
fn toy_outputs_are_reproducible_and_chartable() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), "[toy]\nsteps = 100\n");
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    miolab(&["toy", "--config", &config, "--seed", "9"], &a);
    miolab(&["toy", "--config", &config, "--seed", "9"], &b);
    let mut names: Vec<_> = std::fs::read_dir(&a)
        .unwrap()
        .map(|e| e.unwrap().file_name())
        .filter(|n| n.to_string_lossy().ends_with(".csv"))
        .collect();
    names.sort();
    assert_eq!(names.len(), 8);
    for name in &names {
        assert_eq!(std::fs::read(a.join(name)).unwrap(), std::fs::read(b.join(name)).unwrap());
    }
    let out = miolab(&["report"], &a);
    assert!(out.status.success());
    let svg = std::fs::read_to_string(a.join(names[0].to_string_lossy().replace(".csv", ".svg"))).unwrap();
    assert_eq!(svg.matches("<polyline").count(), 3);
}
