use std::path::Path;
use std::process::{Command, Output};

fn formbound(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_formbound"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

const HARDY: &str = "\
[problem]
n = 3
p = 2
seed = 7

[mesh]
kind = radial
inner = 0.05
outer = 1
cells = 256

[weight]
kind = hardy
t = 0.75

[solve]
boundary = power
";

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p.to_string_lossy().into_owned()
}

#[test]
fn hardy_solve_succeeds_and_writes_u() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "hardy.ini", HARDY);
    let o = formbound(&["solve", "--config", &cfg, "--out", "run"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let u = std::fs::read_to_string(dir.path().join("run/u.csv")).unwrap();
    assert!(u.starts_with("index,x1,u"));
    assert_eq!(u.lines().count(), 258);
    assert!(dir.path().join("run/summary.txt").is_file());
    assert!(stdout(&o).contains("pass"));
}

#[test]
fn missing_file_is_input_error_naming_path() {
    let dir = tempfile::tempdir().unwrap();
    let o = formbound(&["solve", "--config", "nowhere/absent.ini"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("nowhere/absent.ini"), "{}", stderr(&o));

    // a referenced table file that does not exist is an input error as well
    let cfg = write(dir.path(), "table.ini", &HARDY.replace("kind = hardy\nt = 0.75", "kind = table\ndensity = missing.csv"));
    let o = formbound(&["solve", "--config", &cfg], dir.path());
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    assert!(stderr(&o).contains("missing.csv"), "{}", stderr(&o));
}

#[test]
fn coercivity_failure_reports_measured_lambda() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "big.ini", &HARDY.replace("t = 0.75", "t = 0.75\nscale = 8"));
    let o = formbound(&["solve", "--config", &cfg, "--out", "run"], dir.path());
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    let err = stderr(&o);
    assert!(err.contains("kind=gate"), "{err}");
    let measured: f64 = err
        .split_whitespace()
        .find_map(|w| w.strip_prefix("measured="))
        .expect("measured value reported")
        .parse()
        .unwrap();
    assert!(measured >= 1.0, "{measured}");
    // fail-fast: nothing written
    assert!(!dir.path().join("run").exists());
}

#[test]
fn empty_config_is_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "empty.ini", "");
    let o = formbound(&["solve", "--config", &cfg], dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("Usage"), "{}", stderr(&o));
    let o = formbound(&["solve"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    let o = formbound(&[], dir.path());
    assert_eq!(o.status.code(), Some(1));
    let o = formbound(&["no-such-command"], dir.path());
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn condenser_preset_reproduces_eight_pi() {
    let dir = tempfile::tempdir().unwrap();
    let o = formbound(&["capacity", "--set", "capacity.preset=condenser", "--out", "cap"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let table = std::fs::read_to_string(dir.path().join("cap/capacity.csv")).unwrap();
    let row: Vec<f64> = table.lines().nth(1).unwrap().split(',').map(|x| x.parse().unwrap()).collect();
    let eight_pi = 8.0 * std::f64::consts::PI;
    assert!((row[1] - eight_pi).abs() < 1e-9 * eight_pi);
    assert!((row[0] - eight_pi).abs() < 0.01 * eight_pi);
}

#[test]
fn hardy_verify_prints_three_rows() {
    let dir = tempfile::tempdir().unwrap();
    let o = formbound(&["hardy-verify", "--seed", "1", "--out", "hv"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let table = std::fs::read_to_string(dir.path().join("hv/hardy_verify.csv")).unwrap();
    let names: Vec<&str> = table.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(names, ["exponent", "sharp constant", "endpoint refusal"]);
    let out = stdout(&o);
    assert!(out.lines().any(|l| l.starts_with("exponent") && l.contains("pass")));
    assert!(out.lines().any(|l| l.starts_with("endpoint refusal") && l.contains("pass")));
}

#[test]
fn failed_run_leaves_output_untouched() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("keep");
    std::fs::create_dir(&out).unwrap();
    std::fs::write(out.join("marker"), "x").unwrap();
    let cfg = write(dir.path(), "bad.ini", &HARDY.replace("cells = 256", "cells = many"));
    let o = formbound(&["solve", "--config", &cfg, "--out", "keep"], dir.path());
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    let entries: Vec<_> = std::fs::read_dir(&out).unwrap().collect();
    assert_eq!(entries.len(), 1);
}

#[test]
fn same_seed_gives_identical_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "fb.ini", &HARDY.replace("cells = 256", "cells = 128"));
    for out in ["a", "b"] {
        let o = formbound(&["formbound", "--config", &cfg, "--seed", "11", "--out", out], dir.path());
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    }
    for f in ["maximizer.csv", "summary.txt"] {
        let a = std::fs::read(dir.path().join("a").join(f)).unwrap();
        let b = std::fs::read(dir.path().join("b").join(f)).unwrap();
        assert_eq!(a, b, "{f}");
    }
}

#[test]
fn stochastic_routine_without_seed_is_input_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "noseed.ini", &HARDY.replace("seed = 7\n", ""));
    let o = formbound(&["formbound", "--config", &cfg], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("seed"));
}

#[test]
fn pipeline_and_decompose_run() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "p.ini", &format!("{HARDY}\n[pipeline]\nlevels = 3\n"));
    let o = formbound(&["pipeline", "--config", &cfg, "--out", "p"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let levels = std::fs::read_to_string(dir.path().join("p/levels.csv")).unwrap();
    assert_eq!(levels.lines().count(), 4);

    let bump = "[problem]\nn = 3\np = 2\nseed = 3\n[mesh]\nkind = radial\ninner = 0\nouter = 1\ncells = 256\n[weight]\nkind = bump\ncenter = 0\nradius = 0.5\namplitude = 1\n";
    let cfg = write(dir.path(), "d.ini", bump);
    let o = formbound(&["decompose", "--config", &cfg, "--out", "d"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(dir.path().join("d/gamma.csv").is_file());
}
