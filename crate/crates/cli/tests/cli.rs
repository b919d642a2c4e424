use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn degenpar(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_degenpar")).args(args).output().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn repeated_runs_have_identical_manifests() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    fs::write(&cfg, "kind = estimates\nseed = 11\n\n[problem]\ncount = 3\n\n[grid]\ncells = 32, 64\n").unwrap();
    let mut manifests = Vec::new();
    for run in ["a", "b"] {
        let out = dir.path().join(run);
        let o = degenpar(&["estimates", "--config", path(&cfg), "--out", path(&out)]);
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
        manifests.push(fs::read_to_string(out.join("MANIFEST.sha256")).unwrap());
    }
    assert_eq!(manifests[0], manifests[1]);
    assert!(manifests[0].contains("estimates_ledger.csv"));
}

#[test]
fn misspelled_key_is_named() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.cfg");
    fs::write(&cfg, "seed = 1\n\n[solver]\ntoll = 1e-8\n").unwrap();
    let o = degenpar(&["solve", "--config", path(&cfg), "--out", path(&dir.path().join("out"))]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("solver.toll"), "{}", stderr(&o));
    assert!(!dir.path().join("out").exists());
}

#[test]
fn missing_seed_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = degenpar(&["solve", "--out", path(dir.path())]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("seed"));
}

#[test]
fn sweep_writes_one_ledger_per_p() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("sweep");
    let o = degenpar(&["sweep", "--seed", "4", "--grid", "32", "--out", path(&out)]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let mut rows_per_p = Vec::new();
    for p in ["-0.5", "0", "0.5", "1", "2"] {
        let text = fs::read_to_string(out.join(format!("p_{p}")).join("estimates_ledger.csv")).unwrap();
        let rows: Vec<&str> = text.lines().skip(1).collect();
        assert!(rows.iter().all(|r| r.split(',').nth(2) == Some(p)), "{p}");
        rows_per_p.push(rows.len());
    }
    assert!(rows_per_p[0] > 0);
    assert!(rows_per_p.iter().all(|&n| n == rows_per_p[0]), "{rows_per_p:?}");
    let manifest = fs::read_to_string(out.join("MANIFEST.sha256")).unwrap();
    assert_eq!(manifest.lines().count(), 5);
}

#[test]
fn report_pass_fail_and_empty() {
    let dir = tempfile::tempdir().unwrap();
    let header = "id,n,p,params,lhs,rhs,ratio,grid,seed\n";
    let good = dir.path().join("good.csv");
    fs::write(&good, format!("{header}caccioppoli,1,1,k=0,0.001,1,0.001,64,1\n")).unwrap();
    let bad = dir.path().join("bad.csv");
    fs::write(&bad, format!("{header}energy,1,1,,5,1,5,64,1\n")).unwrap();

    let out = dir.path().join("r1");
    let o = degenpar(&["report", path(&good), "--out", path(&out)]);
    assert_eq!(o.status.code(), Some(0));
    assert!(fs::read_to_string(out.join("report.txt")).unwrap().starts_with("status: pass"));

    let out = dir.path().join("r2");
    let o = degenpar(&["report", path(&good), path(&bad), "--out", path(&out)]);
    assert_eq!(o.status.code(), Some(1));
    let csv = fs::read_to_string(out.join("report.csv")).unwrap();
    assert!(csv.lines().any(|l| l.starts_with("energy,") && l.ends_with(",fail")), "{csv}");
    assert!(String::from_utf8_lossy(&o.stdout).contains("failing: energy"));

    let empty = dir.path().join("empty");
    fs::create_dir(&empty).unwrap();
    let o = degenpar(&["report", path(&empty), "--out", path(&dir.path().join("r3"))]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn malformed_ledger_row_names_the_line() {
    let dir = tempfile::tempdir().unwrap();
    let f = dir.path().join("l.csv");
    fs::write(&f, "id,n,p,params,lhs,rhs,ratio,grid,seed\nenergy,1,1,,1,1,1,64,1\nenergy,1,x,,1,1,1,64,1\n").unwrap();
    let o = degenpar(&["report", path(&f), "--out", path(&dir.path().join("r"))]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("line 3"), "{}", stderr(&o));
}

#[test]
fn holder_and_report_produce_alpha_table() {
    let dir = tempfile::tempdir().unwrap();
    let h = dir.path().join("h");
    let e = dir.path().join("e");
    for (kind, out) in [("holder", &h), ("estimates", &e)] {
        let o = degenpar(&[kind, "--seed", "2", "--grid", "64", "--p", "0", "--out", path(out)]);
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    }
    let r = dir.path().join("r");
    let o = degenpar(&["report", path(&h), path(&e), "--out", path(&r)]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let alpha = fs::read_to_string(r.join("alpha_table.csv")).unwrap();
    assert!(alpha.lines().nth(1).unwrap().starts_with("0,boundary,1,"), "{alpha}");
    assert!(fs::read_to_string(r.join("omega_profiles.csv")).unwrap().lines().count() > 4);
}
