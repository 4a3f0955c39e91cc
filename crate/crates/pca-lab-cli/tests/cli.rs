use std::path::PathBuf;
use std::process::{Command, Output};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_pca-lab"));
    c.env_remove("PCA_LAB_SEED");
    c
}

fn scratch(name: &str) -> PathBuf {
    let p = std::env::temp_dir().join(format!("pca-lab-cli-{}-{name}", std::process::id()));
    let _ = std::fs::remove_dir_all(&p);
    std::fs::create_dir_all(&p).unwrap();
    p
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn list_shows_all_experiments() {
    let o = bin().arg("list").output().unwrap();
    assert!(o.status.success());
    let s = stdout(&o);
    for id in ["epca-lossless", "cpca-valid-regime", "invalid-regime", "robust-subg", "robust-ht", "online-oja", "composition-audit"] {
        assert!(s.lines().any(|l| l == id), "{id} missing");
    }
}

#[test]
fn describe_known_and_unknown() {
    assert!(bin().args(["describe", "online-oja"]).status().unwrap().success());
    assert_eq!(bin().args(["describe", "nope"]).status().unwrap().code(), Some(2));
}

#[test]
fn lossless_twenty_rows() {
    let o = bin()
        .args(["run", "--experiment", "epca-lossless", "--dim", "64", "--k", "8", "--eps", "0.1", "--seeds", "1..20"])
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0));
    let s = stdout(&o);
    let rows: Vec<&str> = s.lines().skip(1).collect();
    assert_eq!(s.lines().next(), Some("experiment,seed,d,k,param_json,measured,bound,pass,ms"));
    assert_eq!(rows.len(), 20);
    assert!(rows.iter().all(|r| r.ends_with(",true,0")));
}

#[test]
fn invalid_regime_expected_fail_is_pass() {
    let o = bin().args(["run", "--experiment", "invalid-regime", "--Delta", "1e-4"]).output().unwrap();
    assert_eq!(o.status.code(), Some(0));
    let s = stdout(&o);
    assert!(s.contains("EXPECTED-FAIL-OF-REDUCTION"));
}

#[test]
fn unknown_experiment_and_bad_config_exit_2() {
    assert_eq!(bin().args(["run", "--experiment", "bogus"]).status().unwrap().code(), Some(2));
    let dir = scratch("badcfg");
    let cfg = dir.join("bad.toml");
    std::fs::write(&cfg, "schema = 1\nexperiment = \"epca-lossless\"\nseeds = [1\n").unwrap();
    let o = bin().args(["run", "--config"]).arg(&cfg).output().unwrap();
    assert_eq!(o.status.code(), Some(2));
    assert!(!o.stderr.is_empty());
    assert_eq!(bin().args(["run"]).status().unwrap().code(), Some(2));
    assert_eq!(bin().args(["run", "--experiment", "epca-lossless", "--seeds", "5..1"]).status().unwrap().code(), Some(2));
}

#[test]
fn failing_rows_exit_1() {
    let dir = scratch("fail");
    let cfg = dir.join("short.toml");
    std::fs::write(&cfg, "schema = 1\nexperiment = \"online-oja\"\nseeds = \"1..3\"\n[dataset]\nn = 200\n").unwrap();
    let o = bin().args(["run", "--config"]).arg(&cfg).output().unwrap();
    assert_eq!(o.status.code(), Some(1), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn reports_are_byte_identical() {
    let a = scratch("rep-a");
    let b = scratch("rep-b");
    for (dir, jobs) in [(&a, "1"), (&b, "4")] {
        let st = bin()
            .args(["run", "--experiment", "robust-subg", "--dim", "8", "--k", "2", "--seeds", "1..6", "--jobs", jobs, "--out"])
            .arg(dir)
            .status()
            .unwrap();
        assert!(st.success());
    }
    let x = std::fs::read(a.join("robust-subg.csv")).unwrap();
    let y = std::fs::read(b.join("robust-subg.csv")).unwrap();
    assert_eq!(x, y);
    let js = std::fs::read_to_string(a.join("robust-subg.json")).unwrap();
    assert!(js.contains("\"all_pass\": true"));
}

#[test]
fn env_seed_is_default() {
    let o = bin().env("PCA_LAB_SEED", "42").args(["run", "--experiment", "epca-lossless"]).output().unwrap();
    assert!(o.status.success());
    assert!(stdout(&o).lines().nth(1).unwrap().starts_with("epca-lossless,42,"));
    let o = bin().env("PCA_LAB_SEED", "x").args(["run", "--experiment", "epca-lossless"]).output().unwrap();
    assert_eq!(o.status.code(), Some(2));
}
