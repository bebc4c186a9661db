use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn jglue(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_jglue")).args(args).output().unwrap()
}

fn scenario(name: &str) -> String {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("scenarios").join(format!("{name}.toml")).to_string_lossy().into_owned()
}

fn run(config: &str, out: &Path) -> Output {
    jglue(&["run", config, "--out", out.to_str().unwrap(), "--threads", "1"])
}

fn csvs(dir: &Path) -> Vec<String> {
    match fs::read_dir(dir) {
        Ok(it) => it.map(|e| e.unwrap().file_name().to_string_lossy().into_owned()).filter(|n| n.ends_with(".csv")).collect(),
        Err(_) => Vec::new(),
    }
}

#[test]
fn classical_run_writes_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("c");
    let o = run(&scenario("classical-rect"), &out);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let names = csvs(&out);
    for f in ["fields.csv", "certificates.csv", "sweep_summary.csv", "lattices.csv"] {
        assert!(names.iter().any(|n| n == f), "{f} missing");
    }
}

#[test]
fn delta_sweep_has_one_row_per_delta() {
    let tmp = tempfile::tempdir().unwrap();
    let text = fs::read_to_string(scenario("local-rect")).unwrap().replace("delta = [1e-2]", "delta = [1e-3, 3e-3, 1e-2]");
    let cfg = tmp.path().join("sweep.toml");
    fs::write(&cfg, text).unwrap();
    let out = tmp.path().join("s");
    assert!(run(cfg.to_str().unwrap(), &out).status.success());
    let mut r = csv::Reader::from_path(out.join("sweep_summary.csv")).unwrap();
    let header: Vec<String> = r.headers().unwrap().iter().map(String::from).collect();
    let slope = header.iter().position(|h| h == "slope").unwrap();
    let rows: Vec<csv::StringRecord> = r.records().map(|x| x.unwrap()).collect();
    assert_eq!(rows.len(), 3);
    assert!(rows.iter().all(|row| row[slope].parse::<f64>().unwrap() > 0.0));
}

#[test]
fn malformed_config_writes_nothing() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("bad.toml");
    fs::write(&cfg, fs::read_to_string(scenario("local-rect")).unwrap().replace("name = \"standard\"", "name = \"nope\"")).unwrap();
    let out = tmp.path().join("b");
    let o = run(cfg.to_str().unwrap(), &out);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("structure.name"));
    assert!(csvs(&out).is_empty());
}

#[test]
fn compare_checks_lattices_and_fields() {
    let tmp = tempfile::tempdir().unwrap();
    let (c, l, r) = (tmp.path().join("c"), tmp.path().join("l"), tmp.path().join("r"));
    assert!(run(&scenario("classical-rect"), &c).status.success());
    assert!(run(&scenario("local-rect"), &l).status.success());
    assert!(run(&scenario("refinement-rect"), &r).status.success());
    let cs = c.to_str().unwrap();
    let same = jglue(&["compare", cs, cs]);
    assert!(same.status.success());
    assert!(String::from_utf8_lossy(&same.stdout).contains("w1p 0.000e0"));
    assert!(jglue(&["compare", cs, l.to_str().unwrap(), "--tol-w1p", "1e-6", "--tol-c0", "1e-6"]).status.success());
    assert_eq!(jglue(&["compare", cs, r.to_str().unwrap()]).status.code(), Some(2));
}

#[test]
fn runs_are_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    assert!(jglue(&["run", "refinement-rect", "--out", a.to_str().unwrap(), "--threads", "1"]).status.success());
    assert!(jglue(&["run", "refinement-rect", "--out", b.to_str().unwrap(), "--threads", "2"]).status.success());
    for f in csvs(&a) {
        assert_eq!(fs::read(a.join(&f)).unwrap(), fs::read(b.join(&f)).unwrap(), "{f}");
    }
}
