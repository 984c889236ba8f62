use std::fs;
use std::path::Path;
use std::process::Command;

const BIN: &str = env!("CARGO_BIN_EXE_phlab");

const WEIERSTRASS: &str = r#"
schema_version = 1
kind = "weierstrass-reference"
seed = 9

[params]
samples = 6
probes = 16
cloud_samples = 20000
coarse_exp = 4
fine_exp = 8
"#;

const INTEGRABILITY: &str = r#"
schema_version = 1
kind = "integrability"
seed = 4

[map]
rows = [[0, 1, 0], [0, 0, 1], [-1, 0, 3]]
epsilon = 0.05
direction = "eigen:u"

[params]
samples = 6
period_cap = 2
"#;

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p.to_string_lossy().into_owned()
}

fn run(args: &[&str]) -> (i32, String) {
    let out = Command::new(BIN).args(args).output().unwrap();
    (out.status.code().unwrap(), String::from_utf8_lossy(&out.stderr).into_owned())
}

#[test]
fn validate_accepts_and_rejects() {
    let dir = tempfile::tempdir().unwrap();
    let good = write(dir.path(), "good.toml", WEIERSTRASS);
    assert_eq!(run(&["validate", "--config", &good]).0, 0);
    let bad = write(dir.path(), "bad.toml", &WEIERSTRASS.replace("seed = 9", "seed = 9\ncolour = 1"));
    let (code, err) = run(&["validate", "--config", &bad]);
    assert_eq!(code, 2);
    assert!(err.contains("colour"));
    assert_eq!(run(&["validate", "--config", "/nonexistent.toml"]).0, 2);
    assert_eq!(run(&["run"]).0, 2);
}

#[test]
fn reports_are_byte_identical_across_runs_and_thread_counts() {
    let dir = tempfile::tempdir().unwrap();
    for (name, text) in [("w.toml", WEIERSTRASS), ("i.toml", INTEGRABILITY)] {
        let cfg = write(dir.path(), name, text);
        let a = dir.path().join(format!("{name}-a"));
        let b = dir.path().join(format!("{name}-b"));
        let args = |out: &Path, threads: &'static str| {
            vec!["run".to_string(), "--config".into(), cfg.clone(), "--out".into(), out.to_string_lossy().into_owned(), "--threads".into(), threads.into(), "--normalize-timings".into()]
        };
        let run_with = |v: Vec<String>| run(&v.iter().map(String::as_str).collect::<Vec<_>>());
        assert_eq!(run_with(args(&a, "1")).0, 0);
        assert_eq!(run_with(args(&b, "4")).0, 0);
        let ja = fs::read(a.join("report.json")).unwrap();
        assert_eq!(ja, fs::read(b.join("report.json")).unwrap());
        let report: serde_json::Value = serde_json::from_slice(&ja).unwrap();
        assert_eq!(report["schema_version"], 1);
        assert_eq!(report["total_ms"], 0.0);
    }
}

#[test]
fn integrability_run_writes_tables() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "i.toml", INTEGRABILITY);
    let out = dir.path().join("out");
    assert_eq!(run(&["run", "--config", &cfg, "--out", out.to_str().unwrap()]).0, 0);
    let su = fs::read_to_string(out.join("su_defects.csv")).unwrap();
    assert!(su.starts_with("x1,x2,x3,a,b,defect\n"));
    assert_eq!(su.lines().count(), 7);
    let gaps = fs::read_to_string(out.join("periodic_gaps.csv")).unwrap();
    assert!(gaps.starts_with("id,period,x1,x2,x3,gap,gap_s,gap_u\n"));
}
