use std::path::Path;
use std::process::{Command, Output};

fn cachequeue(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cachequeue"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn rows(path: &Path) -> Vec<csv::StringRecord> {
    csv::Reader::from_path(path)
        .unwrap()
        .records()
        .collect::<Result<_, _>>()
        .unwrap()
}

#[test]
fn bound_writes_the_report() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("bound.csv");
    let o = cachequeue(&[
        "bound",
        "--policy",
        "lru,fifo",
        "--disk-us",
        "100",
        "--grid",
        "0.5,0.9",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let rows = rows(&out);
    assert_eq!(rows.len(), 4);
    let x = |policy: &str, p: &str| -> f64 {
        rows.iter()
            .find(|r| &r[1] == policy && &r[5] == p)
            .map(|r| r[6].parse().unwrap())
            .unwrap()
    };
    assert!((x("LRU", "0.9") - 1.5873).abs() < 5e-5);
    assert!((x("LRU", "0.5") - 1.3994).abs() < 5e-5);
    assert!((x("FIFO", "0.9") - 6.803).abs() < 5e-4);
}

#[test]
fn config_file_supplies_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.conf");
    let out = dir.path().join("bound.csv");
    std::fs::write(&cfg, "[bound]\npolicy = fifo\ndisk-us = 5\ngrid = 1.0\n").unwrap();
    let o = cachequeue(&[
        "--config",
        cfg.to_str().unwrap(),
        "bound",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let rows = rows(&out);
    assert_eq!(rows.len(), 1);
    assert_eq!(&rows[0][1], "FIFO");
    assert_eq!(&rows[0][3], "5");
}

#[test]
fn bad_arguments_exit_with_2() {
    for args in [
        &["bound", "--policy", "mru"][..],
        &["bound", "--grid", "1.5"],
        &["bound", "--policy", "slru"],
        &["simulate", "--reps", "1", "--policy", "lru", "--grid", "0.5"],
    ] {
        let o = cachequeue(args);
        assert_eq!(o.status.code(), Some(2), "{args:?}: {}", stderr(&o));
        assert!(stderr(&o).starts_with("error:"), "{args:?}: {}", stderr(&o));
    }
}

#[test]
fn simulate_stays_under_the_bound() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("sim.csv");
    let o = cachequeue(&[
        "simulate",
        "--policy",
        "lru",
        "--disk-us",
        "100",
        "--grid",
        "0.9",
        "--reps",
        "3",
        "--cycles",
        "20000",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let rows = rows(&out);
    assert_eq!(rows.len(), 1);
    let x: f64 = rows[0][6].parse().unwrap();
    assert!(x > 1.4 && x <= 1.01 * 1.5873, "{x}");
}

#[test]
fn trace_tables_are_deterministic() {
    let run = |dir: &Path| {
        let o = cachequeue(&[
            "trace",
            "--table",
            "slru",
            "--universe",
            "2000",
            "--length",
            "40000",
            "--grid",
            "0.5,0.7",
            "--seed",
            "3",
            "--out",
            dir.to_str().unwrap(),
        ]);
        assert!(o.status.success(), "{}", stderr(&o));
        std::fs::read_to_string(dir.join("slru_t_fraction.csv")).unwrap()
    };
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let first = run(a.path());
    assert_eq!(first, run(b.path()));
    assert!(first.lines().count() >= 2, "{first}");
}

#[test]
fn bench_rejects_unsupported_policies() {
    let o = cachequeue(&["bench", "--policy", "s3fifo", "--workers", "1", "--runs", "1"]);
    assert_eq!(o.status.code(), Some(2));
    let e = stderr(&o).to_lowercase();
    assert!(e.contains("s3") || e.contains("unsupported"), "{e}");
}

#[test]
fn verify_exit_code_follows_the_table() {
    let o = cachequeue(&["verify", "--quick", "--no-bench"]);
    let table = String::from_utf8_lossy(&o.stdout);
    let results: Vec<&str> = table
        .lines()
        .skip(1)
        .filter_map(|l| l.split_whitespace().find(|w| ["PASS", "FAIL", "INFO"].contains(w)))
        .collect();
    assert_eq!(results.len(), 9, "{table}");
    let failed = results.contains(&"FAIL");
    assert_eq!(o.status.code(), Some(i32::from(failed)), "{table}");
}
