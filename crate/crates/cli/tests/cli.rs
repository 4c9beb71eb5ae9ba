use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use dcpsim::report::{read_records, read_summary, verify_run, SweepIndex, INDEX_FILE, RECORDS_FILE, SUMMARY_FILE};

fn dcpsim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dcpsim"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn run_writes_records_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("r");
    let o = dcpsim(&["run", "--grid", "6", "--controllers", "3", "--cl", "11", "--traffic", "1:10", "--requests", "800", "--seed", "7", "--out", path(&out)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let json: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join(SUMMARY_FILE)).unwrap()).unwrap();
    assert!(json.get("p99").is_some());
    assert_eq!(json["flows"], 800);
    assert!(verify_run(&out).unwrap());
}

#[test]
fn single_controller_run_is_optimal() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("r");
    let o = dcpsim(&["run", "--grid", "8", "--controllers", "1", "--requests", "1500", "--out", path(&out)]);
    assert_eq!(code(&o), 0);
    let s = read_summary(&out.join(SUMMARY_FILE)).unwrap();
    assert_eq!(s.stats.suboptimal, 0);
    assert_eq!(s.stats.mean, Some(0.0));
}

#[test]
fn identical_runs_write_identical_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for d in [&a, &b] {
        assert_eq!(code(&dcpsim(&["run", "--grid", "5", "--requests", "700", "--seed", "3", "--out", path(d)])), 0);
    }
    for f in [RECORDS_FILE, SUMMARY_FILE] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn configuration_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("r");
    assert_eq!(code(&dcpsim(&["run", "--config", "/no/such/file.toml", "--out", path(&out)])), 2);
    assert_eq!(code(&dcpsim(&["run", "--grid", "3", "--out", path(&out)])), 2);
    assert_eq!(code(&dcpsim(&["run", "--cl", "12", "--out", path(&out)])), 2);
    assert_eq!(code(&dcpsim(&["run", "--traffic", "0:10", "--out", path(&out)])), 2);
    assert_eq!(code(&dcpsim(&["run", "--gird", "5"])), 2);
    let bad = dir.path().join("bad.toml");
    fs::write(&bad, "[run]\ngrid = \"big\"\n").unwrap();
    assert_eq!(code(&dcpsim(&["run", "--config", path(&bad), "--out", path(&out)])), 2);
    assert!(!out.exists());
}

#[test]
fn io_errors_exit_3() {
    let dir = tempfile::tempdir().unwrap();
    let blocker = dir.path().join("file");
    fs::write(&blocker, "").unwrap();
    let o = dcpsim(&["run", "--grid", "5", "--requests", "50", "--out", path(&blocker.join("sub"))]);
    assert_eq!(code(&o), 3);
}

#[test]
fn sweep_writes_cells_index_and_figures() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("sweep.toml");
    fs::write(
        &cfg,
        "[run]\nrequests = 400\nseed = 5\n\n[sweep]\ngrids = [5, 6]\ntraffic = [[1, 10], [1, 30]]\ncls = [1, 6, 11]\ncontrollers = [3]\n",
    )
    .unwrap();
    let out = dir.path().join("s");
    let o = dcpsim(&["sweep", "--config", path(&cfg), "--out", path(&out)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let index: SweepIndex = serde_json::from_str(&fs::read_to_string(out.join(INDEX_FILE)).unwrap()).unwrap();
    assert_eq!(index.cells.len(), 12);
    for c in &index.cells {
        let d = out.join(&c.dir);
        assert!(verify_run(&d).unwrap());
        assert_eq!(read_summary(&d.join(SUMMARY_FILE)).unwrap(), c.summary);
        assert_eq!(read_records(&d.join(RECORDS_FILE)).unwrap().len(), 400);
    }

    let fig3 = fs::read_to_string(out.join("fig3.csv")).unwrap();
    assert_eq!(fig3.lines().next().unwrap(), "cl,5x5,6x6");
    assert_eq!(fig3.lines().count(), 4);
    let fig4 = fs::read_to_string(out.join("fig4.csv")).unwrap();
    assert_eq!(fig4.lines().next().unwrap(), "cl,1-10,1-30");
    let fig6 = fs::read_to_string(out.join("fig6.csv")).unwrap();
    assert_eq!(fig6.lines().next().unwrap(), "cl,n3");

    let mut r = csv::Reader::from_path(out.join("fig5.csv")).unwrap();
    assert_eq!(r.headers().unwrap().iter().collect::<Vec<_>>(), ["suboptimality_pct", "cl1", "cl6", "cl11"]);
    let rows: Vec<Vec<f64>> = r
        .records()
        .map(|row| row.unwrap().iter().map(|v| v.parse().unwrap()).collect())
        .collect();
    assert_eq!(rows.len(), 201);
    for col in 1..4 {
        assert!(rows.windows(2).all(|w| w[0][col] <= w[1][col]));
        assert!(rows.iter().all(|row| (0.0..=1.0).contains(&row[col])));
    }
}

#[test]
fn sweep_axis_flags_override_the_file() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("s");
    let o = dcpsim(&[
        "sweep", "--grids", "5", "--traffic-axis", "1:10", "--cls", "2,3", "--controllers-axis", "1,2", "--requests", "100",
        "--parallel", "--out", path(&out),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let index: SweepIndex = serde_json::from_str(&fs::read_to_string(out.join(INDEX_FILE)).unwrap()).unwrap();
    assert_eq!(index.cells.len(), 4);
    let fig6 = fs::read_to_string(out.join("fig6.csv")).unwrap();
    assert_eq!(fig6.lines().next().unwrap(), "cl,n1,n2");
}

#[test]
fn empty_sweep_axis_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("sweep.toml");
    fs::write(&cfg, "[sweep]\ncls = []\n").unwrap();
    let o = dcpsim(&["sweep", "--config", path(&cfg), "--out", path(&dir.path().join("s"))]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("cls"));
}

#[test]
fn oracle_check_passes_and_reports_counts() {
    let o = dcpsim(&["oracle-check", "--dijkstra-cases", "100", "--replay-cases", "4", "--conservation-sequences", "500", "--vv-triples", "500"]);
    assert_eq!(code(&o), 0);
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.contains("dijkstra-enum: 100/100 ok"), "{text}");
    assert!(text.contains("credit-conservation: 500/500 ok"), "{text}");
    assert_eq!(text.lines().count(), 5);
}

#[test]
fn injected_fault_exits_1_with_counterexample() {
    for fault in ["dijkstra", "replay", "conservation"] {
        let o = dcpsim(&[
            "oracle-check", "--dijkstra-cases", "20", "--replay-cases", "1", "--conservation-sequences", "20",
            "--vv-triples", "10", "--inject-fault", fault,
        ]);
        assert_eq!(code(&o), 1, "{fault}");
        let err = String::from_utf8(o.stderr).unwrap();
        assert!(err.contains("first counterexample: case 0: seed"), "{err}");
    }
}

#[test]
fn selftest_passes() {
    let o = dcpsim(&["selftest"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8(o.stdout).unwrap().contains("report-round-trip: 1/1 ok"));
}

#[test]
fn help_lists_defaults() {
    let o = dcpsim(&["run", "--help"]);
    let text = String::from_utf8(o.stdout).unwrap();
    for d in ["[default: 25]", "[default: 3]", "[default: 11]", "[default: 1:10]", "[default: 20000]", "[default: out/run]"] {
        assert!(text.contains(d), "{d} missing from\n{text}");
    }
}
