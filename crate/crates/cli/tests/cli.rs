//! End-to-end tests for the `dyncolor` binary: the gen → run → report
//! pipeline, reproducibility, and the exit-code contract.

use std::path::Path;
use std::process::{Command, Output};

use dyncolor_cli::metrics;

fn dyncolor(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dyncolor"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("no signal")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

#[test]
fn gen_run_report_pipeline_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let gen = dyncolor(
        &[
            "gen", "--n", "60", "--delta", "6", "--events", "400", "--seed", "42", "--mode",
            "batch", "--out", "wl.txt",
        ],
        dir.path(),
    );
    assert_eq!(code(&gen), 0, "{}", stderr(&gen));

    let run = dyncolor(
        &["run", "wl.txt", "--verify-every", "50", "--out", "metrics.csv"],
        dir.path(),
    );
    assert_eq!(code(&run), 0, "{}", stderr(&run));
    assert!(stderr(&run).contains("all checks passed"));

    let csv = std::fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
    let rows = metrics::parse_csv(&csv).expect("runner output parses");
    assert!(!rows.is_empty());
    assert_eq!(rows.last().unwrap().update_index, 400);
    assert!(rows.iter().all(|r| r.properness_ok));

    let report = dyncolor(&["report", "metrics.csv"], dir.path());
    assert_eq!(code(&report), 0, "{}", stderr(&report));
    let table = String::from_utf8_lossy(&report.stdout).into_owned();
    assert!(table.contains("metrics.csv"), "table:\n{table}");
    assert!(table.contains("work.mean"), "table:\n{table}");
    assert_eq!(table.lines().count(), 2);
}

#[test]
fn generation_and_runs_are_byte_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let args = |out: &str| {
        [
            "gen", "--n", "40", "--delta", "5", "--events", "300", "--seed", "9", "--mode",
            "congest", "--profile", "hotspot", "--out",
        ]
        .into_iter()
        .map(str::to_string)
        .chain([out.to_string()])
        .collect::<Vec<_>>()
    };
    for out in ["a.txt", "b.txt"] {
        let argv: Vec<String> = args(out);
        let argv: Vec<&str> = argv.iter().map(String::as_str).collect();
        assert_eq!(code(&dyncolor(&argv, dir.path())), 0);
    }
    let a = std::fs::read(dir.path().join("a.txt")).unwrap();
    let b = std::fs::read(dir.path().join("b.txt")).unwrap();
    assert_eq!(a, b, "same seed, different workloads");

    for out in ["m1.csv", "m2.csv"] {
        let run = dyncolor(&["run", "a.txt", "--verify-every", "20", "--out", out], dir.path());
        assert_eq!(code(&run), 0, "{}", stderr(&run));
    }
    let m1 = std::fs::read(dir.path().join("m1.csv")).unwrap();
    let m2 = std::fs::read(dir.path().join("m2.csv")).unwrap();
    assert_eq!(m1, m2, "same workload, different metrics");
}

#[test]
fn gen_writes_to_stdout_when_no_output_is_named() {
    let dir = tempfile::tempdir().unwrap();
    let gen = dyncolor(
        &["gen", "--n", "10", "--delta", "3", "--events", "20", "--seed", "1"],
        dir.path(),
    );
    assert_eq!(code(&gen), 0);
    let text = String::from_utf8_lossy(&gen.stdout).into_owned();
    assert!(text.starts_with("# dyncolor workload v1\n"), "stdout:\n{text}");
}

#[test]
fn corrupt_workloads_are_usage_errors_with_line_numbers() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("bad.txt"),
        "# dyncolor workload v1\nn=8 delta=3 mode=seq seed=0\n+ 0 1\n+ 1 eight\n",
    )
    .unwrap();
    let run = dyncolor(&["run", "bad.txt"], dir.path());
    assert_eq!(code(&run), 2);
    assert!(stderr(&run).contains("line 4"), "stderr: {}", stderr(&run));
}

#[test]
fn impossible_events_are_usage_errors() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("ghost.txt"),
        "# dyncolor workload v1\nn=8 delta=3 mode=seq seed=0\n+ 0 1\n- 2 3\n",
    )
    .unwrap();
    let run = dyncolor(&["run", "ghost.txt"], dir.path());
    assert_eq!(code(&run), 2);
    assert!(stderr(&run).contains("event 2"), "stderr: {}", stderr(&run));
}

#[test]
fn a_wedged_run_reports_a_violation_and_dumps_state() {
    let dir = tempfile::tempdir().unwrap();
    let gen = dyncolor(
        &[
            "gen", "--n", "32", "--delta", "4", "--events", "20", "--seed", "3", "--mode",
            "deamortized", "--out", "wl.txt",
        ],
        dir.path(),
    );
    assert_eq!(code(&gen), 0);
    // A zero work budget means no engine copy can ever catch up, so the
    // first verification boundary must flag the run.
    let run = dyncolor(
        &["run", "wl.txt", "--verify-every", "5", "--budget", "0", "--out", "m.csv"],
        dir.path(),
    );
    assert_eq!(code(&run), 1, "{}", stderr(&run));
    assert!(stderr(&run).contains("invariant violation"), "stderr: {}", stderr(&run));
    assert!(dir.path().join("m.csv.dump").exists());
    let csv = std::fs::read_to_string(dir.path().join("m.csv")).unwrap();
    let rows = metrics::parse_csv(&csv).unwrap();
    assert_eq!(rows.len(), 5, "rows up to the flagged one survive");
    assert!(!rows.last().unwrap().properness_ok);
}

#[test]
fn report_rejects_corrupt_metrics() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("m.csv"),
        "# dyncolor-metrics v1\nupdate_index,mode,work_units,chain_length,rounds,tokens_created,messages,properness_ok\n1,seq,oops,0,0,0,0,1\n",
    )
    .unwrap();
    let report = dyncolor(&["report", "m.csv"], dir.path());
    assert_eq!(code(&report), 2);
    assert!(stderr(&report).contains("line 3"), "stderr: {}", stderr(&report));
}

#[test]
fn usage_errors_and_help_use_the_documented_codes() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&dyncolor(&["--help"], dir.path())), 0);
    assert_eq!(code(&dyncolor(&["bogus"], dir.path())), 2);
    assert_eq!(code(&dyncolor(&["report"], dir.path())), 2, "report wants at least one file");
    assert_eq!(
        code(&dyncolor(&["gen", "--n", "1", "--delta", "2", "--events", "5"], dir.path())),
        2,
        "one vertex admits no edges"
    );
}
