use std::fs;
use std::io::Write;
use std::path::Path;
use std::process::{Command, Output, Stdio};

use dmlens::detectors::FindingCounts;
use dmlens::io::serialize_trace;
use dmlens::model::{Trace, TraceEvent};
use dmlens::synth::{random_trace, GroundTruth, RandomTraceConfig};

const BIN: &str = env!("CARGO_BIN_EXE_dmlens");

fn dmlens(args: &[&str]) -> Output {
    Command::new(BIN)
        .args(args)
        .env("DMLENS_COLOR", "never")
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

fn write_trace(dir: &Path, name: &str, trace: &Trace) -> String {
    let path = dir.join(name);
    serialize_trace(trace, fs::File::create(&path).unwrap()).unwrap();
    path.to_str().unwrap().to_string()
}

fn gen(dir: &Path, pattern: &str, extra: &[&str]) -> String {
    let path = dir.join(format!("{pattern}.ndjson"));
    let p = path.to_str().unwrap();
    let mut args = vec!["gen", "--pattern", pattern, "-o", p];
    args.extend(extra);
    let o = dmlens(&args);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    p.to_string()
}

#[test]
fn clean_trace_reports_nothing() {
    let tmp = tempfile::tempdir().unwrap();
    let trace = gen(tmp.path(), "clean", &["-n", "3", "--devices", "3"]);
    let o = dmlens(&["analyze", &trace]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(stdout(&o).matches("(none detected)").count(), 5);
    assert!(stdout(&o).contains("predicted speedup:             1.0000x"));
}

#[test]
fn findings_still_exit_zero() {
    let tmp = tempfile::tempdir().unwrap();
    let trace = gen(tmp.path(), "mixed", &["-n", "4"]);
    let o = dmlens(&["analyze", &trace]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(stdout(&o).matches("(none detected)").count(), 1);
}

#[test]
fn listing1_matches_golden_reports() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data/golden");
    let trace = dir.join("listing1.ndjson");
    let text = dmlens(&["analyze", trace.to_str().unwrap()]);
    assert_eq!(
        stdout(&text),
        fs::read_to_string(dir.join("listing1.txt")).unwrap()
    );
    let json = dmlens(&["analyze", trace.to_str().unwrap(), "--json"]);
    assert_eq!(
        stdout(&json),
        fs::read_to_string(dir.join("listing1.json")).unwrap()
    );
}

#[test]
fn gen_is_reproducible_and_writes_truth() {
    let tmp = tempfile::tempdir().unwrap();
    let a = gen(
        tmp.path(),
        "listing2",
        &["-n", "5", "--seed", "9", "--jitter-ns", "100"],
    );
    let first = fs::read(&a).unwrap();
    gen(
        tmp.path(),
        "listing2",
        &["-n", "5", "--seed", "9", "--jitter-ns", "100"],
    );
    assert_eq!(first, fs::read(&a).unwrap());

    let truth: GroundTruth =
        serde_json::from_str(&fs::read_to_string(tmp.path().join("listing2.truth.json")).unwrap())
            .unwrap();
    assert_eq!(truth.counts.ra_pairs, 5);
    assert_eq!(truth.counts.rt_pairs, 4);

    let report = dmlens(&["analyze", &a, "--json"]);
    let v: serde_json::Value = serde_json::from_str(&stdout(&report)).unwrap();
    let counts: FindingCounts = serde_json::from_value(v["counts"].clone()).unwrap();
    assert_eq!(counts, truth.counts);
}

#[test]
fn optimized_counterpart_is_clean() {
    let tmp = tempfile::tempdir().unwrap();
    let t = gen(tmp.path(), "listing1", &["--optimized"]);
    let o = dmlens(&["analyze", &t]);
    assert_eq!(stdout(&o).matches("(none detected)").count(), 5);
    let clean = dmlens(&["gen", "--pattern", "clean", "--optimized", "-o", &t]);
    assert_eq!(clean.status.code(), Some(1));
    assert!(stderr(&clean).contains("error[InvalidSpec]"));
}

#[test]
fn invalid_spec_is_an_input_error() {
    let o = dmlens(&[
        "gen",
        "--pattern",
        "listing1",
        "--bytes",
        "8",
        "-o",
        "/tmp/never-written",
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("error[InvalidSpec]"));
}

#[test]
fn inverted_interval_names_the_line() {
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("bad.ndjson");
    fs::write(
        &path,
        "{\"dmlens\":1,\"num_devices\":2,\"host_device\":0}\n\
         # comment\n\
         {\"seq\":0,\"kind\":\"kernel\",\"t0\":9,\"t1\":3,\"src_dev\":1,\"dst_dev\":1,\
         \"src_addr\":0,\"dst_addr\":0,\"bytes\":0,\"hash\":0,\"codeptr\":0}\n",
    )
    .unwrap();
    let o = dmlens(&["analyze", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("error[MalformedRecord]"));
    assert!(stderr(&o).contains("line 3"));
    assert!(o.stdout.is_empty());
}

#[test]
fn usage_errors_exit_one() {
    for args in [
        &["analyze"][..],
        &["analyze", "x", "-q", "-v"],
        &["analyze", "x", "--min-bytes", "lots"],
        &["frobnicate"],
        &[],
    ] {
        assert_eq!(dmlens(args).status.code(), Some(1), "{args:?}");
    }
    assert_eq!(dmlens(&["--help"]).status.code(), Some(0));
}

#[test]
fn missing_file_is_an_input_error() {
    let o = dmlens(&["analyze", "/definitely/not/here.ndjson"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).starts_with("error[Io]"));
}

#[test]
fn oracle_mode_agrees_on_random_traces() {
    let tmp = tempfile::tempdir().unwrap();
    for seed in 0..25 {
        let t = write_trace(
            tmp.path(),
            "r.ndjson",
            &random_trace(seed, RandomTraceConfig::default()),
        );
        let o = dmlens(&["analyze", &t, "--oracle", "-q"]);
        assert_eq!(o.status.code(), Some(0), "seed {seed}: {}", stderr(&o));
    }
}

#[test]
fn oracle_flags_strict_pseudocode_divergence() {
    // Two D2H legs of the same content and a single H2D: the unguarded
    // form pairs the one return leg twice.
    let t = Trace::from_events(
        2,
        0,
        None,
        vec![
            TraceEvent::transfer(0, 0, 10, 1, 0, 0xd0, 0xa, 64, 7),
            TraceEvent::transfer(1, 20, 30, 1, 0, 0xd0, 0xa, 64, 7),
            TraceEvent::transfer(2, 40, 50, 0, 1, 0xa, 0xd0, 64, 7),
            TraceEvent::kernel(3, 60, 70, 1),
        ],
    );
    let tmp = tempfile::tempdir().unwrap();
    let p = write_trace(tmp.path(), "rt.ndjson", &t);
    assert_eq!(dmlens(&["analyze", &p, "--oracle"]).status.code(), Some(0));
    let strict = dmlens(&["analyze", &p, "--oracle", "--strict-pseudocode"]);
    assert_eq!(strict.status.code(), Some(3));
    assert!(stderr(&strict).contains("error[OracleDivergence]: RT"));
}

#[test]
fn quiet_changes_only_warnings() {
    // Overlapping intervals produce an estimate warning.
    let t = Trace::from_events(
        2,
        0,
        None,
        vec![
            TraceEvent::transfer(0, 0, 10, 0, 1, 0xa, 0xd0, 64, 7),
            TraceEvent::kernel(1, 5, 20, 1),
            TraceEvent::transfer(2, 30, 40, 0, 1, 0xa, 0xd0, 64, 7),
            TraceEvent::delete(3, 41, 42, 0, 1, 0xbad),
        ],
    );
    let tmp = tempfile::tempdir().unwrap();
    let p = write_trace(tmp.path(), "w.ndjson", &t);
    let normal = dmlens(&["analyze", &p]);
    let quiet = dmlens(&["analyze", &p, "-q"]);
    assert_eq!(normal.status.code(), quiet.status.code());
    let strip = |s: String| -> String {
        s.lines()
            .filter(|l| !l.starts_with("warning:"))
            .map(|l| format!("{l}\n"))
            .collect()
    };
    assert!(stdout(&normal).contains("warning: seq 3"));
    assert_eq!(strip(stdout(&normal)), stdout(&quiet));
}

#[test]
fn min_bytes_mutes_small_duplicates() {
    let t = Trace::from_events(
        2,
        0,
        None,
        vec![
            TraceEvent::transfer(0, 0, 10, 0, 1, 0xa, 0xd0, 8, 7),
            TraceEvent::kernel(1, 11, 20, 1),
            TraceEvent::transfer(2, 21, 30, 0, 1, 0xa, 0xd0, 8, 7),
            TraceEvent::kernel(3, 31, 40, 1),
        ],
    );
    let tmp = tempfile::tempdir().unwrap();
    let p = write_trace(tmp.path(), "m.ndjson", &t);
    let count = |args: &[&str]| -> u64 {
        let o = dmlens(args);
        let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
        v["counts"]["dd_groups"].as_u64().unwrap()
    };
    assert_eq!(count(&["analyze", &p, "--json"]), 1);
    assert_eq!(count(&["analyze", &p, "--json", "--min-bytes", "9"]), 0);
}

#[test]
fn reads_stdin_and_writes_output_file() {
    let tmp = tempfile::tempdir().unwrap();
    let trace = gen(tmp.path(), "listing1", &[]);
    let out = tmp.path().join("report.txt");
    let mut child = Command::new(BIN)
        .args(["analyze", "-", "-o", out.to_str().unwrap()])
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    child
        .stdin
        .take()
        .unwrap()
        .write_all(&fs::read(&trace).unwrap())
        .unwrap();
    let o = child.wait_with_output().unwrap();
    assert_eq!(o.status.code(), Some(0));
    assert!(o.stdout.is_empty());
    let report = fs::read_to_string(out).unwrap();
    assert!(report.contains("=== Duplicate Target Data Transfer Analysis ==="));
}

#[test]
fn color_follows_environment() {
    let tmp = tempfile::tempdir().unwrap();
    let trace = gen(tmp.path(), "listing1", &[]);
    let run = |mode: &str| {
        Command::new(BIN)
            .args(["analyze", &trace])
            .env("DMLENS_COLOR", mode)
            .output()
            .unwrap()
            .stdout
    };
    assert!(run("always").contains(&0x1b));
    assert!(!run("never").contains(&0x1b));
    // Not a terminal.
    assert!(!run("auto").contains(&0x1b));
}

#[test]
fn verbose_lists_findings() {
    let tmp = tempfile::tempdir().unwrap();
    let trace = gen(tmp.path(), "listing1", &[]);
    let o = dmlens(&["analyze", &trace, "-v"]);
    assert!(stdout(&o).contains("  - hash 0x"));
    assert!(stderr(&o).contains("events: parse"));
}

#[test]
fn audit_counts_collisions() {
    let tmp = tempfile::tempdir().unwrap();
    let payloads = tmp.path().join("p");
    let trace = gen(
        tmp.path(),
        "listing2",
        &["-n", "3", "--payload-dir", payloads.to_str().unwrap()],
    );
    let o = dmlens(&["audit", &trace, "--payloads", payloads.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("collision_count: 0"));
    assert!(stdout(&o).contains("missing: 0"));

    fs::remove_file(payloads.join("1.bin")).unwrap();
    let o = dmlens(&["audit", &trace, "--payloads", payloads.to_str().unwrap()]);
    assert!(stdout(&o).contains("missing: 1"));
}

#[test]
fn version_prints_formats() {
    let o = dmlens(&["version"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("trace format 1"));
    assert!(stdout(&o).contains("report format 1"));
}
