//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.
//!
//! Run alone with `cargo test -p dmlens --test acceptance`.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::time::{Duration, Instant};

use dmlens::detectors::{analyze, DetectorOptions, Findings};
use dmlens::estimate::estimate;
use dmlens::io::{parse_trace_str, serialize_trace, serialize_trace_to_string};
use dmlens::model::{EventKind, Trace};
use dmlens::oracle::{diff_findings, oracle_analyze};
use dmlens::report::{attribute, render_json, render_text, RenderOptions};
use dmlens::synth::{
    generate, optimized_counterpart, random_trace, scale_trace, Pattern, PatternSpec,
    RandomTraceConfig,
};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

const BIN: &str = env!("CARGO_BIN_EXE_dmlens");
const GRID_N: [u32; 4] = [1, 2, 5, 20];
const GRID_DEVICES: [u32; 2] = [2, 3];

fn dmlens(args: &[&str]) -> Output {
    Command::new(BIN)
        .args(args)
        .env("DMLENS_COLOR", "never")
        .output()
        .expect("spawn dmlens")
}

fn analyzed(trace: &Trace) -> Findings<'_> {
    analyze(trace, DetectorOptions::default()).expect("valid trace")
}

/// Every spec of the ground-truth grid, with and without host mutation.
fn grid() -> Vec<PatternSpec> {
    let mut specs = Vec::new();
    for pattern in Pattern::ALL {
        for n in GRID_N {
            for devices in GRID_DEVICES {
                for mutate in [false, true] {
                    for jitter_ns in [0, 1_500] {
                        specs.push(PatternSpec {
                            pattern,
                            n_iterations: n,
                            n_devices: devices,
                            mutate,
                            jitter_ns,
                            seed: u64::from(n) * 31 + u64::from(devices),
                            ..Default::default()
                        });
                    }
                }
            }
        }
    }
    specs
}

fn describe(s: &PatternSpec) -> String {
    format!(
        "{} n={} devices={} mutate={} jitter={}",
        s.pattern, s.n_iterations, s.n_devices, s.mutate, s.jitter_ns
    )
}

fn oracle_equivalence() -> Outcome {
    let started = Instant::now();
    let mut failures = Vec::new();
    let mut events = 0;
    for seed in 0..1000 {
        let trace = random_trace(
            seed,
            RandomTraceConfig {
                max_events: 200,
                max_devices: 4,
            },
        );
        events += trace.events.len();
        let d = diff_findings(&analyzed(&trace), &oracle_analyze(&trace));
        if !d.is_empty() {
            failures.push(format!("seed {seed}: {}", d[0]));
        }
    }
    let elapsed = started.elapsed();
    if !failures.is_empty() {
        return Err(format!(
            "{} divergent traces, first {}",
            failures.len(),
            failures[0]
        ));
    }
    if elapsed > Duration::from_secs(60) {
        return Err(format!("took {:.1} s (limit 60 s)", elapsed.as_secs_f64()));
    }
    Ok(format!(
        "1000 random traces ({events} events), 0 divergences, {:.2} s",
        elapsed.as_secs_f64()
    ))
}

fn ground_truth_counts() -> Outcome {
    let specs = grid();
    for spec in &specs {
        let s = generate(spec).map_err(|e| e.to_string())?;
        let f = analyzed(&s.trace);
        let got = f.counts();
        if got != s.truth.counts {
            return Err(format!(
                "{}: got {got:?}, expected {:?}",
                describe(spec),
                s.truth.counts
            ));
        }
        let union = estimate(&s.trace, &f).map_err(|e| e.to_string())?.union_ns;
        if union != s.truth.expected_union_savings_ns {
            return Err(format!(
                "{}: union {union} ns, expected {}",
                describe(spec),
                s.truth.expected_union_savings_ns
            ));
        }
    }

    let l1 = generate(&PatternSpec::new(Pattern::Listing1, 1)).unwrap();
    let f = analyzed(&l1.trace);
    if f.duplicates.len() != 1 || f.duplicates[0].events.len() != 2 {
        return Err(format!(
            "listing1: {} duplicate groups, sizes {:?}",
            f.duplicates.len(),
            f.duplicates
                .iter()
                .map(|g| g.events.len())
                .collect::<Vec<_>>()
        ));
    }
    let l2 = generate(&PatternSpec::new(Pattern::Listing2, 5)).unwrap();
    let ra_pairs: usize = analyzed(&l2.trace)
        .repeated_allocs
        .iter()
        .map(|g| g.pairs.len())
        .sum();
    if ra_pairs != 5 {
        return Err(format!(
            "listing2 N=5: {ra_pairs} repeated-alloc pairs, expected 5"
        ));
    }
    Ok(format!(
        "{} grid cells exact; listing1 = 1 group of 2; listing2 N=5 = 5 pairs",
        specs.len()
    ))
}

fn speedup_closure() -> Outcome {
    let mut checked = 0;
    let mut outside = Vec::new();
    let mut worst: f64 = 0.0;
    for spec in grid().into_iter().filter(|s| s.pattern != Pattern::Clean) {
        let s = generate(&spec).unwrap();
        if !s.truth.closure_exact {
            outside.push(describe(&spec));
            continue;
        }
        let opt = optimized_counterpart(&spec).map_err(|e| e.to_string())?;
        if !analyzed(&opt).is_empty() {
            return Err(format!(
                "{}: optimized counterpart still has findings",
                describe(&spec)
            ));
        }
        let est = estimate(&s.trace, &analyzed(&s.trace)).unwrap();
        let actual = s.trace.wall_time() as f64 / opt.wall_time() as f64;
        let rel = (est.predicted_speedup - actual).abs() / actual;
        worst = worst.max(rel);
        if rel > 1e-9 {
            return Err(format!(
                "{}: predicted {} vs actual {actual} (rel {rel:e})",
                describe(&spec),
                est.predicted_speedup
            ));
        }
        checked += 1;
    }
    Ok(format!(
        "{checked} specs within 1e-9 (worst rel {worst:e}); {} listing2 cells excluded: \
         the fix also drops the outbound legs, which are not eliminable",
        outside.len()
    ))
}

fn soundness_violations(trace: &Trace, f: &Findings<'_>) -> Vec<String> {
    let mut bad = Vec::new();
    for p in &f.unused_allocs {
        let (lo, hi) = p.lifetime();
        let overlapping = trace
            .events
            .iter()
            .filter(|k| k.kind == EventKind::Kernel && k.dst_device == p.device())
            .filter(|k| k.start_ns <= hi && k.end_ns >= lo)
            .count();
        if overlapping != 0 {
            bad.push(format!(
                "unused alloc {} overlaps {overlapping} kernels",
                p.alloc.seq
            ));
        }
    }
    let mut rx_seen = HashSet::new();
    for g in &f.round_trips {
        for t in &g.trips {
            if t.rx.hash != t.tx.hash
                || t.rx.dst_device != t.tx.src_device
                || t.rx.start_ns < t.tx.start_ns
                || !rx_seen.insert(t.rx.seq)
            {
                bad.push(format!("round trip ({}, {})", t.tx.seq, t.rx.seq));
            }
        }
    }
    for g in &f.duplicates {
        if g.events.len() < 2
            || g.events
                .iter()
                .any(|e| e.hash != g.hash || e.dst_device != g.dest_device)
        {
            bad.push(format!("duplicate group of hash {}", g.hash));
        }
    }
    bad
}

fn definitional_soundness() -> Outcome {
    let mut traces: Vec<Trace> = (0..1000)
        .map(|seed| random_trace(10_000 + seed, RandomTraceConfig::default()))
        .collect();
    traces.extend(grid().iter().map(|s| generate(s).unwrap().trace));
    let (mut ua, mut rt, mut dd) = (0, 0, 0);
    for (i, t) in traces.iter().enumerate() {
        let f = analyzed(t);
        ua += f.unused_allocs.len();
        rt += f.round_trips.iter().map(|g| g.trips.len()).sum::<usize>();
        dd += f.duplicates.len();
        if let Some(v) = soundness_violations(t, &f).first() {
            return Err(format!("trace {i}: {v}"));
        }
    }
    Ok(format!(
        "{} traces: {ua} unused allocs, {rt} round trips, {dd} duplicate groups all sound",
        traces.len()
    ))
}

fn malformed_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data/malformed")
}

fn serialization_round_trip() -> Outcome {
    for seed in 0..500 {
        let t = random_trace(20_000 + seed, RandomTraceConfig::default());
        let text = serialize_trace_to_string(&t).map_err(|e| e.to_string())?;
        let back = parse_trace_str(&text).map_err(|e| format!("seed {seed}: {e}"))?;
        if back != t {
            return Err(format!("seed {seed}: parse(serialize(t)) != t"));
        }
        if serialize_trace_to_string(&back).unwrap() != text {
            return Err(format!("seed {seed}: serialization not canonical"));
        }
    }

    let dir = malformed_dir();
    let manifest = fs::read_to_string(dir.join("EXPECTED")).map_err(|e| e.to_string())?;
    let mut cases = 0;
    for line in manifest
        .lines()
        .filter(|l| !l.trim().is_empty() && !l.starts_with('#'))
    {
        let mut parts = line.split_whitespace();
        let (file, class) = (parts.next().unwrap(), parts.next().unwrap());
        let out = dmlens(&["analyze", dir.join(file).to_str().unwrap()]);
        let stderr = String::from_utf8_lossy(&out.stderr);
        if out.status.code() != Some(1) || !stderr.contains(&format!("error[{class}]")) {
            return Err(format!(
                "{file}: exit {:?}, stderr {:?} (expected {class})",
                out.status.code(),
                stderr.trim()
            ));
        }
        cases += 1;
    }
    if cases < 12 {
        return Err(format!("only {cases} malformed files"));
    }
    Ok(format!(
        "500 random traces identical; {cases} malformed files exit 1 with their class"
    ))
}

fn reports(trace: &Trace) -> (String, String) {
    let f = analyzed(trace);
    let s = estimate(trace, &f).unwrap();
    let i = attribute(trace, &f);
    (
        render_text(trace, &f, &s, &i, RenderOptions::default()),
        render_json(trace, &f, &s, &i),
    )
}

fn determinism() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut traces = vec![
        generate(&PatternSpec {
            jitter_ns: 700,
            n_devices: 3,
            ..PatternSpec::new(Pattern::Mixed, 7)
        })
        .unwrap()
        .trace,
        generate(&PatternSpec::new(Pattern::Listing2, 5))
            .unwrap()
            .trace,
    ];
    traces.extend((0..20).map(|s| random_trace(30_000 + s, RandomTraceConfig::default())));
    for (i, t) in traces.iter().enumerate() {
        if reports(t) != reports(t) {
            return Err(format!("trace {i}: in-process reports differ"));
        }
        let path = tmp.path().join(format!("{i}.ndjson"));
        serialize_trace(t, fs::File::create(&path).unwrap()).unwrap();
        let p = path.to_str().unwrap();
        for extra in [&[][..], &["--json"][..]] {
            let args: Vec<&str> = ["analyze", p].iter().chain(extra).copied().collect();
            let (a, b) = (dmlens(&args), dmlens(&args));
            if a.stdout != b.stdout || a.status.code() != Some(0) {
                return Err(format!("trace {i} {extra:?}: CLI reports differ or failed"));
            }
        }
    }
    Ok(format!(
        "{} traces: text and JSON byte-identical, in-process and via CLI",
        traces.len()
    ))
}

struct Run {
    seconds: f64,
    peak_kib: u64,
    /// The CLI's own timing line.
    breakdown: String,
}

fn timed_analyze(path: &Path) -> Result<Run, String> {
    let started = Instant::now();
    let out = dmlens(&[
        "analyze",
        path.to_str().unwrap(),
        "--json",
        "-v",
        "-o",
        "/dev/null",
    ]);
    let seconds = started.elapsed().as_secs_f64();
    let stderr = String::from_utf8_lossy(&out.stderr);
    if out.status.code() != Some(0) {
        return Err(format!("analyze failed: {}", stderr.trim()));
    }
    let peak_kib = stderr
        .split("peak rss ")
        .nth(1)
        .and_then(|s| s.split_whitespace().next())
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| format!("no peak rss in {stderr:?}"))?;
    let breakdown = stderr.lines().last().unwrap_or_default().to_string();
    Ok(Run {
        seconds,
        peak_kib,
        breakdown,
    })
}

fn write_scale_trace(dir: &Path, n: usize) -> PathBuf {
    let path = dir.join(format!("scale_{n}.ndjson"));
    let file = std::io::BufWriter::new(fs::File::create(&path).unwrap());
    serialize_trace(&scale_trace(n, 42), file).unwrap();
    path
}

fn scale() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let million = write_scale_trace(tmp.path(), 1_000_000);
    let run = timed_analyze(&million)?;
    let mb = run.peak_kib as f64 * 1024.0 / 1e6;
    if run.seconds >= 10.0 || mb >= 1000.0 {
        return Err(format!("1M events: {:.2} s, {mb:.0} MB peak", run.seconds));
    }

    let small = write_scale_trace(tmp.path(), 1 << 19);
    let large = write_scale_trace(tmp.path(), 1 << 20);
    let best = |p: &Path| -> Result<Run, String> {
        let mut best = timed_analyze(p)?;
        for _ in 1..3 {
            let r = timed_analyze(p)?;
            if r.seconds < best.seconds {
                best = r;
            }
        }
        Ok(best)
    };
    let (s, l) = (best(&small)?, best(&large)?);
    let ratio = l.seconds / s.seconds;
    if ratio > 2.3 {
        return Err(format!(
            "2^20/2^19 ratio {ratio:.2} > 2.3 ({:.3} s [{}] / {:.3} s [{}])",
            l.seconds, l.breakdown, s.seconds, s.breakdown
        ));
    }
    Ok(format!(
        "1M events in {:.2} s, {mb:.0} MB peak; 2^20/2^19 ratio {ratio:.2}",
        run.seconds
    ))
}

fn audit_count(trace: &Path, payloads: &Path) -> Result<u64, String> {
    let out = dmlens(&[
        "audit",
        trace.to_str().unwrap(),
        "--payloads",
        payloads.to_str().unwrap(),
    ]);
    let stdout = String::from_utf8_lossy(&out.stdout);
    if out.status.code() != Some(0) {
        return Err(format!(
            "audit failed: {}",
            String::from_utf8_lossy(&out.stderr)
        ));
    }
    let fields: BTreeMap<&str, u64> = stdout
        .lines()
        .filter_map(|l| l.split_once(": "))
        .filter_map(|(k, v)| Some((k, v.trim().parse().ok()?)))
        .collect();
    if fields.get("missing") != Some(&0) {
        return Err(format!("sidecars missing: {stdout}"));
    }
    fields
        .get("collision_count")
        .copied()
        .ok_or_else(|| format!("no collision_count in {stdout:?}"))
}

fn collision_audit() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut replayed = 0;
    for pattern in Pattern::ALL {
        let trace = tmp.path().join(format!("{pattern}.ndjson"));
        let payloads = tmp.path().join(format!("{pattern}.payloads"));
        let out = dmlens(&[
            "gen",
            "--pattern",
            pattern.as_str(),
            "-n",
            "5",
            "--devices",
            "3",
            "-o",
            trace.to_str().unwrap(),
            "--payload-dir",
            payloads.to_str().unwrap(),
        ]);
        if out.status.code() != Some(0) {
            return Err(format!("gen {pattern} failed"));
        }
        let n = audit_count(&trace, &payloads)?;
        if n != 0 {
            return Err(format!("{pattern}: {n} collisions on honest sidecars"));
        }
        replayed += fs::read_dir(&payloads).unwrap().count();
    }

    // Give the second reception of a duplicated payload different bytes.
    let trace_path = tmp.path().join("listing1.ndjson");
    let trace = parse_trace_str(&fs::read_to_string(&trace_path).unwrap()).unwrap();
    let mut first_by_hash = BTreeMap::new();
    let repeat = trace
        .events
        .iter()
        .filter(|e| e.has_content())
        .find(|e| first_by_hash.insert(e.hash, e.seq).is_some())
        .ok_or("listing1 has no repeated hash")?;
    let sidecar = tmp
        .path()
        .join("listing1.payloads")
        .join(format!("{}.bin", repeat.seq));
    let mut bytes = fs::read(&sidecar).unwrap();
    bytes[0] ^= 0xff;
    fs::write(&sidecar, bytes).unwrap();
    let n = audit_count(&trace_path, &tmp.path().join("listing1.payloads"))?;
    if n != 1 {
        return Err(format!("tampered sidecar: collision_count {n}, expected 1"));
    }
    Ok(format!(
        "{replayed} honest sidecars: 0 collisions; tampered sidecar: 1"
    ))
}

fn main() {
    let criteria: [Criterion; 8] = [
        ("oracle equivalence", oracle_equivalence),
        ("ground-truth counts", ground_truth_counts),
        ("speedup closure", speedup_closure),
        ("definitional soundness", definitional_soundness),
        ("serialization round trip", serialization_round_trip),
        ("determinism", determinism),
        ("scale", scale),
        ("collision audit", collision_audit),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        let started = Instant::now();
        let outcome =
            std::panic::catch_unwind(check).unwrap_or_else(|_| Err("panicked".to_string()));
        let secs = started.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS  {name}: {detail} [{secs:.1} s]"),
            Err(why) => {
                failed += 1;
                println!("FAIL  {name}: {why} [{secs:.1} s]");
            }
        }
    }
    println!(
        "acceptance: {}/{} criteria passed",
        criteria.len() - failed,
        criteria.len()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
