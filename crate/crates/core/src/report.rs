//! Source attribution and report rendering.
//!
//! [`attribute`] folds the events behind each finding into one row per
//! category and code location. [`render_text`] and [`render_json`] turn rows,
//! findings and the savings estimate into the human and machine reports.
//! Both renderers are pure: equal inputs give byte-identical output.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::Serialize;

use crate::detectors::{Category, FindingCounts, Findings};
use crate::estimate::SavingsEstimate;
use crate::model::{CodeLocation, Trace, TraceEvent};

pub const REPORT_VERSION: u32 = 1;

/// Findings of one category aggregated at one code location.
#[derive(Debug, Clone, PartialEq)]
pub struct AttributedIssue {
    pub category: Category,
    pub location: CodeLocation,
    pub occurrence_count: u64,
    pub total_ns: u64,
    pub total_bytes: u64,
    /// `total_ns / wall_time`; 0 when the wall time is 0.
    pub pct_of_wall: f64,
}

pub fn section_title(c: Category) -> &'static str {
    match c {
        Category::Duplicate => "Duplicate Target Data Transfer Analysis",
        Category::RoundTrip => "Round-Trip Target Data Transfer Analysis",
        Category::RepeatedAlloc => "Repeated Device Memory Allocation Analysis",
        Category::UnusedAlloc => "Unused Device Memory Allocation Analysis",
        Category::UnusedTransfer => "Unused Data Transfer Analysis",
    }
}

fn json_key(c: Category) -> &'static str {
    match c {
        Category::Duplicate => "duplicate_transfers",
        Category::RoundTrip => "round_trip_transfers",
        Category::RepeatedAlloc => "repeated_allocs",
        Category::UnusedAlloc => "unused_allocs",
        Category::UnusedTransfer => "unused_transfers",
    }
}

/// Distinct events behind the findings of `c`, chronologically. Synthetic
/// deletes have no event and contribute nothing.
pub fn constituent_events<'t>(findings: &Findings<'t>, c: Category) -> Vec<&'t TraceEvent> {
    let mut events: Vec<&'t TraceEvent> = match c {
        Category::Duplicate => findings
            .duplicates
            .iter()
            .flat_map(|g| g.events.iter().copied())
            .collect(),
        Category::RoundTrip => findings
            .round_trips
            .iter()
            .flat_map(|g| g.trips.iter().flat_map(|t| [t.tx, t.rx]))
            .collect(),
        Category::RepeatedAlloc => findings
            .repeated_allocs
            .iter()
            .flat_map(|g| g.pairs.iter())
            .flat_map(|p| std::iter::once(p.alloc).chain(p.delete))
            .collect(),
        Category::UnusedAlloc => findings
            .unused_allocs
            .iter()
            .flat_map(|p| std::iter::once(p.alloc).chain(p.delete))
            .collect(),
        Category::UnusedTransfer => findings.unused_transfers.clone(),
    };
    events.sort_by_key(|e| e.order_key());
    events.dedup_by_key(|e| e.seq);
    events
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
enum LocKey {
    Source(String, u32),
    Codeptr(u64),
    Unknown,
}

fn loc_key(loc: &CodeLocation) -> LocKey {
    match (&loc.file, loc.line) {
        (Some(f), line) => LocKey::Source(f.clone(), line.unwrap_or(0)),
        _ if loc.codeptr == 0 => LocKey::Unknown,
        _ => LocKey::Codeptr(loc.codeptr),
    }
}

/// Aggregates finding events by category and location.
///
/// Events are keyed by `file:line` when resolved, otherwise by codeptr;
/// events with neither land in one `<unknown>` row. Rows come in category
/// order, then by descending `total_ns`, then by location.
pub fn attribute(trace: &Trace, findings: &Findings<'_>) -> Vec<AttributedIssue> {
    let wall = trace.wall_time();
    let mut out = Vec::new();
    for c in Category::ALL {
        let mut rows: BTreeMap<LocKey, AttributedIssue> = BTreeMap::new();
        for e in constituent_events(findings, c) {
            let key = loc_key(&e.loc);
            let row = rows.entry(key.clone()).or_insert_with(|| AttributedIssue {
                category: c,
                location: match key {
                    LocKey::Unknown => CodeLocation::default(),
                    _ => e.loc.clone(),
                },
                occurrence_count: 0,
                total_ns: 0,
                total_bytes: 0,
                pct_of_wall: 0.0,
            });
            row.occurrence_count += 1;
            row.total_ns += e.duration_ns();
            row.total_bytes += e.bytes;
        }
        let mut rows: Vec<(LocKey, AttributedIssue)> = rows.into_iter().collect();
        rows.sort_by_key(|(k, r)| (Reverse(r.total_ns), k.clone()));
        out.extend(rows.into_iter().map(|(_, mut r)| {
            r.pct_of_wall = if wall == 0 {
                0.0
            } else {
                r.total_ns as f64 / wall as f64
            };
            r
        }));
    }
    out
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum Verbosity {
    /// No warnings.
    Quiet,
    #[default]
    Normal,
    /// Adds the individual findings under each table.
    Verbose,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RenderOptions {
    pub color: bool,
    pub verbosity: Verbosity,
}

/// `auto`, `always` or `never`, as read from `DMLENS_COLOR`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum ColorChoice {
    #[default]
    Auto,
    Always,
    Never,
}

impl ColorChoice {
    /// Unset or unrecognized values mean `auto`.
    pub fn from_env_value(v: Option<&str>) -> Self {
        match v.map(str::trim) {
            Some("always") => ColorChoice::Always,
            Some("never") => ColorChoice::Never,
            _ => ColorChoice::Auto,
        }
    }

    pub fn resolve(self, is_terminal: bool) -> bool {
        match self {
            ColorChoice::Always => true,
            ColorChoice::Never => false,
            ColorChoice::Auto => is_terminal,
        }
    }
}

const BOLD: &str = "\x1b[1m";
const YELLOW: &str = "\x1b[33m";
const RESET: &str = "\x1b[0m";

fn paint(out: &mut String, color: bool, style: &str, text: &str) {
    if color {
        let _ = write!(out, "{style}{text}{RESET}");
    } else {
        out.push_str(text);
    }
}

/// `"0.11%"` style: two decimals of a percentage.
pub fn format_pct(fraction: f64) -> String {
    format!("{:.2}%", fraction * 100.0)
}

pub fn format_speedup(speedup: f64) -> String {
    if speedup.is_finite() {
        format!("{speedup:.4}x")
    } else {
        "unbounded".to_string()
    }
}

fn section_summary(c: Category, counts: &FindingCounts, eliminable_ns: u64) -> String {
    let n = |k: usize, one: &str, many: &str| format!("{k} {}", if k == 1 { one } else { many });
    let what = match c {
        Category::Duplicate => format!(
            "{} in {}",
            n(counts.dd_events, "transfer", "transfers"),
            n(counts.dd_groups, "group", "groups")
        ),
        Category::RoundTrip => n(counts.rt_pairs, "round trip", "round trips"),
        Category::RepeatedAlloc => format!(
            "{} in {}",
            n(counts.ra_pairs, "allocation", "allocations"),
            n(counts.ra_groups, "group", "groups")
        ),
        Category::UnusedAlloc => n(counts.ua_pairs, "allocation", "allocations"),
        Category::UnusedTransfer => n(counts.ut_events, "transfer", "transfers"),
    };
    format!("{what}; {eliminable_ns} ns eliminable")
}

fn seq_list(seqs: impl IntoIterator<Item = u64>) -> String {
    seqs.into_iter()
        .map(|s| s.to_string())
        .collect::<Vec<_>>()
        .join(",")
}

fn pair_desc(p: &crate::prep::AllocPair<'_>) -> String {
    match p.delete {
        Some(d) => format!("{}->{}", p.alloc.seq, d.seq),
        None => format!("{}->(never freed)", p.alloc.seq),
    }
}

fn finding_details(findings: &Findings<'_>, c: Category) -> Vec<String> {
    match c {
        Category::Duplicate => findings
            .duplicates
            .iter()
            .map(|g| {
                format!(
                    "hash 0x{:016x} to device {}: seqs {}",
                    g.hash,
                    g.dest_device,
                    seq_list(g.events.iter().map(|e| e.seq))
                )
            })
            .collect(),
        Category::RoundTrip => findings
            .round_trips
            .iter()
            .flat_map(|g| {
                g.trips.iter().map(move |t| {
                    format!(
                        "hash 0x{:016x} device {} -> {} -> {}: seqs {},{}",
                        g.hash, g.src_device, g.dest_device, g.src_device, t.tx.seq, t.rx.seq
                    )
                })
            })
            .collect(),
        Category::RepeatedAlloc => findings
            .repeated_allocs
            .iter()
            .map(|g| {
                let pairs: Vec<_> = g.pairs.iter().map(pair_desc).collect();
                format!(
                    "host 0x{:x} ({} bytes) on device {}: {}",
                    g.host_addr,
                    g.bytes,
                    g.tgt_device,
                    pairs.join(" ")
                )
            })
            .collect(),
        Category::UnusedAlloc => findings
            .unused_allocs
            .iter()
            .map(|p| format!("device {}: {}", p.device(), pair_desc(p)))
            .collect(),
        Category::UnusedTransfer => findings
            .unused_transfers
            .iter()
            .map(|e| {
                format!(
                    "seq {} device {} -> {} from 0x{:x}",
                    e.seq, e.src_device, e.dst_device, e.src_addr
                )
            })
            .collect(),
    }
}

pub fn render_text(
    trace: &Trace,
    findings: &Findings<'_>,
    savings: &SavingsEstimate,
    issues: &[AttributedIssue],
    opts: RenderOptions,
) -> String {
    let color = opts.color;
    let counts = findings.counts();
    let mut out = String::new();
    let _ = writeln!(
        out,
        "trace: {} events, {} device slots (host {}), wall time {} ns",
        trace.events.len(),
        trace.num_devices_total,
        trace.host_device,
        savings.wall_time_ns
    );

    for c in Category::ALL {
        out.push('\n');
        paint(
            &mut out,
            color,
            BOLD,
            &format!("=== {} ===", section_title(c)),
        );
        out.push('\n');
        let rows: Vec<&AttributedIssue> = issues.iter().filter(|i| i.category == c).collect();
        if rows.is_empty() {
            out.push_str("(none detected)\n");
            continue;
        }
        let _ = writeln!(
            out,
            "{}",
            section_summary(c, &counts, savings.category_ns(c))
        );
        let _ = writeln!(
            out,
            "{:>9} {:>14} {:>7} {:>14}  location",
            "time(%)", "time(ns)", "count", "bytes"
        );
        for r in rows {
            let _ = writeln!(
                out,
                "{:>9} {:>14} {:>7} {:>14}  {}",
                format_pct(r.pct_of_wall),
                r.total_ns,
                r.occurrence_count,
                r.total_bytes,
                r.location
            );
        }
        if opts.verbosity == Verbosity::Verbose {
            for line in finding_details(findings, c) {
                let _ = writeln!(out, "  - {line}");
            }
        }
    }

    out.push('\n');
    paint(&mut out, color, BOLD, "=== Summary ===");
    out.push('\n');
    for c in Category::ALL {
        let _ = writeln!(
            out,
            "{:<24}{:>14} ns",
            format!("eliminable ({}):", c.code()),
            savings.category_ns(c)
        );
    }
    let _ = writeln!(
        out,
        "{:<24}{:>14} ns",
        "eliminable (total):", savings.union_ns
    );
    let _ = writeln!(out, "{:<24}{:>14} ns", "wall time:", savings.wall_time_ns);
    let _ = writeln!(
        out,
        "{:<24}{:>14}",
        "predicted speedup:",
        format_speedup(savings.predicted_speedup)
    );
    if !savings.reliable() {
        let _ = writeln!(
            out,
            "{:<24}{:>14}",
            "estimate:", "potentially unreliable (overlapping intervals)"
        );
    }

    if opts.verbosity != Verbosity::Quiet {
        let warnings: Vec<String> = savings
            .warnings
            .iter()
            .map(|w| w.to_string())
            .chain(findings.warnings.iter().map(|w| w.to_string()))
            .collect();
        for w in warnings {
            paint(&mut out, color, YELLOW, &format!("warning: {w}"));
            out.push('\n');
        }
    }
    out
}

#[derive(Serialize)]
struct JsonReport<'a> {
    report_version: u32,
    trace: JsonTrace,
    counts: FindingCounts,
    duplicate_transfers: Vec<JsonIssue<'a>>,
    round_trip_transfers: Vec<JsonIssue<'a>>,
    repeated_allocs: Vec<JsonIssue<'a>>,
    unused_allocs: Vec<JsonIssue<'a>>,
    unused_transfers: Vec<JsonIssue<'a>>,
    findings: JsonFindings,
    savings: JsonSavings,
    warnings: Vec<String>,
}

#[derive(Serialize)]
struct JsonTrace {
    num_devices: u32,
    host_device: u32,
    events: usize,
    wall_time_ns: u64,
}

#[derive(Serialize)]
struct JsonIssue<'a> {
    location: String,
    codeptr: u64,
    file: Option<&'a str>,
    line: Option<u32>,
    occurrence_count: u64,
    total_ns: u64,
    total_bytes: u64,
    pct_of_wall: f64,
}

#[derive(Serialize)]
struct JsonFindings {
    duplicates: Vec<JsonDuplicate>,
    round_trips: Vec<JsonRoundTrip>,
    repeated_allocs: Vec<JsonRepeatedAlloc>,
    unused_allocs: Vec<JsonPair>,
    unused_transfers: Vec<u64>,
}

#[derive(Serialize)]
struct JsonDuplicate {
    hash: u64,
    dest_device: u32,
    seqs: Vec<u64>,
}

#[derive(Serialize)]
struct JsonRoundTrip {
    hash: u64,
    src_device: u32,
    dest_device: u32,
    tx_seq: u64,
    rx_seq: u64,
}

#[derive(Serialize)]
struct JsonRepeatedAlloc {
    host_addr: u64,
    device: u32,
    bytes: u64,
    pairs: Vec<JsonPair>,
}

#[derive(Serialize)]
struct JsonPair {
    device: u32,
    alloc_seq: u64,
    /// `None` for an allocation never freed in the trace.
    delete_seq: Option<u64>,
}

#[derive(Serialize)]
struct JsonSavings {
    per_category_ns: BTreeMap<&'static str, u64>,
    union_ns: u64,
    wall_time_ns: u64,
    /// `None` (JSON `null`) when unbounded.
    predicted_speedup: Option<f64>,
    reliable: bool,
    eliminable_events: usize,
}

fn json_pair(p: &crate::prep::AllocPair<'_>) -> JsonPair {
    JsonPair {
        device: p.device().0,
        alloc_seq: p.alloc.seq,
        delete_seq: p.delete.map(|d| d.seq),
    }
}

pub fn render_json(
    trace: &Trace,
    findings: &Findings<'_>,
    savings: &SavingsEstimate,
    issues: &[AttributedIssue],
) -> String {
    let mut by_cat: BTreeMap<Category, Vec<JsonIssue<'_>>> =
        Category::ALL.iter().map(|c| (*c, Vec::new())).collect();
    for i in issues {
        by_cat.entry(i.category).or_default().push(JsonIssue {
            location: i.location.to_string(),
            codeptr: i.location.codeptr,
            file: i.location.file.as_deref(),
            line: i.location.line,
            occurrence_count: i.occurrence_count,
            total_ns: i.total_ns,
            total_bytes: i.total_bytes,
            pct_of_wall: i.pct_of_wall,
        });
    }
    let mut take = |c| by_cat.remove(&c).unwrap_or_default();

    let report = JsonReport {
        report_version: REPORT_VERSION,
        trace: JsonTrace {
            num_devices: trace.num_devices_total,
            host_device: trace.host_device.0,
            events: trace.events.len(),
            wall_time_ns: savings.wall_time_ns,
        },
        counts: findings.counts(),
        duplicate_transfers: take(Category::Duplicate),
        round_trip_transfers: take(Category::RoundTrip),
        repeated_allocs: take(Category::RepeatedAlloc),
        unused_allocs: take(Category::UnusedAlloc),
        unused_transfers: take(Category::UnusedTransfer),
        findings: JsonFindings {
            duplicates: findings
                .duplicates
                .iter()
                .map(|g| JsonDuplicate {
                    hash: g.hash,
                    dest_device: g.dest_device.0,
                    seqs: g.events.iter().map(|e| e.seq).collect(),
                })
                .collect(),
            round_trips: findings
                .round_trips
                .iter()
                .flat_map(|g| {
                    g.trips.iter().map(move |t| JsonRoundTrip {
                        hash: g.hash,
                        src_device: g.src_device.0,
                        dest_device: g.dest_device.0,
                        tx_seq: t.tx.seq,
                        rx_seq: t.rx.seq,
                    })
                })
                .collect(),
            repeated_allocs: findings
                .repeated_allocs
                .iter()
                .map(|g| JsonRepeatedAlloc {
                    host_addr: g.host_addr,
                    device: g.tgt_device.0,
                    bytes: g.bytes,
                    pairs: g.pairs.iter().map(json_pair).collect(),
                })
                .collect(),
            unused_allocs: findings.unused_allocs.iter().map(json_pair).collect(),
            unused_transfers: findings.unused_transfers.iter().map(|e| e.seq).collect(),
        },
        savings: JsonSavings {
            per_category_ns: Category::ALL
                .iter()
                .map(|c| (c.code(), savings.category_ns(*c)))
                .collect(),
            union_ns: savings.union_ns,
            wall_time_ns: savings.wall_time_ns,
            predicted_speedup: savings
                .predicted_speedup
                .is_finite()
                .then_some(savings.predicted_speedup),
            reliable: savings.reliable(),
            eliminable_events: savings.eliminable_seqs.len(),
        },
        warnings: savings
            .warnings
            .iter()
            .map(|w| w.to_string())
            .chain(findings.warnings.iter().map(|w| w.to_string()))
            .collect(),
    };
    let mut s = serde_json::to_string_pretty(&report).expect("report serializes");
    s.push('\n');
    s
}

/// Top-level JSON array names, in report order.
pub fn json_issue_keys() -> [&'static str; 5] {
    Category::ALL.map(json_key)
}

/// Seqs of all events attributed to category `c`, for recount checks.
pub fn attributed_seqs(findings: &Findings<'_>, c: Category) -> BTreeSet<u64> {
    constituent_events(findings, c)
        .iter()
        .map(|e| e.seq)
        .collect()
}
