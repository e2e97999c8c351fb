//! Optimization-potential estimate: how much of the wall time the reported
//! findings could save, and the resulting predicted speedup.
//!
//! Eliminable events per category:
//! - DD: every transfer in a duplicate group except the first.
//! - RT: the return leg of each round trip.
//! - RA: allocation and deletion of every pair after the first in a group.
//! - UA: allocation and deletion of each unused pair.
//! - UT: each unused transfer.
//!
//! The union counts every event once even when several categories claim it.
//! Savings assume data operations run serially; traces with overlapping event
//! intervals are flagged as unreliable.

use std::collections::{BTreeSet, HashMap};
use std::fmt;

use thiserror::Error;

use crate::detectors::{Category, Findings};
use crate::model::{Trace, TraceEvent};
use crate::prep::AllocPair;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum EstimateWarning {
    /// Eliminable time exceeded the wall time and was clamped.
    Clamped { union_ns: u64, wall_time_ns: u64 },
    /// Everything is eliminable; the speedup is unbounded.
    UnboundedSpeedup,
    /// Events overlap in time, so removing one does not necessarily shorten
    /// the run by its duration.
    OverlappingIntervals,
}

impl fmt::Display for EstimateWarning {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EstimateWarning::Clamped {
                union_ns,
                wall_time_ns,
            } => write!(
                f,
                "eliminable time {union_ns} ns exceeds wall time {wall_time_ns} ns; clamped"
            ),
            EstimateWarning::UnboundedSpeedup => {
                f.write_str("all wall time is eliminable; predicted speedup is unbounded")
            }
            EstimateWarning::OverlappingIntervals => f.write_str(
                "trace has overlapping event intervals; savings estimate is potentially unreliable",
            ),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SavingsEstimate {
    /// Indexed by [`Category::index`].
    pub per_category_ns: [u64; 5],
    pub union_ns: u64,
    pub wall_time_ns: u64,
    /// `wall / (wall - union)`; `f64::INFINITY` when the two are equal.
    pub predicted_speedup: f64,
    pub eliminable_seqs: BTreeSet<u64>,
    pub warnings: Vec<EstimateWarning>,
}

impl SavingsEstimate {
    pub fn category_ns(&self, c: Category) -> u64 {
        self.per_category_ns[c.index()]
    }

    pub fn reliable(&self) -> bool {
        !self
            .warnings
            .contains(&EstimateWarning::OverlappingIntervals)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EstimateError {
    #[error("finding references seq {0}, which is not an event of this trace")]
    FindingsTraceMismatch(u64),
}

/// Eliminable events per category, each in chronological order.
pub fn eliminable_events<'t>(findings: &Findings<'t>) -> [Vec<&'t TraceEvent>; 5] {
    let pair_events = |p: &AllocPair<'t>| std::iter::once(p.alloc).chain(p.delete);

    let dd = findings
        .duplicates
        .iter()
        .flat_map(|g| g.events.iter().skip(1).copied())
        .collect();
    let rt = findings
        .round_trips
        .iter()
        .flat_map(|g| g.trips.iter().map(|t| t.rx))
        .collect();
    let ra = findings
        .repeated_allocs
        .iter()
        .flat_map(|g| g.pairs.iter().skip(1).flat_map(pair_events))
        .collect();
    let ua = findings
        .unused_allocs
        .iter()
        .flat_map(pair_events)
        .collect();
    let ut = findings.unused_transfers.clone();

    let mut out: [Vec<&'t TraceEvent>; 5] = [dd, rt, ra, ua, ut];
    for v in &mut out {
        v.sort_by_key(|e| e.order_key());
        v.dedup_by_key(|e| e.seq);
    }
    out
}

pub fn estimate(trace: &Trace, findings: &Findings<'_>) -> Result<SavingsEstimate, EstimateError> {
    let by_seq: HashMap<u64, &TraceEvent> = trace.events.iter().map(|e| (e.seq, e)).collect();
    for e in findings.referenced_events() {
        match by_seq.get(&e.seq) {
            Some(t) if *t == e => {}
            _ => return Err(EstimateError::FindingsTraceMismatch(e.seq)),
        }
    }

    let per_category = eliminable_events(findings);
    let mut per_category_ns = [0u64; 5];
    let mut eliminable_seqs = BTreeSet::new();
    let mut union_ns = 0u64;
    for (i, events) in per_category.iter().enumerate() {
        for e in events {
            per_category_ns[i] += e.duration_ns();
            if eliminable_seqs.insert(e.seq) {
                union_ns += e.duration_ns();
            }
        }
    }

    let wall_time_ns = trace.wall_time();
    let mut warnings = Vec::new();
    if has_overlapping_intervals(trace) {
        warnings.push(EstimateWarning::OverlappingIntervals);
    }
    if union_ns > wall_time_ns {
        warnings.push(EstimateWarning::Clamped {
            union_ns,
            wall_time_ns,
        });
        union_ns = wall_time_ns;
    }
    let predicted_speedup = if wall_time_ns == 0 {
        1.0
    } else if union_ns == wall_time_ns {
        warnings.push(EstimateWarning::UnboundedSpeedup);
        f64::INFINITY
    } else {
        wall_time_ns as f64 / (wall_time_ns - union_ns) as f64
    };

    Ok(SavingsEstimate {
        per_category_ns,
        union_ns,
        wall_time_ns,
        predicted_speedup,
        eliminable_seqs,
        warnings,
    })
}

/// True when some event starts before an earlier-starting event has ended.
/// Touching intervals (`end == next start`) do not count.
pub fn has_overlapping_intervals(trace: &Trace) -> bool {
    let mut max_end: Option<u64> = None;
    for e in &trace.events {
        if max_end.is_some_and(|m| e.start_ns < m) {
            return true;
        }
        max_end = Some(max_end.map_or(e.end_ns, |m| m.max(e.end_ns)));
    }
    false
}
