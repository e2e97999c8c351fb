//! Brute-force reference implementations of the five detectors.
//!
//! These restate the pattern definitions directly (pairwise comparisons,
//! exhaustive interval checks, explicit per-address stacks) and share no code
//! with `detectors` or `prep` beyond the trace model and result types. They are
//! quadratic or worse and meant for differential testing only.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use crate::detectors::{
    Category, DuplicateGroup, Findings, RepeatedAllocGroup, RoundTrip, RoundTripGroup,
};
use crate::model::{DeviceNum, EventKind, Trace, TraceEvent};
use crate::prep::AllocPair;

fn chronological(trace: &Trace) -> Vec<&TraceEvent> {
    let mut v: Vec<&TraceEvent> = trace.events.iter().collect();
    v.sort_by_key(|e| (e.start_ns, e.seq));
    v
}

fn content_transfers(trace: &Trace) -> Vec<&TraceEvent> {
    chronological(trace)
        .into_iter()
        .filter(|e| e.kind == EventKind::Transfer && e.bytes > 0 && e.hash != 0)
        .collect()
}

fn is_target(trace: &Trace, d: DeviceNum) -> bool {
    d != trace.host_device && d.0 < trace.num_devices_total
}

/// Pairwise: two transfers are duplicates iff they share content hash and
/// receiving device.
pub fn oracle_duplicates(trace: &Trace) -> Vec<DuplicateGroup<'_>> {
    let transfers = content_transfers(trace);
    let mut taken = vec![false; transfers.len()];
    let mut groups = Vec::new();
    for i in 0..transfers.len() {
        if taken[i] {
            continue;
        }
        let mut members = vec![transfers[i]];
        for j in i + 1..transfers.len() {
            if transfers[j].hash == transfers[i].hash
                && transfers[j].dst_device == transfers[i].dst_device
            {
                taken[j] = true;
                members.push(transfers[j]);
            }
        }
        if members.len() >= 2 {
            groups.push(DuplicateGroup {
                hash: transfers[i].hash,
                dest_device: transfers[i].dst_device,
                events: members,
            });
        }
    }
    groups
}

/// Greedy matching: each transfer, in order, takes the earliest unconsumed
/// reception of the same content by its sender that happens strictly later.
pub fn oracle_round_trips(trace: &Trace) -> Vec<RoundTripGroup<'_>> {
    let transfers = content_transfers(trace);
    let mut consumed = vec![false; transfers.len()];
    let mut groups: BTreeMap<(u64, DeviceNum, DeviceNum), Vec<RoundTrip<'_>>> = BTreeMap::new();
    for (i, tx) in transfers.iter().enumerate() {
        let later = |r: &TraceEvent| (r.start_ns, r.seq) > (tx.start_ns, tx.seq);
        let rx = (0..transfers.len())
            .filter(|&j| j != i && !consumed[j])
            .filter(|&j| {
                let r = transfers[j];
                r.hash == tx.hash && r.dst_device == tx.src_device && later(r)
            })
            .min_by_key(|&j| (transfers[j].start_ns, transfers[j].seq));
        if let Some(j) = rx {
            consumed[j] = true;
            groups
                .entry((tx.hash, tx.src_device, tx.dst_device))
                .or_default()
                .push(RoundTrip {
                    tx,
                    rx: transfers[j],
                });
        }
    }
    groups
        .into_iter()
        .map(|((hash, src_device, dest_device), trips)| RoundTripGroup {
            hash,
            src_device,
            dest_device,
            trips,
        })
        .collect()
}

/// Pairs allocations and deletions by scanning backwards from each deletion
/// for the latest unmatched allocation at the same device address.
fn oracle_pairs(trace: &Trace) -> Vec<AllocPair<'_>> {
    let events = chronological(trace);
    let trace_end = events.iter().map(|e| e.end_ns).max().unwrap_or(0);
    let allocs: Vec<&TraceEvent> = events
        .iter()
        .copied()
        .filter(|e| e.kind == EventKind::Alloc)
        .collect();
    let mut delete_of: Vec<Option<&TraceEvent>> = vec![None; allocs.len()];

    for (pos, d) in events.iter().enumerate() {
        if d.kind != EventKind::Delete {
            continue;
        }
        let earlier_allocs = events[..pos]
            .iter()
            .filter(|e| e.kind == EventKind::Alloc)
            .count();
        let matched = (0..earlier_allocs).rev().find(|&k| {
            delete_of[k].is_none()
                && allocs[k].dst_device == d.dst_device
                && allocs[k].dst_addr == d.dst_addr
        });
        if let Some(k) = matched {
            delete_of[k] = Some(*d);
        }
    }

    allocs
        .into_iter()
        .zip(delete_of)
        .map(|(alloc, delete)| AllocPair {
            alloc,
            delete,
            lifetime_end_ns: delete.map_or(trace_end, |d| d.end_ns),
        })
        .collect()
}

pub fn oracle_repeated_allocs(trace: &Trace) -> Vec<RepeatedAllocGroup<'_>> {
    let mut by_key: BTreeMap<(u64, DeviceNum, u64), Vec<AllocPair<'_>>> = BTreeMap::new();
    for p in oracle_pairs(trace) {
        by_key
            .entry((p.alloc.src_addr, p.alloc.dst_device, p.alloc.bytes))
            .or_default()
            .push(p);
    }
    by_key
        .into_iter()
        .filter(|(_, v)| v.len() > 1)
        .map(
            |((host_addr, tgt_device, bytes), pairs)| RepeatedAllocGroup {
                host_addr,
                tgt_device,
                bytes,
                pairs,
            },
        )
        .collect()
}

/// An allocation is unused iff no kernel on its (target) device intersects
/// its lifetime.
pub fn oracle_unused_allocs(trace: &Trace) -> Vec<AllocPair<'_>> {
    let kernels: Vec<&TraceEvent> = trace
        .events
        .iter()
        .filter(|e| e.kind == EventKind::Kernel)
        .collect();
    oracle_pairs(trace)
        .into_iter()
        .filter(|p| is_target(trace, p.alloc.dst_device))
        .filter(|p| {
            !kernels.iter().any(|k| {
                k.dst_device == p.alloc.dst_device
                    && k.start_ns <= p.lifetime_end_ns
                    && k.end_ns >= p.alloc.start_ns
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Slot {
    AfterLastKernel,
    Gap(usize),
    Overlap(usize),
}

/// For each transfer to a target device: unused if every kernel on that
/// device ended before it started, or if it sits in a kernel-free gap and
/// the next transfer from the same source address lands in the same gap
/// with no kernel-overlapping transfer to that device in between.
pub fn oracle_unused_transfers(trace: &Trace) -> Vec<&TraceEvent> {
    let events = chronological(trace);
    let mut unused = Vec::new();
    for dev in (0..trace.num_devices_total).map(DeviceNum) {
        if !is_target(trace, dev) {
            continue;
        }
        let kernels: Vec<&TraceEvent> = events
            .iter()
            .copied()
            .filter(|e| e.kind == EventKind::Kernel && e.dst_device == dev)
            .collect();
        let transfers: Vec<&TraceEvent> = events
            .iter()
            .copied()
            .filter(|e| e.kind == EventKind::Transfer && e.dst_device == dev)
            .collect();

        // First kernel (in start order) still running or yet to run.
        let slot = |t: &TraceEvent| match kernels.iter().position(|k| k.end_ns >= t.start_ns) {
            None => Slot::AfterLastKernel,
            Some(i) if kernels[i].start_ns > t.start_ns => Slot::Gap(i),
            Some(i) => Slot::Overlap(i),
        };
        let slots: Vec<Slot> = transfers.iter().map(|t| slot(t)).collect();

        for (i, t) in transfers.iter().enumerate() {
            match slots[i] {
                Slot::AfterLastKernel => unused.push(*t),
                Slot::Gap(g) => {
                    let next_same =
                        (i + 1..transfers.len()).find(|&j| transfers[j].src_addr == t.src_addr);
                    if let Some(j) = next_same {
                        let overlap_between =
                            (i + 1..j).any(|m| matches!(slots[m], Slot::Overlap(_)));
                        if slots[j] == Slot::Gap(g) && !overlap_between {
                            unused.push(*t);
                        }
                    }
                }
                Slot::Overlap(_) => {}
            }
        }
    }
    unused.sort_by_key(|e| (e.start_ns, e.seq));
    unused
}

/// All five oracles over one trace. Round trips use the temporal guard.
pub fn oracle_analyze(trace: &Trace) -> Findings<'_> {
    Findings {
        duplicates: oracle_duplicates(trace),
        round_trips: oracle_round_trips(trace),
        repeated_allocs: oracle_repeated_allocs(trace),
        unused_allocs: oracle_unused_allocs(trace),
        unused_transfers: oracle_unused_transfers(trace),
        warnings: Vec::new(),
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Divergence {
    pub category: Category,
    pub only_detector: Vec<String>,
    pub only_oracle: Vec<String>,
}

impl fmt::Display for Divergence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}: detector-only {:?}, oracle-only {:?}",
            self.category.code(),
            self.only_detector,
            self.only_oracle
        )
    }
}

type PairSeqs = (u64, Option<u64>);

fn pair_seqs(p: &AllocPair<'_>) -> PairSeqs {
    (p.alloc.seq, p.delete.map(|d| d.seq))
}

/// Seq-level canonical form of each category, for set comparison.
fn canonical(f: &Findings<'_>) -> [BTreeSet<String>; 5] {
    let dd = f
        .duplicates
        .iter()
        .map(|g| {
            let seqs: Vec<u64> = g.events.iter().map(|e| e.seq).collect();
            format!("{}@{}:{:?}", g.hash, g.dest_device, seqs)
        })
        .collect();
    let rt = f
        .round_trips
        .iter()
        .flat_map(|g| {
            g.trips.iter().map(move |t| {
                format!(
                    "{}@{}->{}:({},{})",
                    g.hash, g.src_device, g.dest_device, t.tx.seq, t.rx.seq
                )
            })
        })
        .collect();
    let ra = f
        .repeated_allocs
        .iter()
        .map(|g| {
            let pairs: BTreeSet<PairSeqs> = g.pairs.iter().map(pair_seqs).collect();
            format!("{:x}@{}/{}:{:?}", g.host_addr, g.tgt_device, g.bytes, pairs)
        })
        .collect();
    let ua = f
        .unused_allocs
        .iter()
        .map(|p| format!("{:?}", pair_seqs(p)))
        .collect();
    let ut = f
        .unused_transfers
        .iter()
        .map(|e| e.seq.to_string())
        .collect();
    [dd, rt, ra, ua, ut]
}

/// Compares two findings category by category as sets of seqs.
pub fn diff_findings(detector: &Findings<'_>, oracle: &Findings<'_>) -> Vec<Divergence> {
    let a = canonical(detector);
    let b = canonical(oracle);
    Category::ALL
        .into_iter()
        .zip(a.iter().zip(b.iter()))
        .filter(|(_, (x, y))| x != y)
        .map(|(category, (x, y))| Divergence {
            category,
            only_detector: x.difference(y).cloned().collect(),
            only_oracle: y.difference(x).cloned().collect(),
        })
        .collect()
}
