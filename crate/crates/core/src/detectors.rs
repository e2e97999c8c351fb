//! The five detectors: duplicate transfers, round-trip transfers, repeated
//! allocations, unused allocations and unused transfers.
//!
//! Every detector takes chronologically ordered event slices (as produced by
//! filtering a validated [`Trace`]) and returns groups that borrow from the
//! trace. Output order never depends on hash-map iteration order.

use std::collections::{HashMap, HashSet, VecDeque};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{DeviceNum, EventKind, Trace, TraceEvent, Violation};
use crate::prep::{get_alloc_delete_pairs_until, partition_by_device, AllocPair, PrepWarning};

/// Device slot layout of a trace: how many slots, and which one is the host.
/// The unused-mapping detectors only sweep target devices.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DeviceSpace {
    pub num_devices_total: u32,
    pub host_device: DeviceNum,
}

impl DeviceSpace {
    pub fn of(trace: &Trace) -> Self {
        DeviceSpace {
            num_devices_total: trace.num_devices_total,
            host_device: trace.host_device,
        }
    }

    pub fn targets(self) -> impl Iterator<Item = DeviceNum> {
        (0..self.num_devices_total)
            .map(DeviceNum)
            .filter(move |d| *d != self.host_device)
    }

    fn contains(self, d: DeviceNum) -> bool {
        d.0 < self.num_devices_total
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct DetectorOptions {
    /// Run the round-trip detector in its original, unguarded form: no
    /// temporal guard, peek the return leg without consuming it, and dequeue
    /// the head of the transmit leg's own reception queue.
    pub strict_pseudocode: bool,
}

/// The five issue categories, in report order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Category {
    Duplicate,
    RoundTrip,
    RepeatedAlloc,
    UnusedAlloc,
    UnusedTransfer,
}

impl Category {
    pub const ALL: [Category; 5] = [
        Category::Duplicate,
        Category::RoundTrip,
        Category::RepeatedAlloc,
        Category::UnusedAlloc,
        Category::UnusedTransfer,
    ];

    /// Two-letter abbreviation: DD, RT, RA, UA, UT.
    pub fn code(self) -> &'static str {
        match self {
            Category::Duplicate => "DD",
            Category::RoundTrip => "RT",
            Category::RepeatedAlloc => "RA",
            Category::UnusedAlloc => "UA",
            Category::UnusedTransfer => "UT",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DuplicateGroup<'t> {
    pub hash: u64,
    pub dest_device: DeviceNum,
    /// All receptions of this content on this device, first one included.
    pub events: Vec<&'t TraceEvent>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RoundTrip<'t> {
    pub tx: &'t TraceEvent,
    pub rx: &'t TraceEvent,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RoundTripGroup<'t> {
    pub hash: u64,
    pub src_device: DeviceNum,
    pub dest_device: DeviceNum,
    pub trips: Vec<RoundTrip<'t>>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RepeatedAllocGroup<'t> {
    pub host_addr: u64,
    pub tgt_device: DeviceNum,
    pub bytes: u64,
    pub pairs: Vec<AllocPair<'t>>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Findings<'t> {
    pub duplicates: Vec<DuplicateGroup<'t>>,
    pub round_trips: Vec<RoundTripGroup<'t>>,
    pub repeated_allocs: Vec<RepeatedAllocGroup<'t>>,
    pub unused_allocs: Vec<AllocPair<'t>>,
    pub unused_transfers: Vec<&'t TraceEvent>,
    /// Deletions that could not be paired with an allocation.
    pub warnings: Vec<PrepWarning>,
}

/// Issue counts in the shape of the per-category summary tables.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FindingCounts {
    pub dd_groups: usize,
    pub dd_events: usize,
    pub rt_pairs: usize,
    pub ra_groups: usize,
    pub ra_pairs: usize,
    pub ua_pairs: usize,
    pub ut_events: usize,
}

impl<'t> Findings<'t> {
    pub fn is_empty(&self) -> bool {
        self.duplicates.is_empty()
            && self.round_trips.is_empty()
            && self.repeated_allocs.is_empty()
            && self.unused_allocs.is_empty()
            && self.unused_transfers.is_empty()
    }

    pub fn counts(&self) -> FindingCounts {
        FindingCounts {
            dd_groups: self.duplicates.len(),
            dd_events: self.duplicates.iter().map(|g| g.events.len()).sum(),
            rt_pairs: self.round_trips.iter().map(|g| g.trips.len()).sum(),
            ra_groups: self.repeated_allocs.len(),
            ra_pairs: self.repeated_allocs.iter().map(|g| g.pairs.len()).sum(),
            ua_pairs: self.unused_allocs.len(),
            ut_events: self.unused_transfers.len(),
        }
    }

    /// Every event referenced by any finding.
    pub fn referenced_events(&self) -> Vec<&'t TraceEvent> {
        let mut out = Vec::new();
        for g in &self.duplicates {
            out.extend(g.events.iter().copied());
        }
        for g in &self.round_trips {
            for t in &g.trips {
                out.push(t.tx);
                out.push(t.rx);
            }
        }
        let pair_events = |p: &AllocPair<'t>| std::iter::once(p.alloc).chain(p.delete);
        for g in &self.repeated_allocs {
            out.extend(g.pairs.iter().flat_map(pair_events));
        }
        out.extend(self.unused_allocs.iter().flat_map(pair_events));
        out.extend(self.unused_transfers.iter().copied());
        out
    }

    /// Drops duplicate groups and round trips whose payload is smaller than
    /// `min_bytes`. Detection state is unaffected; this only mutes reporting.
    pub fn retain_min_bytes(&mut self, min_bytes: u64) {
        self.duplicates
            .retain(|g| g.events.first().is_some_and(|e| e.bytes >= min_bytes));
        for g in &mut self.round_trips {
            g.trips.retain(|t| t.tx.bytes >= min_bytes);
        }
        self.round_trips.retain(|g| !g.trips.is_empty());
    }
}

/// Groups transfers by `(hash, dest_device)` and keeps keys received at
/// least twice. Groups include the first reception.
pub fn find_duplicate_transfers<'t>(data_op_events: &[&'t TraceEvent]) -> Vec<DuplicateGroup<'t>> {
    let mut received: HashMap<(u64, DeviceNum), Vec<&'t TraceEvent>> = HashMap::new();
    for &e in data_op_events {
        received.entry((e.hash, e.dst_device)).or_default().push(e);
    }
    let mut groups: Vec<_> = received
        .into_iter()
        .filter(|(_, events)| events.len() >= 2)
        .map(|((hash, dest_device), events)| DuplicateGroup {
            hash,
            dest_device,
            events,
        })
        .collect();
    groups.sort_by_key(|g| (g.events[0].start_ns, g.hash, g.dest_device));
    groups
}

/// Finds transfers whose content later comes back to the sender.
///
/// Receptions are queued per `(hash, receiving device)`. For each transfer
/// `tx` in order, the queue at `(tx.hash, tx.src_device)` is consulted for
/// the return leg. By default, queued receptions not strictly after `tx`
/// are discarded first and the matched return leg is consumed, so every
/// reception completes at most one trip. See [`DetectorOptions`] for the
/// literal variant.
pub fn find_round_trips<'t>(
    data_op_events: &[&'t TraceEvent],
    opts: DetectorOptions,
) -> Vec<RoundTripGroup<'t>> {
    let mut received: HashMap<(u64, DeviceNum), VecDeque<&'t TraceEvent>> = HashMap::new();
    for &e in data_op_events {
        received
            .entry((e.hash, e.dst_device))
            .or_default()
            .push_back(e);
    }

    let mut trips: HashMap<(u64, DeviceNum, DeviceNum), Vec<RoundTrip<'t>>> = HashMap::new();
    for &tx in data_op_events {
        let Some(queue) = received.get_mut(&(tx.hash, tx.src_device)) else {
            continue;
        };
        let rx = if opts.strict_pseudocode {
            match queue.front() {
                Some(&rx) => rx,
                None => continue,
            }
        } else {
            while queue
                .front()
                .is_some_and(|rx| rx.order_key() <= tx.order_key())
            {
                queue.pop_front();
            }
            match queue.pop_front() {
                Some(rx) => rx,
                None => continue,
            }
        };
        trips
            .entry((tx.hash, tx.src_device, tx.dst_device))
            .or_default()
            .push(RoundTrip { tx, rx });
        if opts.strict_pseudocode {
            if let Some(q) = received.get_mut(&(tx.hash, tx.dst_device)) {
                q.pop_front();
            }
        }
    }

    let mut groups: Vec<_> = trips
        .into_iter()
        .map(|((hash, src_device, dest_device), trips)| RoundTripGroup {
            hash,
            src_device,
            dest_device,
            trips,
        })
        .collect();
    groups.sort_by_key(|g| (g.trips[0].tx.start_ns, g.hash, g.src_device, g.dest_device));
    groups
}

/// Groups allocation/deletion pairs by `(host address, device, bytes)` and
/// keeps keys allocated more than once.
pub fn find_repeated_allocs<'t>(data_op_events: &[&'t TraceEvent]) -> Vec<RepeatedAllocGroup<'t>> {
    let horizon = max_end(data_op_events);
    let pairing = get_alloc_delete_pairs_until(data_op_events.iter().copied(), horizon);
    repeated_allocs_from_pairs(&pairing.pairs)
}

pub fn repeated_allocs_from_pairs<'t>(pairs: &[AllocPair<'t>]) -> Vec<RepeatedAllocGroup<'t>> {
    let mut by_key: HashMap<(u64, DeviceNum, u64), Vec<AllocPair<'t>>> = HashMap::new();
    for p in pairs {
        let a = p.alloc;
        by_key
            .entry((a.src_addr, a.dst_device, a.bytes))
            .or_default()
            .push(*p);
    }
    let mut groups: Vec<_> = by_key
        .into_iter()
        .filter(|(_, pairs)| pairs.len() >= 2)
        .map(
            |((host_addr, tgt_device, bytes), pairs)| RepeatedAllocGroup {
                host_addr,
                tgt_device,
                bytes,
                pairs,
            },
        )
        .collect();
    groups.sort_by_key(|g| {
        (
            g.pairs[0].alloc.start_ns,
            g.host_addr,
            g.tgt_device,
            g.bytes,
        )
    });
    groups
}

/// Reports allocations whose lifetime overlaps no kernel on the same target
/// device, using one forward sweep over each device's kernels.
pub fn find_unused_allocs<'t>(
    tgt_events: &[&'t TraceEvent],
    data_op_events: &[&'t TraceEvent],
    space: DeviceSpace,
) -> Vec<AllocPair<'t>> {
    let horizon = max_end(tgt_events).max(max_end(data_op_events));
    let pairing = get_alloc_delete_pairs_until(data_op_events.iter().copied(), horizon);
    unused_allocs_from_pairs(tgt_events, &pairing.pairs, space)
}

pub fn unused_allocs_from_pairs<'t>(
    tgt_events: &[&'t TraceEvent],
    pairs: &[AllocPair<'t>],
    space: DeviceSpace,
) -> Vec<AllocPair<'t>> {
    let device_kernels = by_device(tgt_events.iter().copied(), space, |e| e.dst_device);
    let device_allocs = by_device(pairs.iter().copied(), space, AllocPair::device);

    let mut unused = Vec::new();
    for dev in space.targets() {
        let kernels = &device_kernels[dev.index()];
        let mut tgt_idx = 0;
        for pair in &device_allocs[dev.index()] {
            let (alive_from, alive_to) = pair.lifetime();
            while tgt_idx < kernels.len() && kernels[tgt_idx].end_ns < alive_from {
                tgt_idx += 1;
            }
            if tgt_idx == kernels.len() || kernels[tgt_idx].start_ns > alive_to {
                unused.push(*pair);
            }
        }
    }
    unused.sort_by_key(|p| p.alloc.order_key());
    unused
}

/// Reports transfers to a target device that no kernel could have consumed:
/// those after the device's last kernel, and those overwritten at the same
/// source address before any kernel ran.
pub fn find_unused_transfers<'t>(
    tgt_events: &[&'t TraceEvent],
    data_op_events: &[&'t TraceEvent],
    space: DeviceSpace,
) -> Vec<&'t TraceEvent> {
    let device_kernels = by_device(tgt_events.iter().copied(), space, |e| e.dst_device);
    let device_transfers = by_device(data_op_events.iter().copied(), space, |e| e.dst_device);

    let mut unused = Vec::new();
    for dev in space.targets() {
        let kernels = &device_kernels[dev.index()];
        let mut tgt_idx = 0;
        let mut candidates: HashMap<u64, &'t TraceEvent> = HashMap::new();
        for &tx in &device_transfers[dev.index()] {
            while tgt_idx < kernels.len() && kernels[tgt_idx].end_ns < tx.start_ns {
                tgt_idx += 1;
                candidates.clear();
            }
            if tgt_idx == kernels.len() {
                // After the last kernel on this device.
                unused.push(tx);
            } else if kernels[tgt_idx].start_ns > tx.start_ns {
                // Not overlapping a kernel: an earlier write to the same
                // address is dead.
                if let Some(prev) = candidates.insert(tx.src_addr, tx) {
                    unused.push(prev);
                }
            } else {
                candidates.clear();
            }
        }
    }
    unused.sort_by_key(|e| e.order_key());
    unused
}

#[derive(Debug, Error)]
pub enum AnalyzeError {
    #[error("invalid trace: {} violation(s), first: {}", .0.len(), .0[0])]
    InvalidTrace(Vec<Violation>),
}

/// Runs all five detectors over a validated trace.
pub fn analyze(trace: &Trace, opts: DetectorOptions) -> Result<Findings<'_>, AnalyzeError> {
    let violations = trace.validate();
    if !violations.is_empty() {
        return Err(AnalyzeError::InvalidTrace(violations));
    }
    Ok(analyze_unchecked(trace, opts))
}

/// [`analyze`] without the validation pass; the caller guarantees validity
/// (for example because the trace came from `parse_trace`).
pub fn analyze_unchecked(trace: &Trace, opts: DetectorOptions) -> Findings<'_> {
    let space = DeviceSpace::of(trace);
    let mut transfers = Vec::new();
    let mut content_transfers = Vec::new();
    let mut alloc_ops = Vec::new();
    let mut kernels = Vec::new();
    for e in &trace.events {
        match e.kind {
            EventKind::Transfer => {
                transfers.push(e);
                if e.has_content() {
                    content_transfers.push(e);
                }
            }
            EventKind::Alloc | EventKind::Delete => alloc_ops.push(e),
            EventKind::Kernel => kernels.push(e),
        }
    }

    let pairing = get_alloc_delete_pairs_until(alloc_ops.iter().copied(), trace.max_end_ns());
    Findings {
        duplicates: find_duplicate_transfers(&content_transfers),
        round_trips: find_round_trips(&content_transfers, opts),
        repeated_allocs: repeated_allocs_from_pairs(&pairing.pairs),
        unused_allocs: unused_allocs_from_pairs(&kernels, &pairing.pairs, space),
        unused_transfers: find_unused_transfers(&kernels, &transfers, space),
        warnings: pairing.warnings,
    }
}

fn max_end(events: &[&TraceEvent]) -> u64 {
    events.iter().map(|e| e.end_ns).max().unwrap_or(0)
}

// Events on devices outside the slot range cannot occur in a validated trace;
// they are skipped rather than aborting the sweep.
fn by_device<T, I, F>(items: I, space: DeviceSpace, device_of: F) -> Vec<Vec<T>>
where
    I: IntoIterator<Item = T>,
    F: Fn(&T) -> DeviceNum,
{
    let items = items.into_iter().filter(|i| space.contains(device_of(i)));
    partition_by_device(items, space.num_devices_total, &device_of)
        .expect("out-of-range devices were filtered")
}

/// Seqs of every event referenced by `findings`, for subset checks.
pub fn referenced_seqs(findings: &Findings<'_>) -> HashSet<u64> {
    findings.referenced_events().iter().map(|e| e.seq).collect()
}
