//! Deterministic synthetic traces with injected inefficiencies.
//!
//! Each pattern is written as a script of host/device operations. The script
//! is laid out serially in time (optionally with seeded gaps between
//! operations), so removing an operation shortens the run by exactly its
//! duration. Every operation knows whether it is eliminable under the
//! estimator's rules and whether the hand-optimized program would drop it;
//! that is where [`GroundTruth`] and [`optimized_counterpart`] come from.
//!
//! Transfer payloads are real byte sequences hashed with
//! [`hash_bytes`](crate::hashing::hash_bytes), so duplicate and round-trip
//! content identity is genuine rather than assigned.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::detectors::FindingCounts;
use crate::hashing::hash_bytes;
use crate::model::{CodeLocation, DeviceNum, EventKind, Trace, TraceEvent, TRACE_VERSION};

const HOST: u32 = 0;
const SCALAR_BYTES: u64 = 16;
/// Payloads start with a 16-byte `(array, version)` tag, which makes distinct
/// contents distinct by construction.
pub const MIN_ARRAY_BYTES: u64 = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pattern {
    Clean,
    Listing1,
    Listing2,
    UnusedAlloc,
    UnusedTransfer,
    Mixed,
}

impl Pattern {
    pub const ALL: [Pattern; 6] = [
        Pattern::Clean,
        Pattern::Listing1,
        Pattern::Listing2,
        Pattern::UnusedAlloc,
        Pattern::UnusedTransfer,
        Pattern::Mixed,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Pattern::Clean => "clean",
            Pattern::Listing1 => "listing1",
            Pattern::Listing2 => "listing2",
            Pattern::UnusedAlloc => "unused_alloc",
            Pattern::UnusedTransfer => "unused_transfer",
            Pattern::Mixed => "mixed",
        }
    }
}

impl fmt::Display for Pattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Pattern {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Pattern::ALL
            .into_iter()
            .find(|p| p.as_str() == s)
            .ok_or_else(|| {
                let names: Vec<_> = Pattern::ALL.iter().map(|p| p.as_str()).collect();
                format!(
                    "unknown pattern {s:?} (expected one of {})",
                    names.join(", ")
                )
            })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatternSpec {
    pub pattern: Pattern,
    pub n_iterations: u32,
    pub bytes_per_array: u64,
    /// Device slots including the host (slot 0).
    pub n_devices: u32,
    pub seed: u64,
    pub transfer_ns_per_byte: f64,
    pub alloc_ns: u64,
    pub kernel_ns: u64,
    /// Upper bound of the random extra idle time before each operation, on
    /// top of a fixed 1 ns gap; 0 disables.
    pub jitter_ns: u64,
    /// Have the host modify data between transfers, turning duplicates and
    /// round trips into near misses that must not be reported.
    pub mutate: bool,
}

impl PatternSpec {
    pub fn new(pattern: Pattern, n_iterations: u32) -> Self {
        PatternSpec {
            pattern,
            n_iterations,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |why: &str| Err(SynthError::InvalidSpec(why.to_string()));
        if self.n_iterations == 0 {
            return bad("n_iterations must be positive");
        }
        if self.bytes_per_array < MIN_ARRAY_BYTES {
            return bad("bytes_per_array must be at least 16");
        }
        if self.n_devices < 2 {
            return bad("n_devices must be at least 2 (host plus one target)");
        }
        if !(self.transfer_ns_per_byte.is_finite() && self.transfer_ns_per_byte > 0.0) {
            return bad("transfer_ns_per_byte must be positive");
        }
        if self.alloc_ns == 0 || self.kernel_ns == 0 {
            return bad("alloc_ns and kernel_ns must be positive");
        }
        Ok(())
    }

    fn transfer_ns(&self, bytes: u64) -> u64 {
        ((bytes as f64 * self.transfer_ns_per_byte).round() as u64).max(1)
    }
}

impl Default for PatternSpec {
    fn default() -> Self {
        PatternSpec {
            pattern: Pattern::Clean,
            n_iterations: 1,
            bytes_per_array: 4096,
            n_devices: 2,
            seed: 0,
            transfer_ns_per_byte: 0.25,
            alloc_ns: 2_000,
            kernel_ns: 50_000,
            jitter_ns: 0,
            mutate: false,
        }
    }
}

/// Exact expected detector output for a generated trace.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub pattern: Pattern,
    #[serde(flatten)]
    pub counts: FindingCounts,
    pub expected_union_savings_ns: u64,
    /// Whether the optimized counterpart removes exactly as much time as
    /// the estimator calls eliminable.
    pub closure_exact: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SynthError {
    #[error("invalid pattern spec: {0}")]
    InvalidSpec(String),
}

/// Identity of one payload: which array, in which state, how long.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ContentId {
    pub array: u64,
    pub version: u64,
    pub len: u64,
}

/// Materializes the payload bytes for `id`.
pub fn payload_bytes(seed: u64, id: ContentId) -> Vec<u8> {
    let mut out = vec![0u8; id.len as usize];
    let tag_len = out.len().min(16);
    let mut tag = [0u8; 16];
    tag[..8].copy_from_slice(&id.array.to_le_bytes());
    tag[8..].copy_from_slice(&id.version.to_le_bytes());
    out[..tag_len].copy_from_slice(&tag[..tag_len]);
    let mut rng = ChaCha8Rng::seed_from_u64(
        seed ^ id.array.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ id.version.rotate_left(32),
    );
    rng.fill_bytes(&mut out[tag_len..]);
    out
}

/// Payload identity of every transfer in a generated trace, keyed by seq.
#[derive(Debug, Clone, Default)]
pub struct PayloadTable {
    pub seed: u64,
    pub entries: BTreeMap<u64, ContentId>,
}

impl PayloadTable {
    pub fn bytes(&self, seq: u64) -> Option<Vec<u8>> {
        self.entries
            .get(&seq)
            .map(|id| payload_bytes(self.seed, *id))
    }
}

#[derive(Debug, Clone)]
pub struct Synthesized {
    pub trace: Trace,
    pub truth: GroundTruth,
    pub payloads: PayloadTable,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum OpKind {
    HostToDevice,
    DeviceToHost,
    Alloc,
    Delete,
    Kernel,
    HostWork,
}

#[derive(Debug, Clone)]
struct Op {
    kind: OpKind,
    device: u32,
    host_addr: u64,
    dev_addr: u64,
    bytes: u64,
    content: Option<ContentId>,
    line: u32,
    duration: u64,
    gap: u64,
    /// Counted by the estimator as removable.
    eliminable: bool,
    /// Absent from the hand-optimized program.
    dropped: bool,
}

#[derive(Debug, Clone, Copy)]
struct Var {
    id: u64,
    host_addr: u64,
    bytes: u64,
}

/// Builds the operation script of one pattern instance.
struct Script<'s> {
    spec: &'s PatternSpec,
    rng: ChaCha8Rng,
    ops: Vec<Op>,
    next_var: u64,
    file: &'static str,
    truth: FindingCounts,
}

impl<'s> Script<'s> {
    fn new(spec: &'s PatternSpec) -> Self {
        Script {
            spec,
            rng: ChaCha8Rng::seed_from_u64(spec.seed),
            ops: Vec::new(),
            next_var: 1,
            file: "main.c",
            truth: FindingCounts::default(),
        }
    }

    fn var(&mut self, bytes: u64) -> Var {
        let id = self.next_var;
        self.next_var += 1;
        Var {
            id,
            host_addr: 0x7f00_0000_0000 + id * 0x100_0000,
            bytes,
        }
    }

    fn dev_addr(device: u32, var: Var) -> u64 {
        0x7000_0000_0000 + (u64::from(device) << 36) + var.id * 0x100_0000
    }

    fn push(&mut self, mut op: Op) -> usize {
        // Interval checks are closed, so back-to-back operations would
        // count as overlapping; keep at least 1 ns between them.
        op.gap = 1 + if self.spec.jitter_ns > 0 {
            self.rng.random_range(0..=self.spec.jitter_ns)
        } else {
            0
        };
        self.ops.push(op);
        self.ops.len() - 1
    }

    fn op(&self, kind: OpKind, device: u32, var: Option<Var>, line: u32) -> Op {
        let (host_addr, dev_addr, bytes) = match var {
            Some(v) => (v.host_addr, Self::dev_addr(device, v), v.bytes),
            None => (0, 0, 0),
        };
        let duration = match kind {
            OpKind::HostToDevice | OpKind::DeviceToHost => self.spec.transfer_ns(bytes),
            OpKind::Alloc | OpKind::Delete => self.spec.alloc_ns,
            OpKind::Kernel | OpKind::HostWork => self.spec.kernel_ns,
        };
        Op {
            kind,
            device,
            host_addr,
            dev_addr,
            bytes,
            content: None,
            line,
            duration,
            gap: 0,
            eliminable: false,
            dropped: false,
        }
    }

    fn alloc(&mut self, dev: u32, v: Var, line: u32) -> usize {
        let op = self.op(OpKind::Alloc, dev, Some(v), line);
        self.push(op)
    }

    fn delete(&mut self, dev: u32, v: Var, line: u32) -> usize {
        let op = self.op(OpKind::Delete, dev, Some(v), line);
        self.push(op)
    }

    fn transfer(&mut self, kind: OpKind, dev: u32, v: Var, version: u64, line: u32) -> usize {
        let mut op = self.op(kind, dev, Some(v), line);
        op.content = Some(ContentId {
            array: v.id,
            version,
            len: v.bytes,
        });
        self.push(op)
    }

    fn h2d(&mut self, dev: u32, v: Var, version: u64, line: u32) -> usize {
        self.transfer(OpKind::HostToDevice, dev, v, version, line)
    }

    fn d2h(&mut self, dev: u32, v: Var, version: u64, line: u32) -> usize {
        self.transfer(OpKind::DeviceToHost, dev, v, version, line)
    }

    fn kernel(&mut self, dev: u32, line: u32) -> usize {
        let op = self.op(OpKind::Kernel, dev, None, line);
        self.push(op)
    }

    fn host_work(&mut self) {
        let op = self.op(OpKind::HostWork, HOST, None, 0);
        self.push(op);
    }

    fn mark(&mut self, idx: usize, eliminable: bool, dropped: bool) {
        self.ops[idx].eliminable |= eliminable;
        self.ops[idx].dropped |= dropped;
    }

    /// One long-lived mapping: inputs in, `n` kernels, outputs back.
    fn clean_region(&mut self, dev: u32, n: u32) {
        let bytes = self.spec.bytes_per_array;
        let x = self.var(bytes);
        let y = self.var(bytes);
        self.alloc(dev, x, 10);
        self.alloc(dev, y, 10);
        self.h2d(dev, x, 0, 10);
        for _ in 0..n {
            self.kernel(dev, 12);
        }
        self.d2h(dev, y, 1, 16);
        self.delete(dev, y, 16);
        self.delete(dev, x, 16);
    }

    /// Two target regions each mapping the same array `to` the device.
    fn listing1(&mut self, dev: u32) {
        let a = self.var(self.spec.bytes_per_array);
        let sum = self.var(SCALAR_BYTES);
        let prod = self.var(SCALAR_BYTES);
        let mutate = self.spec.mutate;

        self.alloc(dev, a, 2);
        self.h2d(dev, a, 0, 2);
        self.alloc(dev, sum, 2);
        self.h2d(dev, sum, 0, 2);
        self.kernel(dev, 2);
        self.d2h(dev, sum, 1, 2);
        self.delete(dev, sum, 2);
        let first_delete = self.delete(dev, a, 2);
        self.mark(first_delete, false, true);

        if mutate {
            self.host_work();
        }
        let second_alloc = self.alloc(dev, a, 8);
        self.mark(second_alloc, true, true);
        let second_send = self.h2d(dev, a, u64::from(mutate), 8);
        if !mutate {
            self.mark(second_send, true, true);
        }
        self.alloc(dev, prod, 8);
        self.h2d(dev, prod, 0, 8);
        self.kernel(dev, 8);
        self.d2h(dev, prod, 1, 8);
        self.delete(dev, prod, 8);
        let second_delete = self.delete(dev, a, 8);
        self.mark(second_delete, true, false);

        if !mutate {
            self.truth.dd_groups += 1;
            self.truth.dd_events += 2;
        }
        self.truth.ra_groups += 1;
        self.truth.ra_pairs += 2;
    }

    /// A kernel inside a loop with implicit `tofrom` mapping of `a`.
    fn listing2(&mut self, dev: u32) {
        let n = self.spec.n_iterations;
        let a = self.var(self.spec.bytes_per_array);
        let mutate = self.spec.mutate;
        let mut version = 0;
        for i in 0..n {
            let first = i == 0;
            let last = i + 1 == n;
            let alloc = self.alloc(dev, a, 3);
            self.mark(alloc, !first, !first);
            let send = self.h2d(dev, a, version, 3);
            if !mutate {
                self.mark(send, !first, !first);
            }
            self.kernel(dev, 3);
            version += 1;
            let receive = self.d2h(dev, a, version, 5);
            if !mutate {
                self.mark(receive, false, !last);
            }
            let delete = self.delete(dev, a, 5);
            self.mark(delete, !first, !last);
            if mutate && !last {
                self.host_work();
                version += 1;
            }
        }
        if n >= 2 {
            if !mutate {
                self.truth.rt_pairs += n as usize - 1;
            }
            self.truth.ra_groups += 1;
            self.truth.ra_pairs += n as usize;
        }
    }

    /// Scratch buffers mapped between kernels but never used by one.
    fn unused_alloc(&mut self, dev: u32) {
        let bytes = self.spec.bytes_per_array;
        let x = self.var(bytes);
        let y = self.var(bytes);
        self.alloc(dev, x, 20);
        self.alloc(dev, y, 20);
        self.h2d(dev, x, 0, 20);
        for _ in 0..self.spec.n_iterations {
            self.kernel(dev, 22);
            let tmp = self.var(bytes);
            let a = self.alloc(dev, tmp, 24);
            let d = self.delete(dev, tmp, 24);
            self.mark(a, true, true);
            self.mark(d, true, true);
            self.truth.ua_pairs += 1;
        }
        self.d2h(dev, y, 1, 26);
        self.delete(dev, y, 26);
        self.delete(dev, x, 26);
    }

    /// A buffer written twice before each kernel, plus one transfer after
    /// the last kernel.
    fn unused_transfer(&mut self, dev: u32) {
        let bytes = self.spec.bytes_per_array;
        let buf = self.var(bytes);
        let z = self.var(bytes);
        let y = self.var(bytes);
        self.alloc(dev, buf, 30);
        self.alloc(dev, z, 30);
        self.alloc(dev, y, 30);
        for i in 0..u64::from(self.spec.n_iterations) {
            let stale = self.h2d(dev, buf, 2 * i, 32);
            self.mark(stale, true, true);
            self.h2d(dev, buf, 2 * i + 1, 33);
            self.kernel(dev, 34);
            self.truth.ut_events += 1;
        }
        let late = self.h2d(dev, z, 0, 36);
        self.mark(late, true, true);
        self.truth.ut_events += 1;
        self.d2h(dev, y, 1, 37);
        self.delete(dev, y, 37);
        self.delete(dev, z, 37);
        self.delete(dev, buf, 37);
    }

    fn build(mut self) -> Self {
        let spec = self.spec;
        self.file = match spec.pattern {
            Pattern::Clean => "clean.c",
            Pattern::Listing1 => "listing1.c",
            Pattern::Listing2 => "listing2.c",
            Pattern::UnusedAlloc => "unused_alloc.c",
            Pattern::UnusedTransfer => "unused_transfer.c",
            Pattern::Mixed => "mixed.c",
        };
        self.host_work();
        // Every target device but the first runs a clean workload.
        for dev in 2..spec.n_devices {
            self.clean_region(dev, spec.n_iterations);
        }
        let dev = 1;
        match spec.pattern {
            Pattern::Clean => self.clean_region(dev, spec.n_iterations),
            Pattern::Listing1 => self.listing1(dev),
            Pattern::Listing2 => self.listing2(dev),
            Pattern::UnusedAlloc => self.unused_alloc(dev),
            Pattern::UnusedTransfer => self.unused_transfer(dev),
            Pattern::Mixed => {
                self.listing1(dev);
                self.unused_alloc(dev);
                // Must come last: its final transfer follows the device's
                // last kernel.
                self.unused_transfer(dev);
            }
        }
        self.host_work();
        self
    }
}

struct Layout {
    trace: Trace,
    payloads: PayloadTable,
}

fn lay_out(spec: &PatternSpec, ops: &[Op], skip_dropped: bool, file: &'static str) -> Layout {
    let mut hashes: HashMap<ContentId, u64> = HashMap::new();
    let mut events = Vec::with_capacity(ops.len());
    let mut payloads = PayloadTable {
        seed: spec.seed,
        entries: BTreeMap::new(),
    };
    let mut t = 0u64;
    let mut seq = 0u64;
    for op in ops {
        t += op.gap;
        if skip_dropped && op.dropped {
            continue;
        }
        let (start, end) = (t, t + op.duration);
        t = end;
        let dev = op.device;
        let loc = CodeLocation::with_line(0x40_0000 + u64::from(op.line) * 0x10, file, op.line);
        let event = match op.kind {
            OpKind::HostWork => continue,
            OpKind::Kernel => TraceEvent::kernel(seq, start, end, dev),
            OpKind::Alloc => TraceEvent::alloc(
                seq,
                start,
                end,
                HOST,
                dev,
                op.host_addr,
                op.dev_addr,
                op.bytes,
            ),
            OpKind::Delete => TraceEvent::delete(seq, start, end, HOST, dev, op.dev_addr),
            OpKind::HostToDevice | OpKind::DeviceToHost => {
                let id = op.content.expect("transfers carry content");
                let hash = *hashes.entry(id).or_insert_with(|| {
                    hash_bytes(&payload_bytes(spec.seed, id))
                        .expect("payloads are non-empty")
                        .value()
                });
                payloads.entries.insert(seq, id);
                if op.kind == OpKind::HostToDevice {
                    TraceEvent::transfer(
                        seq,
                        start,
                        end,
                        HOST,
                        dev,
                        op.host_addr,
                        op.dev_addr,
                        op.bytes,
                        hash,
                    )
                } else {
                    TraceEvent::transfer(
                        seq,
                        start,
                        end,
                        dev,
                        HOST,
                        op.dev_addr,
                        op.host_addr,
                        op.bytes,
                        hash,
                    )
                }
            }
        };
        events.push(event.at(loc));
        seq += 1;
    }
    Layout {
        trace: Trace {
            version: TRACE_VERSION,
            num_devices_total: spec.n_devices,
            host_device: DeviceNum(HOST),
            wall_time_ns: Some(t),
            events,
        },
        payloads,
    }
}

/// Generates the trace for `spec` together with its exact ground truth.
pub fn generate(spec: &PatternSpec) -> Result<Synthesized, SynthError> {
    spec.validate()?;
    let script = Script::new(spec).build();
    let expected_union_savings_ns = script
        .ops
        .iter()
        .filter(|o| o.eliminable)
        .map(|o| o.duration)
        .sum();
    let closure_exact =
        !(spec.pattern == Pattern::Listing2 && !spec.mutate && spec.n_iterations >= 2);
    let Layout { trace, payloads } = lay_out(spec, &script.ops, false, script.file);
    Ok(Synthesized {
        trace,
        truth: GroundTruth {
            pattern: spec.pattern,
            counts: script.truth,
            expected_union_savings_ns,
            closure_exact,
        },
        payloads,
    })
}

/// The same workload with the injected inefficiency fixed by hand.
pub fn optimized_counterpart(spec: &PatternSpec) -> Result<Trace, SynthError> {
    spec.validate()?;
    if spec.pattern == Pattern::Clean {
        return Err(SynthError::InvalidSpec(
            "the clean pattern has no optimized counterpart".into(),
        ));
    }
    let script = Script::new(spec).build();
    Ok(lay_out(spec, &script.ops, true, script.file).trace)
}

/// Shape of the random traces used for differential testing.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RandomTraceConfig {
    pub max_events: usize,
    /// Upper bound on device slots (including the host); at least 2.
    pub max_devices: u32,
}

impl Default for RandomTraceConfig {
    fn default() -> Self {
        RandomTraceConfig {
            max_events: 200,
            max_devices: 4,
        }
    }
}

/// A valid but otherwise unstructured trace: overlapping intervals, small
/// pools of hashes and addresses (so patterns collide often), unmatched
/// deletes, never-freed allocations, zero-byte transfers and shuffled seqs.
pub fn random_trace(seed: u64, cfg: RandomTraceConfig) -> Trace {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let num_devices = rng.random_range(2..=cfg.max_devices.max(2));
    let host = if rng.random_bool(0.8) {
        0
    } else {
        rng.random_range(0..num_devices)
    };
    let n = rng.random_range(0..=cfg.max_events);
    let mut seqs: Vec<u64> = (0..n as u64).collect();
    seqs.shuffle(&mut rng);

    let hash_pool = rng.random_range(1..=6u64);
    let addr = |rng: &mut ChaCha8Rng, base: u64| base + rng.random_range(0..3u64) * 0x100;
    let mut t = 0u64;
    let mut events = Vec::with_capacity(n);
    for seq in seqs {
        t += rng.random_range(0..6u64);
        let start = t;
        let end = start + rng.random_range(0..12u64);
        let dev = rng.random_range(0..num_devices);
        let mut e = match rng.random_range(0..100u32) {
            0..=44 => {
                let src = rng.random_range(0..num_devices);
                let empty = rng.random_bool(0.05);
                let bytes = if empty {
                    0
                } else {
                    [8, 16, 64][rng.random_range(0..3)]
                };
                let hash = if empty {
                    0
                } else {
                    rng.random_range(1..=hash_pool)
                };
                let src_addr = addr(&mut rng, 0x1000);
                let dst_addr = addr(&mut rng, 0xd000);
                TraceEvent::transfer(seq, start, end, src, dev, src_addr, dst_addr, bytes, hash)
            }
            45..=59 => {
                let host_addr = addr(&mut rng, 0x1000);
                let dev_addr = addr(&mut rng, 0xd000);
                let bytes = [8, 16][rng.random_range(0..2)];
                TraceEvent::alloc(seq, start, end, host, dev, host_addr, dev_addr, bytes)
            }
            60..=74 => {
                let dev_addr = addr(&mut rng, 0xd000);
                TraceEvent::delete(seq, start, end, host, dev, dev_addr)
            }
            _ => TraceEvent::kernel(seq, start, end, dev),
        };
        e.loc = match rng.random_range(0..4u32) {
            0 => CodeLocation::default(),
            1 => CodeLocation::with_line(0x400, "rand.c", rng.random_range(1..5)),
            _ => CodeLocation::from_codeptr(0x400 + rng.random_range(0..4u64) * 0x10),
        };
        events.push(e);
    }
    let max_end = events.iter().map(|e| e.end_ns).max().unwrap_or(0);
    let wall = rng
        .random_bool(0.5)
        .then(|| max_end + rng.random_range(0..50u64));
    Trace::from_events(num_devices, host, wall, events)
}

/// A large synthetic trace with exactly `n_events` events: the mixed
/// pattern spread over several devices, sized so that only a handful of
/// trailing events are cut. Traces of different sizes share one event mix.
pub fn scale_trace(n_events: usize, seed: u64) -> Trace {
    let spec = |n_iterations| PatternSpec {
        pattern: Pattern::Mixed,
        n_iterations,
        n_devices: 4,
        seed,
        bytes_per_array: 64,
        ..Default::default()
    };
    let len = |n| generate(&spec(n)).expect("valid spec").trace.events.len();
    let (one, two) = (len(1), len(2));
    let per_iteration = two - one;
    let fixed = one - per_iteration;
    let n = n_events
        .saturating_sub(fixed)
        .div_ceil(per_iteration)
        .max(1);
    let mut trace = generate(&spec(n as u32)).expect("valid spec").trace;
    trace.events.truncate(n_events);
    trace.wall_time_ns = None;
    trace
}

/// Seqs of every event of `kind` in `trace`, handy for tests.
pub fn seqs_of_kind(trace: &Trace, kind: EventKind) -> Vec<u64> {
    trace
        .events
        .iter()
        .filter(|e| e.kind == kind)
        .map(|e| e.seq)
        .collect()
}
