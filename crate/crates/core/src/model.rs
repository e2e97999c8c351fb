//! Canonical event and trace data model.
//!
//! A [`Trace`] is a header (device slot count, which slot is the host, optional
//! wall time) plus a chronologically ordered list of [`TraceEvent`]s. The host is
//! an ordinary device slot; nothing downstream treats it specially except the
//! unused-mapping detectors, which only sweep target devices.

use std::fmt;

/// Current trace format version.
pub const TRACE_VERSION: u32 = 1;

/// Device slot identifier. The host occupies one slot like any accelerator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct DeviceNum(pub u32);

impl DeviceNum {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for DeviceNum {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum EventKind {
    Transfer,
    Alloc,
    Delete,
    Kernel,
}

impl EventKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EventKind::Transfer => "transfer",
            EventKind::Alloc => "alloc",
            EventKind::Delete => "delete",
            EventKind::Kernel => "kernel",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "transfer" => Some(EventKind::Transfer),
            "alloc" => Some(EventKind::Alloc),
            "delete" => Some(EventKind::Delete),
            "kernel" => Some(EventKind::Kernel),
            _ => None,
        }
    }
}

impl fmt::Display for EventKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Source attribution for an event: the raw return address reported by the
/// runtime, optionally pre-resolved to a file and line.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default)]
pub struct CodeLocation {
    /// 0 means unknown.
    pub codeptr: u64,
    pub file: Option<String>,
    pub line: Option<u32>,
}

impl CodeLocation {
    pub fn from_codeptr(codeptr: u64) -> Self {
        CodeLocation {
            codeptr,
            file: None,
            line: None,
        }
    }

    pub fn with_line(codeptr: u64, file: impl Into<String>, line: u32) -> Self {
        CodeLocation {
            codeptr,
            file: Some(file.into()),
            line: Some(line),
        }
    }

    pub fn is_unknown(&self) -> bool {
        self.codeptr == 0 && self.file.is_none()
    }
}

impl fmt::Display for CodeLocation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (&self.file, self.line) {
            (Some(file), Some(line)) => write!(f, "{file}:{line}"),
            (Some(file), None) => f.write_str(file),
            _ if self.codeptr == 0 => f.write_str("<unknown>"),
            _ => write!(f, "0x{:x}", self.codeptr),
        }
    }
}

/// One timestamped target-related runtime event.
///
/// Field meaning depends on `kind`:
///
/// | kind     | src_device    | dst_device      | src_addr        | dst_addr          | bytes | hash |
/// |----------|---------------|-----------------|-----------------|-------------------|-------|------|
/// | Transfer | sender        | receiver        | source buffer   | destination buffer| size  | content hash |
/// | Alloc    | host (mapper) | target          | host variable   | device address    | size  | 0    |
/// | Delete   | host (mapper) | target          | 0               | device address    | 0     | 0    |
/// | Kernel   | = dst_device  | executing device| 0               | 0                 | 0     | 0    |
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct TraceEvent {
    pub seq: u64,
    pub kind: EventKind,
    pub start_ns: u64,
    pub end_ns: u64,
    pub src_device: DeviceNum,
    pub dst_device: DeviceNum,
    pub src_addr: u64,
    pub dst_addr: u64,
    pub bytes: u64,
    /// 0 means "no hash".
    pub hash: u64,
    pub loc: CodeLocation,
}

impl TraceEvent {
    pub fn duration_ns(&self) -> u64 {
        self.end_ns.saturating_sub(self.start_ns)
    }

    /// Chronological sort key used throughout the crate.
    pub fn order_key(&self) -> (u64, u64) {
        (self.start_ns, self.seq)
    }

    pub fn is_transfer(&self) -> bool {
        self.kind == EventKind::Transfer
    }

    /// Transfers whose content identity is defined: non-empty and hashed.
    pub fn has_content(&self) -> bool {
        self.kind == EventKind::Transfer && self.bytes > 0 && self.hash != 0
    }

    #[allow(clippy::too_many_arguments)]
    pub fn transfer(
        seq: u64,
        start_ns: u64,
        end_ns: u64,
        src: u32,
        dst: u32,
        src_addr: u64,
        dst_addr: u64,
        bytes: u64,
        hash: u64,
    ) -> Self {
        TraceEvent {
            seq,
            kind: EventKind::Transfer,
            start_ns,
            end_ns,
            src_device: DeviceNum(src),
            dst_device: DeviceNum(dst),
            src_addr,
            dst_addr,
            bytes,
            hash,
            loc: CodeLocation::default(),
        }
    }

    #[allow(clippy::too_many_arguments)]
    pub fn alloc(
        seq: u64,
        start_ns: u64,
        end_ns: u64,
        host: u32,
        device: u32,
        host_addr: u64,
        device_addr: u64,
        bytes: u64,
    ) -> Self {
        TraceEvent {
            seq,
            kind: EventKind::Alloc,
            start_ns,
            end_ns,
            src_device: DeviceNum(host),
            dst_device: DeviceNum(device),
            src_addr: host_addr,
            dst_addr: device_addr,
            bytes,
            hash: 0,
            loc: CodeLocation::default(),
        }
    }

    pub fn delete(
        seq: u64,
        start_ns: u64,
        end_ns: u64,
        host: u32,
        device: u32,
        device_addr: u64,
    ) -> Self {
        TraceEvent {
            seq,
            kind: EventKind::Delete,
            start_ns,
            end_ns,
            src_device: DeviceNum(host),
            dst_device: DeviceNum(device),
            src_addr: 0,
            dst_addr: device_addr,
            bytes: 0,
            hash: 0,
            loc: CodeLocation::default(),
        }
    }

    pub fn kernel(seq: u64, start_ns: u64, end_ns: u64, device: u32) -> Self {
        TraceEvent {
            seq,
            kind: EventKind::Kernel,
            start_ns,
            end_ns,
            src_device: DeviceNum(device),
            dst_device: DeviceNum(device),
            src_addr: 0,
            dst_addr: 0,
            bytes: 0,
            hash: 0,
            loc: CodeLocation::default(),
        }
    }

    pub fn at(mut self, loc: CodeLocation) -> Self {
        self.loc = loc;
        self
    }
}

/// Header plus chronologically ordered events.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Trace {
    pub version: u32,
    /// Device slots including the host.
    pub num_devices_total: u32,
    pub host_device: DeviceNum,
    /// Wall time as recorded by the producer. See [`Trace::wall_time`].
    pub wall_time_ns: Option<u64>,
    pub events: Vec<TraceEvent>,
}

impl Trace {
    pub fn new(num_devices_total: u32, host_device: u32) -> Self {
        Trace {
            version: TRACE_VERSION,
            num_devices_total,
            host_device: DeviceNum(host_device),
            wall_time_ns: None,
            events: Vec::new(),
        }
    }

    /// Builds a trace from events in any order; events are sorted by
    /// `(start_ns, seq)`.
    pub fn from_events(
        num_devices_total: u32,
        host_device: u32,
        wall_time_ns: Option<u64>,
        mut events: Vec<TraceEvent>,
    ) -> Self {
        sort_events(&mut events);
        Trace {
            version: TRACE_VERSION,
            num_devices_total,
            host_device: DeviceNum(host_device),
            wall_time_ns,
            events,
        }
    }

    /// Effective program wall time: the recorded value, or the event span
    /// (max end minus min start) when the producer did not record one.
    pub fn wall_time(&self) -> u64 {
        self.wall_time_ns.unwrap_or_else(|| self.event_span_ns())
    }

    pub fn event_span_ns(&self) -> u64 {
        let min_start = self.events.iter().map(|e| e.start_ns).min();
        let max_end = self.events.iter().map(|e| e.end_ns).max();
        match (min_start, max_end) {
            (Some(s), Some(e)) => e.saturating_sub(s),
            _ => 0,
        }
    }

    pub fn max_end_ns(&self) -> u64 {
        self.events.iter().map(|e| e.end_ns).max().unwrap_or(0)
    }

    /// Target devices in ascending order (every slot except the host).
    pub fn target_devices(&self) -> impl Iterator<Item = DeviceNum> + '_ {
        (0..self.num_devices_total)
            .map(DeviceNum)
            .filter(move |d| *d != self.host_device)
    }

    pub fn validate(&self) -> Vec<Violation> {
        validate(self)
    }
}

pub fn sort_events(events: &mut [TraceEvent]) {
    events.sort_by_key(TraceEvent::order_key);
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ViolationKind {
    NoDeviceSlots,
    HostDeviceOutOfRange { host: u32, num_devices: u32 },
    IntervalInverted { start_ns: u64, end_ns: u64 },
    DeviceOutOfRange { device: u32, num_devices: u32 },
    TransferWithoutHash,
    AllocWithoutBytes,
    AllocWithoutAddress,
    DeleteWithoutAddress,
    FileWithoutLine,
    ZeroLine,
    DuplicateSeq,
    OutOfOrder,
}

/// One invariant violation. `seq` is `None` for header-level violations.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub seq: Option<u64>,
    pub kind: ViolationKind,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if let Some(seq) = self.seq {
            write!(f, "seq {seq}: ")?;
        }
        match &self.kind {
            ViolationKind::NoDeviceSlots => f.write_str("num_devices must be positive"),
            ViolationKind::HostDeviceOutOfRange { host, num_devices } => {
                write!(
                    f,
                    "host_device {host} out of range (num_devices {num_devices})"
                )
            }
            ViolationKind::IntervalInverted { start_ns, end_ns } => {
                write!(f, "interval inverted (t0 {start_ns} > t1 {end_ns})")
            }
            ViolationKind::DeviceOutOfRange {
                device,
                num_devices,
            } => write!(
                f,
                "device {device} out of range (num_devices {num_devices})"
            ),
            ViolationKind::TransferWithoutHash => {
                f.write_str("non-empty transfer carries no content hash")
            }
            ViolationKind::AllocWithoutBytes => f.write_str("alloc of zero bytes"),
            ViolationKind::AllocWithoutAddress => f.write_str("alloc without device address"),
            ViolationKind::DeleteWithoutAddress => f.write_str("delete without device address"),
            ViolationKind::FileWithoutLine => f.write_str("file present without line"),
            ViolationKind::ZeroLine => f.write_str("line numbers start at 1"),
            ViolationKind::DuplicateSeq => f.write_str("duplicate seq"),
            ViolationKind::OutOfOrder => f.write_str("events not sorted by (t0, seq)"),
        }
    }
}

/// Returns every invariant violation in `trace`; an empty list means valid.
pub fn validate(trace: &Trace) -> Vec<Violation> {
    let mut out = Vec::new();
    let n = trace.num_devices_total;
    if n == 0 {
        out.push(Violation {
            seq: None,
            kind: ViolationKind::NoDeviceSlots,
        });
    }
    if trace.host_device.0 >= n && n > 0 {
        out.push(Violation {
            seq: None,
            kind: ViolationKind::HostDeviceOutOfRange {
                host: trace.host_device.0,
                num_devices: n,
            },
        });
    }

    let mut seen = std::collections::HashSet::with_capacity(trace.events.len());
    let mut prev: Option<(u64, u64)> = None;
    for e in &trace.events {
        let mut flag = |kind| {
            out.push(Violation {
                seq: Some(e.seq),
                kind,
            })
        };
        if e.start_ns > e.end_ns {
            flag(ViolationKind::IntervalInverted {
                start_ns: e.start_ns,
                end_ns: e.end_ns,
            });
        }
        for dev in [e.src_device, e.dst_device] {
            if dev.0 >= n {
                flag(ViolationKind::DeviceOutOfRange {
                    device: dev.0,
                    num_devices: n,
                });
            }
        }
        match e.kind {
            EventKind::Transfer if e.bytes > 0 && e.hash == 0 => {
                flag(ViolationKind::TransferWithoutHash)
            }
            EventKind::Alloc => {
                if e.bytes == 0 {
                    flag(ViolationKind::AllocWithoutBytes);
                }
                if e.dst_addr == 0 {
                    flag(ViolationKind::AllocWithoutAddress);
                }
            }
            EventKind::Delete if e.dst_addr == 0 => flag(ViolationKind::DeleteWithoutAddress),
            _ => {}
        }
        if e.loc.file.is_some() && e.loc.line.is_none() {
            flag(ViolationKind::FileWithoutLine);
        }
        if e.loc.line == Some(0) {
            flag(ViolationKind::ZeroLine);
        }
        if !seen.insert(e.seq) {
            flag(ViolationKind::DuplicateSeq);
        }
        let key = e.order_key();
        if prev.is_some_and(|p| p > key) {
            flag(ViolationKind::OutOfOrder);
        }
        prev = Some(key);
    }
    out
}
