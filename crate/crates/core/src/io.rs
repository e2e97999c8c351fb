//! Newline-delimited JSON trace files.
//!
//! The first non-comment line is the header, every later line one event.
//! Lines starting with `#` are comments. Events may appear in any order in
//! the file; they are sorted by `(t0, seq)` on load.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{
    sort_events, validate, CodeLocation, DeviceNum, EventKind, Trace, TraceEvent, Violation,
    TRACE_VERSION,
};

#[derive(Debug, Error)]
pub enum ParseError {
    #[error("line {line}: {reason}")]
    MalformedRecord { line: usize, reason: String },
    #[error("missing header line")]
    MissingHeader,
    #[error("unsupported trace version {0}")]
    UnsupportedVersion(u64),
    #[error("trace violates {} invariant(s): {}", .0.len(), summarize(.0))]
    InvariantViolation(Vec<Violation>),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl ParseError {
    /// Stable error class name used in CLI diagnostics.
    pub fn class(&self) -> &'static str {
        match self {
            ParseError::MalformedRecord { .. } => "MalformedRecord",
            ParseError::MissingHeader => "MissingHeader",
            ParseError::UnsupportedVersion(_) => "UnsupportedVersion",
            ParseError::InvariantViolation(_) => "InvariantViolation",
            ParseError::Io(_) => "Io",
        }
    }
}

#[derive(Debug, Error)]
pub enum SerializeError {
    #[error("refusing to serialize invalid trace: {}", summarize(.0))]
    InvalidTrace(Vec<Violation>),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn summarize(v: &[Violation]) -> String {
    const SHOWN: usize = 5;
    let mut s = v
        .iter()
        .take(SHOWN)
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join("; ");
    if v.len() > SHOWN {
        s.push_str(&format!("; ... ({} more)", v.len() - SHOWN));
    }
    s
}

#[derive(Debug, Serialize, Deserialize)]
struct HeaderRecord {
    dmlens: u64,
    num_devices: u32,
    host_device: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    wall_time_ns: Option<u64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct EventRecord {
    seq: u64,
    kind: String,
    t0: u64,
    t1: u64,
    src_dev: u32,
    dst_dev: u32,
    src_addr: u64,
    dst_addr: u64,
    bytes: u64,
    hash: u64,
    codeptr: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    file: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    line: Option<u32>,
}

/// Borrowing twin of [`EventRecord`] so serialization doesn't clone strings.
#[derive(Serialize)]
struct EventRecordRef<'a> {
    seq: u64,
    kind: &'static str,
    t0: u64,
    t1: u64,
    src_dev: u32,
    dst_dev: u32,
    src_addr: u64,
    dst_addr: u64,
    bytes: u64,
    hash: u64,
    codeptr: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    file: Option<&'a str>,
    #[serde(skip_serializing_if = "Option::is_none")]
    line: Option<u32>,
}

impl EventRecord {
    fn into_event(self, line: usize) -> Result<TraceEvent, ParseError> {
        let kind = EventKind::parse(&self.kind).ok_or_else(|| ParseError::MalformedRecord {
            line,
            reason: format!("unknown event kind {:?}", self.kind),
        })?;
        if self.t1 < self.t0 {
            return Err(ParseError::MalformedRecord {
                line,
                reason: format!("interval inverted (t0 {} > t1 {})", self.t0, self.t1),
            });
        }
        Ok(TraceEvent {
            seq: self.seq,
            kind,
            start_ns: self.t0,
            end_ns: self.t1,
            src_device: DeviceNum(self.src_dev),
            dst_device: DeviceNum(self.dst_dev),
            src_addr: self.src_addr,
            dst_addr: self.dst_addr,
            bytes: self.bytes,
            hash: self.hash,
            loc: CodeLocation {
                codeptr: self.codeptr,
                file: self.file,
                line: self.line,
            },
        })
    }
}

impl<'a> From<&'a TraceEvent> for EventRecordRef<'a> {
    fn from(e: &'a TraceEvent) -> Self {
        EventRecordRef {
            seq: e.seq,
            kind: e.kind.as_str(),
            t0: e.start_ns,
            t1: e.end_ns,
            src_dev: e.src_device.0,
            dst_dev: e.dst_device.0,
            src_addr: e.src_addr,
            dst_addr: e.dst_addr,
            bytes: e.bytes,
            hash: e.hash,
            codeptr: e.loc.codeptr,
            file: e.loc.file.as_deref(),
            line: e.loc.line,
        }
    }
}

fn is_skipped(line: &str) -> bool {
    let t = line.trim_start();
    t.is_empty() || t.starts_with('#')
}

/// Parses a trace file. The returned trace always passes [`validate`].
pub fn parse_trace<R: BufRead>(input: R) -> Result<Trace, ParseError> {
    let mut lines = input.lines().enumerate();
    let mut header = None;
    for (idx, line) in lines.by_ref() {
        let line = line?;
        if is_skipped(&line) {
            continue;
        }
        header = Some(parse_header(&line, idx + 1)?);
        break;
    }
    let header = header.ok_or(ParseError::MissingHeader)?;

    let mut events = Vec::new();
    for (idx, line) in lines {
        let line = line?;
        if is_skipped(&line) {
            continue;
        }
        let lineno = idx + 1;
        let rec: EventRecord =
            serde_json::from_str(&line).map_err(|e| ParseError::MalformedRecord {
                line: lineno,
                reason: e.to_string(),
            })?;
        events.push(rec.into_event(lineno)?);
    }
    sort_events(&mut events);

    let trace = Trace {
        version: header.dmlens as u32,
        num_devices_total: header.num_devices,
        host_device: DeviceNum(header.host_device),
        wall_time_ns: header.wall_time_ns,
        events,
    };
    let violations = validate(&trace);
    if !violations.is_empty() {
        return Err(ParseError::InvariantViolation(violations));
    }
    Ok(trace)
}

pub fn parse_trace_str(input: &str) -> Result<Trace, ParseError> {
    parse_trace(input.as_bytes())
}

fn parse_header(line: &str, lineno: usize) -> Result<HeaderRecord, ParseError> {
    let value: serde_json::Value =
        serde_json::from_str(line).map_err(|e| ParseError::MalformedRecord {
            line: lineno,
            reason: e.to_string(),
        })?;
    if value.get("dmlens").is_none() {
        return Err(ParseError::MissingHeader);
    }
    let header: HeaderRecord =
        serde_json::from_value(value).map_err(|e| ParseError::MalformedRecord {
            line: lineno,
            reason: format!("bad header: {e}"),
        })?;
    if header.dmlens != u64::from(TRACE_VERSION) {
        return Err(ParseError::UnsupportedVersion(header.dmlens));
    }
    Ok(header)
}

/// Writes `trace` in canonical form: header, then events in trace order.
pub fn serialize_trace<W: Write>(trace: &Trace, mut out: W) -> Result<(), SerializeError> {
    let violations = validate(trace);
    if !violations.is_empty() {
        return Err(SerializeError::InvalidTrace(violations));
    }
    let header = HeaderRecord {
        dmlens: u64::from(trace.version),
        num_devices: trace.num_devices_total,
        host_device: trace.host_device.0,
        wall_time_ns: trace.wall_time_ns,
    };
    serde_json::to_writer(&mut out, &header).map_err(std::io::Error::from)?;
    out.write_all(b"\n")?;
    for e in &trace.events {
        serde_json::to_writer(&mut out, &EventRecordRef::from(e)).map_err(std::io::Error::from)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn serialize_trace_to_string(trace: &Trace) -> Result<String, SerializeError> {
    let mut buf = Vec::new();
    serialize_trace(trace, &mut buf)?;
    Ok(String::from_utf8(buf).expect("serde_json emits UTF-8"))
}
