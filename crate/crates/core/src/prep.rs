//! Event preparation helpers used by the allocation detectors: pairing
//! allocations with their deletions and partitioning events by device.

use std::collections::HashMap;
use std::fmt;

use thiserror::Error;

use crate::model::{DeviceNum, EventKind, TraceEvent};

/// An allocation matched with the deletion that ended it.
///
/// Allocations that are never freed get a synthetic deletion at the end of
/// the trace; `delete` is then `None` and `lifetime_end_ns` carries the
/// synthetic timestamp.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AllocPair<'t> {
    pub alloc: &'t TraceEvent,
    pub delete: Option<&'t TraceEvent>,
    pub lifetime_end_ns: u64,
}

impl<'t> AllocPair<'t> {
    pub fn synthetic_delete(&self) -> bool {
        self.delete.is_none()
    }

    pub fn device(&self) -> DeviceNum {
        self.alloc.dst_device
    }

    /// Lifetime interval `[alloc.start, delete.end]`.
    pub fn lifetime(&self) -> (u64, u64) {
        (self.alloc.start_ns, self.lifetime_end_ns)
    }

    pub fn seqs(&self) -> (u64, Option<u64>) {
        (self.alloc.seq, self.delete.map(|d| d.seq))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PrepWarning {
    pub seq: u64,
    pub reason: String,
}

impl fmt::Display for PrepWarning {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "seq {}: {}", self.seq, self.reason)
    }
}

#[derive(Debug, Clone, Default)]
pub struct Pairing<'t> {
    pub pairs: Vec<AllocPair<'t>>,
    pub warnings: Vec<PrepWarning>,
}

/// Pairs every allocation with its deletion.
///
/// A deletion matches the most recent still-live allocation at the same
/// `(dst_device, dst_addr)`. Deletions with no live allocation are dropped
/// and reported as warnings. Never-freed allocations get a synthetic
/// deletion at the maximum `end_ns` of the input. Pairs come back ordered by
/// allocation.
pub fn get_alloc_delete_pairs<'t, I>(data_op_events: I) -> Pairing<'t>
where
    I: IntoIterator<Item = &'t TraceEvent>,
{
    pair_until(data_op_events, 0)
}

/// Like [`get_alloc_delete_pairs`], but synthetic deletions are placed no
/// earlier than `horizon_ns` (typically the end of the whole trace).
pub fn get_alloc_delete_pairs_until<'t, I>(data_op_events: I, horizon_ns: u64) -> Pairing<'t>
where
    I: IntoIterator<Item = &'t TraceEvent>,
{
    pair_until(data_op_events, horizon_ns)
}

fn pair_until<'t, I>(data_op_events: I, horizon_ns: u64) -> Pairing<'t>
where
    I: IntoIterator<Item = &'t TraceEvent>,
{
    let mut live: HashMap<(DeviceNum, u64), Vec<usize>> = HashMap::new();
    // Indexed by allocation order; filled in as deletions arrive.
    let mut allocs: Vec<(&'t TraceEvent, Option<&'t TraceEvent>)> = Vec::new();
    let mut warnings = Vec::new();
    let mut max_end = horizon_ns;

    for e in data_op_events {
        max_end = max_end.max(e.end_ns);
        match e.kind {
            EventKind::Alloc => {
                live.entry((e.dst_device, e.dst_addr))
                    .or_default()
                    .push(allocs.len());
                allocs.push((e, None));
            }
            EventKind::Delete => {
                match live.get_mut(&(e.dst_device, e.dst_addr)).and_then(Vec::pop) {
                    Some(idx) => allocs[idx].1 = Some(e),
                    None => warnings.push(PrepWarning {
                        seq: e.seq,
                        reason: format!(
                            "delete of device {} address 0x{:x} has no live allocation",
                            e.dst_device, e.dst_addr
                        ),
                    }),
                }
            }
            EventKind::Transfer | EventKind::Kernel => {}
        }
    }

    let pairs = allocs
        .into_iter()
        .map(|(alloc, delete)| AllocPair {
            alloc,
            delete,
            lifetime_end_ns: delete.map_or(max_end, |d| d.end_ns),
        })
        .collect();
    Pairing { pairs, warnings }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DeviceSelector {
    Src,
    Dst,
}

impl DeviceSelector {
    pub fn of(self, e: &TraceEvent) -> DeviceNum {
        match self {
            DeviceSelector::Src => e.src_device,
            DeviceSelector::Dst => e.dst_device,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("device {device} out of range (num_devices {num_devices})")]
pub struct DeviceOutOfRange {
    pub device: DeviceNum,
    pub num_devices: u32,
}

/// Partitions events by the selected device, preserving order within each
/// partition. `out[d]` holds the events on device `d`.
pub fn sort_by_device<'t, I>(
    events: I,
    num_devices_total: u32,
    key: DeviceSelector,
) -> Result<Vec<Vec<&'t TraceEvent>>, DeviceOutOfRange>
where
    I: IntoIterator<Item = &'t TraceEvent>,
{
    partition_by_device(events, num_devices_total, |e| key.of(e))
}

/// Generic form of [`sort_by_device`] for anything that lives on a device.
pub fn partition_by_device<T, I, F>(
    items: I,
    num_devices_total: u32,
    device_of: F,
) -> Result<Vec<Vec<T>>, DeviceOutOfRange>
where
    I: IntoIterator<Item = T>,
    F: Fn(&T) -> DeviceNum,
{
    let mut out: Vec<Vec<T>> = (0..num_devices_total).map(|_| Vec::new()).collect();
    for item in items {
        let device = device_of(&item);
        match out.get_mut(device.index()) {
            Some(bucket) => bucket.push(item),
            None => {
                return Err(DeviceOutOfRange {
                    device,
                    num_devices: num_devices_total,
                })
            }
        }
    }
    Ok(out)
}
