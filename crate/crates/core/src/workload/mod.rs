//! Access traces: the event type, synthetic generators, and file formats.

mod gen;
mod io;

pub use gen::{gen_hotspot, gen_sequential, gen_uniform, HotspotSpec, SequentialSpec, UniformSpec};
pub use io::{load_trace, load_trace_csv, read_trace, store_trace, store_trace_csv, write_trace, TRACE_MAGIC, TRACE_VERSION};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{AccessKind, PageIndex, SimTime, VcpuId, VmId};

/// One guest memory access.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AccessEvent {
    pub time: SimTime,
    pub vm: VmId,
    pub vcpu: VcpuId,
    pub page: PageIndex,
    pub kind: AccessKind,
}

impl AccessEvent {
    pub fn read(time: SimTime, vcpu: VcpuId, page: PageIndex) -> Self {
        AccessEvent { time, vm: 0, vcpu, page, kind: AccessKind::Read }
    }

    pub fn write(time: SimTime, vcpu: VcpuId, page: PageIndex) -> Self {
        AccessEvent { time, vm: 0, vcpu, page, kind: AccessKind::Write }
    }

    fn order_key(&self) -> (SimTime, VmId, VcpuId) {
        (self.time, self.vm, self.vcpu)
    }
}

/// A time-ordered sequence of accesses.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Trace {
    pub events: Vec<AccessEvent>,
}

impl Trace {
    pub fn new(events: Vec<AccessEvent>) -> Self {
        Trace { events }
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn end_time(&self) -> SimTime {
        self.events.last().map_or(0, |e| e.time)
    }

    /// Checks ordering and, when given, that every page is below `mapped_pages`.
    pub fn validate(&self, mapped_pages: Option<u64>) -> Result<()> {
        for (i, w) in self.events.windows(2).enumerate() {
            if w[1].time < w[0].time {
                return Err(Error::Validation(format!(
                    "event {} at t={} precedes event {} at t={}",
                    i + 1,
                    w[1].time,
                    i,
                    w[0].time
                )));
            }
            if w[1].order_key() < w[0].order_key() {
                return Err(Error::Validation(format!(
                    "events {i} and {} share t={} but are not ordered by (vm, vcpu)",
                    i + 1,
                    w[0].time
                )));
            }
        }
        if let Some(limit) = mapped_pages {
            if let Some((i, e)) = self.events.iter().enumerate().find(|(_, e)| e.page >= limit) {
                return Err(Error::Validation(format!(
                    "event {i} touches page {} outside a {limit}-page mapping",
                    e.page
                )));
            }
        }
        Ok(())
    }

    /// Appends `next` after this trace, shifting its timestamps so it starts
    /// `gap` ns after the last event here.
    pub fn then(mut self, next: Trace, gap: SimTime) -> Trace {
        let base = if self.events.is_empty() { 0 } else { self.end_time() + gap };
        let first = next.events.first().map_or(0, |e| e.time);
        self.events.extend(next.events.into_iter().map(|mut e| {
            e.time = e.time - first + base;
            e
        }));
        self
    }

    /// Relabels every event with `vm`.
    pub fn with_vm(mut self, vm: VmId) -> Trace {
        for e in &mut self.events {
            e.vm = vm;
        }
        self
    }

    pub fn read_fraction(&self) -> f64 {
        if self.events.is_empty() {
            return 0.0;
        }
        let reads = self.events.iter().filter(|e| !e.kind.is_write()).count();
        reads as f64 / self.events.len() as f64
    }
}
