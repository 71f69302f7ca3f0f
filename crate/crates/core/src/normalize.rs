//! Per-stream timestamp normalization with a drop-and-count late policy.

use std::collections::HashMap;

use crate::model::StreamId;
use crate::wire::WireRecord;

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct StreamCounters {
    pub emitted: u64,
    pub dropped_late: u64,
}

/// Keeps the last emitted `host_ns` per stream; records that would move a
/// stream backwards in time are dropped and counted.
#[derive(Debug, Default)]
pub struct Normalizer {
    last: HashMap<StreamId, i64>,
    counters: HashMap<StreamId, StreamCounters>,
}

impl Normalizer {
    pub fn new() -> Self {
        Self::default()
    }

    /// Returns `true` if the record should be emitted.
    pub fn admit(&mut self, record: &WireRecord) -> bool {
        let t = record.host_ns();
        let counters = self.counters.entry(record.stream.clone()).or_default();
        match self.last.get_mut(&record.stream) {
            Some(last) if t < *last => {
                counters.dropped_late += 1;
                false
            }
            Some(last) => {
                *last = t;
                counters.emitted += 1;
                true
            }
            None => {
                self.last.insert(record.stream.clone(), t);
                counters.emitted += 1;
                true
            }
        }
    }

    pub fn push(&mut self, record: WireRecord) -> Option<WireRecord> {
        self.admit(&record).then_some(record)
    }

    pub fn counters(&self, stream: &StreamId) -> StreamCounters {
        self.counters.get(stream).cloned().unwrap_or_default()
    }

    pub fn total_dropped(&self) -> u64 {
        self.counters.values().map(|c| c.dropped_late).sum()
    }

    pub fn total_emitted(&self) -> u64 {
        self.counters.values().map(|c| c.emitted).sum()
    }
}

/// Batch form: returns the emitted records in arrival order and the drop count.
pub fn normalize_stream(records: impl IntoIterator<Item = WireRecord>) -> (Vec<WireRecord>, u64) {
    let mut n = Normalizer::new();
    let out: Vec<WireRecord> = records.into_iter().filter_map(|r| n.push(r)).collect();
    (out, n.total_dropped())
}
