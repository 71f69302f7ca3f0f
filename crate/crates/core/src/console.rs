//! Live packets for the operator console and the subscriber hub that fans
//! them out. The hub never blocks: each client has a bounded queue and a
//! client whose queue is full is dropped.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::sync::mpsc::{SyncSender, TrySendError};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::NS_PER_MS;

pub const LIVE_SCHEMA: u32 = 1;
/// Minimum spacing of down-sampled packets of one kind (10 Hz).
pub const DOWNSAMPLE_NS: i64 = 100 * NS_PER_MS;
pub const DEFAULT_CLIENT_BACKLOG: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PacketKind {
    State,
    Quality,
    PupilPoint,
    BpmPoint,
    AttentionEvent,
    KeypointAck,
}

impl PacketKind {
    pub const ALL: [PacketKind; 6] = [
        PacketKind::State,
        PacketKind::Quality,
        PacketKind::PupilPoint,
        PacketKind::BpmPoint,
        PacketKind::AttentionEvent,
        PacketKind::KeypointAck,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PacketKind::State => "state",
            PacketKind::Quality => "quality",
            PacketKind::PupilPoint => "pupil_point",
            PacketKind::BpmPoint => "bpm_point",
            PacketKind::AttentionEvent => "attention_event",
            PacketKind::KeypointAck => "keypoint_ack",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == s)
    }

    /// Signal streams are thinned to 10 Hz; state changes and acks are not.
    pub fn is_downsampled(self) -> bool {
        matches!(self, PacketKind::Quality | PacketKind::PupilPoint | PacketKind::BpmPoint)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LivePacket {
    pub schema: u32,
    pub kind: PacketKind,
    pub server_ns: i64,
    pub payload: serde_json::Value,
}

impl LivePacket {
    pub fn new(kind: PacketKind, server_ns: i64, payload: impl Serialize) -> Self {
        LivePacket {
            schema: LIVE_SCHEMA,
            kind,
            server_ns,
            payload: serde_json::to_value(payload).expect("payload serializes"),
        }
    }

    pub fn encode(&self) -> String {
        serde_json::to_string(self).expect("packet serializes")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum SinkError {
    #[error("client backlog exceeded")]
    Full,
    #[error("client went away")]
    Closed,
}

/// Non-blocking per-client queue.
pub trait PacketSink: Send {
    fn try_send(&mut self, line: String) -> Result<(), SinkError>;
}

impl PacketSink for SyncSender<String> {
    fn try_send(&mut self, line: String) -> Result<(), SinkError> {
        SyncSender::try_send(self, line).map_err(|e| match e {
            TrySendError::Full(_) => SinkError::Full,
            TrySendError::Disconnected(_) => SinkError::Closed,
        })
    }
}

pub type ClientId = u64;

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct HubStats {
    pub published: u64,
    pub suppressed: u64,
    pub delivered: u64,
    pub backlog_exceeded: u64,
    pub closed: u64,
}

struct Client {
    kinds: BTreeSet<PacketKind>,
    sink: Box<dyn PacketSink>,
}

#[derive(Default)]
pub struct Hub {
    clients: BTreeMap<ClientId, Client>,
    next_id: ClientId,
    last_emit: HashMap<PacketKind, i64>,
    snapshot: Option<LivePacket>,
    stats: HubStats,
    /// Reasons for dropped clients, newest last.
    pub disconnects: Vec<(ClientId, SinkError)>,
}

impl std::fmt::Debug for Hub {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Hub").field("clients", &self.clients.len()).field("stats", &self.stats).finish()
    }
}

impl Hub {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a client for `kinds` (all kinds when empty). A client that
    /// asked for state gets the current snapshot first.
    pub fn subscribe(&mut self, kinds: &[PacketKind], sink: impl PacketSink + 'static) -> ClientId {
        let id = self.next_id;
        self.next_id += 1;
        let kinds: BTreeSet<PacketKind> =
            if kinds.is_empty() { PacketKind::ALL.into_iter().collect() } else { kinds.iter().copied().collect() };
        let mut client = Client { kinds, sink: Box::new(sink) };
        if let Some(snap) = self.snapshot.as_ref().filter(|_| client.kinds.contains(&PacketKind::State)) {
            if let Err(e) = client.sink.try_send(snap.encode()) {
                self.drop_client(id, e);
                return id;
            }
            self.stats.delivered += 1;
        }
        self.clients.insert(id, client);
        id
    }

    pub fn unsubscribe(&mut self, id: ClientId) {
        self.clients.remove(&id);
    }

    pub fn client_count(&self) -> usize {
        self.clients.len()
    }

    pub fn is_connected(&self, id: ClientId) -> bool {
        self.clients.contains_key(&id)
    }

    pub fn stats(&self) -> &HubStats {
        &self.stats
    }

    pub fn snapshot(&self) -> Option<&LivePacket> {
        self.snapshot.as_ref()
    }

    fn drop_client(&mut self, id: ClientId, why: SinkError) {
        self.clients.remove(&id);
        match why {
            SinkError::Full => self.stats.backlog_exceeded += 1,
            SinkError::Closed => self.stats.closed += 1,
        }
        self.disconnects.push((id, why));
    }

    /// True if the packet went out; down-sampled kinds within 100 ms of the
    /// previous emission of that kind are suppressed.
    pub fn publish(&mut self, packet: LivePacket) -> bool {
        if packet.kind.is_downsampled() {
            if let Some(&last) = self.last_emit.get(&packet.kind) {
                if packet.server_ns - last < DOWNSAMPLE_NS {
                    self.stats.suppressed += 1;
                    return false;
                }
            }
            self.last_emit.insert(packet.kind, packet.server_ns);
        }
        self.stats.published += 1;
        let line = packet.encode();
        let mut failed = Vec::new();
        for (id, c) in self.clients.iter_mut().filter(|(_, c)| c.kinds.contains(&packet.kind)) {
            match c.sink.try_send(line.clone()) {
                Ok(()) => self.stats.delivered += 1,
                Err(e) => failed.push((*id, e)),
            }
        }
        for (id, e) in failed {
            self.drop_client(id, e);
        }
        if packet.kind == PacketKind::State {
            self.snapshot = Some(packet);
        }
        true
    }
}
