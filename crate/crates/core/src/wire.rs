//! Newline-delimited wire records.
//!
//! One JSON object per line:
//!
//! ```text
//! {"topic":"/humans/faces/p1/eyes/pupil_raw","host_ns":1,"device_ns":7,"payload":{"diameter_mm":3.2,"eye":"mean"}}
//! ```
//!
//! `topic`, `host_ns` and `payload` are required; `device_ns` is optional.
//! Payload schemas per channel:
//!
//! | channel | payload |
//! |---|---|
//! | gaze2d | `{x, y, valid}` |
//! | gaze3d | `{x, y, z, valid}` |
//! | pupil_raw | `{diameter_mm, eye}` |
//! | pupil_filtered | `{diameter_mm, eye, d_lp_mm}` (`diameter_mm` carries the baseline-subtracted value) |
//! | blink | `{closed}` |
//! | ecg_raw | `{mv}` |
//! | rr, bpm, breathing_rate | `{value, window_start_ns, quality}` |
//! | scene_image_ref | `{frame_seq}` |
//! | detections | `{frame_seq, items:[{class, confidence, box:{cx,cy,w,h}}]}` |
//! | event | `{kind, text, task?}` |
//!
//! Unknown fields are ignored on decode. Encoding is deterministic: fields are
//! always written in the order above and floats use the shortest round-trip
//! representation.

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::model::{
    clip_bbox, Channel, Detection, DetectionFrame, EcgSample, Eye, GazeSample, ObjectClass, PupilSample, Stamp,
    StreamId,
};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum WireError {
    #[error("parse error: {0}")]
    Parse(String),
    #[error("schema error: {0}")]
    Schema(String),
    #[error("unknown topic `{0}`")]
    UnknownTopic(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Gaze2d {
    pub x: f64,
    pub y: f64,
    pub valid: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Gaze3d {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub valid: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PupilRaw {
    pub diameter_mm: f64,
    pub eye: Eye,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PupilFiltered {
    pub diameter_mm: f64,
    pub eye: Eye,
    pub d_lp_mm: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Blink {
    pub closed: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EcgRaw {
    pub mv: f64,
}

/// Feature value computed over a trailing window ending at the record stamp.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindowValue {
    pub value: f64,
    pub window_start_ns: i64,
    pub quality: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SceneImageRef {
    pub frame_seq: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detections {
    pub frame_seq: u64,
    pub items: Vec<Detection>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub kind: String,
    pub text: String,
    /// Task running when the event was raised.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub task: Option<u8>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(untagged)]
pub enum Payload {
    Gaze2d(Gaze2d),
    Gaze3d(Gaze3d),
    PupilRaw(PupilRaw),
    PupilFiltered(PupilFiltered),
    Blink(Blink),
    EcgRaw(EcgRaw),
    Rr(WindowValue),
    Bpm(WindowValue),
    BreathingRate(WindowValue),
    SceneImageRef(SceneImageRef),
    Detections(Detections),
    Event(Event),
}

impl Payload {
    pub fn channel(&self) -> Channel {
        match self {
            Payload::Gaze2d(_) => Channel::Gaze2d,
            Payload::Gaze3d(_) => Channel::Gaze3d,
            Payload::PupilRaw(_) => Channel::PupilRaw,
            Payload::PupilFiltered(_) => Channel::PupilFiltered,
            Payload::Blink(_) => Channel::Blink,
            Payload::EcgRaw(_) => Channel::EcgRaw,
            Payload::Rr(_) => Channel::Rr,
            Payload::Bpm(_) => Channel::Bpm,
            Payload::BreathingRate(_) => Channel::BreathingRate,
            Payload::SceneImageRef(_) => Channel::SceneImageRef,
            Payload::Detections(_) => Channel::Detections,
            Payload::Event(_) => Channel::Event,
        }
    }
}

/// A decoded wire record: topic, stamps and a payload matching the topic's channel.
#[derive(Debug, Clone, PartialEq)]
pub struct WireRecord {
    pub stream: StreamId,
    pub stamp: Stamp,
    pub payload: Payload,
}

impl WireRecord {
    pub fn new(stream: StreamId, stamp: Stamp, payload: Payload) -> Result<Self, WireError> {
        if stream.channel() != payload.channel() {
            return Err(WireError::Schema(format!("payload for {} on topic {}", payload.channel(), stream)));
        }
        if stamp.host_ns <= 0 {
            return Err(WireError::Schema("host_ns must be positive".into()));
        }
        Ok(WireRecord { stream, stamp, payload })
    }

    pub fn host_ns(&self) -> i64 {
        self.stamp.host_ns
    }

    pub fn gaze(&self) -> Option<GazeSample> {
        match &self.payload {
            Payload::Gaze2d(g) => Some(GazeSample { stamp: self.stamp, x: g.x, y: g.y, valid: g.valid }),
            _ => None,
        }
    }

    pub fn pupil(&self) -> Option<PupilSample> {
        match &self.payload {
            Payload::PupilRaw(p) => Some(PupilSample { stamp: self.stamp, diameter_mm: p.diameter_mm, eye: p.eye }),
            _ => None,
        }
    }

    pub fn ecg(&self) -> Option<EcgSample> {
        match &self.payload {
            Payload::EcgRaw(e) => Some(EcgSample { stamp: self.stamp, mv: e.mv }),
            _ => None,
        }
    }

    pub fn detections(&self) -> Option<DetectionFrame> {
        match &self.payload {
            Payload::Detections(d) => {
                Some(DetectionFrame { stamp: self.stamp, frame_seq: d.frame_seq, items: d.items.clone() })
            }
            _ => None,
        }
    }

    pub fn event(&self) -> Option<&Event> {
        match &self.payload {
            Payload::Event(e) => Some(e),
            _ => None,
        }
    }
}

#[derive(Serialize)]
struct Envelope<'a> {
    topic: String,
    host_ns: i64,
    #[serde(skip_serializing_if = "Option::is_none")]
    device_ns: Option<i64>,
    payload: &'a Payload,
}

/// Encodes a record as a single line, without the trailing newline.
pub fn encode_record(record: &WireRecord) -> String {
    let env = Envelope {
        topic: record.stream.render(),
        host_ns: record.stamp.host_ns,
        device_ns: record.stamp.device_ns,
        payload: &record.payload,
    };
    serde_json::to_string(&env).expect("wire records always serialize")
}

fn schema(msg: impl Into<String>) -> WireError {
    WireError::Schema(msg.into())
}

fn field<T: DeserializeOwned>(payload: Value, channel: Channel) -> Result<T, WireError> {
    serde_json::from_value(payload).map_err(|e| schema(format!("{channel} payload: {e}")))
}

fn finite(v: f64, name: &str) -> Result<(), WireError> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(schema(format!("{name} must be finite")))
    }
}

fn int_field(obj: &serde_json::Map<String, Value>, name: &str) -> Result<Option<i64>, WireError> {
    match obj.get(name) {
        None | Some(Value::Null) if name == "device_ns" => Ok(None),
        None => Err(schema(format!("missing `{name}`"))),
        Some(v) => v.as_i64().map(Some).ok_or_else(|| schema(format!("`{name}` must be an integer"))),
    }
}

fn decode_payload(channel: Channel, payload: Value) -> Result<Payload, WireError> {
    Ok(match channel {
        Channel::Gaze2d => {
            let g: Gaze2d = field(payload, channel)?;
            finite(g.x, "x")?;
            finite(g.y, "y")?;
            if g.valid && !((0.0..=1.0).contains(&g.x) && (0.0..=1.0).contains(&g.y)) {
                return Err(schema("valid gaze must lie in [0,1]"));
            }
            Payload::Gaze2d(g)
        }
        Channel::Gaze3d => Payload::Gaze3d(field(payload, channel)?),
        Channel::PupilRaw => {
            let p: PupilRaw = field(payload, channel)?;
            if !(p.diameter_mm.is_finite() && p.diameter_mm >= 0.0) {
                return Err(schema("diameter_mm must be finite and non-negative"));
            }
            Payload::PupilRaw(p)
        }
        Channel::PupilFiltered => {
            let p: PupilFiltered = field(payload, channel)?;
            finite(p.diameter_mm, "diameter_mm")?;
            finite(p.d_lp_mm, "d_lp_mm")?;
            Payload::PupilFiltered(p)
        }
        Channel::Blink => Payload::Blink(field(payload, channel)?),
        Channel::EcgRaw => {
            let e: EcgRaw = field(payload, channel)?;
            finite(e.mv, "mv")?;
            Payload::EcgRaw(e)
        }
        Channel::Rr | Channel::Bpm | Channel::BreathingRate => {
            let v: WindowValue = field(payload, channel)?;
            finite(v.value, "value")?;
            match channel {
                Channel::Rr => Payload::Rr(v),
                Channel::Bpm => Payload::Bpm(v),
                _ => Payload::BreathingRate(v),
            }
        }
        Channel::SceneImageRef => Payload::SceneImageRef(field(payload, channel)?),
        Channel::Detections => {
            let mut d: Detections = field(payload, channel)?;
            for item in &mut d.items {
                if !(0.0..=1.0).contains(&item.confidence) {
                    return Err(schema("confidence must lie in [0,1]"));
                }
                let b = item.bbox;
                item.bbox = clip_bbox(b.cx, b.cy, b.w, b.h).map_err(|e| schema(e.to_string()))?;
            }
            Payload::Detections(d)
        }
        Channel::Event => {
            let e: Event = field(payload, channel)?;
            if e.kind.is_empty() {
                return Err(schema("event kind must be non-empty"));
            }
            Payload::Event(e)
        }
    })
}

/// Decodes one line (trailing `\n` / `\r\n` tolerated).
pub fn decode_record(line: &[u8]) -> Result<WireRecord, WireError> {
    let line = line.strip_suffix(b"\n").unwrap_or(line);
    let line = line.strip_suffix(b"\r").unwrap_or(line);
    let value: Value = serde_json::from_slice(line).map_err(|e| WireError::Parse(e.to_string()))?;
    let Value::Object(mut obj) = value else {
        return Err(schema("record must be an object"));
    };
    let topic = match obj.get("topic") {
        Some(Value::String(s)) => s.clone(),
        Some(_) => return Err(schema("`topic` must be a string")),
        None => return Err(schema("missing `topic`")),
    };
    let stream = StreamId::parse(&topic).map_err(|_| WireError::UnknownTopic(topic.clone()))?;
    let host_ns = int_field(&obj, "host_ns")?.expect("required");
    let device_ns = int_field(&obj, "device_ns")?;
    let payload = match obj.remove("payload") {
        Some(p @ Value::Object(_)) => p,
        Some(_) => return Err(schema("`payload` must be an object")),
        None => return Err(schema("missing `payload`")),
    };
    let payload = decode_payload(stream.channel(), payload)?;
    WireRecord::new(stream, Stamp { host_ns, device_ns }, payload)
}

/// Builds an event record.
pub fn event_record(stream: StreamId, host_ns: i64, kind: &str, text: impl Into<String>) -> WireRecord {
    WireRecord::new(
        stream,
        Stamp::host(host_ns),
        Payload::Event(Event { kind: kind.to_string(), text: text.into(), task: None }),
    )
    .expect("event stream")
}

pub fn detections_payload(frame_seq: u64, items: Vec<(ObjectClass, f64, crate::model::BBox)>) -> Payload {
    Payload::Detections(Detections {
        frame_seq,
        items: items.into_iter().map(|(class, confidence, bbox)| Detection { class, confidence, bbox }).collect(),
    })
}
