//! Shared domain types: stream identifiers, dual timestamps and typed samples.
//!
//! Stream identifiers render as namespaced paths:
//!
//! - `/humans/faces/<person_id>/eyes/<channel>` for eye-tracker channels
//! - `/humans/bodies/<person_id>/<channel>` for body-worn channels
//!
//! All coordinates are normalized scene-camera units in `[0, 1]` with the
//! origin at the top-left corner of the scene image.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const NS_PER_SEC: i64 = 1_000_000_000;
pub const NS_PER_MS: i64 = 1_000_000;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ModelError {
    #[error("malformed stream path `{0}`")]
    MalformedPath(String),
    #[error("invalid person id `{0}`")]
    InvalidPersonId(String),
    #[error("channel {channel} is not legal under {part}")]
    IllegalChannel { part: Part, channel: Channel },
    #[error("degenerate bounding box")]
    DegenerateBox,
}

/// Opaque participant identifier. Non-empty, no `/`, no whitespace.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct PersonId(String);

impl PersonId {
    pub fn new(id: impl Into<String>) -> Result<Self, ModelError> {
        let id = id.into();
        if id.is_empty() || id.chars().any(|c| c == '/' || c.is_whitespace()) {
            return Err(ModelError::InvalidPersonId(id));
        }
        Ok(PersonId(id))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl TryFrom<String> for PersonId {
    type Error = ModelError;
    fn try_from(value: String) -> Result<Self, Self::Error> {
        PersonId::new(value)
    }
}

impl From<PersonId> for String {
    fn from(value: PersonId) -> Self {
        value.0
    }
}

impl fmt::Display for PersonId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Part {
    FaceEyes,
    Body,
}

impl fmt::Display for Part {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Part::FaceEyes => "face_eyes",
            Part::Body => "body",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Channel {
    Gaze2d,
    Gaze3d,
    PupilRaw,
    PupilFiltered,
    Blink,
    EcgRaw,
    Rr,
    Bpm,
    BreathingRate,
    SceneImageRef,
    Detections,
    Event,
}

impl Channel {
    pub const ALL: [Channel; 12] = [
        Channel::Gaze2d,
        Channel::Gaze3d,
        Channel::PupilRaw,
        Channel::PupilFiltered,
        Channel::Blink,
        Channel::EcgRaw,
        Channel::Rr,
        Channel::Bpm,
        Channel::BreathingRate,
        Channel::SceneImageRef,
        Channel::Detections,
        Channel::Event,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Channel::Gaze2d => "gaze2d",
            Channel::Gaze3d => "gaze3d",
            Channel::PupilRaw => "pupil_raw",
            Channel::PupilFiltered => "pupil_filtered",
            Channel::Blink => "blink",
            Channel::EcgRaw => "ecg_raw",
            Channel::Rr => "rr",
            Channel::Bpm => "bpm",
            Channel::BreathingRate => "breathing_rate",
            Channel::SceneImageRef => "scene_image_ref",
            Channel::Detections => "detections",
            Channel::Event => "event",
        }
    }

    pub fn from_name(name: &str) -> Option<Channel> {
        Channel::ALL.into_iter().find(|c| c.name() == name)
    }

    /// Whether this channel may appear under `part`.
    ///
    /// Scene-camera channels (`scene_image_ref`, `detections`) live with the
    /// eye tracker that carries the camera. `event` is legal under both.
    pub fn legal_for(self, part: Part) -> bool {
        use Channel::*;
        match part {
            Part::FaceEyes => {
                matches!(self, Gaze2d | Gaze3d | PupilRaw | PupilFiltered | Blink | SceneImageRef | Detections | Event)
            }
            Part::Body => matches!(self, EcgRaw | Rr | Bpm | BreathingRate | Event),
        }
    }
}

impl fmt::Display for Channel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// A namespaced stream identifier. Construction checks channel legality.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct StreamId {
    person: PersonId,
    part: Part,
    channel: Channel,
}

impl StreamId {
    pub fn new(person: PersonId, part: Part, channel: Channel) -> Result<Self, ModelError> {
        if !channel.legal_for(part) {
            return Err(ModelError::IllegalChannel { part, channel });
        }
        Ok(StreamId { person, part, channel })
    }

    /// Eye-tracker stream for `person`.
    pub fn eyes(person: &PersonId, channel: Channel) -> Self {
        StreamId::new(person.clone(), Part::FaceEyes, channel).expect("channel not legal for eyes")
    }

    /// Body stream for `person`.
    pub fn body(person: &PersonId, channel: Channel) -> Self {
        StreamId::new(person.clone(), Part::Body, channel).expect("channel not legal for body")
    }

    pub fn person(&self) -> &PersonId {
        &self.person
    }

    pub fn part(&self) -> Part {
        self.part
    }

    pub fn channel(&self) -> Channel {
        self.channel
    }

    pub fn render(&self) -> String {
        self.to_string()
    }

    pub fn parse(path: &str) -> Result<Self, ModelError> {
        let malformed = || ModelError::MalformedPath(path.to_string());
        let rest = path.strip_prefix("/humans/").ok_or_else(malformed)?;
        let segments: Vec<&str> = rest.split('/').collect();
        let (part, person, channel) = match segments.as_slice() {
            ["faces", person, "eyes", channel] => (Part::FaceEyes, *person, *channel),
            ["bodies", person, channel] => (Part::Body, *person, *channel),
            _ => return Err(malformed()),
        };
        let person = PersonId::new(person).map_err(|_| malformed())?;
        let channel = Channel::from_name(channel).ok_or_else(malformed)?;
        StreamId::new(person, part, channel).map_err(|_| malformed())
    }
}

impl fmt::Display for StreamId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.part {
            Part::FaceEyes => write!(f, "/humans/faces/{}/eyes/{}", self.person, self.channel),
            Part::Body => write!(f, "/humans/bodies/{}/{}", self.person, self.channel),
        }
    }
}

impl FromStr for StreamId {
    type Err = ModelError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        StreamId::parse(s)
    }
}

pub fn render_stream_id(id: &StreamId) -> String {
    id.render()
}

pub fn parse_stream_id(path: &str) -> Result<StreamId, ModelError> {
    StreamId::parse(path)
}

/// Host (ingestion) clock and optional device clock, both in nanoseconds.
/// Ordering and windowing always use `host_ns`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct Stamp {
    pub host_ns: i64,
    pub device_ns: Option<i64>,
}

impl Stamp {
    pub fn host(host_ns: i64) -> Self {
        Stamp { host_ns, device_ns: None }
    }

    pub fn seconds(&self) -> f64 {
        self.host_ns as f64 / NS_PER_SEC as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GazeSample {
    pub stamp: Stamp,
    pub x: f64,
    pub y: f64,
    pub valid: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Eye {
    Left,
    Right,
    Mean,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PupilSample {
    pub stamp: Stamp,
    pub diameter_mm: f64,
    pub eye: Eye,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EcgSample {
    pub stamp: Stamp,
    pub mv: f64,
}

/// Axis-aligned box in normalized units, always inside the unit square.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
}

// Edges within this distance of the unit square are treated as inside, so
// clipping an already clipped box returns it bit-for-bit.
const CLIP_SLACK: f64 = 1e-12;

fn clip_interval(center: f64, extent: f64) -> Result<(f64, f64), ModelError> {
    let lo = center - extent / 2.0;
    let hi = center + extent / 2.0;
    if lo >= -CLIP_SLACK && hi <= 1.0 + CLIP_SLACK {
        return Ok((center, extent));
    }
    let lo = lo.max(0.0);
    let hi = hi.min(1.0);
    if hi <= lo {
        return Err(ModelError::DegenerateBox);
    }
    Ok(((lo + hi) / 2.0, hi - lo))
}

/// Intersects the box with the unit square.
pub fn clip_bbox(cx: f64, cy: f64, w: f64, h: f64) -> Result<BBox, ModelError> {
    if !(w > 0.0 && h > 0.0) || !cx.is_finite() || !cy.is_finite() || !w.is_finite() || !h.is_finite() {
        return Err(ModelError::DegenerateBox);
    }
    let (cx, w) = clip_interval(cx, w)?;
    let (cy, h) = clip_interval(cy, h)?;
    Ok(BBox { cx, cy, w, h })
}

impl BBox {
    pub fn new(cx: f64, cy: f64, w: f64, h: f64) -> Result<Self, ModelError> {
        clip_bbox(cx, cy, w, h)
    }

    pub fn x0(&self) -> f64 {
        self.cx - self.w / 2.0
    }
    pub fn x1(&self) -> f64 {
        self.cx + self.w / 2.0
    }
    pub fn y0(&self) -> f64 {
        self.cy - self.h / 2.0
    }
    pub fn y1(&self) -> f64 {
        self.cy + self.h / 2.0
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    /// Edge-inclusive containment.
    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= self.x0() && x <= self.x1() && y >= self.y0() && y <= self.y1()
    }

    pub fn corners(&self) -> [Point; 4] {
        [
            Point::new(self.x0(), self.y0()),
            Point::new(self.x1(), self.y0()),
            Point::new(self.x1(), self.y1()),
            Point::new(self.x0(), self.y1()),
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub fn new(x: f64, y: f64) -> Self {
        Point { x, y }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectClass {
    Drone,
    Arm,
    Rover,
    Controller,
}

impl ObjectClass {
    pub const ALL: [ObjectClass; 4] =
        [ObjectClass::Drone, ObjectClass::Arm, ObjectClass::Rover, ObjectClass::Controller];

    pub fn name(self) -> &'static str {
        match self {
            ObjectClass::Drone => "drone",
            ObjectClass::Arm => "arm",
            ObjectClass::Rover => "rover",
            ObjectClass::Controller => "controller",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        ObjectClass::ALL.into_iter().find(|c| c.name() == name)
    }
}

impl fmt::Display for ObjectClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub class: ObjectClass,
    pub confidence: f64,
    #[serde(rename = "box")]
    pub bbox: BBox,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectionFrame {
    pub stamp: Stamp,
    pub frame_seq: u64,
    pub items: Vec<Detection>,
}
