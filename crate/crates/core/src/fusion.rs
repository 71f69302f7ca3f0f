//! Gaze/object fusion: frame matching, attention labels, dynamic ROI,
//! attention spans, dwell, gaze heatmaps and detection-frame coverage.

use std::cmp::{Ordering, Reverse};
use std::collections::{BTreeMap, BinaryHeap, VecDeque};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{Channel, DetectionFrame, GazeSample, ObjectClass, PersonId, Point, NS_PER_MS};
use crate::wire::WireRecord;

pub const STALENESS_NS: i64 = 200 * NS_PER_MS;
pub const DEFAULT_DEBOUNCE_NS: i64 = 100 * NS_PER_MS;
pub const SPAN_GAP_NS: i64 = 500 * NS_PER_MS;
/// Coverage credited to the last sample before a gap or the end of input.
pub const SAMPLE_HOLD_NS: i64 = 10 * NS_PER_MS;
pub const DEFAULT_ROI_MARGIN: f64 = 0.02;
pub const ROBOT_CLASSES: [ObjectClass; 3] = [ObjectClass::Drone, ObjectClass::Arm, ObjectClass::Rover];
pub const HEATMAP_GRID: usize = 64;
pub const HEATMAP_SIGMA_CELLS: f64 = 1.5;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FusionError {
    #[error("gaze sample is not valid")]
    InvalidGaze,
    #[error("ROI polygon needs at least 3 vertices and must not self-intersect")]
    InvalidPolygon,
    #[error("unknown attention label `{0}`")]
    UnknownLabel(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum AttentionLabel {
    Object(ObjectClass),
    RoiOnly,
    None,
}

impl AttentionLabel {
    pub fn name(self) -> &'static str {
        match self {
            AttentionLabel::Object(c) => c.name(),
            AttentionLabel::RoiOnly => "roi_only",
            AttentionLabel::None => "none",
        }
    }
}

impl fmt::Display for AttentionLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl From<AttentionLabel> for String {
    fn from(l: AttentionLabel) -> String {
        l.name().to_string()
    }
}

impl TryFrom<String> for AttentionLabel {
    type Error = FusionError;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl FromStr for AttentionLabel {
    type Err = FusionError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "roi_only" => Ok(AttentionLabel::RoiOnly),
            "none" => Ok(AttentionLabel::None),
            other => ObjectClass::from_name(other)
                .map(AttentionLabel::Object)
                .ok_or_else(|| FusionError::UnknownLabel(other.to_string())),
        }
    }
}

/// Latest frame not after the gaze, if it is at most [`STALENESS_NS`] old.
/// `frames` must be sorted by host_ns.
pub fn match_detections(gaze_ns: i64, frames: &[DetectionFrame]) -> Option<&DetectionFrame> {
    let idx = frames.partition_point(|f| f.stamp.host_ns <= gaze_ns);
    let f = frames.get(idx.checked_sub(1)?)?;
    (gaze_ns - f.stamp.host_ns <= STALENESS_NS).then_some(f)
}

pub fn resolve_attention(
    gaze: &GazeSample,
    frame: Option<&DetectionFrame>,
    roi: Option<&RoiPolygon>,
) -> Result<AttentionLabel, FusionError> {
    if !gaze.valid {
        return Err(FusionError::InvalidGaze);
    }
    let hit = frame.into_iter().flat_map(|f| &f.items).filter(|d| d.bbox.contains(gaze.x, gaze.y)).min_by(|a, b| {
        a.bbox
            .area()
            .total_cmp(&b.bbox.area())
            .then_with(|| b.confidence.total_cmp(&a.confidence))
            .then_with(|| a.class.name().cmp(b.class.name()))
    });
    Ok(match hit {
        Some(d) => AttentionLabel::Object(d.class),
        None if roi.is_some_and(|r| point_in_polygon(Point::new(gaze.x, gaze.y), r)) => AttentionLabel::RoiOnly,
        None => AttentionLabel::None,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoiPolygon {
    pub vertices: Vec<Point>,
    pub source_frame_seq: u64,
}

fn cross(o: Point, a: Point, b: Point) -> f64 {
    (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x)
}

fn segments_cross(p1: Point, p2: Point, q1: Point, q2: Point) -> bool {
    let d1 = cross(q1, q2, p1);
    let d2 = cross(q1, q2, p2);
    let d3 = cross(p1, p2, q1);
    let d4 = cross(p1, p2, q2);
    ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0)) && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0))
}

impl RoiPolygon {
    /// Operator-defined polygon (`roi.mode = manual-vertices`).
    pub fn manual(vertices: Vec<Point>) -> Result<Self, FusionError> {
        let n = vertices.len();
        if n < 3 || vertices.iter().any(|p| !(p.x.is_finite() && p.y.is_finite())) {
            return Err(FusionError::InvalidPolygon);
        }
        for i in 0..n {
            for j in i + 1..n {
                // Adjacent edges share a vertex.
                if j == i + 1 || (i == 0 && j == n - 1) {
                    continue;
                }
                let (a, b) = (vertices[i], vertices[(i + 1) % n]);
                let (c, d) = (vertices[j], vertices[(j + 1) % n]);
                if segments_cross(a, b, c, d) {
                    return Err(FusionError::InvalidPolygon);
                }
            }
        }
        Ok(RoiPolygon { vertices, source_frame_seq: 0 })
    }
}

/// Andrew's monotone chain; drops collinear points. Counter-clockwise in
/// (x, y) coordinates.
pub fn convex_hull(points: &[Point]) -> Vec<Point> {
    let mut pts = points.to_vec();
    pts.sort_by(|a, b| a.x.total_cmp(&b.x).then(a.y.total_cmp(&b.y)));
    pts.dedup();
    if pts.len() < 3 {
        return pts;
    }
    let mut hull: Vec<Point> = Vec::with_capacity(2 * pts.len());
    for pass in 0..2 {
        let start = hull.len();
        let iter: Box<dyn Iterator<Item = &Point>> =
            if pass == 0 { Box::new(pts.iter()) } else { Box::new(pts.iter().rev()) };
        for &p in iter {
            while hull.len() >= start + 2 && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0.0 {
                hull.pop();
            }
            hull.push(p);
        }
        hull.pop();
    }
    hull
}

/// Convex hull of the boxes of `classes`, each dilated by `margin` and clipped
/// to the unit square. Absent with fewer than two such boxes.
pub fn build_roi(frame: &DetectionFrame, classes: &[ObjectClass], margin: f64) -> Option<RoiPolygon> {
    let boxes: Vec<_> = frame.items.iter().filter(|d| classes.contains(&d.class)).map(|d| d.bbox).collect();
    if boxes.len() < 2 {
        return None;
    }
    let m = margin.max(0.0);
    let corners: Vec<Point> = boxes
        .iter()
        .flat_map(|b| {
            let (x0, x1) = ((b.x0() - m).max(0.0), (b.x1() + m).min(1.0));
            let (y0, y1) = ((b.y0() - m).max(0.0), (b.y1() + m).min(1.0));
            [Point::new(x0, y0), Point::new(x1, y0), Point::new(x1, y1), Point::new(x0, y1)]
        })
        .collect();
    let vertices = convex_hull(&corners);
    (vertices.len() >= 3).then_some(RoiPolygon { vertices, source_frame_seq: frame.frame_seq })
}

const BOUNDARY_EPS: f64 = 1e-12;

fn on_segment(p: Point, a: Point, b: Point) -> bool {
    let len = (b.x - a.x).hypot(b.y - a.y);
    cross(a, b, p).abs() <= BOUNDARY_EPS * len.max(1.0)
        && p.x >= a.x.min(b.x) - BOUNDARY_EPS
        && p.x <= a.x.max(b.x) + BOUNDARY_EPS
        && p.y >= a.y.min(b.y) - BOUNDARY_EPS
        && p.y <= a.y.max(b.y) + BOUNDARY_EPS
}

/// Even-odd ray casting; points on an edge count as inside.
pub fn point_in_polygon(p: Point, poly: &RoiPolygon) -> bool {
    let v = &poly.vertices;
    let n = v.len();
    if n < 3 {
        return false;
    }
    let mut inside = false;
    let mut j = n - 1;
    for i in 0..n {
        let (a, b) = (v[i], v[j]);
        if on_segment(p, a, b) {
            return true;
        }
        if (a.y > p.y) != (b.y > p.y) && p.x < (b.x - a.x) * (p.y - a.y) / (b.y - a.y) + a.x {
            inside = !inside;
        }
        j = i;
    }
    inside
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttentionSpan {
    pub label: AttentionLabel,
    pub start_ns: i64,
    pub end_ns: i64,
    pub n_samples: u64,
}

impl AttentionSpan {
    pub fn duration_s(&self) -> f64 {
        (self.end_ns - self.start_ns) as f64 / 1e9
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SpanConfig {
    pub debounce_ns: i64,
    pub gap_ns: i64,
    pub hold_ns: i64,
}

impl Default for SpanConfig {
    fn default() -> Self {
        SpanConfig { debounce_ns: DEFAULT_DEBOUNCE_NS, gap_ns: SPAN_GAP_NS, hold_ns: SAMPLE_HOLD_NS }
    }
}

#[derive(Debug, Clone, Copy)]
struct Run {
    label: AttentionLabel,
    start: i64,
    n: u64,
}

/// Streaming span construction with debounce. A sample covers the time up to
/// the next sample, or `hold_ns` when followed by a gap or the end of input.
#[derive(Debug, Clone, Default)]
pub struct SpanBuilder {
    cfg: SpanConfig,
    cur: Option<Run>,
    pending: Option<Run>,
    last_ns: Option<i64>,
}

impl SpanBuilder {
    pub fn new(cfg: SpanConfig) -> Self {
        SpanBuilder { cfg, ..Default::default() }
    }

    fn commit_pending(&mut self, out: &mut Vec<AttentionSpan>) {
        if let Some(p) = self.pending.take() {
            if let Some(c) = self.cur.replace(p) {
                out.push(AttentionSpan { label: c.label, start_ns: c.start, end_ns: p.start, n_samples: c.n });
            }
        }
    }

    fn flush(&mut self, out: &mut Vec<AttentionSpan>) {
        self.commit_pending(out);
        if let (Some(c), Some(last)) = (self.cur.take(), self.last_ns) {
            out.push(AttentionSpan {
                label: c.label,
                start_ns: c.start,
                end_ns: last + self.cfg.hold_ns,
                n_samples: c.n,
            });
        }
    }

    /// Feeds one labeled sample (stamps non-decreasing); returns closed spans.
    pub fn push(&mut self, t_ns: i64, label: AttentionLabel) -> Vec<AttentionSpan> {
        let mut out = Vec::new();
        if self.last_ns.is_some_and(|last| t_ns - last > self.cfg.gap_ns) {
            self.flush(&mut out);
        }
        if self.pending.is_some_and(|p| t_ns - p.start >= self.cfg.debounce_ns) {
            self.commit_pending(&mut out);
        }
        match (&mut self.cur, &mut self.pending) {
            (None, _) => self.cur = Some(Run { label, start: t_ns, n: 1 }),
            (Some(c), None) if c.label == label => c.n += 1,
            (Some(_), None) => self.pending = Some(Run { label, start: t_ns, n: 1 }),
            (Some(_), Some(p)) if p.label == label => p.n += 1,
            (Some(c), Some(p)) if c.label == label => {
                // Short excursion that reverts: absorbed.
                c.n += p.n + 1;
                self.pending = None;
            }
            (Some(_), Some(_)) => {
                self.commit_pending(&mut out);
                self.pending = Some(Run { label, start: t_ns, n: 1 });
            }
        }
        self.last_ns = Some(t_ns);
        out
    }

    pub fn finish(&mut self) -> Vec<AttentionSpan> {
        let mut out = Vec::new();
        self.flush(&mut out);
        self.last_ns = None;
        out
    }
}

pub fn build_spans(labels: &[(i64, AttentionLabel)], cfg: SpanConfig) -> Vec<AttentionSpan> {
    let mut b = SpanBuilder::new(cfg);
    let mut out: Vec<AttentionSpan> = labels.iter().flat_map(|&(t, l)| b.push(t, l)).collect();
    out.extend(b.finish());
    out
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct DwellSummary {
    pub dwell_s: BTreeMap<AttentionLabel, f64>,
    pub shifts: u64,
    pub shifts_per_min: f64,
}

impl DwellSummary {
    pub fn dwell(&self, label: AttentionLabel) -> f64 {
        self.dwell_s.get(&label).copied().unwrap_or(0.0)
    }
}

/// Dwell per label clipped to `[start_ns, end_ns)` and the number of label
/// changes between consecutive spans that overlap the interval.
pub fn dwell_and_shifts(spans: &[AttentionSpan], start_ns: i64, end_ns: i64) -> DwellSummary {
    let mut summary = DwellSummary::default();
    let mut prev: Option<AttentionLabel> = None;
    for s in spans {
        let lo = s.start_ns.max(start_ns);
        let hi = s.end_ns.min(end_ns);
        if hi <= lo {
            continue;
        }
        *summary.dwell_s.entry(s.label).or_insert(0.0) += (hi - lo) as f64 / 1e9;
        if prev.is_some_and(|p| p != s.label) {
            summary.shifts += 1;
        }
        prev = Some(s.label);
    }
    let minutes = (end_ns - start_ns) as f64 / 60e9;
    summary.shifts_per_min = if minutes > 0.0 { summary.shifts as f64 / minutes } else { 0.0 };
    summary
}

#[derive(Debug, Clone, PartialEq)]
pub struct Heatmap {
    pub size: usize,
    /// Row-major, row = y cell (top-left origin).
    pub grid: Vec<f64>,
    pub n_samples: u64,
}

impl Heatmap {
    pub fn is_empty(&self) -> bool {
        self.n_samples == 0
    }

    pub fn at(&self, row: usize, col: usize) -> f64 {
        self.grid[row * self.size + col]
    }

    pub fn total(&self) -> f64 {
        self.grid.iter().sum()
    }

    /// Plain-text matrix, one row per line.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for row in self.grid.chunks(self.size) {
            let cells: Vec<String> = row.iter().map(|v| format!("{v:.9e}")).collect();
            s.push_str(&cells.join(" "));
            s.push('\n');
        }
        s
    }

    /// Binary 8-bit PGM scaled to the maximum cell.
    pub fn to_pgm(&self) -> Vec<u8> {
        let max = self.grid.iter().copied().fold(0.0, f64::max);
        let mut out = format!("P5\n{} {}\n255\n", self.size, self.size).into_bytes();
        out.extend(self.grid.iter().map(|v| if max > 0.0 { (v / max * 255.0).round() as u8 } else { 0 }));
        out
    }
}

pub fn heatmap_cell(v: f64, size: usize) -> usize {
    ((v * size as f64).floor().max(0.0) as usize).min(size - 1)
}

fn kernel(sigma: f64) -> Vec<f64> {
    let r = (3.0 * sigma).floor() as i64;
    (-r..=r).map(|k| (-0.5 * (k as f64 / sigma).powi(2)).exp()).collect()
}

/// Valid gaze points binned on a `size`×`size` grid, smoothed with a Gaussian
/// truncated at 3σ, normalized to sum 1. Kernel weights falling outside the
/// grid are renormalized away so smoothing conserves mass.
pub fn accumulate_heatmap(points: impl IntoIterator<Item = (f64, f64)>, size: usize, sigma_cells: f64) -> Heatmap {
    let mut hist = vec![0.0; size * size];
    let mut n = 0u64;
    for (x, y) in points {
        hist[heatmap_cell(y, size) * size + heatmap_cell(x, size)] += 1.0;
        n += 1;
    }
    if n == 0 {
        return Heatmap { size, grid: hist, n_samples: 0 };
    }
    let grid = smooth(&hist, size, sigma_cells);
    let total: f64 = grid.iter().sum();
    Heatmap { size, grid: grid.into_iter().map(|v| v / total).collect(), n_samples: n }
}

/// Mass-conserving scatter of each non-empty cell through the truncated kernel.
pub fn smooth(hist: &[f64], size: usize, sigma_cells: f64) -> Vec<f64> {
    let k = kernel(sigma_cells);
    let r = (k.len() / 2) as i64;
    let s = size as i64;
    let mut out = vec![0.0; hist.len()];
    for (idx, &mass) in hist.iter().enumerate() {
        if mass == 0.0 {
            continue;
        }
        let (row, col) = ((idx / size) as i64, (idx % size) as i64);
        let rows = (row - r).max(0)..=(row + r).min(s - 1);
        let cols = (col - r).max(0)..=(col + r).min(s - 1);
        let wr: f64 = rows.clone().map(|i| k[(i - row + r) as usize]).sum();
        let wc: f64 = cols.clone().map(|j| k[(j - col + r) as usize]).sum();
        for i in rows {
            let fi = k[(i - row + r) as usize] / wr;
            for j in cols.clone() {
                out[(i * s + j) as usize] += mass * fi * k[(j - col + r) as usize] / wc;
            }
        }
    }
    out
}

/// Fraction of frames whose distinct classes include at least `k` of
/// `required`; `None` without frames.
pub fn frame_coverage<'a>(
    frames: impl IntoIterator<Item = &'a DetectionFrame>,
    required: &[ObjectClass],
    k: usize,
) -> Option<f64> {
    let (mut covered, mut total) = (0u64, 0u64);
    for f in frames {
        let hits = required.iter().filter(|c| f.items.iter().any(|d| d.class == **c)).count();
        covered += u64::from(hits >= k);
        total += 1;
    }
    (total > 0).then(|| covered as f64 / total as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "mode")]
pub enum RoiMode {
    Hull {
        #[serde(default = "default_margin")]
        margin: f64,
        #[serde(default = "default_classes")]
        classes: Vec<ObjectClass>,
    },
    ManualVertices {
        vertices: Vec<Point>,
    },
}

fn default_margin() -> f64 {
    DEFAULT_ROI_MARGIN
}

fn default_classes() -> Vec<ObjectClass> {
    ROBOT_CLASSES.to_vec()
}

impl Default for RoiMode {
    fn default() -> Self {
        RoiMode::Hull { margin: DEFAULT_ROI_MARGIN, classes: ROBOT_CLASSES.to_vec() }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct FusionConfig {
    pub spans: SpanConfig,
    pub roi: RoiMode,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LabeledGaze {
    pub host_ns: i64,
    pub x: f64,
    pub y: f64,
    pub label: AttentionLabel,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct FusionOutput {
    pub labeled: Option<LabeledGaze>,
    /// Set when the label differs from the previous labeled sample.
    pub label_changed: bool,
    pub closed_spans: Vec<AttentionSpan>,
}

/// Per-person fusion over a stamp-ordered merge of gaze and detections.
#[derive(Debug)]
pub struct FusionEngine {
    person: PersonId,
    roi_mode: RoiMode,
    manual_roi: Option<RoiPolygon>,
    frames: VecDeque<(DetectionFrame, Option<RoiPolygon>)>,
    spans: SpanBuilder,
    last_label: Option<AttentionLabel>,
    pub invalid_gaze: u64,
}

impl FusionEngine {
    pub fn new(person: PersonId, cfg: FusionConfig) -> Result<Self, FusionError> {
        let manual_roi = match &cfg.roi {
            RoiMode::ManualVertices { vertices } => Some(RoiPolygon::manual(vertices.clone())?),
            RoiMode::Hull { .. } => None,
        };
        Ok(FusionEngine {
            person,
            roi_mode: cfg.roi,
            manual_roi,
            frames: VecDeque::new(),
            spans: SpanBuilder::new(cfg.spans),
            last_label: None,
            invalid_gaze: 0,
        })
    }

    pub fn person(&self) -> &PersonId {
        &self.person
    }

    pub fn push_frame(&mut self, frame: DetectionFrame) {
        let roi = match &self.roi_mode {
            RoiMode::Hull { margin, classes } => build_roi(&frame, classes, *margin),
            RoiMode::ManualVertices { .. } => None,
        };
        self.frames.push_back((frame, roi));
        // Only the newest frame at or before any future gaze matters.
        while self.frames.len() > 1 {
            self.frames.pop_front();
        }
    }

    pub fn push_gaze(&mut self, g: &GazeSample) -> FusionOutput {
        let mut out = FusionOutput::default();
        let matched = self
            .frames
            .back()
            .filter(|(f, _)| f.stamp.host_ns <= g.stamp.host_ns && g.stamp.host_ns - f.stamp.host_ns <= STALENESS_NS);
        let roi = self.manual_roi.as_ref().or(matched.and_then(|(_, r)| r.as_ref()));
        match resolve_attention(g, matched.map(|(f, _)| f), roi) {
            Ok(label) => {
                out.label_changed = self.last_label != Some(label);
                self.last_label = Some(label);
                out.labeled = Some(LabeledGaze { host_ns: g.stamp.host_ns, x: g.x, y: g.y, label });
                out.closed_spans = self.spans.push(g.stamp.host_ns, label);
            }
            Err(_) => self.invalid_gaze += 1,
        }
        out
    }

    /// Routes a merged record for this person; other records are ignored.
    pub fn push(&mut self, r: &WireRecord) -> FusionOutput {
        if r.stream.person() != &self.person {
            return FusionOutput::default();
        }
        if let Some(f) = r.detections() {
            self.push_frame(f);
        } else if let Some(g) = r.gaze() {
            return self.push_gaze(&g);
        }
        FusionOutput::default()
    }

    pub fn finish(&mut self) -> Vec<AttentionSpan> {
        self.spans.finish()
    }
}

fn fusion_rank(c: Channel) -> Option<u8> {
    match c {
        Channel::Detections => Some(0),
        Channel::Gaze2d => Some(1),
        _ => None,
    }
}

type MergeKey = (i64, u8, u64);

/// Orders one person's gaze and detection records by (host_ns, detections
/// first, per-source order). Records are released once both sources have
/// moved past them, so the output does not depend on arrival interleaving.
/// `max_skew_ns` additionally releases records once the leading source is
/// that far ahead, for live use when a source goes quiet.
#[derive(Debug)]
pub struct FusionMerger {
    person: PersonId,
    heap: BinaryHeap<Reverse<(MergeKey, usize)>>,
    store: Vec<Option<WireRecord>>,
    free: Vec<usize>,
    seq: [u64; 2],
    last: [Option<i64>; 2],
    max_skew_ns: Option<i64>,
}

impl FusionMerger {
    pub fn new(person: PersonId, max_skew_ns: Option<i64>) -> Self {
        FusionMerger {
            person,
            heap: BinaryHeap::new(),
            store: Vec::new(),
            free: Vec::new(),
            seq: [0; 2],
            last: [None; 2],
            max_skew_ns,
        }
    }

    pub fn pending(&self) -> usize {
        self.heap.len()
    }

    pub fn accepts(&self, r: &WireRecord) -> bool {
        r.stream.person() == &self.person && fusion_rank(r.stream.channel()).is_some()
    }

    fn watermark(&self) -> Option<i64> {
        let lead = self.last.iter().flatten().max().copied();
        let strict = match self.last {
            [Some(a), Some(b)] => Some(a.min(b)),
            _ => None,
        };
        let skew = self.max_skew_ns.zip(lead).map(|(s, l)| l - s);
        match (strict, skew) {
            (Some(a), Some(b)) => Some(a.max(b)),
            (a, b) => a.or(b),
        }
    }

    pub fn push(&mut self, r: WireRecord) -> Vec<WireRecord> {
        let Some(rank) = fusion_rank(r.stream.channel()).filter(|_| r.stream.person() == &self.person) else {
            return Vec::new();
        };
        let src = rank as usize;
        let key = (r.host_ns(), rank, self.seq[src]);
        self.seq[src] += 1;
        self.last[src] = Some(self.last[src].map_or(r.host_ns(), |l| l.max(r.host_ns())));
        let slot = match self.free.pop() {
            Some(i) => {
                self.store[i] = Some(r);
                i
            }
            None => {
                self.store.push(Some(r));
                self.store.len() - 1
            }
        };
        self.heap.push(Reverse((key, slot)));
        match self.watermark() {
            Some(w) => self.release(|k| k.0 < w),
            None => Vec::new(),
        }
    }

    fn release(&mut self, ready: impl Fn(&MergeKey) -> bool) -> Vec<WireRecord> {
        let mut out = Vec::new();
        while let Some(Reverse((key, slot))) = self.heap.peek().copied() {
            if !ready(&key) {
                break;
            }
            self.heap.pop();
            out.push(self.store[slot].take().expect("slot filled"));
            self.free.push(slot);
        }
        out
    }

    pub fn finish(&mut self) -> Vec<WireRecord> {
        self.release(|_| true)
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct FusionRun {
    pub labeled: Vec<LabeledGaze>,
    pub spans: Vec<AttentionSpan>,
    pub frames: Vec<DetectionFrame>,
}

/// Batch fusion of one person's records in arrival order.
pub fn run_fusion<'a>(
    records: impl IntoIterator<Item = &'a WireRecord>,
    person: &PersonId,
    cfg: FusionConfig,
) -> Result<FusionRun, FusionError> {
    let mut merger = FusionMerger::new(person.clone(), None);
    let mut engine = FusionEngine::new(person.clone(), cfg)?;
    let mut run = FusionRun::default();
    let mut feed = |r: WireRecord, run: &mut FusionRun| {
        if let Some(f) = r.detections() {
            run.frames.push(f);
        }
        let out = engine.push(&r);
        run.labeled.extend(out.labeled);
        run.spans.extend(out.closed_spans);
    };
    for r in records {
        for m in merger.push(r.clone()) {
            feed(m, &mut run);
        }
    }
    for m in merger.finish() {
        feed(m, &mut run);
    }
    run.spans.extend(engine.finish());
    Ok(run)
}

pub fn spans_csv(spans: &[AttentionSpan]) -> String {
    let mut s = String::from("start_ns,end_ns,label,n_samples\n");
    for sp in spans {
        s.push_str(&format!("{},{},{},{}\n", sp.start_ns, sp.end_ns, sp.label, sp.n_samples));
    }
    s
}

impl PartialOrd for AttentionSpan {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for AttentionSpan {
    fn cmp(&self, other: &Self) -> Ordering {
        (self.start_ns, self.end_ns).cmp(&(other.start_ns, other.end_ns))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{clip_bbox, BBox, Detection, Stamp};
    use proptest::prelude::*;

    const S: i64 = 1_000_000_000;
    const MS: i64 = NS_PER_MS;

    fn frame(t: i64, seq: u64, items: Vec<(ObjectClass, f64, BBox)>) -> DetectionFrame {
        DetectionFrame {
            stamp: Stamp::host(t),
            frame_seq: seq,
            items: items.into_iter().map(|(class, confidence, bbox)| Detection { class, confidence, bbox }).collect(),
        }
    }

    fn gaze(t: i64, x: f64, y: f64) -> GazeSample {
        GazeSample { stamp: Stamp::host(t), x, y, valid: true }
    }

    fn bx(cx: f64, cy: f64, w: f64, h: f64) -> BBox {
        clip_bbox(cx, cy, w, h).unwrap()
    }

    #[test]
    fn matching_uses_latest_not_after() {
        let frames = vec![frame(960 * MS, 0, vec![]), frame(1040 * MS, 1, vec![])];
        assert_eq!(match_detections(S, &frames).unwrap().frame_seq, 0);
        assert_eq!(match_detections(1040 * MS, &frames).unwrap().frame_seq, 1);
        let old = vec![frame(700 * MS, 0, vec![])];
        assert!(match_detections(S, &old).is_none());
        assert!(match_detections(900 * MS, &old).is_some());
        assert!(match_detections(901 * MS, &old).is_none());
    }

    #[test]
    fn resolve_labels() {
        let ctrl = frame(0, 0, vec![(ObjectClass::Controller, 0.9, bx(0.5, 0.8, 0.2, 0.1))]);
        assert_eq!(
            resolve_attention(&gaze(0, 0.5, 0.8), Some(&ctrl), None).unwrap(),
            AttentionLabel::Object(ObjectClass::Controller)
        );
        let nested = frame(
            0,
            0,
            vec![(ObjectClass::Rover, 0.99, bx(0.5, 0.5, 0.6, 0.6)), (ObjectClass::Drone, 0.5, bx(0.5, 0.5, 0.1, 0.1))],
        );
        assert_eq!(
            resolve_attention(&gaze(0, 0.5, 0.5), Some(&nested), None).unwrap(),
            AttentionLabel::Object(ObjectClass::Drone)
        );
        assert_eq!(resolve_attention(&gaze(0, 0.05, 0.05), Some(&nested), None).unwrap(), AttentionLabel::None);
        let mut invalid = gaze(0, 0.5, 0.5);
        invalid.valid = false;
        assert_eq!(resolve_attention(&invalid, None, None), Err(FusionError::InvalidGaze));
    }

    #[test]
    fn equal_area_ties_break_on_confidence_then_name() {
        let b = bx(0.5, 0.5, 0.2, 0.2);
        let f = frame(0, 0, vec![(ObjectClass::Rover, 0.5, b), (ObjectClass::Arm, 0.9, b)]);
        assert_eq!(
            resolve_attention(&gaze(0, 0.5, 0.5), Some(&f), None).unwrap(),
            AttentionLabel::Object(ObjectClass::Arm)
        );
        let f = frame(0, 0, vec![(ObjectClass::Rover, 0.9, b), (ObjectClass::Arm, 0.9, b)]);
        assert_eq!(
            resolve_attention(&gaze(0, 0.5, 0.5), Some(&f), None).unwrap(),
            AttentionLabel::Object(ObjectClass::Arm)
        );
    }

    #[test]
    fn roi_only_between_objects() {
        let f = frame(
            0,
            3,
            vec![(ObjectClass::Drone, 0.9, bx(0.2, 0.3, 0.1, 0.1)), (ObjectClass::Arm, 0.9, bx(0.7, 0.3, 0.1, 0.1))],
        );
        let roi = build_roi(&f, &ROBOT_CLASSES, DEFAULT_ROI_MARGIN).unwrap();
        assert_eq!(roi.source_frame_seq, 3);
        assert_eq!(resolve_attention(&gaze(0, 0.45, 0.3), Some(&f), Some(&roi)).unwrap(), AttentionLabel::RoiOnly);
        assert_eq!(resolve_attention(&gaze(0, 0.45, 0.6), Some(&f), Some(&roi)).unwrap(), AttentionLabel::None);
    }

    #[test]
    fn roi_needs_two_boxes() {
        let f = frame(0, 0, vec![(ObjectClass::Drone, 0.9, bx(0.2, 0.3, 0.1, 0.1))]);
        assert!(build_roi(&f, &ROBOT_CLASSES, 0.02).is_none());
        let f = frame(
            0,
            0,
            vec![
                (ObjectClass::Drone, 0.9, bx(0.2, 0.3, 0.1, 0.1)),
                (ObjectClass::Controller, 0.9, bx(0.5, 0.8, 0.1, 0.1)),
            ],
        );
        assert!(build_roi(&f, &ROBOT_CLASSES, 0.02).is_none());
    }

    #[test]
    fn two_disjoint_boxes_hull_has_at_most_eight_vertices() {
        let f = frame(
            0,
            0,
            vec![(ObjectClass::Drone, 0.9, bx(0.2, 0.2, 0.1, 0.1)), (ObjectClass::Rover, 0.9, bx(0.7, 0.6, 0.2, 0.1))],
        );
        let roi = build_roi(&f, &ROBOT_CLASSES, 0.0).unwrap();
        assert!(roi.vertices.len() <= 8 && roi.vertices.len() >= 4, "{}", roi.vertices.len());
    }

    #[test]
    fn collinear_centers_still_simple() {
        let f = frame(
            0,
            0,
            vec![
                (ObjectClass::Drone, 0.9, bx(0.2, 0.5, 0.1, 0.1)),
                (ObjectClass::Arm, 0.9, bx(0.5, 0.5, 0.1, 0.1)),
                (ObjectClass::Rover, 0.9, bx(0.8, 0.5, 0.1, 0.1)),
            ],
        );
        let roi = build_roi(&f, &ROBOT_CLASSES, 0.02).unwrap();
        assert_eq!(roi.vertices.len(), 4);
        assert!(RoiPolygon::manual(roi.vertices.clone()).is_ok());
        for d in &f.items {
            for c in d.bbox.corners() {
                assert!(point_in_polygon(c, &roi));
            }
        }
    }

    #[test]
    fn pip_boundary_and_center() {
        let sq = RoiPolygon::manual(vec![
            Point::new(0.0, 0.0),
            Point::new(1.0, 0.0),
            Point::new(1.0, 1.0),
            Point::new(0.0, 1.0),
        ])
        .unwrap();
        assert!(point_in_polygon(Point::new(0.5, 0.5), &sq));
        assert!(point_in_polygon(Point::new(1.0, 0.3), &sq));
        assert!(point_in_polygon(Point::new(0.0, 0.0), &sq));
        assert!(!point_in_polygon(Point::new(1.1, 0.3), &sq));
    }

    #[test]
    fn self_intersecting_manual_roi_rejected() {
        let bow = vec![Point::new(0.0, 0.0), Point::new(1.0, 1.0), Point::new(1.0, 0.0), Point::new(0.0, 1.0)];
        assert_eq!(RoiPolygon::manual(bow), Err(FusionError::InvalidPolygon));
    }

    use AttentionLabel as L;
    const A: L = L::Object(ObjectClass::Drone);
    const B: L = L::Object(ObjectClass::Arm);

    fn run(from: i64, to: i64, label: L) -> Vec<(i64, L)> {
        (from..to).step_by(10 * MS as usize).map(|t| (t, label)).collect()
    }

    #[test]
    fn distinct_runs_make_two_spans() {
        let labels = [run(0, S, A), run(S, 2 * S, B)].concat();
        let spans = build_spans(&labels, SpanConfig::default());
        assert_eq!(spans.len(), 2);
        assert_eq!(spans[0].end_ns, S);
        assert_eq!(spans[1].end_ns, 2 * S - 10 * MS + SAMPLE_HOLD_NS);
        assert_eq!(dwell_and_shifts(&spans, 0, 2 * S).shifts, 1);
    }

    #[test]
    fn short_excursion_absorbed() {
        let labels =
            [run(0, 2 * S, A), run(2 * S, 2 * S + 50 * MS, B), run(2 * S + 50 * MS, 4 * S + 50 * MS, A)].concat();
        let spans = build_spans(&labels, SpanConfig::default());
        assert_eq!(spans.len(), 1);
        assert_eq!(spans[0].label, A);
        assert_eq!(spans[0].n_samples, labels.len() as u64);
        assert_eq!(dwell_and_shifts(&spans, 0, 5 * S).shifts, 0);
    }

    #[test]
    fn gap_closes_span() {
        let labels = [run(0, S, A), run(2 * S, 3 * S, A)].concat();
        let spans = build_spans(&labels, SpanConfig::default());
        assert_eq!(spans.len(), 2);
        assert!(spans[0].end_ns < spans[1].start_ns);
        assert_eq!(dwell_and_shifts(&spans, 0, 3 * S).shifts, 0);
    }

    #[test]
    fn dwell_examples() {
        let span = |label, a: i64, b: i64| AttentionSpan { label, start_ns: a * S, end_ns: b * S, n_samples: 1 };
        let one = [span(A, 0, 10)];
        let d = dwell_and_shifts(&one, 0, 10 * S);
        assert_eq!(d.dwell(A), 10.0);
        assert_eq!(d.shifts, 0);
        let three = [span(A, 0, 10), span(B, 10, 15), span(A, 15, 25)];
        let d = dwell_and_shifts(&three, 0, 25 * S);
        assert_eq!((d.dwell(A), d.dwell(B), d.shifts), (20.0, 5.0, 2));
        assert!((d.shifts_per_min - 2.0 / (25.0 / 60.0)).abs() < 1e-12);
        let d = dwell_and_shifts(&[], 0, 25 * S);
        assert_eq!((d.dwell(A), d.shifts), (0.0, 0));
        let d = dwell_and_shifts(&three, 5 * S, 12 * S);
        assert_eq!((d.dwell(A), d.dwell(B), d.shifts), (5.0, 2.0, 1));
    }

    #[test]
    fn heatmap_delta_and_empty() {
        let h = accumulate_heatmap(std::iter::repeat_n((0.5, 0.5), 100), HEATMAP_GRID, HEATMAP_SIGMA_CELLS);
        assert!((h.total() - 1.0).abs() < 1e-9);
        let (r, c) = (heatmap_cell(0.5, 64), heatmap_cell(0.5, 64));
        for i in 0..64 {
            for j in 0..64 {
                if (i as i64 - r as i64).abs() > 4 || (j as i64 - c as i64).abs() > 4 {
                    assert_eq!(h.at(i, j), 0.0);
                }
            }
        }
        let e = accumulate_heatmap(std::iter::empty(), 64, 1.5);
        assert!(e.is_empty());
        assert_eq!(e.total(), 0.0);
    }

    #[test]
    fn heatmap_corner_mass_conserved() {
        let hist = {
            let mut h = vec![0.0; 64 * 64];
            h[0] = 3.0;
            h[64 * 64 - 1] = 2.0;
            h
        };
        let s = smooth(&hist, 64, 1.5);
        assert!((s.iter().sum::<f64>() - 5.0).abs() < 1e-9);
    }

    #[test]
    fn pgm_header_and_size() {
        let h = accumulate_heatmap([(0.1, 0.9)], 8, 1.0);
        let pgm = h.to_pgm();
        assert!(pgm.starts_with(b"P5\n8 8\n255\n"));
        assert_eq!(pgm.len(), "P5\n8 8\n255\n".len() + 64);
        assert_eq!(h.to_text().lines().count(), 8);
    }

    #[test]
    fn coverage_examples() {
        let b = bx(0.5, 0.5, 0.1, 0.1);
        let both = frame(0, 0, vec![(ObjectClass::Drone, 0.9, b), (ObjectClass::Arm, 0.9, b)]);
        let drone = frame(0, 0, vec![(ObjectClass::Drone, 0.9, b)]);
        let two_drones = frame(0, 0, vec![(ObjectClass::Drone, 0.9, b), (ObjectClass::Drone, 0.8, b)]);
        assert_eq!(frame_coverage([&both, &both], &ROBOT_CLASSES, 2), Some(1.0));
        assert_eq!(frame_coverage([&both, &drone], &ROBOT_CLASSES, 2), Some(0.5));
        assert_eq!(frame_coverage([&two_drones], &ROBOT_CLASSES, 2), Some(0.0));
        assert_eq!(frame_coverage([], &ROBOT_CLASSES, 2), None);
    }

    #[test]
    fn label_names_round_trip() {
        for l in [L::RoiOnly, L::None, A, B, L::Object(ObjectClass::Controller), L::Object(ObjectClass::Rover)] {
            assert_eq!(l.name().parse::<L>().unwrap(), l);
        }
        assert!("x".parse::<L>().is_err());
    }

    fn label_strategy() -> impl Strategy<Value = L> {
        prop_oneof![Just(A), Just(B), Just(L::RoiOnly), Just(L::None)]
    }

    proptest! {
        #[test]
        fn spans_ordered_and_translation_invariant(
            steps in proptest::collection::vec((1i64..700, label_strategy()), 1..200),
            shift in -1_000_000_000_000i64..1_000_000_000_000,
        ) {
            let mut t = 0;
            let labels: Vec<(i64, L)> = steps.iter().map(|&(dt, l)| { t += dt * MS / 2; (t, l) }).collect();
            let spans = build_spans(&labels, SpanConfig::default());
            for s in &spans {
                prop_assert!(s.end_ns > s.start_ns);
            }
            for w in spans.windows(2) {
                prop_assert!(w[0].end_ns <= w[1].start_ns);
            }
            prop_assert_eq!(spans.iter().map(|s| s.n_samples).sum::<u64>(), labels.len() as u64);
            let moved: Vec<(i64, L)> = labels.iter().map(|&(t, l)| (t + shift, l)).collect();
            let spans2 = build_spans(&moved, SpanConfig::default());
            prop_assert_eq!(spans2.len(), spans.len());
            let start = labels[0].0;
            let end = labels.last().unwrap().0 + SAMPLE_HOLD_NS;
            let d1 = dwell_and_shifts(&spans, start, end);
            let d2 = dwell_and_shifts(&spans2, start + shift, end + shift);
            prop_assert_eq!(d1.shifts, d2.shifts);
            let total: f64 = d1.dwell_s.values().sum();
            prop_assert!(total <= (end - start) as f64 / 1e9 + 1e-9);
        }

        #[test]
        fn heatmap_normalized(points in proptest::collection::vec((0.0f64..=1.0, 0.0f64..=1.0), 1..300)) {
            let h = accumulate_heatmap(points.iter().copied(), HEATMAP_GRID, HEATMAP_SIGMA_CELLS);
            prop_assert!((h.total() - 1.0).abs() <= 1e-9);
            prop_assert!(h.grid.iter().all(|v| *v >= 0.0));
            let mut hist = vec![0.0; 64 * 64];
            for (x, y) in &points {
                hist[heatmap_cell(*y, 64) * 64 + heatmap_cell(*x, 64)] += 1.0;
            }
            let s: f64 = smooth(&hist, 64, 1.5).iter().sum();
            prop_assert!((s - points.len() as f64).abs() <= 1e-9 * points.len() as f64);
        }

        #[test]
        fn resolve_is_deterministic_under_item_order(
            items in proptest::collection::vec((0usize..4, 0.0f64..=1.0, 0.1f64..0.9, 0.1f64..0.9, 0.05f64..0.5, 0.05f64..0.5), 1..6),
            gx in 0.0f64..=1.0, gy in 0.0f64..=1.0,
        ) {
            let mk: Vec<(ObjectClass, f64, BBox)> = items
                .iter()
                .map(|&(c, conf, cx, cy, w, h)| (ObjectClass::ALL[c], conf, bx(cx, cy, w, h)))
                .collect();
            let mut rev = mk.clone();
            rev.reverse();
            let g = gaze(0, gx, gy);
            let a = resolve_attention(&g, Some(&frame(0, 0, mk)), None).unwrap();
            let b = resolve_attention(&g, Some(&frame(0, 0, rev)), None).unwrap();
            prop_assert_eq!(a, b);
        }
    }
}
