//! Streaming fusion of eye-tracking (gaze, pupil), ECG and object detections
//! for teleoperation studies.

// `!(x > 0.0)` is used on purpose so NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod console;
pub mod dsp;
pub mod ecg;
pub mod exec;
pub mod fusion;
pub mod live;
pub mod log;
pub mod model;
pub mod normalize;
pub mod protocol;
pub mod pupil;
pub mod study;
pub mod synth;
pub mod wire;
