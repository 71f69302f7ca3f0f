//! Command implementations behind the `gazefuse` binary.

pub mod analyze;
pub mod replay;
pub mod server;
pub mod simulate;

use std::time::{SystemTime, UNIX_EPOCH};

pub const DEFAULT_INGEST_ADDR: &str = "127.0.0.1:7450";
pub const DEFAULT_HTTP_ADDR: &str = "127.0.0.1:7451";

/// Host clock in nanoseconds since the Unix epoch.
pub fn host_now_ns() -> i64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_nanos() as i64).unwrap_or(0)
}
