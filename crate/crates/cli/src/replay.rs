use std::io::Write;
use std::net::SocketAddr;
use std::path::Path;
use std::time::Instant;

use anyhow::{Context, Result};
use gazefuse_core::log::{read_log, ReplayClock, ReplaySpeed, SessionLog};
use tokio::io::AsyncWriteExt;

pub enum Target {
    Stdout,
    Tcp(SocketAddr),
}

/// Re-emits every logged line in seq order, paced by `speed`.
/// Streaming to `record --passthrough` reproduces the original log body.
pub async fn run(path: &Path, speed: ReplaySpeed, target: Target) -> Result<(SessionLog, u64)> {
    let log = read_log(path).with_context(|| format!("reading {}", path.display()))?;
    if let Some((seq, line, reason)) = &log.corruption {
        eprintln!("warning: {} is damaged at line {line} (last good seq {seq:?}): {reason}", path.display());
    }
    let sent = emit(&log, speed, target).await?;
    Ok((log, sent))
}

pub async fn emit(log: &SessionLog, speed: ReplaySpeed, target: Target) -> Result<u64> {
    let mut clock = ReplayClock::new(speed);
    let mut sock = match target {
        Target::Tcp(addr) => {
            Some(tokio::net::TcpStream::connect(addr).await.with_context(|| format!("connecting to {addr}"))?)
        }
        Target::Stdout => None,
    };
    let stdout = std::io::stdout();
    let mut out = std::io::BufWriter::new(stdout.lock());
    let mut sent = 0;
    for e in &log.entries {
        let d = clock.delay_for(e.record.host_ns(), Instant::now());
        if !d.is_zero() {
            out.flush()?;
            tokio::time::sleep(d).await;
        }
        match sock.as_mut() {
            Some(s) => {
                let mut line = String::with_capacity(e.line.len() + 1);
                line.push_str(&e.line);
                line.push('\n');
                s.write_all(line.as_bytes()).await?;
            }
            None => writeln!(out, "{}", e.line)?,
        }
        sent += 1;
    }
    out.flush()?;
    if let Some(mut s) = sock {
        s.flush().await?;
        s.shutdown().await?;
    }
    Ok(sent)
}
