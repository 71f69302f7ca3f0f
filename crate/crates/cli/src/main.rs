use std::net::SocketAddr;
use std::path::PathBuf;

use anyhow::Result;
use clap::{Parser, Subcommand};
use gazefuse_cli::{analyze, replay, server, simulate, DEFAULT_HTTP_ADDR, DEFAULT_INGEST_ADDR};
use gazefuse_core::analysis::DEFAULT_EXPERT_THRESHOLD_HOURS;
use gazefuse_core::live::LiveMode;
use gazefuse_core::log::ReplaySpeed;

#[derive(Parser)]
#[command(name = "gazefuse", version, about = "Gaze, pupil, ECG and detection fusion for teleoperation studies")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic session (NDJSON file, session log, or live TCP feed).
    Simulate {
        #[arg(long)]
        config: Option<PathBuf>,
        /// `host:port`, a `.log` path, or an NDJSON path.
        #[arg(long)]
        out: String,
        /// Pacing when streaming to TCP: `max` or a factor of real time.
        #[arg(long, default_value = "1")]
        speed: ReplaySpeed,
    },
    /// Run a live session: ingest records, drive the protocol, serve the console.
    Record {
        /// TOML with session metadata and an optional [protocol] table.
        #[arg(long)]
        session: PathBuf,
        #[arg(long, default_value = DEFAULT_INGEST_ADDR)]
        listen: SocketAddr,
        #[arg(long, default_value = DEFAULT_HTTP_ADDR)]
        http: SocketAddr,
        #[arg(long, default_value = ".")]
        out: PathBuf,
        /// Take protocol events from the input stream instead of the console.
        #[arg(long)]
        passthrough: bool,
    },
    /// Re-emit a session log at recorded pace.
    Replay {
        log: PathBuf,
        #[arg(long, default_value = "1")]
        speed: ReplaySpeed,
        /// Send to a recorder instead of stdout.
        #[arg(long)]
        emit: Option<SocketAddr>,
    },
    /// Compute per-task metrics and group summaries from session logs.
    Analyze {
        #[arg(required = true)]
        logs: Vec<PathBuf>,
        #[arg(long, default_value = "1..5")]
        tasks: String,
        #[arg(long, default_value = "results")]
        out: PathBuf,
        #[arg(long, default_value_t = DEFAULT_EXPERT_THRESHOLD_HOURS)]
        expert_threshold_hours: f64,
    },
}

#[tokio::main]
async fn main() -> Result<()> {
    match Cli::parse().cmd {
        Cmd::Simulate { config, out, speed } => {
            let cfg = match config {
                Some(p) => simulate::load_config(&p)?,
                None => simulate::SimulateConfig::default(),
            };
            let n = simulate::run(&cfg, simulate::Output::parse(&out), speed).await?;
            eprintln!("wrote {n} records to {out}");
        }
        Cmd::Record { session, listen, http, out, passthrough } => {
            let f = server::load_session_file(&session)?;
            let mut cfg = server::ServerConfig::new(f.meta, out, listen, http);
            cfg.protocol = f.protocol;
            if passthrough {
                cfg.mode = LiveMode::Passthrough;
            }
            let mut running = server::start(cfg).await?;
            eprintln!(
                "recording to {}; ingest on {}, console on http://{}",
                running.log_path.display(),
                running.ingest_addr,
                running.http_addr
            );
            let stopped = tokio::select! {
                r = running.wait() => Some(r),
                _ = tokio::signal::ctrl_c() => None,
            };
            let summary = match stopped {
                Some(r) => r?,
                None => running.stop().await?,
            };
            let s = &summary.stats;
            eprintln!(
                "stopped: {} received, {} logged, {} decode errors, {} late",
                s.received, s.logged, s.decode_errors, s.dropped_late
            );
            if let Some(a) = &summary.log_alarm {
                eprintln!("log alarm: {a}");
            }
        }
        Cmd::Replay { log, speed, emit } => {
            let target = emit.map_or(replay::Target::Stdout, replay::Target::Tcp);
            let (_, n) = replay::run(&log, speed, target).await?;
            eprintln!("replayed {n} records");
        }
        Cmd::Analyze { logs, tasks, out, expert_threshold_hours } => {
            let tasks = analyze::parse_tasks(&tasks)?;
            let files = analyze::run(&logs, &out, tasks, expert_threshold_hours)?;
            eprintln!("wrote {} files to {}", files.len(), out.display());
        }
    }
    Ok(())
}
