use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use gazefuse_core::analysis::{analyze_sessions, export, AnalysisConfig};
use gazefuse_core::log::read_log;

/// Parses `1..5`, `2..=4`, `1,3,5` or a single task number.
pub fn parse_tasks(s: &str) -> Result<Vec<u8>> {
    let range = |a: &str, b: &str| -> Result<Vec<u8>> {
        let (a, b): (u8, u8) = (a.trim().parse()?, b.trim().parse()?);
        Ok((a..=b).collect())
    };
    let tasks = if let Some((a, b)) = s.split_once("..=") {
        range(a, b)?
    } else if let Some((a, b)) = s.split_once("..") {
        range(a, b)?
    } else {
        s.split(',').map(|t| t.trim().parse::<u8>()).collect::<Result<_, _>>()?
    };
    if tasks.is_empty() || tasks.iter().any(|t| !(1..=5).contains(t)) {
        bail!("tasks must lie in 1..5, got `{s}`");
    }
    Ok(tasks)
}

pub fn run(logs: &[PathBuf], out: &Path, tasks: Vec<u8>, expert_threshold_hours: f64) -> Result<Vec<PathBuf>> {
    let cfg = AnalysisConfig { tasks, expert_threshold_hours, ..Default::default() };
    let mut parsed = Vec::new();
    for p in logs {
        let log = read_log(p).with_context(|| format!("reading {}", p.display()))?;
        if let Some((seq, line, reason)) = &log.corruption {
            eprintln!("warning: {} is damaged at line {line} (last good seq {seq:?}): {reason}", p.display());
        }
        parsed.push(log);
    }
    let mut sessions = Vec::new();
    for (p, r) in logs.iter().zip(analyze_sessions(&parsed, &cfg)) {
        let s = r.with_context(|| format!("analyzing {}", p.display()))?;
        for n in &s.missing_tasks {
            eprintln!("warning: {}: no completed interval for task {n}", p.display());
        }
        for t in &s.tasks {
            for issue in &t.issues {
                eprintln!("note: {} task {}: {issue}", p.display(), t.task);
            }
        }
        sessions.push(s);
    }
    let files = export(&sessions, &cfg, out).with_context(|| format!("writing to {}", out.display()))?;
    Ok(files)
}
