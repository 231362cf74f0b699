//! Trace files: one JSON object per line, a header first, then one
//! record per (round, worker). Round 0 carries the initial models;
//! training rounds are 1-based. The logical trace is timing-free —
//! the simulator attaches wall-clock times afterwards.

use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::{CoreError, Result};
use crate::gossip::ProviderEntry;
use crate::ids::WorkerId;
use crate::netsim::InFlow;

pub const TRACE_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceHeader {
    pub version: u32,
    /// The exact configuration the run executed (with the resolved
    /// FedAvg server filled in, when applicable).
    pub config: RunConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub round: u64,
    pub worker: WorkerId,
    pub loss: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub accuracy: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub suboptimality: Option<f64>,
    /// Who served each (segment, replica) slot this round.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub providers: Vec<ProviderEntry>,
    /// Bytes this worker received, per source.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub flow_bytes: Vec<InFlow>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
    pub rng_checkpoint: u64,
    /// Post-aggregation model, present when the run records models.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<Vec<f64>>,
    /// Pre-aggregation (post local update) model.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model_post_update: Option<Vec<f64>>,
    /// Distance to the weighted mean of all post-update models.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dist_to_oracle: Option<f64>,
}

/// A newcomer admitted at the start of `round`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JoinRecord {
    pub round: u64,
    pub worker: WorkerId,
    pub weight: u64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub providers: Vec<ProviderEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum TraceLine {
    Header(TraceHeader),
    Record(TraceRecord),
    Join(JoinRecord),
}

pub fn write_trace(
    path: impl AsRef<Path>,
    header: &TraceHeader,
    lines: &[TraceLine],
) -> Result<()> {
    let file = std::fs::File::create(path)?;
    let mut out = BufWriter::new(file);
    serde_json::to_writer(&mut out, &TraceLine::Header(header.clone()))?;
    out.write_all(b"\n")?;
    for line in lines {
        if matches!(line, TraceLine::Header(_)) {
            return Err(CoreError::Trace("duplicate header line".into()));
        }
        serde_json::to_writer(&mut out, line)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_trace(path: impl AsRef<Path>) -> Result<(TraceHeader, Vec<TraceLine>)> {
    let file = std::fs::File::open(&path)?;
    let reader = BufReader::new(file);
    let mut header: Option<TraceHeader> = None;
    let mut lines = Vec::new();
    for (idx, raw) in reader.lines().enumerate() {
        let raw = raw?;
        if raw.trim().is_empty() {
            continue;
        }
        let line: TraceLine = serde_json::from_str(&raw)
            .map_err(|e| CoreError::Trace(format!("line {}: {e}", idx + 1)))?;
        match line {
            TraceLine::Header(h) => {
                if header.is_some() {
                    return Err(CoreError::Trace(format!("line {}: duplicate header", idx + 1)));
                }
                if h.version != TRACE_VERSION {
                    return Err(CoreError::Trace(format!(
                        "unsupported trace version {}, expected {TRACE_VERSION}",
                        h.version
                    )));
                }
                if !lines.is_empty() {
                    return Err(CoreError::Trace("header must be the first line".into()));
                }
                header = Some(h);
            }
            other => {
                if header.is_none() {
                    return Err(CoreError::Trace("trace does not start with a header".into()));
                }
                lines.push(other);
            }
        }
    }
    let header = header.ok_or_else(|| CoreError::Trace("empty trace file".into()))?;
    Ok((header, lines))
}
