//! Line-delimited episode traces for replay and debugging.

use std::io::{self, Write};

use serde::{Deserialize, Serialize};

use super::{CommMask, EpisodeInfo, StepResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub episode: u64,
    pub step: usize,
    pub actions: Vec<usize>,
    pub rewards: Vec<f64>,
    pub done: bool,
    pub alive: Vec<bool>,
    /// Directed `(sender, receiver)` pairs.
    pub comm: Vec<(usize, usize)>,
    pub info: EpisodeInfo,
    /// Text picture of the state after the step.
    pub render: String,
}

impl TraceRecord {
    pub fn from_step(
        episode: u64,
        step: usize,
        actions: &[usize],
        r: &StepResult,
        render: String,
    ) -> Self {
        Self {
            episode,
            step,
            actions: actions.to_vec(),
            rewards: r.rewards.clone(),
            done: r.done,
            alive: r.alive.clone(),
            comm: mask_edges(&r.comm_mask),
            info: r.info.clone(),
            render,
        }
    }
}

pub fn mask_edges(mask: &CommMask) -> Vec<(usize, usize)> {
    mask.iter()
        .enumerate()
        .flat_map(|(i, row)| {
            row.iter()
                .enumerate()
                .filter(|(_, &b)| b)
                .map(move |(j, _)| (i, j))
        })
        .collect()
}

pub struct TraceWriter<W: Write> {
    out: W,
}

impl<W: Write> TraceWriter<W> {
    pub fn new(out: W) -> Self {
        Self { out }
    }

    pub fn write(&mut self, rec: &TraceRecord) -> io::Result<()> {
        serde_json::to_writer(&mut self.out, rec)?;
        self.out.write_all(b"\n")
    }

    pub fn into_inner(self) -> W {
        self.out
    }
}

/// Parses one trace line, checking that per-agent fields agree in length
/// and that every edge names a listed agent.
pub fn parse_trace_line(line: &str) -> Result<TraceRecord, String> {
    let rec: TraceRecord = serde_json::from_str(line).map_err(|e| e.to_string())?;
    let n = rec.alive.len();
    if rec.actions.len() != n || rec.rewards.len() != n {
        return Err("per-agent fields disagree in length".into());
    }
    if rec.comm.iter().any(|&(i, j)| i >= n || j >= n || i == j) {
        return Err("communication edge out of range".into());
    }
    Ok(rec)
}
