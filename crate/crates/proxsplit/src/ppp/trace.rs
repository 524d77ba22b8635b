//! Per-iteration records produced by the fixed-point loops, with CSV and JSON
//! serialization.

use std::io::Write;
use std::path::Path;

use nalgebra::DVector;
use serde::Serialize;

use crate::error::Result;
use crate::spaces::BlockVector;

/// How a run ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum TraceStatus {
    /// The stopping rule was met.
    Converged,
    /// The iteration budget ran out first; reported, not fatal.
    MaxIters,
}

/// One row of a trace.
#[derive(Debug, Clone, Serialize)]
pub struct TraceRecord {
    pub k: usize,
    /// Fixed-point residual ‖Tu − u‖ (Euclidean; in reduced runs this equals
    /// the M-seminorm residual of the block iteration).
    pub residual: f64,
    /// Residual measured in the M-seminorm.
    pub m_residual: f64,
    /// Distance to a caller-supplied reference point, when one was given.
    pub dist_ref: Option<f64>,
    /// Wallclock seconds since the start of the run.
    pub time_s: f64,
}

/// Full record of one fixed-point run.
#[derive(Debug, Clone)]
pub struct IterationTrace {
    pub records: Vec<TraceRecord>,
    pub status: TraceStatus,
    /// Final iterate of a block-space run.
    pub final_full: Option<BlockVector>,
    /// Final iterate of a reduced-space run.
    pub final_reduced: Option<DVector<f64>>,
    /// Block-space snapshots u⁰, u¹, … when recording was requested.
    pub snapshots_full: Option<Vec<BlockVector>>,
    /// Reduced-space snapshots when recording was requested.
    pub snapshots_reduced: Option<Vec<DVector<f64>>>,
}

impl IterationTrace {
    pub fn new(status: TraceStatus) -> Self {
        Self {
            records: Vec::new(),
            status,
            final_full: None,
            final_reduced: None,
            snapshots_full: None,
            snapshots_reduced: None,
        }
    }

    pub fn iterations(&self) -> usize {
        self.records.last().map_or(0, |r| r.k)
    }

    pub fn final_residual(&self) -> f64 {
        self.records.last().map_or(0.0, |r| r.residual)
    }

    pub fn residuals(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.residual).collect()
    }

    pub fn dist_refs(&self) -> Vec<f64> {
        self.records.iter().filter_map(|r| r.dist_ref).collect()
    }

    /// Writes `k,residual,m_residual,dist_ref,time_s` rows. The timing column
    /// is left empty unless `include_timing` is set, keeping output
    /// byte-identical across repeated runs.
    pub fn write_csv<W: Write>(&self, mut out: W, include_timing: bool) -> Result<()> {
        writeln!(out, "k,residual,m_residual,dist_ref,time_s")?;
        for r in &self.records {
            let dist = r.dist_ref.map_or(String::new(), |d| format!("{d:.17e}"));
            let time = if include_timing {
                format!("{:.6}", r.time_s)
            } else {
                String::new()
            };
            writeln!(
                out,
                "{},{:.17e},{:.17e},{},{}",
                r.k, r.residual, r.m_residual, dist, time
            )?;
        }
        Ok(())
    }

    pub fn save_csv(&self, path: &Path, include_timing: bool) -> Result<()> {
        let file = std::fs::File::create(path)?;
        self.write_csv(std::io::BufWriter::new(file), include_timing)
    }

    /// JSON view mirroring the CSV rows plus status and the final iterate.
    pub fn to_json(&self, include_timing: bool) -> serde_json::Value {
        let records: Vec<serde_json::Value> = self
            .records
            .iter()
            .map(|r| {
                serde_json::json!({
                    "k": r.k,
                    "residual": r.residual,
                    "m_residual": r.m_residual,
                    "dist_ref": r.dist_ref,
                    "time_s": if include_timing { Some(r.time_s) } else { None },
                })
            })
            .collect();
        let final_point: Option<Vec<f64>> = self
            .final_reduced
            .as_ref()
            .map(|w| w.iter().cloned().collect())
            .or_else(|| {
                self.final_full
                    .as_ref()
                    .map(|u| u.flatten().iter().cloned().collect())
            });
        serde_json::json!({
            "status": self.status,
            "iterations": self.iterations(),
            "final_residual": self.final_residual(),
            "final_point": final_point,
            "records": records,
        })
    }

    pub fn save_json(&self, path: &Path, include_timing: bool) -> Result<()> {
        let file = std::fs::File::create(path)?;
        serde_json::to_writer_pretty(std::io::BufWriter::new(file), &self.to_json(include_timing))?;
        Ok(())
    }
}
