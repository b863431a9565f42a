//! Run records (JSONL) and plot data (CSV).

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs::OpenOptions;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub step: u64,
    /// Mean training loss since the previous record; `None` before any update.
    pub train_loss: Option<f64>,
    pub metrics: BTreeMap<String, f64>,
    pub cumulative_flops: u64,
    /// Seconds since the run (or resumed segment) started.
    pub wall_time: f64,
    pub seed: u64,
    pub config_hash: String,
    pub paradigm: String,
    pub task: String,
    /// Set on the record written just before aborting on a non-finite loss.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diagnostic: Option<String>,
}

impl RunRecord {
    /// Equality that ignores wall time.
    pub fn same_outcome(&self, other: &Self) -> bool {
        Self { wall_time: 0.0, ..self.clone() } == Self { wall_time: 0.0, ..other.clone() }
    }
}

pub fn append_record(path: &Path, rec: &RunRecord) -> Result<()> {
    let mut f = OpenOptions::new().create(true).append(true).open(path)?;
    let mut line = serde_json::to_string(rec)?;
    line.push('\n');
    f.write_all(line.as_bytes())?;
    f.flush()?;
    Ok(())
}

pub fn read_records(path: &Path) -> Result<Vec<RunRecord>> {
    let f = std::fs::File::open(path)?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line)
                .map_err(|e| Error::Format(format!("{}:{}: {e}", path.display(), i + 1)))?,
        );
    }
    Ok(out)
}

/// Checks the stream invariants: strictly increasing steps and
/// non-decreasing compute.
pub fn check_records(records: &[RunRecord]) -> Result<()> {
    for w in records.windows(2) {
        if w[1].step <= w[0].step {
            return Err(Error::Format(format!("step {} follows step {}", w[1].step, w[0].step)));
        }
        if w[1].cumulative_flops < w[0].cumulative_flops {
            return Err(Error::Format(format!("compute decreases at step {}", w[1].step)));
        }
    }
    Ok(())
}

/// `step,flops,metric,seed` rows for one metric; records missing it are skipped.
pub fn to_csv(records: &[RunRecord], metric: &str) -> String {
    let mut s = String::from("step,flops,metric,seed\n");
    for r in records {
        if let Some(v) = r.metrics.get(metric) {
            let _ = writeln!(s, "{},{},{},{}", r.step, r.cumulative_flops, v, r.seed);
        }
    }
    s
}
