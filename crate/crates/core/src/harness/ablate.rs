//! Sweeps: the cross product of `sweep.<key>` axes, one run per config and seed.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::config::{expand_sweep, RunConfig};
use super::eval::primary_metric;
use super::runlog::RunRecord;
use super::train::{run_dir, train, TrainOptions};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::tasks::dataset::write_atomic;

#[derive(Debug, Clone)]
pub struct SweepRun {
    pub config: RunConfig,
    pub seed: u64,
    pub dir: PathBuf,
    pub records: Vec<RunRecord>,
}

impl SweepRun {
    pub fn final_metric(&self) -> Option<f64> {
        self.records.last().and_then(|r| r.metrics.get(primary_metric(&self.config)).copied())
    }
}

/// Keys that differ between the configs of a sweep.
pub fn varying_keys(configs: &[RunConfig]) -> Vec<String> {
    let maps: Vec<BTreeMap<String, String>> = configs.iter().map(RunConfig::to_kv).collect();
    let Some(first) = maps.first() else { return Vec::new() };
    first.keys().filter(|k| maps.iter().any(|m| m.get(*k) != first.get(*k))).cloned().collect()
}

/// Runs (or resumes) every point of the sweep under `root/<hash>/seed-<n>/`
/// and writes `root/results.csv`. Runs fan out over `exec`; each run trains
/// sequentially inside its worker.
pub fn ablate(sweep_text: &str, root: &Path, exec: Execution, verbose: bool) -> Result<Vec<SweepRun>> {
    let (configs, seeds) = expand_sweep(sweep_text)?;
    if configs.iter().any(|c| c.coords) && configs.iter().any(|c| c.task.coords().is_none()) {
        return Err(Error::Config("coordinate embeddings only apply to Sudoku".into()));
    }
    let jobs: Vec<(RunConfig, u64)> = configs.iter().flat_map(|c| seeds.iter().map(move |&s| (c.clone(), s))).collect();
    let inner = if exec.is_parallel() && jobs.len() > 1 { Execution::Sequential } else { exec };
    let runs = exec.map(&jobs, |_, (cfg, seed)| -> Result<SweepRun> {
        let dir = run_dir(root, cfg, *seed);
        let opts = TrainOptions { exec: inner, resume: true, verbose, stop_after: None };
        let out = train(cfg, *seed, &dir, opts)?;
        Ok(SweepRun { config: cfg.clone(), seed: *seed, dir, records: out.records })
    });
    let runs = runs.into_iter().collect::<Result<Vec<_>>>()?;

    let keys = varying_keys(&configs);
    let mut csv = String::from("hash,seed");
    for k in &keys {
        let _ = write!(csv, ",{k}");
    }
    csv.push_str(",step,metric,value\n");
    for r in &runs {
        let kv = r.config.to_kv();
        let _ = write!(csv, "{},{}", r.config.short_hash(), r.seed);
        for k in &keys {
            let _ = write!(csv, ",{}", kv.get(k).map_or("", String::as_str));
        }
        let last = r.records.last().map_or(0, |x| x.step);
        let metric = primary_metric(&r.config);
        let _ = writeln!(csv, ",{last},{metric},{}", r.final_metric().map_or("nan".into(), |v| v.to_string()));
    }
    std::fs::create_dir_all(root)?;
    write_atomic(&root.join("results.csv"), csv.as_bytes())?;
    Ok(runs)
}
