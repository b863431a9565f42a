//! Compute-to-target, task affinity and hardness.

use serde::{Deserialize, Serialize};

use std::collections::BTreeMap;

use super::config::RunConfig;
use super::flops::profile_step_flops;
use super::runlog::RunRecord;
use crate::error::{Error, Result};
use crate::paradigm::Paradigm;
use crate::tasks::{Task, TaskConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    /// Lower is better (e.g. MSE).
    AtMost,
    /// Higher is better (e.g. accuracy).
    AtLeast,
}

impl Direction {
    pub fn reached(self, value: f64, threshold: f64) -> bool {
        match self {
            Direction::AtMost => value <= threshold,
            Direction::AtLeast => value >= threshold,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Threshold {
    pub metric: String,
    pub value: f64,
    pub direction: Direction,
}

/// Task default: MSE ≤ 0.5 / 0.2 / 1.0 for ICL d = 20 / 15 / 10, and 95%
/// accuracy for path-finding (exact match) and Sudoku (solve rate).
pub fn default_threshold(task: &TaskConfig) -> Result<Threshold> {
    let t = |m: &str, v, d| Threshold { metric: m.into(), value: v, direction: d };
    match task {
        TaskConfig::Icl(c) => match c.d {
            20 => Ok(t("mse", 0.5, Direction::AtMost)),
            15 => Ok(t("mse", 0.2, Direction::AtMost)),
            10 => Ok(t("mse", 1.0, Direction::AtMost)),
            d => Err(Error::Config(format!("no default ICL threshold for d={d}; set `threshold`"))),
        },
        TaskConfig::StarGraph(_) => Ok(t("exact_match", 0.95, Direction::AtLeast)),
        TaskConfig::Sudoku { .. } => Ok(t("solve_rate", 0.95, Direction::AtLeast)),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ComputeToTarget {
    pub flops: f64,
    pub censored: bool,
}

/// First compute at which `(flops, metric)` points cross the threshold,
/// interpolated linearly in log10-compute between the bracketing points.
/// A bracket starting at zero compute is interpolated linearly instead.
/// Never crossing yields `(c_max, censored)`.
pub fn compute_to_target(points: &[(u64, f64)], threshold: f64, direction: Direction, c_max: f64) -> ComputeToTarget {
    for (i, &(c1, m1)) in points.iter().enumerate() {
        if !direction.reached(m1, threshold) {
            continue;
        }
        if i == 0 || m1 == threshold {
            return ComputeToTarget { flops: c1 as f64, censored: false };
        }
        let (c0, m0) = points[i - 1];
        let frac = if m1 == m0 { 1.0 } else { ((m0 - threshold) / (m0 - m1)).clamp(0.0, 1.0) };
        let flops = if c0 == 0 {
            frac * c1 as f64
        } else {
            let (l0, l1) = ((c0 as f64).log10(), (c1 as f64).log10());
            10f64.powf(l0 + frac * (l1 - l0))
        };
        return ComputeToTarget { flops, censored: false };
    }
    ComputeToTarget { flops: c_max, censored: true }
}

/// [`compute_to_target`] over the records of one run.
pub fn run_compute_to_target(records: &[RunRecord], threshold: &Threshold, c_max: f64) -> ComputeToTarget {
    let pts: Vec<(u64, f64)> = records
        .iter()
        .filter_map(|r| r.metrics.get(&threshold.metric).map(|&v| (r.cumulative_flops, v)))
        .collect();
    compute_to_target(&pts, threshold.value, threshold.direction, c_max)
}

/// Geometric mean over seeds; censored if any seed is.
pub fn aggregate(seeds: &[ComputeToTarget]) -> Option<ComputeToTarget> {
    if seeds.is_empty() {
        return None;
    }
    let mean_log = seeds.iter().map(|c| c.flops.max(f64::MIN_POSITIVE).log10()).sum::<f64>() / seeds.len() as f64;
    Some(ComputeToTarget { flops: 10f64.powf(mean_log), censored: seeds.iter().any(|c| c.censored) })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AffinityReport {
    pub task: String,
    pub c_ar: f64,
    pub c_diff: f64,
    /// log10(C_AR / C_Diff); positive favours diffusion.
    pub affinity: f64,
    /// log10 of the cheaper paradigm's cost.
    pub hardness: f64,
    pub ar_censored: bool,
    pub diff_censored: bool,
}

pub fn affinity(task: &str, ar: ComputeToTarget, diff: ComputeToTarget) -> AffinityReport {
    AffinityReport {
        task: task.to_string(),
        c_ar: ar.flops,
        c_diff: diff.flops,
        affinity: ar.flops.log10() - diff.flops.log10(),
        hardness: ar.flops.min(diff.flops).log10(),
        ar_censored: ar.censored,
        diff_censored: diff.censored,
    }
}

/// Compute-to-target of one run, censored at `k_max · C_step`.
pub fn run_cost(cfg: &RunConfig, records: &[RunRecord], threshold: &Threshold) -> ComputeToTarget {
    let c_step = profile_step_flops(&cfg.model_config(), cfg.seq_len(), cfg.batch_size);
    run_compute_to_target(records, threshold, cfg.resolved_k_max() as f64 * c_step as f64)
}

/// Affinity of `task` from a set of runs. Runs sharing a config are seeds and
/// are aggregated; among several configs of the compared paradigm the
/// cheapest uncensored one represents it. `diff = None` compares AR against
/// the cheapest diffusion paradigm.
pub fn task_affinity(
    task: Task,
    runs: &[(RunConfig, Vec<RunRecord>)],
    diff: Option<Paradigm>,
    threshold: Option<f64>,
) -> Result<(AffinityReport, Threshold)> {
    let mut groups: BTreeMap<(Paradigm, String), Vec<ComputeToTarget>> = BTreeMap::new();
    let mut chosen: Option<Threshold> = None;
    for (cfg, records) in runs.iter().filter(|(c, _)| c.task.task() == task) {
        let mut th = default_threshold(&cfg.task)?;
        if let Some(v) = threshold.or(cfg.threshold) {
            th.value = v;
        }
        match &chosen {
            None => chosen = Some(th.clone()),
            Some(c) if *c != th => {
                return Err(Error::Config(format!("runs disagree on the target threshold: {c:?} vs {th:?}")))
            }
            _ => {}
        }
        groups.entry((cfg.paradigm, cfg.short_hash())).or_default().push(run_cost(cfg, records, &th));
    }
    let th = chosen.ok_or_else(|| Error::Config(format!("no {task} runs")))?;
    let pick = |want: &dyn Fn(Paradigm) -> bool| {
        groups
            .iter()
            .filter(|((p, _), _)| want(*p))
            .filter_map(|(_, v)| aggregate(v))
            .min_by(|a, b| (a.censored, a.flops).partial_cmp(&(b.censored, b.flops)).expect("finite compute"))
    };
    let ar = pick(&|p| p == Paradigm::Ar).ok_or_else(|| Error::Config("no AR runs".into()))?;
    let dm = match diff {
        Some(d) => pick(&|p| p == d),
        None => pick(&|p| p.is_diffusion()),
    }
    .ok_or_else(|| Error::Config("no diffusion runs".into()))?;
    Ok((affinity(task.name(), ar, dm), th))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn interpolation_and_censoring() {
        let pts = [(1_000_000_000, 0.8), (2_000_000_000, 0.2)];
        let c = compute_to_target(&pts, 0.5, Direction::AtMost, 1e12);
        assert!(!c.censored);
        assert!((c.flops - 2f64.sqrt() * 1e9).abs() < 1.0);
        let never = compute_to_target(&pts, 0.1, Direction::AtMost, 7e11);
        assert_eq!(never, ComputeToTarget { flops: 7e11, censored: true });
        let exact = compute_to_target(&pts, 0.2, Direction::AtMost, 1e12);
        assert_eq!(exact.flops, 2e9);
        let from_zero = compute_to_target(&[(0, 0.0), (100, 1.0)], 0.5, Direction::AtLeast, 1e3);
        assert_eq!(from_zero.flops, 50.0);
    }

    #[test]
    fn affinity_formulas() {
        let c = |f| ComputeToTarget { flops: f, censored: false };
        assert_eq!(affinity("t", c(1e9), c(1e9)).affinity, 0.0);
        let r = affinity("t", c(1e10), c(1e9));
        assert!((r.affinity - 1.0).abs() < 1e-12);
        assert!((r.hardness - 9.0).abs() < 1e-12);
        let agg = aggregate(&[c(1e8), c(1e10)]).unwrap();
        assert!((agg.flops - 1e9).abs() < 1e-3);
    }
}
