//! Generators, evaluators and dataset files for the three tasks.

pub mod dataset;
pub mod icl;
pub mod star_graph;
pub mod sudoku;

use std::collections::{BTreeMap, VecDeque};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::backbone::CoordinateIds;
use crate::error::{Error, Result};
use crate::rng;
use crate::seqcore::{HybridSequence, TokenSequence, Vocab};

pub use dataset::{read_jsonl, read_meta, write_jsonl, write_meta, Example, Meta};
pub use icl::{eval_icl_mse, gen_icl, IclConfig, IclInstance};
pub use star_graph::{eval_path, gen_star_graph, StarGraphConfig, StarGraphInstance};
pub use sudoku::{eval_sudoku, gen_sudoku, SudokuInstance, SudokuScore};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Icl,
    StarGraph,
    Sudoku,
}

impl Task {
    pub fn name(self) -> &'static str {
        match self {
            Task::Icl => "icl",
            Task::StarGraph => "star",
            Task::Sudoku => "sudoku",
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "icl" => Ok(Task::Icl),
            "star" | "star_graph" | "star-graph" | "path" => Ok(Task::StarGraph),
            "sudoku" => Ok(Task::Sudoku),
            other => Err(Error::Config(format!("unknown task {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum TaskConfig {
    Icl(IclConfig),
    StarGraph(StarGraphConfig),
    Sudoku { givens: (usize, usize) },
}

impl TaskConfig {
    pub fn task(&self) -> Task {
        match self {
            TaskConfig::Icl(_) => Task::Icl,
            TaskConfig::StarGraph(_) => Task::StarGraph,
            TaskConfig::Sudoku { .. } => Task::Sudoku,
        }
    }

    pub fn default_for(task: Task) -> Self {
        match task {
            Task::Icl => TaskConfig::Icl(IclConfig::default()),
            Task::StarGraph => TaskConfig::StarGraph(StarGraphConfig::default()),
            Task::Sudoku => TaskConfig::Sudoku { givens: (30, 50) },
        }
    }

    /// Token vocabulary; `None` for the continuous task.
    pub fn vocab(&self) -> Option<Vocab> {
        match self {
            TaskConfig::Icl(_) => None,
            TaskConfig::StarGraph(c) => Some(c.vocab()),
            TaskConfig::Sudoku { .. } => Some(sudoku::vocab()),
        }
    }

    pub fn coords(&self) -> Option<CoordinateIds> {
        matches!(self, TaskConfig::Sudoku { .. }).then(sudoku::coords)
    }

    /// Sequence length before any block padding.
    pub fn seq_len(&self) -> usize {
        match self {
            TaskConfig::Icl(c) => 2 * (c.p + c.r),
            TaskConfig::StarGraph(c) => c.prompt_len() + c.response_len(),
            TaskConfig::Sudoku { .. } => 162,
        }
    }

    pub fn prompt_len(&self) -> usize {
        match self {
            TaskConfig::Icl(c) => 2 * c.p,
            TaskConfig::StarGraph(c) => c.prompt_len(),
            TaskConfig::Sudoku { .. } => 81,
        }
    }

    /// Example `index` of `split`, drawn from its own derived stream.
    pub fn generate(&self, seed: u64, split: &str, index: u64) -> Result<Example> {
        let mut r = rng::stream(seed, &format!("{}/{split}", self.task()), index);
        Ok(match self {
            TaskConfig::Icl(c) => {
                let inst = gen_icl(c, &mut r)?;
                Example::Hybrid { seq: inst.seq, w: Some(inst.w) }
            }
            TaskConfig::StarGraph(c) => Example::Tokens(gen_star_graph(c, &mut r)?.seq),
            TaskConfig::Sudoku { givens } => Example::Tokens(gen_sudoku(&mut r, *givens)?.to_sequence()),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct VerifyReport {
    pub checked: usize,
    pub violations: Vec<String>,
}

impl VerifyReport {
    pub fn ok(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Breadth-first search over directed edges; `None` when unreachable.
pub fn bfs_path(edges: &[(u32, u32)], start: u32, goal: u32) -> Option<Vec<u32>> {
    let mut adj: BTreeMap<u32, Vec<u32>> = BTreeMap::new();
    for &(u, v) in edges {
        adj.entry(u).or_default().push(v);
    }
    let mut parent = BTreeMap::from([(start, start)]);
    let mut queue = VecDeque::from([start]);
    while let Some(u) = queue.pop_front() {
        if u == goal {
            let mut path = vec![goal];
            let mut v = goal;
            while v != start {
                v = parent[&v];
                path.push(v);
            }
            path.reverse();
            return Some(path);
        }
        for &v in adj.get(&u).map(|v| v.as_slice()).unwrap_or(&[]) {
            if let std::collections::btree_map::Entry::Vacant(e) = parent.entry(v) {
                e.insert(u);
                queue.push_back(v);
            }
        }
    }
    None
}

fn verify_star(c: &StarGraphConfig, seq: &TokenSequence) -> std::result::Result<(), String> {
    let vocab = c.vocab();
    seq.validate_clean(&vocab).map_err(|e| e.to_string())?;
    let (edges, start, goal) = star_graph::parse_prompt(c, seq.prompt()).map_err(|e| e.to_string())?;
    if edges.len() != c.degree * c.length {
        return Err(format!("{} edges, expected {}", edges.len(), c.degree * c.length));
    }
    let mut out_deg: BTreeMap<u32, usize> = BTreeMap::new();
    let mut in_deg: BTreeMap<u32, usize> = BTreeMap::new();
    for &(u, v) in &edges {
        *out_deg.entry(u).or_default() += 1;
        *in_deg.entry(v).or_default() += 1;
    }
    if out_deg.get(&start) != Some(&c.degree) || in_deg.contains_key(&start) {
        return Err("start is not the centre of the star".into());
    }
    if in_deg.values().any(|&d| d != 1) || out_deg.iter().any(|(&u, &d)| u != start && d != 1) {
        return Err("graph is not a union of disjoint branches".into());
    }
    let leaves: Vec<u32> = in_deg.keys().copied().filter(|v| !out_deg.contains_key(v)).collect();
    if leaves.len() != c.degree || !leaves.contains(&goal) {
        return Err("goal is not the end of exactly one branch".into());
    }
    let path = bfs_path(&edges, start, goal).ok_or("goal unreachable")?;
    let pad = vocab.pad_id();
    let response: Vec<u32> = seq.response().iter().copied().filter(|&t| Some(t) != pad).collect();
    if response != path {
        return Err(format!("stored path {response:?} differs from search result {path:?}"));
    }
    Ok(())
}

fn verify_icl(c: &IclConfig, seq: &HybridSequence, w: Option<&[f64]>) -> std::result::Result<(), String> {
    seq.validate().map_err(|e| e.to_string())?;
    if seq.d != c.d || seq.prompt_pairs() != c.p || seq.query_pairs() != c.r {
        return Err(format!(
            "shape d={} P={} R={} does not match config d={} P={} R={}",
            seq.d,
            seq.prompt_pairs(),
            seq.query_pairs(),
            c.d,
            c.p,
            c.r
        ));
    }
    if let Some(w) = w {
        if w.len() != c.d {
            return Err("w has the wrong dimension".into());
        }
        for (i, pair) in seq.cells.chunks(2).enumerate() {
            let x = pair[0].as_vector().ok_or("x cell is not a vector")?;
            let y = pair[1].as_scalar().ok_or("y cell is not a scalar")?;
            if y - icl::dot(w, x) != 0.0 {
                return Err(format!("pair {i}: y differs from wᵀx"));
            }
        }
    }
    Ok(())
}

/// Re-checks every task invariant of a dataset.
pub fn verify(config: &TaskConfig, examples: &[Example]) -> VerifyReport {
    let mut report = VerifyReport { checked: examples.len(), violations: Vec::new() };
    for (i, ex) in examples.iter().enumerate() {
        let res = match (config, ex) {
            (TaskConfig::Icl(c), Example::Hybrid { seq, w }) => verify_icl(c, seq, w.as_deref()),
            (TaskConfig::StarGraph(c), Example::Tokens(seq)) => verify_star(c, seq),
            (TaskConfig::Sudoku { .. }, Example::Tokens(seq)) => SudokuInstance::from_sequence(seq)
                .map_err(|e| e.to_string())
                .and_then(|inst| {
                    if sudoku::completes(&inst.prompt, &inst.solution) {
                        Ok(())
                    } else {
                        Err("solution is invalid or contradicts the givens".into())
                    }
                }),
            _ => Err(format!("record kind does not match task {}", config.task())),
        };
        if let Err(e) = res {
            report.violations.push(format!("record {i}: {e}"));
        }
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generators_are_independent_of_interleaving() {
        let star = TaskConfig::default_for(Task::StarGraph);
        let icl = TaskConfig::default_for(Task::Icl);
        let a = star.generate(3, "train", 5).unwrap();
        let _ = icl.generate(3, "train", 5).unwrap();
        assert_eq!(a, star.generate(3, "train", 5).unwrap());
        assert_ne!(a, star.generate(3, "valid", 5).unwrap());
    }

    #[test]
    fn verify_catches_corruption() {
        for task in [Task::Icl, Task::StarGraph, Task::Sudoku] {
            let cfg = TaskConfig::default_for(task);
            let mut data: Vec<Example> = (0..3).map(|i| cfg.generate(0, "train", i).unwrap()).collect();
            assert!(verify(&cfg, &data).ok(), "{task}: {:?}", verify(&cfg, &data).violations);
            match &mut data[1] {
                Example::Tokens(seq) => {
                    let n = seq.len();
                    seq.tokens.swap(n - 1, n - 2);
                }
                Example::Hybrid { seq, .. } => seq.cells[1] = crate::seqcore::Cell::Scalar(1e9),
            }
            let r = verify(&cfg, &data);
            assert_eq!(r.violations.len(), 1, "{task}");
        }
    }

    #[test]
    fn bfs_examples() {
        let edges = [(1, 2), (2, 3), (1, 4)];
        assert_eq!(bfs_path(&edges, 1, 3), Some(vec![1, 2, 3]));
        assert_eq!(bfs_path(&edges, 3, 1), None);
        assert_eq!(bfs_path(&edges, 1, 1), Some(vec![1]));
    }

    #[test]
    fn task_names_parse() {
        for t in [Task::Icl, Task::StarGraph, Task::Sudoku] {
            assert_eq!(t.name().parse::<Task>().unwrap(), t);
        }
        assert!("chess".parse::<Task>().is_err());
    }
}
