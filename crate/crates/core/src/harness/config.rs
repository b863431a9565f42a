//! Flat `key = value` run configuration, presets and canonical hashing.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use sha2::{Digest, Sha256};

use crate::backbone::{default_ffn_hidden, ModelConfig};
use crate::corruption::{MaskSchedule, ScheduleKind};
use crate::error::{Error, Result};
use crate::paradigm::Paradigm;
use crate::samplers::{DecodeConfig, UnmaskRule};
use crate::seqcore::BlockPartition;
use crate::tasks::{Task, TaskConfig};

/// Parses `key = value` lines; `#` starts a comment.
pub fn parse_kv(text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`, got {raw:?}", i + 1)))?;
        let (k, v) = (k.trim(), v.trim());
        if k.is_empty() {
            return Err(Error::Config(format!("line {}: empty key", i + 1)));
        }
        if out.insert(k.to_string(), v.to_string()).is_some() {
            return Err(Error::Config(format!("line {}: duplicate key {k:?}", i + 1)));
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub task: TaskConfig,
    pub paradigm: Paradigm,
    pub n_embd: usize,
    pub n_layer: usize,
    pub n_head: usize,
    /// 0 selects the default width.
    pub ffn_hidden: usize,
    pub coords: bool,
    pub steps: u64,
    pub batch_size: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub grad_clip: f64,
    /// 0 selects 1% of `steps`, at most every 500 steps.
    pub eval_every: u64,
    pub eval_size: usize,
    /// 0 only writes the final checkpoint.
    pub checkpoint_every: u64,
    pub tau_min: f64,
    pub tau_max: f64,
    pub mask_schedule: ScheduleKind,
    pub block_size: usize,
    pub t_inf: usize,
    pub unmask_rule: UnmaskRule,
    /// Compute ceiling in steps; 0 means `steps`.
    pub k_max: u64,
    /// Distinct training examples; 0 draws a fresh example every time.
    pub train_size: usize,
    pub valid_size: usize,
    /// Directory holding `train.jsonl` / `valid.jsonl`; empty generates in memory.
    pub data_dir: String,
    /// Override of the task's default target threshold.
    pub threshold: Option<f64>,
}

fn base(task: TaskConfig, paradigm: Paradigm) -> RunConfig {
    RunConfig {
        task,
        paradigm,
        n_embd: 192,
        n_layer: 8,
        n_head: 6,
        ffn_hidden: 0,
        coords: false,
        steps: 50_000,
        batch_size: 64,
        lr: 2e-4,
        beta1: 0.9,
        beta2: 0.95,
        eps: 1e-8,
        weight_decay: 0.01,
        grad_clip: 1.0,
        eval_every: 0,
        eval_size: 256,
        checkpoint_every: 0,
        tau_min: 0.1,
        tau_max: 0.9,
        mask_schedule: ScheduleKind::Uniform,
        block_size: 4,
        t_inf: 10,
        unmask_rule: UnmaskRule::LowConfidenceRemask,
        k_max: 0,
        train_size: 0,
        valid_size: 256,
        data_dir: String::new(),
        threshold: None,
    }
}

pub const PRESETS: &[&str] = &[
    "tiny-icl",
    "tiny-star",
    "tiny-sudoku",
    "desk-icl",
    "desk-star",
    "desk-sudoku",
    "full-icl",
    "full-star",
    "full-sudoku",
];

/// Named starting points. `tiny-*` finish in minutes on a CPU, `desk-*`
/// use the small models with shortened budgets, `full-*` the full budgets.
pub fn preset(name: &str) -> Result<RunConfig> {
    let (scale, task) = name
        .split_once('-')
        .ok_or_else(|| Error::Config(format!("unknown preset {name:?}")))?;
    let task: Task = task.parse()?;
    let mut c = base(TaskConfig::default_for(task), Paradigm::Mdm);
    match task {
        Task::Icl => {
            c.block_size = 4;
            c.eval_size = 512;
            c.valid_size = 3200;
        }
        Task::StarGraph => {
            c.block_size = 4;
            c.lr = 3e-4;
        }
        Task::Sudoku => {
            c.n_embd = 384;
            c.n_layer = 6;
            c.n_head = 6;
            c.coords = true;
            c.block_size = 9;
            c.lr = 3e-4;
        }
    }
    match (scale, task) {
        ("tiny", _) => {
            c.n_embd = if task == Task::Sudoku { 48 } else { 32 };
            c.n_layer = 2;
            c.n_head = 2;
            c.steps = 300;
            c.batch_size = 16;
            c.lr = 1e-3;
            c.eval_size = 32;
            c.valid_size = 32;
            c.train_size = 2_000;
            if let TaskConfig::StarGraph(s) = &mut c.task {
                s.degree = 2;
                s.length = 3;
                s.nodes = 20;
            }
            if let TaskConfig::Icl(i) = &mut c.task {
                i.d = 4;
                i.p = 8;
                i.r = 8;
            }
        }
        ("desk", Task::StarGraph) => {
            c.steps = 50_000;
            c.train_size = 200_000;
        }
        ("desk", Task::Icl) => c.steps = 300_000,
        ("desk", Task::Sudoku) => {
            c.steps = 100_000;
            c.train_size = 200_000;
        }
        ("full", Task::StarGraph) => {
            c.steps = 200_000;
            c.train_size = 800_000;
            c.k_max = 2_000_000;
        }
        ("full", Task::Icl) => {
            c.steps = 500_000;
            c.k_max = 2_000_000;
            c.eval_size = 3200;
            if let TaskConfig::Icl(i) = &mut c.task {
                i.d = 20;
            }
        }
        ("full", Task::Sudoku) => {
            c.steps = 200_000;
            c.train_size = 1_000_000;
            c.k_max = 2_000_000;
        }
        _ => return Err(Error::Config(format!("unknown preset {name:?}"))),
    }
    Ok(c)
}

fn num<T: std::str::FromStr>(k: &str, v: &str) -> Result<T> {
    v.parse().map_err(|_| Error::Config(format!("{k}: cannot parse {v:?}")))
}

fn flag(k: &str, v: &str) -> Result<bool> {
    match v.to_ascii_lowercase().as_str() {
        "true" | "on" | "yes" | "1" => Ok(true),
        "false" | "off" | "no" | "0" => Ok(false),
        _ => Err(Error::Config(format!("{k}: expected a boolean, got {v:?}"))),
    }
}

impl RunConfig {
    /// Builds a config from flat pairs. `preset` (default `tiny-<task>`)
    /// supplies every key not given explicitly; `task` picks the task.
    pub fn from_kv(kv: &BTreeMap<String, String>) -> Result<Self> {
        let name = match (kv.get("preset"), kv.get("task")) {
            (Some(p), _) => p.clone(),
            (None, Some(t)) => format!("tiny-{}", t.parse::<Task>()?.name()),
            (None, None) => return Err(Error::Config("config needs `task` or `preset`".into())),
        };
        let mut c = preset(&name)?;
        if let Some(t) = kv.get("task") {
            let task: Task = t.parse()?;
            if task != c.task.task() {
                c.task = TaskConfig::default_for(task);
            }
        }
        for (k, v) in kv {
            c.set(k, v)?;
        }
        c.ffn_hidden = c.resolved_ffn_hidden();
        c.eval_every = c.resolved_eval_every();
        c.k_max = c.resolved_k_max();
        c.validate()?;
        Ok(c)
    }

    pub fn parse(text: &str) -> Result<Self> {
        Self::from_kv(&parse_kv(text)?)
    }

    pub fn set(&mut self, k: &str, v: &str) -> Result<()> {
        match k {
            "preset" | "task" => {}
            "paradigm" => self.paradigm = v.parse()?,
            "n_embd" => self.n_embd = num(k, v)?,
            "n_layer" => self.n_layer = num(k, v)?,
            "n_head" => self.n_head = num(k, v)?,
            "ffn_hidden" => self.ffn_hidden = num(k, v)?,
            "coords" => self.coords = flag(k, v)?,
            "steps" => self.steps = num(k, v)?,
            "batch_size" => self.batch_size = num(k, v)?,
            "lr" => self.lr = num(k, v)?,
            "beta1" => self.beta1 = num(k, v)?,
            "beta2" => self.beta2 = num(k, v)?,
            "eps" => self.eps = num(k, v)?,
            "weight_decay" => self.weight_decay = num(k, v)?,
            "grad_clip" => self.grad_clip = num(k, v)?,
            "eval_every" => self.eval_every = num(k, v)?,
            "eval_size" => self.eval_size = num(k, v)?,
            "checkpoint_every" => self.checkpoint_every = num(k, v)?,
            "tau_min" => self.tau_min = num(k, v)?,
            "tau_max" => self.tau_max = num(k, v)?,
            "mask_schedule" => self.mask_schedule = v.parse()?,
            "block_size" => self.block_size = num(k, v)?,
            "t_inf" => self.t_inf = num(k, v)?,
            "unmask_rule" => {
                self.unmask_rule = match v {
                    "low_confidence" | "low_confidence_remask" => UnmaskRule::LowConfidenceRemask,
                    "top_k" | "top_k_per_step" => UnmaskRule::TopKPerStep,
                    _ => return Err(Error::Config(format!("unknown unmask rule {v:?}"))),
                }
            }
            "k_max" => self.k_max = num(k, v)?,
            "train_size" => self.train_size = num(k, v)?,
            "valid_size" => self.valid_size = num(k, v)?,
            "data_dir" => self.data_dir = v.to_string(),
            "threshold" => self.threshold = Some(num(k, v)?),
            _ => match (&mut self.task, k.split_once('.')) {
                (TaskConfig::Icl(c), Some(("icl", f))) => match f {
                    "d" => c.d = num(k, v)?,
                    "p" => c.p = num(k, v)?,
                    "r" => c.r = num(k, v)?,
                    "unit_norm" => c.unit_norm = flag(k, v)?,
                    _ => return Err(Error::Config(format!("unknown key {k:?}"))),
                },
                (TaskConfig::StarGraph(c), Some(("star", f))) => match f {
                    "degree" => c.degree = num(k, v)?,
                    "length" => c.length = num(k, v)?,
                    "nodes" => c.nodes = num(k, v)?,
                    _ => return Err(Error::Config(format!("unknown key {k:?}"))),
                },
                (TaskConfig::Sudoku { givens }, Some(("sudoku", f))) => match f {
                    "givens_min" => givens.0 = num(k, v)?,
                    "givens_max" => givens.1 = num(k, v)?,
                    _ => return Err(Error::Config(format!("unknown key {k:?}"))),
                },
                _ => return Err(Error::Config(format!("unknown key {k:?} for task {}", self.task.task()))),
            },
        }
        Ok(())
    }

    /// Every key with its resolved value.
    pub fn to_kv(&self) -> BTreeMap<String, String> {
        let mut m = BTreeMap::new();
        let mut put = |k: &str, v: String| {
            m.insert(k.to_string(), v);
        };
        put("task", self.task.task().name().into());
        put("paradigm", self.paradigm.name().into());
        put("n_embd", self.n_embd.to_string());
        put("n_layer", self.n_layer.to_string());
        put("n_head", self.n_head.to_string());
        put("ffn_hidden", self.resolved_ffn_hidden().to_string());
        put("coords", self.coords.to_string());
        put("steps", self.steps.to_string());
        put("batch_size", self.batch_size.to_string());
        put("lr", format!("{:?}", self.lr));
        put("beta1", format!("{:?}", self.beta1));
        put("beta2", format!("{:?}", self.beta2));
        put("eps", format!("{:?}", self.eps));
        put("weight_decay", format!("{:?}", self.weight_decay));
        put("grad_clip", format!("{:?}", self.grad_clip));
        put("eval_every", self.resolved_eval_every().to_string());
        put("eval_size", self.eval_size.to_string());
        put("checkpoint_every", self.checkpoint_every.to_string());
        put("tau_min", format!("{:?}", self.tau_min));
        put("tau_max", format!("{:?}", self.tau_max));
        put("mask_schedule", self.mask_schedule.to_string());
        put("block_size", self.block_size.to_string());
        put("t_inf", self.t_inf.to_string());
        put(
            "unmask_rule",
            match self.unmask_rule {
                UnmaskRule::LowConfidenceRemask => "low_confidence",
                UnmaskRule::TopKPerStep => "top_k",
            }
            .into(),
        );
        put("k_max", self.resolved_k_max().to_string());
        put("train_size", self.train_size.to_string());
        put("valid_size", self.valid_size.to_string());
        put("data_dir", self.data_dir.clone());
        if let Some(t) = self.threshold {
            put("threshold", format!("{t:?}"));
        }
        match &self.task {
            TaskConfig::Icl(c) => {
                put("icl.d", c.d.to_string());
                put("icl.p", c.p.to_string());
                put("icl.r", c.r.to_string());
                put("icl.unit_norm", c.unit_norm.to_string());
            }
            TaskConfig::StarGraph(c) => {
                put("star.degree", c.degree.to_string());
                put("star.length", c.length.to_string());
                put("star.nodes", c.nodes.to_string());
            }
            TaskConfig::Sudoku { givens } => {
                put("sudoku.givens_min", givens.0.to_string());
                put("sudoku.givens_max", givens.1.to_string());
            }
        }
        m
    }

    /// Canonical text: sorted `key = value` lines.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (k, v) in self.to_kv() {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }

    /// SHA-256 (hex) of the sorted `key=value` lines.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        for (k, v) in self.to_kv() {
            h.update(format!("{k}={v}\n").as_bytes());
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn short_hash(&self) -> String {
        self.hash()[..12].to_string()
    }

    pub fn resolved_ffn_hidden(&self) -> usize {
        if self.ffn_hidden == 0 {
            default_ffn_hidden(self.n_embd)
        } else {
            self.ffn_hidden
        }
    }

    pub fn resolved_eval_every(&self) -> u64 {
        if self.eval_every > 0 {
            self.eval_every
        } else {
            (self.steps / 100).clamp(1, 500)
        }
    }

    pub fn resolved_k_max(&self) -> u64 {
        if self.k_max == 0 {
            self.steps
        } else {
            self.k_max
        }
    }

    /// Whether block-partitioned paradigms need the token response padded.
    pub fn pads_response(&self) -> bool {
        self.paradigm.uses_blocks() && !matches!(self.task, TaskConfig::Icl(_))
    }

    /// Training and decoding length (after padding the response to whole blocks).
    pub fn seq_len(&self) -> usize {
        let len = self.task.seq_len();
        if self.pads_response() {
            let p = self.task.prompt_len();
            p + (len - p).div_ceil(self.block_size) * self.block_size
        } else {
            len
        }
    }

    pub fn model_config(&self) -> ModelConfig {
        let len = self.seq_len();
        let mut m = match &self.task {
            TaskConfig::Icl(c) => ModelConfig::regression(self.n_embd, self.n_layer, self.n_head, c.d, len),
            _ => {
                let vocab = self.task.vocab().expect("token task");
                ModelConfig::tokens(self.n_embd, self.n_layer, self.n_head, vocab.size(), len)
                    .with_coordinates(self.coords && self.task.coords().is_some())
            }
        };
        m.ffn_hidden = self.resolved_ffn_hidden();
        m
    }

    pub fn mask_schedule(&self) -> Result<MaskSchedule> {
        MaskSchedule::new(self.mask_schedule, Some((self.tau_min, self.tau_max)))
    }

    pub fn decode_config(&self) -> Result<DecodeConfig> {
        let mut d = DecodeConfig::new(self.paradigm, self.t_inf, self.block_size)?;
        d.unmask_rule = self.unmask_rule;
        Ok(d)
    }

    pub fn validate(&self) -> Result<()> {
        match &self.task {
            TaskConfig::Icl(c) => c.validate()?,
            TaskConfig::StarGraph(c) => c.validate()?,
            TaskConfig::Sudoku { givens: (lo, hi) } => {
                if !(17..=81).contains(lo) || !(*lo..=81).contains(hi) {
                    return Err(Error::Config(format!("sudoku givens [{lo}, {hi}] must lie within [17, 81]")));
                }
            }
        }
        self.model_config().validate()?;
        self.mask_schedule()?;
        self.decode_config()?;
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if !(self.lr > 0.0) {
            return Err(Error::Config("lr must be positive".into()));
        }
        if self.paradigm.uses_blocks() {
            // ICL responses are never padded, so the block size must divide them
            BlockPartition::new(self.seq_len(), self.task.prompt_len(), self.block_size)?;
        }
        if self.valid_size < self.eval_size.min(1) {
            return Err(Error::Config("valid_size must cover at least one eval example".into()));
        }
        Ok(())
    }
}

/// Expands `sweep.<key> = v1, v2, …` lines into the cross product of run
/// configs (other lines form the shared base). Returns the seeds too
/// (`seeds = 0, 1, 2`, default `0`).
pub fn expand_sweep(text: &str) -> Result<(Vec<RunConfig>, Vec<u64>)> {
    let kv = parse_kv(text)?;
    let mut base = BTreeMap::new();
    let mut axes: Vec<(String, Vec<String>)> = Vec::new();
    let mut seeds = vec![0];
    for (k, v) in kv {
        if let Some(axis) = k.strip_prefix("sweep.") {
            let values: Vec<String> = v.split(',').map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect();
            if values.is_empty() {
                return Err(Error::Config(format!("sweep axis {axis:?} has no values")));
            }
            axes.push((axis.to_string(), values));
        } else if k == "seeds" {
            seeds = v.split(',').map(|s| num("seeds", s.trim())).collect::<Result<_>>()?;
        } else {
            base.insert(k, v);
        }
    }
    let mut points = vec![base];
    for (axis, values) in &axes {
        points = points
            .into_iter()
            .flat_map(|p| {
                values.iter().map(move |v| {
                    let mut q = p.clone();
                    q.insert(axis.clone(), v.clone());
                    q
                })
            })
            .collect();
    }
    let configs = points.iter().map(RunConfig::from_kv).collect::<Result<Vec<_>>>()?;
    for (axis, _) in &axes {
        if matches!(axis.as_str(), "block_size") && configs.iter().any(|c| !c.paradigm.uses_blocks()) {
            return Err(Error::Config(format!("sweep axis {axis:?} needs a block-wise paradigm")));
        }
    }
    Ok((configs, seeds))
}
