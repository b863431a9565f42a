//! Inference for the five paradigms with exact forward-pass accounting.
//!
//! Decoding fills a set of *target* positions: the non-pad response tokens
//! of a token sequence, or the response `y` cells of a hybrid sequence.
//! Everything else is given. Every model call is one trace step, so
//! `trace.nfe == trace.steps.len()`.

use std::fmt::Write as _;
use std::ops::Range;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::backbone::{CoordinateIds, ForwardOutput, InputCell, Model, ModelInput, Real};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::maskgen::{self, AttentionMask};
use crate::objectives::{hybrid_input, Readout};
use crate::paradigm::Paradigm;
use crate::rng::{self, Rng};
use crate::seqcore::{BlockPartition, Cell, HybridSequence, TokenId, TokenSequence, Vocab};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UnmaskRule {
    /// Commit `⌈remaining / steps_left⌉` most confident predictions per step.
    #[default]
    LowConfidenceRemask,
    /// Commit a fixed `⌈n / T⌉` most confident predictions per step.
    TopKPerStep,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodeConfig {
    pub paradigm: Paradigm,
    /// Denoising budget per group (whole response, block or offset).
    pub steps: usize,
    pub block_size: usize,
    pub unmask_rule: UnmaskRule,
    /// 0 decodes greedily.
    pub temperature: f64,
    /// Seed of the sampling stream when `temperature > 0`.
    pub seed: u64,
}

impl DecodeConfig {
    pub fn new(paradigm: Paradigm, steps: usize, block_size: usize) -> Result<Self> {
        let cfg = Self {
            paradigm,
            steps,
            block_size,
            unmask_rule: UnmaskRule::default(),
            temperature: 0.0,
            seed: 0,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::Config("decode steps must be at least 1".into()));
        }
        if self.block_size == 0 {
            return Err(Error::Partition("block size must be positive".into()));
        }
        if !(self.temperature >= 0.0) {
            return Err(Error::Config(format!("temperature {} must be >= 0", self.temperature)));
        }
        Ok(())
    }
}

/// One model call and what it wrote.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceStep {
    pub step: usize,
    pub positions: Vec<usize>,
    pub values: Vec<Cell>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Decoded {
    Tokens(TokenSequence),
    Hybrid(HybridSequence),
}

impl Decoded {
    pub fn tokens(&self) -> Option<&TokenSequence> {
        match self {
            Decoded::Tokens(t) => Some(t),
            Decoded::Hybrid(_) => None,
        }
    }

    pub fn hybrid(&self) -> Option<&HybridSequence> {
        match self {
            Decoded::Hybrid(h) => Some(h),
            Decoded::Tokens(_) => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleTrace {
    pub steps: Vec<TraceStep>,
    pub nfe: usize,
    /// Blocks in the order they were generated (Block and Jigsaw; Scatter
    /// decodes by offset and leaves this empty).
    pub block_order: Vec<usize>,
    pub final_: Decoded,
}

impl SampleTrace {
    /// `step=<n> pos=<list> tok=<list>` lines, one per model call.
    pub fn dump(&self) -> String {
        let mut s = String::new();
        for st in &self.steps {
            let pos: Vec<String> = st.positions.iter().map(|p| p.to_string()).collect();
            let tok: Vec<String> = st
                .values
                .iter()
                .map(|c| match c {
                    Cell::Token { token } => token.to_string(),
                    Cell::Scalar(v) => format!("{v}"),
                    Cell::Vector(v) => format!("{v:?}"),
                })
                .collect();
            let _ = writeln!(s, "step={} pos={} tok={}", st.step, pos.join(","), tok.join(","));
        }
        s
    }

    /// Positions in order of their first write.
    pub fn commit_order(&self) -> Vec<usize> {
        self.steps.iter().flat_map(|s| s.positions.iter().copied()).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Canvas {
    Tokens { tokens: Vec<TokenId>, prompt_len: usize, mask_id: TokenId, pad_id: Option<TokenId> },
    Hybrid(HybridSequence),
}

/// What to decode: the prompt, the layout of the response and the targets.
#[derive(Debug, Clone, PartialEq)]
pub struct Problem {
    canvas: Canvas,
    targets: Vec<usize>,
    coords: Option<CoordinateIds>,
}

impl Problem {
    /// Decode `response_len` fresh tokens after `prompt`.
    pub fn tokens(prompt: &[TokenId], response_len: usize, vocab: &Vocab) -> Self {
        let mut tokens = prompt.to_vec();
        tokens.resize(prompt.len() + response_len, vocab.mask_id());
        Self {
            targets: (prompt.len()..tokens.len()).collect(),
            canvas: Canvas::Tokens {
                tokens,
                prompt_len: prompt.len(),
                mask_id: vocab.mask_id(),
                pad_id: vocab.pad_id(),
            },
            coords: None,
        }
    }

    /// Decode the response of `seq`; pad positions are kept as given.
    pub fn from_sequence(seq: &TokenSequence, vocab: &Vocab) -> Self {
        let targets = seq.response_targets(vocab.pad_id());
        let mut tokens = seq.tokens.clone();
        for &t in &targets {
            tokens[t] = vocab.mask_id();
        }
        Self {
            canvas: Canvas::Tokens {
                tokens,
                prompt_len: seq.prompt_len,
                mask_id: vocab.mask_id(),
                pad_id: vocab.pad_id(),
            },
            targets,
            coords: None,
        }
    }

    /// Predict the response `y` cells of `seq` (their stored values are ignored).
    pub fn hybrid(seq: &HybridSequence) -> Self {
        let targets = seq.target_positions();
        let mut seq = seq.clone();
        for &t in &targets {
            seq.cells[t] = Cell::Scalar(0.0);
        }
        Self { canvas: Canvas::Hybrid(seq), targets, coords: None }
    }

    pub fn with_coords(mut self, coords: Option<CoordinateIds>) -> Self {
        self.coords = coords;
        self
    }

    pub fn len(&self) -> usize {
        match &self.canvas {
            Canvas::Tokens { tokens, .. } => tokens.len(),
            Canvas::Hybrid(h) => h.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn prompt_len(&self) -> usize {
        match &self.canvas {
            Canvas::Tokens { prompt_len, .. } => *prompt_len,
            Canvas::Hybrid(h) => h.prompt_len(),
        }
    }

    pub fn targets(&self) -> &[usize] {
        &self.targets
    }
}

struct Decoder<'m, F> {
    model: &'m Model<F>,
    cfg: &'m DecodeConfig,
    canvas: Canvas,
    coords: Option<CoordinateIds>,
    committed: Vec<bool>,
    steps: Vec<TraceStep>,
    rng: Option<Rng>,
}

impl<'m, F: Real> Decoder<'m, F> {
    fn new(model: &'m Model<F>, problem: &Problem, cfg: &'m DecodeConfig) -> Result<Self> {
        cfg.validate()?;
        let len = problem.len();
        if len > model.config.max_len {
            return Err(Error::Length { len, max: model.config.max_len });
        }
        let mut committed = vec![true; len];
        for &t in &problem.targets {
            committed[t] = false;
        }
        Ok(Self {
            model,
            cfg,
            canvas: problem.canvas.clone(),
            coords: problem.coords.clone(),
            committed,
            steps: Vec::new(),
            rng: (cfg.temperature > 0.0).then(|| rng::stream(cfg.seed, "decode", 0)),
        })
    }

    fn len(&self) -> usize {
        self.committed.len()
    }

    fn is_hybrid(&self) -> bool {
        matches!(self.canvas, Canvas::Hybrid(_))
    }

    /// Uncommitted targets shown as the mask symbol in place.
    fn input_in_place(&self) -> ModelInput {
        match &self.canvas {
            Canvas::Tokens { tokens, mask_id, .. } => {
                let t: Vec<TokenId> =
                    tokens.iter().zip(&self.committed).map(|(&t, &c)| if c { t } else { *mask_id }).collect();
                ModelInput::tokens(&t).with_coords(self.coords.clone())
            }
            Canvas::Hybrid(h) => {
                let hidden: Vec<bool> = self.committed.iter().map(|c| !c).collect();
                hybrid_input(h, &hidden)
            }
        }
    }

    /// Shifted view of `region` (tokens only): `[mask, x_start, …]`.
    fn input_shifted(&self, region: Range<usize>) -> ModelInput {
        let mut input = self.input_in_place();
        if let Canvas::Tokens { tokens, mask_id, .. } = &self.canvas {
            for i in region.clone() {
                input.cells[i] = InputCell::Token(if i == region.start || !self.committed[i - 1] {
                    *mask_id
                } else {
                    tokens[i - 1]
                });
            }
        }
        input
    }

    fn forward(&mut self, input: &ModelInput, mask: &AttentionMask) -> Result<ForwardOutput<F>> {
        let out = self.model.forward(input, mask)?;
        self.steps.push(TraceStep { step: self.steps.len(), positions: Vec::new(), values: Vec::new() });
        Ok(out)
    }

    /// Value and confidence for target `t`, read at `pos`.
    fn predict(&mut self, out: &ForwardOutput<F>, pos: usize) -> Result<(Cell, f64)> {
        match &self.canvas {
            Canvas::Tokens { mask_id, pad_id, .. } => {
                let logits = out.logits.as_ref().ok_or_else(|| Error::Shape("model has no token head".into()))?;
                let row = logits.row(pos);
                let allowed = |v: usize| v as TokenId != *mask_id && Some(v as TokenId) != *pad_id;
                let temp = if self.cfg.temperature > 0.0 { self.cfg.temperature } else { 1.0 };
                let max = row
                    .iter()
                    .enumerate()
                    .filter(|(v, _)| allowed(*v))
                    .fold(f64::NEG_INFINITY, |m, (_, l)| m.max(l.f64() / temp));
                let probs: Vec<f64> = row
                    .iter()
                    .enumerate()
                    .map(|(v, l)| if allowed(v) { (l.f64() / temp - max).exp() } else { 0.0 })
                    .collect();
                let z: f64 = probs.iter().sum();
                let pick = match &mut self.rng {
                    None => {
                        let mut best = probs.iter().position(|&p| p > 0.0).unwrap_or(0);
                        for (v, &p) in probs.iter().enumerate() {
                            if p > probs[best] {
                                best = v;
                            }
                        }
                        best
                    }
                    Some(rng) => {
                        let mut r = rng.random::<f64>() * z;
                        let mut pick = 0;
                        for (v, &p) in probs.iter().enumerate() {
                            if p > 0.0 {
                                pick = v;
                                if r < p {
                                    break;
                                }
                                r -= p;
                            }
                        }
                        pick
                    }
                };
                Ok((Cell::Token { token: pick as TokenId }, probs[pick] / z))
            }
            Canvas::Hybrid(_) => {
                let preds =
                    out.scalar_preds.as_ref().ok_or_else(|| Error::Shape("model has no regression head".into()))?;
                Ok((Cell::Scalar(preds[pos].f64()), 1.0))
            }
        }
    }

    fn commit(&mut self, t: usize, value: Cell) {
        match (&mut self.canvas, &value) {
            (Canvas::Tokens { tokens, .. }, Cell::Token { token }) => tokens[t] = *token,
            (Canvas::Hybrid(h), _) => h.cells[t] = value.clone(),
            _ => unreachable!("value kind matches canvas"),
        }
        self.committed[t] = true;
        let step = self.steps.last_mut().expect("commit follows a forward");
        step.positions.push(t);
        step.values.push(value);
    }

    fn readout(&self, t: usize, causal: bool) -> usize {
        if self.is_hybrid() && causal {
            Readout::Preceding.position(t)
        } else {
            t
        }
    }

    /// Iterative unmasking of `group` under a fixed attention mask.
    fn denoise(&mut self, group: &[usize], mask: &AttentionMask) -> Result<()> {
        let n = group.len();
        let t_budget = self.cfg.steps;
        let mut remaining: Vec<usize> = group.to_vec();
        remaining.sort_unstable();
        let mut s = 0;
        while !remaining.is_empty() {
            let quota = match self.cfg.unmask_rule {
                UnmaskRule::LowConfidenceRemask => remaining.len().div_ceil(t_budget - s),
                UnmaskRule::TopKPerStep => n.div_ceil(t_budget),
            }
            .min(remaining.len());
            let out = self.forward(&self.input_in_place(), mask)?;
            let mut preds = Vec::with_capacity(remaining.len());
            for &t in &remaining {
                let (v, c) = self.predict(&out, t)?;
                preds.push((t, v, c));
            }
            // stable: equal confidence commits the lower position first
            preds.sort_by(|a, b| b.2.total_cmp(&a.2));
            for (t, v, _) in preds.into_iter().take(quota) {
                self.commit(t, v);
            }
            remaining.retain(|&t| !self.committed[t]);
            s += 1;
        }
        Ok(())
    }

    /// Left-to-right decoding of `targets` inside `region`.
    fn solve(&mut self, targets: &[usize], region: Range<usize>, mask: &AttentionMask) -> Result<()> {
        for &t in targets {
            let input = self.input_shifted(region.clone());
            let out = self.forward(&input, mask)?;
            let (v, _) = self.predict(&out, self.readout(t, true))?;
            self.commit(t, v);
        }
        Ok(())
    }

    fn partition(&self) -> Result<BlockPartition> {
        let prompt_len = match &self.canvas {
            Canvas::Tokens { prompt_len, .. } => *prompt_len,
            Canvas::Hybrid(h) => h.prompt_len(),
        };
        BlockPartition::new(self.len(), prompt_len, self.cfg.block_size)
    }

    fn targets_in(&self, range: &Range<usize>) -> Vec<usize> {
        range.clone().filter(|&p| !self.committed[p]).collect()
    }

    fn finish(self, block_order: Vec<usize>) -> SampleTrace {
        let final_ = match self.canvas {
            Canvas::Tokens { tokens, prompt_len, .. } => Decoded::Tokens(TokenSequence { tokens, prompt_len }),
            Canvas::Hybrid(h) => Decoded::Hybrid(h),
        };
        SampleTrace { nfe: self.steps.len(), steps: self.steps, block_order, final_ }
    }
}

fn with_paradigm(cfg: &DecodeConfig, p: Paradigm) -> DecodeConfig {
    DecodeConfig { paradigm: p, ..cfg.clone() }
}

/// Greedy (or sampled) left-to-right decoding: one forward per target.
pub fn decode_ar<F: Real>(model: &Model<F>, problem: &Problem, cfg: &DecodeConfig) -> Result<SampleTrace> {
    let cfg = with_paradigm(cfg, Paradigm::Ar);
    let mut d = Decoder::new(model, problem, &cfg)?;
    let len = d.len();
    if problem.targets.is_empty() {
        return Ok(d.finish(Vec::new()));
    }
    let mask = maskgen::causal_mask(len)?;
    let region = problem.prompt_len()..len;
    d.solve(&problem.targets.clone(), region, &mask)?;
    Ok(d.finish(Vec::new()))
}

/// Iterative denoising of the whole response under full visibility.
pub fn decode_mdm<F: Real>(model: &Model<F>, problem: &Problem, cfg: &DecodeConfig) -> Result<SampleTrace> {
    let cfg = with_paradigm(cfg, Paradigm::Mdm);
    let mut d = Decoder::new(model, problem, &cfg)?;
    if problem.targets.is_empty() {
        return Ok(d.finish(Vec::new()));
    }
    let mask = maskgen::bidirectional_mask(d.len())?;
    d.denoise(&problem.targets.clone(), &mask)?;
    Ok(d.finish(Vec::new()))
}

/// Blocks in increasing order, each denoised with budget `steps`.
pub fn decode_block<F: Real>(model: &Model<F>, problem: &Problem, cfg: &DecodeConfig) -> Result<SampleTrace> {
    let cfg = with_paradigm(cfg, Paradigm::Block);
    let mut d = Decoder::new(model, problem, &cfg)?;
    let part = d.partition()?;
    let mask = maskgen::block_causal_mask(d.len(), part.response_start, part.block_size)?;
    let mut order = Vec::new();
    for k in 0..part.num_blocks {
        let group = d.targets_in(&part.block_range(k)?);
        if !group.is_empty() {
            d.denoise(&group, &mask)?;
            order.push(k);
        }
    }
    Ok(d.finish(order))
}

/// Offsets in increasing order; all blocks' tokens at one offset are
/// denoised together with budget `steps`.
pub fn decode_scatter<F: Real>(model: &Model<F>, problem: &Problem, cfg: &DecodeConfig) -> Result<SampleTrace> {
    let cfg = with_paradigm(cfg, Paradigm::Scatter);
    let mut d = Decoder::new(model, problem, &cfg)?;
    let part = d.partition()?;
    let mask = maskgen::scatter_mask(d.len(), part.response_start, part.block_size)?;
    if part.num_blocks > 0 {
        for j in 0..part.block_size {
            let group: Vec<usize> =
                part.indices_at_offset(j)?.into_iter().filter(|&p| !d.committed[p]).collect();
            if !group.is_empty() {
                d.denoise(&group, &mask)?;
            }
        }
    }
    Ok(d.finish(Vec::new()))
}

/// Probe–plan–solve: a bidirectional probe over every remaining block picks
/// the block of lowest mean entropy (lowest index on ties), which is then
/// decoded left to right conditioned on the prompt and committed blocks.
pub fn decode_jigsaw<F: Real>(model: &Model<F>, problem: &Problem, cfg: &DecodeConfig) -> Result<SampleTrace> {
    let cfg = with_paradigm(cfg, Paradigm::Jigsaw);
    let mut d = Decoder::new(model, problem, &cfg)?;
    let part = d.partition()?;
    let probe_mask = maskgen::bidirectional_mask(d.len())?;
    let block_targets: Vec<Vec<usize>> =
        (0..part.num_blocks).map(|k| Ok(d.targets_in(&part.block_range(k)?))).collect::<Result<_>>()?;
    let mut done: Vec<bool> = block_targets.iter().map(|t| t.is_empty()).collect();
    let mut order = Vec::new();
    while done.iter().any(|x| !x) {
        let out = d.forward(&d.input_in_place(), &probe_mask)?;
        let mut best: Option<(usize, f64)> = None;
        for k in (0..part.num_blocks).filter(|&k| !done[k]) {
            let h = match &out.entropies {
                Some(e) => block_targets[k].iter().map(|&p| e[p].f64()).sum::<f64>() / block_targets[k].len() as f64,
                None => 0.0,
            };
            if best.is_none_or(|(_, b)| h < b) {
                best = Some((k, h));
            }
        }
        let (k, _) = best.expect("a block remains");
        let mask = maskgen::jigsaw_context_mask(&part, &done)?;
        d.solve(&block_targets[k], part.block_range(k)?, &mask)?;
        done[k] = true;
        order.push(k);
    }
    Ok(d.finish(order))
}

pub fn decode<F: Real>(model: &Model<F>, problem: &Problem, cfg: &DecodeConfig) -> Result<SampleTrace> {
    match cfg.paradigm {
        Paradigm::Ar => decode_ar(model, problem, cfg),
        Paradigm::Mdm => decode_mdm(model, problem, cfg),
        Paradigm::Block => decode_block(model, problem, cfg),
        Paradigm::Scatter => decode_scatter(model, problem, cfg),
        Paradigm::Jigsaw => decode_jigsaw(model, problem, cfg),
    }
}

/// Decodes independent problems, in parallel when `exec` allows.
pub fn decode_batch<F: Real>(
    model: &Model<F>,
    problems: &[Problem],
    cfg: &DecodeConfig,
    exec: Execution,
) -> Result<Vec<SampleTrace>> {
    exec.map(problems, |i, p| {
        let cfg = DecodeConfig { seed: rng::derive_seed(cfg.seed, "decode-batch", i as u64), ..cfg.clone() };
        decode(model, p, &cfg)
    })
    .into_iter()
    .collect()
}

/// Mean Shannon entropy (nats) over the positions of block `k`.
pub fn block_entropy<F: Real>(out: &ForwardOutput<F>, part: &BlockPartition, k: usize) -> Result<f64> {
    let e = out.entropies.as_ref().ok_or_else(|| Error::Shape("output has no token distribution".into()))?;
    let range = part.block_range(k)?;
    if range.end > e.len() {
        return Err(Error::Shape("block lies outside the output".into()));
    }
    Ok(range.map(|p| e[p].f64()).sum::<f64>() / part.block_size as f64)
}

/// Model calls needed to denoise `n` positions with budget `t`.
pub fn group_steps(n: usize, t: usize, rule: UnmaskRule) -> usize {
    match rule {
        UnmaskRule::LowConfidenceRemask => n.min(t),
        UnmaskRule::TopKPerStep => {
            if n == 0 {
                0
            } else {
                n.div_ceil(n.div_ceil(t))
            }
        }
    }
}

/// Forward passes for an unpadded response of `l_resp` tokens: AR `L`,
/// MDM `min(T, L)`, Block `K·min(T, S)`, Scatter `S·min(T, K)`,
/// Jigsaw `K·(1 + S)`.
pub fn nfe_closed_form(paradigm: Paradigm, l_resp: usize, block_size: usize, steps: usize) -> Result<usize> {
    if steps == 0 {
        return Err(Error::Config("decode steps must be at least 1".into()));
    }
    let k = || -> Result<usize> {
        if block_size == 0 || l_resp % block_size != 0 {
            return Err(Error::Partition(format!("block size {block_size} does not divide {l_resp}")));
        }
        Ok(l_resp / block_size)
    };
    Ok(match paradigm {
        Paradigm::Ar => l_resp,
        Paradigm::Mdm => steps.min(l_resp),
        Paradigm::Block => k()? * steps.min(block_size),
        Paradigm::Scatter => {
            let k = k()?;
            if k == 0 {
                0
            } else {
                block_size * steps.min(k)
            }
        }
        Paradigm::Jigsaw => k()? * (1 + block_size),
    })
}

/// Exact forward-pass count of [`decode`] on `problem` (handles pads and
/// hybrid layouts, where some groups hold fewer targets).
pub fn nfe_for_problem(problem: &Problem, cfg: &DecodeConfig) -> Result<usize> {
    cfg.validate()?;
    let n = problem.targets.len();
    let (t, rule) = (cfg.steps, cfg.unmask_rule);
    if cfg.paradigm == Paradigm::Ar {
        return Ok(n);
    }
    if cfg.paradigm == Paradigm::Mdm {
        return Ok(group_steps(n, t, rule));
    }
    let part = BlockPartition::new(problem.len(), problem.prompt_len(), cfg.block_size)?;
    let count = |r: &dyn Fn(usize) -> bool| problem.targets.iter().filter(|&&p| r(p)).count();
    Ok(match cfg.paradigm {
        Paradigm::Block => (0..part.num_blocks)
            .map(|k| {
                let r = part.block_range(k).unwrap();
                group_steps(count(&|p| r.contains(&p)), t, rule)
            })
            .sum(),
        Paradigm::Scatter => (0..if part.num_blocks > 0 { part.block_size } else { 0 })
            .map(|j| group_steps(count(&|p| part.locate_global(p).is_some_and(|(_, o)| o == j)), t, rule))
            .sum(),
        Paradigm::Jigsaw => (0..part.num_blocks)
            .map(|k| {
                let r = part.block_range(k).unwrap();
                let m = count(&|p| r.contains(&p));
                if m == 0 {
                    0
                } else {
                    1 + m
                }
            })
            .sum(),
        Paradigm::Ar | Paradigm::Mdm => unreachable!(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backbone::ModelConfig;
    use ndarray::Array1;
    use std::collections::BTreeMap;

    fn vocab() -> Vocab {
        Vocab::new(8, 7, Some(6), BTreeMap::new()).unwrap()
    }

    fn model() -> Model<f32> {
        Model::new(ModelConfig::tokens(8, 1, 2, 8, 32), 3).unwrap()
    }

    #[test]
    fn closed_form_examples() {
        assert_eq!(nfe_closed_form(Paradigm::Jigsaw, 20, 4, 10).unwrap(), 25);
        assert_eq!(nfe_closed_form(Paradigm::Ar, 20, 4, 10).unwrap(), 20);
        assert_eq!(nfe_closed_form(Paradigm::Scatter, 20, 4, 3).unwrap(), 12);
        assert_eq!(nfe_closed_form(Paradigm::Jigsaw, 8, 4, 1).unwrap(), 10);
        assert_eq!(nfe_closed_form(Paradigm::Jigsaw, 6, 1, 1).unwrap(), 12);
        assert_eq!(nfe_closed_form(Paradigm::Block, 8, 2, 1).unwrap(), 4);
        assert_eq!(nfe_closed_form(Paradigm::Scatter, 8, 2, 1).unwrap(), 2);
        assert!(matches!(nfe_closed_form(Paradigm::Block, 7, 2, 1), Err(Error::Partition(_))));
        assert!(nfe_closed_form(Paradigm::Mdm, 7, 2, 0).is_err());
    }

    #[test]
    fn ar_examples() {
        let m = model();
        let cfg = DecodeConfig::new(Paradigm::Ar, 1, 1).unwrap();
        let t = decode_ar(&m, &Problem::tokens(&[1, 2], 5, &vocab()), &cfg).unwrap();
        assert_eq!(t.nfe, 5);
        assert_eq!(t, decode_ar(&m, &Problem::tokens(&[1, 2], 5, &vocab()), &cfg).unwrap());
        let empty = decode_ar(&m, &Problem::tokens(&[1, 2], 0, &vocab()), &cfg).unwrap();
        assert_eq!(empty.nfe, 0);
        assert!(empty.steps.is_empty());
        let long = Problem::tokens(&[1; 30], 5, &vocab());
        assert!(matches!(decode_ar(&m, &long, &cfg), Err(Error::Length { .. })));
    }

    #[test]
    fn mdm_schedule() {
        let m = model();
        let p = Problem::tokens(&[1, 2], 6, &vocab());
        for t in 1..=8 {
            let tr = decode_mdm(&m, &p, &DecodeConfig::new(Paradigm::Mdm, t, 1).unwrap()).unwrap();
            assert_eq!(tr.nfe, t.min(6));
            let total: usize = tr.steps.iter().map(|s| s.positions.len()).sum();
            assert_eq!(total, 6);
            let fin = tr.final_.tokens().unwrap();
            assert!(fin.response().iter().all(|&x| x != 7 && x != 6));
        }
    }

    #[test]
    fn block_entropy_examples() {
        let part = BlockPartition::new(2, 0, 2).unwrap();
        let uniform = ForwardOutput::<f64> {
            logits: None,
            scalar_preds: None,
            entropies: Some(Array1::from_vec(vec![5f64.ln(), 5f64.ln()])),
        };
        assert!((block_entropy(&uniform, &part, 0).unwrap() - 5f64.ln()).abs() < 1e-12);
        // one uniform cell over V = e outcomes contributes ln e = 1
        let mixed = ForwardOutput::<f64> { entropies: Some(Array1::from_vec(vec![1.0, 0.0])), ..uniform.clone() };
        assert!((block_entropy(&mixed, &part, 0).unwrap() - 0.5).abs() < 1e-12);
        let onehot = ForwardOutput::<f64> { entropies: Some(Array1::zeros(2)), ..uniform };
        assert_eq!(block_entropy(&onehot, &part, 0).unwrap(), 0.0);
    }

    #[test]
    fn trace_dump_format() {
        let t = SampleTrace {
            steps: vec![
                TraceStep { step: 0, positions: vec![3, 5], values: vec![Cell::Token { token: 7 }, Cell::Token { token: 9 }] },
                TraceStep { step: 1, positions: vec![], values: vec![] },
            ],
            nfe: 2,
            block_order: vec![],
            final_: Decoded::Tokens(TokenSequence { tokens: vec![], prompt_len: 0 }),
        };
        assert_eq!(t.dump(), "step=0 pos=3,5 tok=7,9\nstep=1 pos= tok=\n");
    }

    #[test]
    fn sampling_is_seeded() {
        let m = model();
        let p = Problem::tokens(&[1, 2], 6, &vocab());
        let mut cfg = DecodeConfig::new(Paradigm::Mdm, 3, 1).unwrap();
        cfg.temperature = 1.0;
        let a = decode(&m, &p, &cfg).unwrap();
        assert_eq!(a, decode(&m, &p, &cfg).unwrap());
    }
}
