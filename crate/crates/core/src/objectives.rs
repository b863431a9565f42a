//! Per-paradigm training losses and the construction of training inputs.
//!
//! Every loss returns its value together with the gradient with respect to
//! the model outputs, so the trainer only has to call
//! [`Model::backward`](crate::backbone::Model::backward).
//!
//! Token AR and Jigsaw use a shifted input: inside each causally decoded
//! region (the whole response for AR, every block for Jigsaw) the input is
//! `[mask, x0, …, x_{n-2}]` and the prediction of `x_u` is read at `u`. Hybrid
//! sequences read `y` at the preceding `x` cell instead, with clean `y` inputs.

use ndarray::{Array1, Array2};
use rand::Rng;

use crate::backbone::{CoordinateIds, ForwardOutput, InputCell, ModelInput, OutputGrad, Real};
use crate::corruption::{
    corrupt_block, corrupt_iid, corrupt_weighted, sample_iid_flags, sample_masked_count, sample_tau,
    sample_weighted_flags, CorruptionState, MaskSchedule, ScheduleKind,
};
use crate::error::{Error, Result};
use crate::maskgen::{self, AttentionMask};
use crate::paradigm::Paradigm;
use crate::seqcore::{BlockPartition, Cell, HybridSequence, TokenId, TokenSequence, Vocab};

#[derive(Debug, Clone, PartialEq)]
pub struct LossReport {
    pub total: f64,
    pub per_position: Option<Vec<f64>>,
    /// Number of supervised positions.
    pub masked_count: usize,
    pub tau: Option<f64>,
}

/// A loss value and its gradient with respect to the model outputs.
#[derive(Debug, Clone)]
pub struct Loss<F> {
    pub report: LossReport,
    pub grad: OutputGrad<F>,
}

impl<F: Real> Loss<F> {
    pub fn scaled(mut self, s: f64) -> Self {
        self.report.total *= s;
        if let Some(g) = &mut self.grad.logits {
            g.mapv_inplace(|x| x * F::lit(s));
        }
        if let Some(g) = &mut self.grad.scalar {
            g.mapv_inplace(|x| x * F::lit(s));
        }
        self
    }
}

/// Weighted cross-entropy over `(read position, target)` pairs.
fn cross_entropy<F: Real>(
    out: &ForwardOutput<F>,
    targets: &[(usize, TokenId)],
    weight: f64,
) -> Result<(f64, Vec<f64>, Array2<F>)> {
    let logits = out.logits.as_ref().ok_or_else(|| Error::Loss("model has no token head".into()))?;
    let mut grad = Array2::zeros(logits.raw_dim());
    let mut per = vec![0.0; logits.nrows()];
    let mut total = 0.0;
    for &(pos, tok) in targets {
        if pos >= logits.nrows() || tok as usize >= logits.ncols() {
            return Err(Error::Shape(format!("target ({pos}, {tok}) outside output")));
        }
        let lp = out.log_probs(pos);
        let nll = -lp[tok as usize].f64();
        per[pos] = nll;
        total += weight * nll;
        let w = F::lit(weight);
        let mut row = grad.row_mut(pos);
        for (g, l) in row.iter_mut().zip(&lp) {
            *g = w * l.exp();
        }
        row[tok as usize] -= w;
    }
    Ok((total, per, grad))
}

fn token_loss<F: Real>(
    out: &ForwardOutput<F>,
    targets: &[(usize, TokenId)],
    weight: f64,
    tau: Option<f64>,
) -> Result<Loss<F>> {
    let (total, per, grad) = cross_entropy(out, targets, weight)?;
    Ok(Loss {
        report: LossReport { total, per_position: Some(per), masked_count: targets.len(), tau },
        grad: OutputGrad { logits: Some(grad), scalar: None },
    })
}

fn response_targets(seq: &TokenSequence, pad_id: Option<TokenId>) -> Vec<(usize, TokenId)> {
    seq.response_targets(pad_id).into_iter().map(|p| (p, seq.tokens[p])).collect()
}

/// Mean next-token NLL over the (non-pad) response, read from an output on
/// [`ar_input`].
pub fn loss_ar<F: Real>(out: &ForwardOutput<F>, seq: &TokenSequence, pad_id: Option<TokenId>) -> Result<Loss<F>> {
    let targets = response_targets(seq, pad_id);
    if targets.is_empty() {
        return Err(Error::Loss("empty response".into()));
    }
    token_loss(out, &targets, 1.0 / targets.len() as f64, None)
}

fn masked_loss<F: Real>(
    out: &ForwardOutput<F>,
    state: &CorruptionState,
    clean: &TokenSequence,
    keep: impl Fn(usize) -> bool,
) -> Result<Option<Loss<F>>> {
    if state.masked.len() != clean.len() {
        return Err(Error::Shape("corruption state and sequence differ in length".into()));
    }
    if !(state.tau > 0.0) {
        return Err(Error::Loss(format!("masking level {} must be positive", state.tau)));
    }
    let targets: Vec<_> = state
        .masked_positions()
        .into_iter()
        .filter(|&p| keep(p))
        .map(|p| (p, clean.tokens[p]))
        .collect();
    if targets.is_empty() {
        return Ok(None);
    }
    token_loss(out, &targets, 1.0 / state.tau, Some(state.tau)).map(Some)
}

/// `(1/τ)·Σ_masked −log p(clean_i | corrupted)`; `None` when nothing is masked.
pub fn loss_mdm<F: Real>(
    out: &ForwardOutput<F>,
    state: &CorruptionState,
    clean: &TokenSequence,
) -> Result<Option<Loss<F>>> {
    masked_loss(out, state, clean, |_| true)
}

/// Masked loss restricted to block `k`.
pub fn loss_block<F: Real>(
    out: &ForwardOutput<F>,
    state: &CorruptionState,
    clean: &TokenSequence,
    part: &BlockPartition,
    k: usize,
) -> Result<Option<Loss<F>>> {
    let range = part.block_range(k)?;
    masked_loss(out, state, clean, |p| range.contains(&p))
}

pub fn loss_scatter<F: Real>(
    out: &ForwardOutput<F>,
    state: &CorruptionState,
    clean: &TokenSequence,
    part: &BlockPartition,
) -> Result<Option<Loss<F>>> {
    if part.total_len() != clean.len() {
        return Err(Error::Partition("partition does not cover the sequence".into()));
    }
    masked_loss(out, state, clean, |p| p >= part.response_start)
}

/// Mean intra-block next-token NLL over the response, read from an output on
/// [`jigsaw_input`].
pub fn loss_jigsaw<F: Real>(
    out: &ForwardOutput<F>,
    clean: &TokenSequence,
    part: &BlockPartition,
    pad_id: Option<TokenId>,
) -> Result<Loss<F>> {
    if part.total_len() != clean.len() || part.response_start != clean.prompt_len {
        return Err(Error::Partition("partition does not match the sequence".into()));
    }
    loss_ar(out, clean, pad_id)
}

/// Where the prediction for a `y` cell is read.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Readout {
    /// At the `y` cell itself (masked in place).
    InPlace,
    /// At the preceding `x` cell.
    Preceding,
}

impl Readout {
    pub fn for_paradigm(p: Paradigm) -> Self {
        if p.is_causal() {
            Readout::Preceding
        } else {
            Readout::InPlace
        }
    }

    pub fn position(self, y_pos: usize) -> usize {
        match self {
            Readout::InPlace => y_pos,
            Readout::Preceding => y_pos - 1,
        }
    }
}

/// Mean squared error over the flagged target `y` cells.
pub fn loss_regression<F: Real>(
    out: &ForwardOutput<F>,
    seq: &HybridSequence,
    flags: &[bool],
    readout: Readout,
) -> Result<Loss<F>> {
    let preds = out.scalar_preds.as_ref().ok_or_else(|| Error::Loss("model has no regression head".into()))?;
    if flags.len() != seq.len() || preds.len() != seq.len() {
        return Err(Error::Shape("flags, predictions and sequence differ in length".into()));
    }
    let targets: Vec<(usize, f64)> = seq
        .target_positions()
        .into_iter()
        .filter(|&p| flags[p])
        .map(|p| (p, seq.cells[p].as_scalar().unwrap_or(0.0)))
        .collect();
    if targets.is_empty() {
        return Err(Error::Loss("no target cells".into()));
    }
    let n = targets.len() as f64;
    let mut grad = Array1::zeros(preds.len());
    let mut per = vec![0.0; preds.len()];
    let mut total = 0.0;
    for &(p, y) in &targets {
        let r = readout.position(p);
        let e = preds[r].f64() - y;
        per[p] = e * e;
        total += e * e / n;
        grad[r] += F::lit(2.0 * e / n);
    }
    Ok(Loss {
        report: LossReport { total, per_position: Some(per), masked_count: targets.len(), tau: None },
        grad: OutputGrad { logits: None, scalar: Some(grad) },
    })
}

/// Shifted response input for AR: `prompt ‖ [mask, r0, …, r_{n-2}]`.
pub fn ar_input(seq: &TokenSequence, mask_id: TokenId) -> TokenSequence {
    let mut tokens = seq.tokens.clone();
    let p = seq.prompt_len;
    for u in p..seq.len() {
        tokens[u] = if u == p { mask_id } else { seq.tokens[u - 1] };
    }
    TokenSequence { tokens, prompt_len: p }
}

/// Shifted input for Jigsaw: every block starts with the mask symbol and
/// holds its own tokens shifted by one.
pub fn jigsaw_input(seq: &TokenSequence, part: &BlockPartition, mask_id: TokenId) -> TokenSequence {
    let mut tokens = seq.tokens.clone();
    for k in 0..part.num_blocks {
        let start = part.global(k, 0);
        for j in 0..part.block_size {
            tokens[start + j] = if j == 0 { mask_id } else { seq.tokens[start + j - 1] };
        }
    }
    TokenSequence { tokens, prompt_len: seq.prompt_len }
}

/// Embedding input of a hybrid sequence; `hidden[i]` replaces cell `i` by the mask vector.
pub fn hybrid_input(seq: &HybridSequence, hidden: &[bool]) -> ModelInput {
    let cells = seq
        .cells
        .iter()
        .enumerate()
        .map(|(i, c)| match c {
            _ if hidden.get(i).copied().unwrap_or(false) => InputCell::MaskedScalar,
            Cell::Scalar(y) if i % 2 == 1 => InputCell::Scalar(*y),
            Cell::Scalar(x) => InputCell::Vector(vec![*x]),
            Cell::Vector(x) => InputCell::Vector(x.clone()),
            Cell::Token { token } => InputCell::Token(*token),
        })
        .collect();
    ModelInput { cells, coords: None }
}

/// A training example ready for the model, plus what its loss needs.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub input: ModelInput,
    pub mask: AttentionMask,
    pub target: Target,
    /// Multiplier applied to the loss (the number of blocks for block training).
    pub scale: f64,
}

#[derive(Debug, Clone)]
pub enum Target {
    Ar { clean: TokenSequence, pad_id: Option<TokenId> },
    Mdm { state: CorruptionState, clean: TokenSequence },
    Block { state: CorruptionState, clean: TokenSequence, part: BlockPartition, k: usize },
    Scatter { state: CorruptionState, clean: TokenSequence, part: BlockPartition },
    Jigsaw { clean: TokenSequence, part: BlockPartition, pad_id: Option<TokenId> },
    Regression { seq: HybridSequence, flags: Vec<bool>, readout: Readout },
}

fn corrupt_tokens<R: Rng + ?Sized>(
    seq: &TokenSequence,
    vocab: &Vocab,
    schedule: &MaskSchedule,
    rng: &mut R,
) -> Result<CorruptionState> {
    let tau = sample_tau(schedule, rng);
    match schedule.kind {
        ScheduleKind::Uniform => corrupt_iid(seq, vocab, tau, rng),
        _ => {
            let n = seq.response_targets(vocab.pad_id()).len();
            let k = sample_masked_count(n, tau, rng)?;
            corrupt_weighted(seq, vocab, k, tau, schedule, rng)
        }
    }
}

/// Draws the corruption (if any) for one token sequence and builds its input.
pub fn prepare_tokens<R: Rng + ?Sized>(
    paradigm: Paradigm,
    seq: &TokenSequence,
    vocab: &Vocab,
    coords: Option<&CoordinateIds>,
    block_size: usize,
    schedule: &MaskSchedule,
    rng: &mut R,
) -> Result<Prepared> {
    let len = seq.len();
    let p = seq.prompt_len;
    let mask = maskgen::training_mask(paradigm, len, p, block_size)?;
    let part = || BlockPartition::new(len, p, block_size);
    let (input, target, scale) = match paradigm {
        Paradigm::Ar => (ar_input(seq, vocab.mask_id()), Target::Ar { clean: seq.clone(), pad_id: vocab.pad_id() }, 1.0),
        Paradigm::Mdm => {
            let state = corrupt_tokens(seq, vocab, schedule, rng)?;
            (state.corrupted.clone(), Target::Mdm { state, clean: seq.clone() }, 1.0)
        }
        Paradigm::Block => {
            let part = part()?;
            if part.num_blocks == 0 {
                return Err(Error::Loss("empty response".into()));
            }
            let k = rng.random_range(0..part.num_blocks);
            let tau = sample_tau(schedule, rng);
            let state = corrupt_block(seq, vocab, &part, k, tau, rng)?;
            let scale = part.num_blocks as f64;
            (state.corrupted.clone(), Target::Block { state, clean: seq.clone(), part, k }, scale)
        }
        Paradigm::Scatter => {
            let part = part()?;
            let state = corrupt_tokens(seq, vocab, schedule, rng)?;
            (state.corrupted.clone(), Target::Scatter { state, clean: seq.clone(), part }, 1.0)
        }
        Paradigm::Jigsaw => {
            let part = part()?;
            let input = jigsaw_input(seq, &part, vocab.mask_id());
            (input, Target::Jigsaw { clean: seq.clone(), part, pad_id: vocab.pad_id() }, 1.0)
        }
    };
    Ok(Prepared { input: ModelInput::tokens(&input.tokens).with_coords(coords.cloned()), mask, target, scale })
}

/// Builds the input and supervision for one hybrid sequence.
pub fn prepare_hybrid<R: Rng + ?Sized>(
    paradigm: Paradigm,
    seq: &HybridSequence,
    block_size: usize,
    schedule: &MaskSchedule,
    rng: &mut R,
) -> Result<Prepared> {
    let len = seq.len();
    let p = seq.prompt_len();
    let mask = maskgen::training_mask(paradigm, len, p, block_size)?;
    let targets = seq.target_positions();
    let draw = |eligible: &[usize], rng: &mut R| -> Result<Vec<bool>> {
        let tau = sample_tau(schedule, rng);
        match schedule.kind {
            ScheduleKind::Uniform => sample_iid_flags(len, eligible, tau, rng),
            _ => {
                let k = sample_masked_count(eligible.len(), tau, rng)?;
                sample_weighted_flags(len, eligible, k, schedule, rng)
            }
        }
    };
    let (flags, hidden, scale) = match paradigm {
        Paradigm::Ar | Paradigm::Jigsaw => {
            let mut flags = vec![false; len];
            for &t in &targets {
                flags[t] = true;
            }
            (flags, vec![false; len], 1.0)
        }
        Paradigm::Mdm | Paradigm::Scatter => {
            let flags = draw(&targets, rng)?;
            (flags.clone(), flags, 1.0)
        }
        Paradigm::Block => {
            let part = BlockPartition::new(len, p, block_size)?;
            let k = rng.random_range(0..part.num_blocks.max(1));
            let range = part.block_range(k)?;
            let eligible: Vec<usize> = targets.iter().copied().filter(|t| range.contains(t)).collect();
            let flags = draw(&eligible, rng)?;
            (flags.clone(), flags, part.num_blocks as f64)
        }
    };
    Ok(Prepared {
        input: hybrid_input(seq, &hidden),
        mask,
        target: Target::Regression { seq: seq.clone(), flags, readout: Readout::for_paradigm(paradigm) },
        scale,
    })
}

impl Prepared {
    /// Loss on a model output for this example; `None` signals a skipped sample.
    pub fn loss<F: Real>(&self, out: &ForwardOutput<F>) -> Result<Option<Loss<F>>> {
        let loss = match &self.target {
            Target::Ar { clean, pad_id } => Some(loss_ar(out, clean, *pad_id)?),
            Target::Mdm { state, clean } => loss_mdm(out, state, clean)?,
            Target::Block { state, clean, part, k } => loss_block(out, state, clean, part, *k)?,
            Target::Scatter { state, clean, part } => loss_scatter(out, state, clean, part)?,
            Target::Jigsaw { clean, part, pad_id } => Some(loss_jigsaw(out, clean, part, *pad_id)?),
            Target::Regression { seq, flags, readout } => {
                if !flags.iter().any(|f| *f) {
                    None
                } else {
                    Some(loss_regression(out, seq, flags, *readout)?)
                }
            }
        };
        Ok(loss.map(|l| if self.scale != 1.0 { l.scaled(self.scale) } else { l }))
    }
}
