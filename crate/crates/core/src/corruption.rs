//! Forward masking process and masking-level schedules.

use rand::Rng;
use rand_distr::{Binomial, Distribution};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seqcore::{BlockPartition, HybridSequence, TokenSequence, Vocab};

/// Default training clamp for the masking level.
pub const DEFAULT_TAU_RANGE: (f64, f64) = (0.1, 0.9);

/// A corrupted sequence together with its masking level.
#[derive(Debug, Clone, PartialEq)]
pub struct CorruptionState {
    pub corrupted: TokenSequence,
    pub tau: f64,
    /// `masked[i]` is true where the mask symbol was written.
    pub masked: Vec<bool>,
}

impl CorruptionState {
    pub fn masked_count(&self) -> usize {
        self.masked.iter().filter(|m| **m).count()
    }

    pub fn masked_positions(&self) -> Vec<usize> {
        (0..self.masked.len()).filter(|&i| self.masked[i]).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScheduleKind {
    #[default]
    Uniform,
    /// Earlier response positions are masked more often.
    ReverseBias,
    /// Later response positions are masked more often.
    ForwardBias,
}

impl std::str::FromStr for ScheduleKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "uniform" => Ok(ScheduleKind::Uniform),
            "reverse" | "reversebias" | "reverse_bias" => Ok(ScheduleKind::ReverseBias),
            "forward" | "forwardbias" | "forward_bias" => Ok(ScheduleKind::ForwardBias),
            other => Err(Error::Schedule(format!("unknown schedule {other:?}"))),
        }
    }
}

impl std::fmt::Display for ScheduleKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ScheduleKind::Uniform => "uniform",
            ScheduleKind::ReverseBias => "reverse",
            ScheduleKind::ForwardBias => "forward",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaskSchedule {
    pub kind: ScheduleKind,
    pub clamp: Option<(f64, f64)>,
}

impl Default for MaskSchedule {
    fn default() -> Self {
        Self { kind: ScheduleKind::Uniform, clamp: Some(DEFAULT_TAU_RANGE) }
    }
}

impl MaskSchedule {
    pub fn new(kind: ScheduleKind, clamp: Option<(f64, f64)>) -> Result<Self> {
        if let Some((lo, hi)) = clamp {
            if !(lo > 0.0 && lo <= hi && hi < 1.0) {
                return Err(Error::Schedule(format!("invalid clamp [{lo}, {hi}]")));
            }
        }
        Ok(Self { kind, clamp })
    }

    /// Relative masking weight of the 1-based response-local index `i` out of `n`.
    pub fn weight(&self, i: usize, n: usize) -> f64 {
        match self.kind {
            ScheduleKind::Uniform => 1.0,
            ScheduleKind::ReverseBias => (n - i + 1) as f64,
            ScheduleKind::ForwardBias => i as f64,
        }
    }
}

pub fn sample_tau<R: Rng + ?Sized>(schedule: &MaskSchedule, rng: &mut R) -> f64 {
    match schedule.clamp {
        Some((lo, hi)) if lo == hi => lo,
        Some((lo, hi)) => lo + (hi - lo) * rng.random::<f64>(),
        // (0, 1]: the 1/tau weight must stay finite
        None => 1.0 - rng.random::<f64>(),
    }
}

fn check_tau(tau: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&tau) {
        return Err(Error::Schedule(format!("tau {tau} outside [0, 1]")));
    }
    Ok(())
}

/// Independently flags each eligible position with probability `tau`.
pub fn sample_iid_flags<R: Rng + ?Sized>(
    len: usize,
    eligible: &[usize],
    tau: f64,
    rng: &mut R,
) -> Result<Vec<bool>> {
    check_tau(tau)?;
    let mut flags = vec![false; len];
    for &i in eligible {
        // random::<f64>() is in [0, 1): tau = 0 never masks, tau = 1 always does
        flags[i] = rng.random::<f64>() < tau;
    }
    Ok(flags)
}

/// Flags exactly `k` of the eligible positions, drawn without replacement
/// with schedule weights over their 1-based order.
pub fn sample_weighted_flags<R: Rng + ?Sized>(
    len: usize,
    eligible: &[usize],
    k: usize,
    schedule: &MaskSchedule,
    rng: &mut R,
) -> Result<Vec<bool>> {
    let n = eligible.len();
    if k > n {
        return Err(Error::Schedule(format!("cannot mask {k} of {n} positions")));
    }
    let mut flags = vec![false; len];
    let mut pool: Vec<(usize, f64)> =
        eligible.iter().enumerate().map(|(i, &pos)| (pos, schedule.weight(i + 1, n))).collect();
    for _ in 0..k {
        let total: f64 = pool.iter().map(|(_, w)| w).sum();
        let mut r = rng.random::<f64>() * total;
        let mut pick = pool.len() - 1;
        for (idx, (_, w)) in pool.iter().enumerate() {
            if r < *w {
                pick = idx;
                break;
            }
            r -= w;
        }
        let (pos, _) = pool.remove(pick);
        flags[pos] = true;
    }
    Ok(flags)
}

pub fn sample_masked_count<R: Rng + ?Sized>(n: usize, tau: f64, rng: &mut R) -> Result<usize> {
    check_tau(tau)?;
    let dist = Binomial::new(n as u64, tau).map_err(|e| Error::Schedule(e.to_string()))?;
    Ok(dist.sample(rng) as usize)
}

fn apply(seq: &TokenSequence, vocab: &Vocab, tau: f64, masked: Vec<bool>) -> CorruptionState {
    let tokens = seq
        .tokens
        .iter()
        .zip(&masked)
        .map(|(&t, &m)| if m { vocab.mask_id() } else { t })
        .collect();
    CorruptionState {
        corrupted: TokenSequence { tokens, prompt_len: seq.prompt_len },
        tau,
        masked,
    }
}

/// Absorbing-mask forward process over the (non-pad) response.
pub fn corrupt_iid<R: Rng + ?Sized>(
    seq: &TokenSequence,
    vocab: &Vocab,
    tau: f64,
    rng: &mut R,
) -> Result<CorruptionState> {
    let eligible = seq.response_targets(vocab.pad_id());
    let masked = sample_iid_flags(seq.len(), &eligible, tau, rng)?;
    Ok(apply(seq, vocab, tau, masked))
}

/// Masks exactly `k` response positions with position-dependent weights.
/// `tau` is recorded for the loss weight; callers draw `k ~ Binomial(n, tau)`.
pub fn corrupt_weighted<R: Rng + ?Sized>(
    seq: &TokenSequence,
    vocab: &Vocab,
    k: usize,
    tau: f64,
    schedule: &MaskSchedule,
    rng: &mut R,
) -> Result<CorruptionState> {
    check_tau(tau)?;
    let eligible = seq.response_targets(vocab.pad_id());
    let masked = sample_weighted_flags(seq.len(), &eligible, k, schedule, rng)?;
    Ok(apply(seq, vocab, tau, masked))
}

/// Forward process restricted to one response block; everything else stays clean.
pub fn corrupt_block<R: Rng + ?Sized>(
    seq: &TokenSequence,
    vocab: &Vocab,
    part: &BlockPartition,
    block: usize,
    tau: f64,
    rng: &mut R,
) -> Result<CorruptionState> {
    let range = part.block_range(block)?;
    let eligible: Vec<usize> = seq
        .response_targets(vocab.pad_id())
        .into_iter()
        .filter(|p| range.contains(p))
        .collect();
    let masked = sample_iid_flags(seq.len(), &eligible, tau, rng)?;
    Ok(apply(seq, vocab, tau, masked))
}

/// Masks response `y` cells of a hybrid sequence i.i.d.; `x` cells never are.
pub fn corrupt_hybrid<R: Rng + ?Sized>(
    seq: &HybridSequence,
    eligible: Option<&[usize]>,
    tau: f64,
    rng: &mut R,
) -> Result<Vec<bool>> {
    let targets = seq.target_positions();
    sample_iid_flags(seq.len(), eligible.unwrap_or(&targets), tau, rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use std::collections::BTreeMap;

    fn vocab() -> Vocab {
        Vocab::new(10, 9, Some(8), BTreeMap::new()).unwrap()
    }

    fn seq(prompt: usize, response: usize) -> TokenSequence {
        TokenSequence::new((0..prompt + response).map(|i| (i % 7) as u32).collect(), prompt).unwrap()
    }

    fn check_consistent(clean: &TokenSequence, st: &CorruptionState, mask_id: u32) {
        for i in 0..clean.len() {
            if st.masked[i] {
                assert_eq!(st.corrupted.tokens[i], mask_id);
                assert!(i >= clean.prompt_len);
            } else {
                assert_eq!(st.corrupted.tokens[i], clean.tokens[i]);
            }
        }
    }

    #[test]
    fn iid_extremes() {
        let v = vocab();
        let s = seq(3, 12);
        let mut rng = stream(1, "t", 0);
        let st = corrupt_iid(&s, &v, 0.0, &mut rng).unwrap();
        assert_eq!(st.corrupted, s);
        assert_eq!(st.masked_count(), 0);
        let st = corrupt_iid(&s, &v, 1.0, &mut rng).unwrap();
        assert_eq!(st.masked_positions(), (3..15).collect::<Vec<_>>());
        check_consistent(&s, &st, 9);
        assert!(matches!(corrupt_iid(&s, &v, 1.5, &mut rng), Err(Error::Schedule(_))));
        assert!(matches!(corrupt_iid(&s, &v, -0.1, &mut rng), Err(Error::Schedule(_))));
    }

    #[test]
    fn iid_half_masking_concentrates() {
        // P(|Bin(10^4, 1/2) - 5000| > 300) ≈ 2·Φ(-6) ≈ 2e-9
        let v = vocab();
        let s = seq(0, 10_000);
        let mut rng = stream(2, "t", 0);
        let st = corrupt_iid(&s, &v, 0.5, &mut rng).unwrap();
        let c = st.masked_count();
        assert!((4700..=5300).contains(&c), "{c}");
        check_consistent(&s, &st, 9);
    }

    #[test]
    fn pads_are_never_masked() {
        let v = vocab();
        let s = TokenSequence::new(vec![1, 2, 3, 8, 8], 1).unwrap();
        let st = corrupt_iid(&s, &v, 1.0, &mut stream(0, "t", 0)).unwrap();
        assert_eq!(st.masked, vec![false, true, true, false, false]);
    }

    #[test]
    fn weighted_extremes_and_errors() {
        let v = vocab();
        let s = seq(2, 6);
        let sched = MaskSchedule::new(ScheduleKind::ReverseBias, None).unwrap();
        let mut rng = stream(3, "t", 0);
        assert_eq!(corrupt_weighted(&s, &v, 0, 0.5, &sched, &mut rng).unwrap().masked_count(), 0);
        for kind in [ScheduleKind::Uniform, ScheduleKind::ReverseBias, ScheduleKind::ForwardBias] {
            let sched = MaskSchedule::new(kind, None).unwrap();
            let st = corrupt_weighted(&s, &v, 6, 0.5, &sched, &mut rng).unwrap();
            assert_eq!(st.masked_positions(), (2..8).collect::<Vec<_>>());
        }
        assert!(corrupt_weighted(&s, &v, 7, 0.5, &sched, &mut rng).is_err());
    }

    #[test]
    fn reverse_bias_prefers_first_position() {
        // weights (2, 1) → P(first masked) = 2/3
        let v = vocab();
        let s = seq(0, 2);
        let sched = MaskSchedule::new(ScheduleKind::ReverseBias, None).unwrap();
        let mut rng = stream(4, "t", 0);
        let n = 100_000;
        let hits = (0..n)
            .filter(|_| corrupt_weighted(&s, &v, 1, 0.5, &sched, &mut rng).unwrap().masked[0])
            .count();
        let p = hits as f64 / n as f64;
        assert!((p - 2.0 / 3.0).abs() < 0.02, "{p}");
    }

    #[test]
    fn block_corruption_stays_in_block() {
        let v = vocab();
        let s = seq(2, 12);
        let part = crate::seqcore::partition_response(&s, 4).unwrap();
        let mut rng = stream(5, "t", 0);
        let st = corrupt_block(&s, &v, &part, 1, 1.0, &mut rng).unwrap();
        assert_eq!(st.masked_positions(), vec![6, 7, 8, 9]);
        let st = corrupt_block(&s, &v, &part, 1, 0.0, &mut rng).unwrap();
        assert_eq!(st.corrupted, s);
        for i in 0..1000 {
            let tau = (i % 10) as f64 / 9.0;
            let st = corrupt_block(&s, &v, &part, 1, tau, &mut rng).unwrap();
            assert!(st.masked_positions().iter().all(|p| (6..10).contains(p)));
        }
        assert!(matches!(corrupt_block(&s, &v, &part, 3, 0.5, &mut rng), Err(Error::Partition(_))));
    }

    #[test]
    fn tau_sampling() {
        let mut rng = stream(6, "t", 0);
        let fixed = MaskSchedule::new(ScheduleKind::Uniform, Some((0.5, 0.5))).unwrap();
        assert!((0..100).all(|_| sample_tau(&fixed, &mut rng) == 0.5));
        let sched = MaskSchedule::default();
        let draws: Vec<f64> = (0..100_000).map(|_| sample_tau(&sched, &mut rng)).collect();
        assert!(draws.iter().all(|t| (0.1..=0.9).contains(t)));
        let mean = draws.iter().sum::<f64>() / draws.len() as f64;
        assert!((0.49..=0.51).contains(&mean), "{mean}");
        let open = MaskSchedule { kind: ScheduleKind::Uniform, clamp: None };
        assert!((0..10_000).all(|_| {
            let t = sample_tau(&open, &mut rng);
            t > 0.0 && t <= 1.0
        }));
        assert!(MaskSchedule::new(ScheduleKind::Uniform, Some((0.0, 0.5))).is_err());
        assert!(MaskSchedule::new(ScheduleKind::Uniform, Some((0.6, 0.5))).is_err());
    }

    #[test]
    fn identical_seeds_identical_states() {
        let v = vocab();
        let s = seq(4, 40);
        let a = corrupt_iid(&s, &v, 0.4, &mut stream(9, "c", 1)).unwrap();
        let b = corrupt_iid(&s, &v, 0.4, &mut stream(9, "c", 1)).unwrap();
        assert_eq!(a, b);
    }
}
