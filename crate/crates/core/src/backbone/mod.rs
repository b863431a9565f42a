//! Shared transformer backbone.
//!
//! Pre-norm residual blocks (RMS norm, rotary positions, gated SiLU
//! feed-forward) that accept an arbitrary [`AttentionMask`], with a token
//! head, a scalar regression head, or both. Forward and backward passes are
//! written out by hand and are generic over [`Real`] so the same code runs in
//! `f32` for training and `f64` for gradient checks.
//!
//! [`AttentionMask`]: crate::maskgen::AttentionMask

mod checkpoint;
mod model;
mod ops;
mod params;

use std::fmt::{Debug, Display};
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use model::{ForwardOutput, Gradients, InputCell, Model, ModelInput, OutputGrad, Tape};
pub use ops::{apply_rope, rope_scores};
pub use params::{LayerParams, Params};

/// Floating-point element type of the backbone.
pub trait Real:
    num_traits::Float
    + ndarray::LinalgScalar
    + ndarray::ScalarOperand
    + std::iter::Sum
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Send
    + Sync
    + Debug
    + Display
    + Default
    + 'static
{
    fn lit(x: f64) -> Self;
    fn f64(self) -> f64;
}

impl Real for f32 {
    #[inline]
    fn lit(x: f64) -> Self {
        x as f32
    }
    #[inline]
    fn f64(self) -> f64 {
        self as f64
    }
}

impl Real for f64 {
    #[inline]
    fn lit(x: f64) -> Self {
        x
    }
    #[inline]
    fn f64(self) -> f64 {
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Head {
    TokenLogits,
    ScalarRegression,
    Both,
}

impl Head {
    pub fn has_tokens(self) -> bool {
        matches!(self, Head::TokenLogits | Head::Both)
    }

    pub fn has_scalar(self) -> bool {
        matches!(self, Head::ScalarRegression | Head::Both)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub n_embd: usize,
    pub n_layer: usize,
    pub n_head: usize,
    /// Width of the gated feed-forward layer.
    pub ffn_hidden: usize,
    pub vocab_size: usize,
    pub max_len: usize,
    pub use_coordinate_embeddings: bool,
    /// Dimension of continuous `x` inputs, when the model reads hybrid sequences.
    pub continuous_input_dim: Option<usize>,
    pub head: Head,
    pub rope_base: f64,
    pub norm_eps: f64,
}

impl ModelConfig {
    /// Token model with the default feed-forward width (8/3 · n_embd, rounded up to 8).
    pub fn tokens(n_embd: usize, n_layer: usize, n_head: usize, vocab_size: usize, max_len: usize) -> Self {
        Self {
            n_embd,
            n_layer,
            n_head,
            ffn_hidden: default_ffn_hidden(n_embd),
            vocab_size,
            max_len,
            use_coordinate_embeddings: false,
            continuous_input_dim: None,
            head: Head::TokenLogits,
            rope_base: 10_000.0,
            norm_eps: 1e-6,
        }
    }

    /// Regression model over hybrid `(x, y)` sequences.
    pub fn regression(n_embd: usize, n_layer: usize, n_head: usize, d: usize, max_len: usize) -> Self {
        Self {
            vocab_size: 0,
            continuous_input_dim: Some(d),
            head: Head::ScalarRegression,
            ..Self::tokens(n_embd, n_layer, n_head, 0, max_len)
        }
    }

    pub fn with_coordinates(mut self, on: bool) -> Self {
        self.use_coordinate_embeddings = on;
        self
    }

    pub fn head_dim(&self) -> usize {
        self.n_embd / self.n_head
    }

    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(Error::Config(m));
        if self.n_embd == 0 || self.n_head == 0 {
            return err("n_embd and n_head must be positive".into());
        }
        if self.n_embd % self.n_head != 0 {
            return err(format!("n_embd {} not divisible by n_head {}", self.n_embd, self.n_head));
        }
        if self.head_dim() % 2 != 0 {
            return err(format!("rotary encoding needs an even head dim, got {}", self.head_dim()));
        }
        if self.use_coordinate_embeddings && self.n_embd % 3 != 0 {
            return err(format!("coordinate embeddings need n_embd divisible by 3, got {}", self.n_embd));
        }
        if self.head.has_tokens() && self.vocab_size == 0 {
            return err("token head needs a vocabulary".into());
        }
        if self.vocab_size == 0 && self.continuous_input_dim.is_none() {
            return err("model has no input embedding".into());
        }
        if self.max_len == 0 {
            return err("max_len must be positive".into());
        }
        Ok(())
    }
}

pub fn default_ffn_hidden(n_embd: usize) -> usize {
    (8 * n_embd / 3).div_ceil(8) * 8
}

/// Exact number of trainable parameters of a model built from `config`.
pub fn param_count(config: &ModelConfig) -> usize {
    let d = config.n_embd;
    let h = config.ffn_hidden;
    let mut n = config.vocab_size * d;
    if let Some(din) = config.continuous_input_dim {
        // x read-in + bias, y read-in + bias, mask vector
        n += din * d + d + d + d + d;
    }
    if config.use_coordinate_embeddings {
        n += 3 * 9 * (d / 3);
    }
    n += config.n_layer * (2 * d + 4 * d * d + 3 * d * h);
    n += d;
    if config.head.has_tokens() {
        n += d * config.vocab_size;
    }
    if config.head.has_scalar() {
        n += d + 1;
    }
    n
}

/// Row, column and 3×3-box indices of a Sudoku grid cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GridCoord {
    pub row: u8,
    pub col: u8,
    pub box_: u8,
}

pub fn coord_ids(i: usize) -> Result<GridCoord> {
    if i >= 81 {
        return Err(Error::Grid(i));
    }
    let r = i / 9;
    let c = i % 9;
    let b = (r / 3) * 3 + c / 3;
    Ok(GridCoord { row: r as u8, col: c as u8, box_: b as u8 })
}

/// Per-position grid coordinates; `None` for positions outside any grid.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct CoordinateIds(pub Vec<Option<GridCoord>>);

impl CoordinateIds {
    /// Coordinates for `copies` consecutive 81-cell grids.
    pub fn sudoku(copies: usize) -> Self {
        Self((0..copies * 81).map(|i| Some(coord_ids(i % 81).unwrap())).collect())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn coord_examples() {
        assert_eq!(coord_ids(0).unwrap(), GridCoord { row: 0, col: 0, box_: 0 });
        assert_eq!(coord_ids(40).unwrap(), GridCoord { row: 4, col: 4, box_: 4 });
        assert_eq!(coord_ids(80).unwrap(), GridCoord { row: 8, col: 8, box_: 8 });
        assert_eq!(coord_ids(29).unwrap(), GridCoord { row: 3, col: 2, box_: 3 });
        assert!(matches!(coord_ids(81), Err(Error::Grid(81))));
    }

    #[test]
    fn reference_scale_parameter_counts() {
        // Small ICL / path-finding: n_embd 192, 8 layers, 6 heads (~4M)
        let icl = ModelConfig::regression(192, 8, 6, 10, 80);
        let n = param_count(&icl);
        assert!((3_000_000..=5_000_000).contains(&n), "{n}");
        let pf = ModelConfig::tokens(192, 8, 6, 106, 128);
        let n = param_count(&pf);
        assert!((3_000_000..=5_000_000).contains(&n), "{n}");
        // Small Sudoku: n_embd 384, 6 layers (~12M)
        let sudoku = ModelConfig::tokens(384, 6, 6, 12, 162).with_coordinates(true);
        let n = param_count(&sudoku);
        assert!((9_000_000..=15_000_000).contains(&n), "{n}");
    }

    #[test]
    fn zero_layers_is_embeddings_plus_head() {
        let c = ModelConfig::tokens(12, 0, 2, 7, 16);
        assert_eq!(param_count(&c), 7 * 12 + 12 + 12 * 7);
    }

    #[test]
    fn config_validation() {
        assert!(ModelConfig::tokens(16, 2, 3, 5, 8).validate().is_err());
        assert!(ModelConfig::tokens(16, 2, 2, 5, 8).with_coordinates(true).validate().is_err());
        assert!(ModelConfig::tokens(12, 2, 2, 5, 8).with_coordinates(true).validate().is_ok());
        assert!(ModelConfig::tokens(12, 2, 2, 0, 8).validate().is_err());
    }
}
