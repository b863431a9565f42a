//! In-context linear regression: `y = wᵀx` with `w, x ~ N(0, I_d)`.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seqcore::HybridSequence;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IclConfig {
    pub d: usize,
    /// Demonstration pairs.
    pub p: usize,
    /// Query pairs.
    pub r: usize,
    /// Rescale `w` to unit length, so that `E[y²] = 1` instead of `d`.
    pub unit_norm: bool,
}

impl Default for IclConfig {
    fn default() -> Self {
        Self { d: 10, p: 20, r: 20, unit_norm: false }
    }
}

impl IclConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d == 0 || self.p == 0 || self.r == 0 {
            return Err(Error::Config(format!("icl needs d, P, R >= 1, got {}, {}, {}", self.d, self.p, self.r)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IclInstance {
    pub seq: HybridSequence,
    pub w: Vec<f64>,
}

pub fn dot(w: &[f64], x: &[f64]) -> f64 {
    w.iter().zip(x).map(|(a, b)| a * b).sum()
}

pub fn gen_icl<R: Rng + ?Sized>(cfg: &IclConfig, rng: &mut R) -> Result<IclInstance> {
    cfg.validate()?;
    let mut normal = |n: usize| -> Vec<f64> { (0..n).map(|_| StandardNormal.sample(rng)).collect() };
    let mut w = normal(cfg.d);
    if cfg.unit_norm {
        let norm = dot(&w, &w).sqrt();
        if norm > 0.0 {
            w.iter_mut().for_each(|v| *v /= norm);
        }
    }
    let mut pair = || {
        let x = normal(cfg.d);
        let y = dot(&w, &x);
        (x, y)
    };
    let context: Vec<_> = (0..cfg.p).map(|_| pair()).collect();
    let queries: Vec<_> = (0..cfg.r).map(|_| pair()).collect();
    Ok(IclInstance { seq: HybridSequence::from_pairs(&context, &queries)?, w })
}

/// Mean squared error over the query targets.
pub fn eval_icl_mse(preds: &[f64], seq: &HybridSequence) -> Result<f64> {
    let targets = seq.target_values();
    if preds.len() != targets.len() {
        return Err(Error::Shape(format!("{} predictions for {} targets", preds.len(), targets.len())));
    }
    if targets.is_empty() {
        return Err(Error::Shape("no targets".into()));
    }
    Ok(preds.iter().zip(&targets).map(|(p, y)| (p - y) * (p - y)).sum::<f64>() / targets.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use crate::seqcore::Cell;

    #[test]
    fn one_dimensional_example() {
        assert_eq!(dot(&[1.0], &[0.5]), 0.5);
    }

    #[test]
    fn layout_and_exactness() {
        let cfg = IclConfig { d: 3, p: 4, r: 2, unit_norm: false };
        let inst = gen_icl(&cfg, &mut stream(1, "icl", 0)).unwrap();
        assert_eq!(inst.seq.len(), 2 * (4 + 2));
        assert_eq!(inst.seq.target_positions(), vec![9, 11]);
        for pair in inst.seq.cells.chunks(2) {
            let (Cell::Vector(x), Cell::Scalar(y)) = (&pair[0], &pair[1]) else { panic!("bad pair") };
            assert_eq!(*y - dot(&inst.w, x), 0.0);
        }
        assert_eq!(inst, gen_icl(&cfg, &mut stream(1, "icl", 0)).unwrap());
    }

    #[test]
    fn unit_norm_rescales_w() {
        let cfg = IclConfig { d: 20, unit_norm: true, ..Default::default() };
        let inst = gen_icl(&cfg, &mut stream(2, "icl", 0)).unwrap();
        assert!((dot(&inst.w, &inst.w) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn mse_examples() {
        let seq = HybridSequence::from_pairs(&[(vec![1.0], 1.0)], &[(vec![2.0], 2.0)]).unwrap();
        assert_eq!(eval_icl_mse(&[2.0], &seq).unwrap(), 0.0);
        assert_eq!(eval_icl_mse(&[5.0], &seq).unwrap(), 9.0);
        assert!(matches!(eval_icl_mse(&[1.0, 2.0], &seq), Err(Error::Shape(_))));
        assert!(IclConfig { d: 0, ..Default::default() }.validate().is_err());
    }
}
