//! AdamW with decoupled weight decay and global-norm clipping.

use ndarray::Zip;

use crate::backbone::Params;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Applied to matrices only; gains, biases and vectors are not decayed.
    pub weight_decay: f64,
    /// Global L2 norm cap; non-positive disables clipping.
    pub grad_clip: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self { lr: 2e-4, beta1: 0.9, beta2: 0.95, eps: 1e-8, weight_decay: 0.01, grad_clip: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamW {
    pub config: AdamWConfig,
    pub m: Params<f32>,
    pub v: Params<f32>,
    /// Completed updates.
    pub t: u64,
}

impl AdamW {
    pub fn new(config: AdamWConfig, params: &Params<f32>) -> Self {
        Self { config, m: params.zeros_like(), v: params.zeros_like(), t: 0 }
    }

    /// Applies one update and returns the pre-clip gradient norm.
    pub fn step(&mut self, params: &mut Params<f32>, grads: &Params<f32>) -> f64 {
        let c = self.config;
        let norm = grads.sq_norm().sqrt();
        let clip = if c.grad_clip > 0.0 && norm > c.grad_clip { c.grad_clip / norm } else { 1.0 };
        self.t += 1;
        let bc1 = 1.0 - c.beta1.powi(self.t as i32);
        let bc2 = 1.0 - c.beta2.powi(self.t as i32);
        let (b1, b2) = (c.beta1 as f32, c.beta2 as f32);
        let step = (c.lr / bc1) as f32;
        let bc2_sqrt = bc2.sqrt() as f32;
        let (eps, decay, clip) = (c.eps as f32, (c.lr * c.weight_decay) as f32, clip as f32);
        for (((_, mut p), (_, g)), ((_, mut m), (_, mut v))) in params
            .tensors_mut()
            .into_iter()
            .zip(grads.tensors())
            .zip(self.m.tensors_mut().into_iter().zip(self.v.tensors_mut()))
        {
            let wd = if p.ndim() >= 2 { decay } else { 0.0 };
            Zip::from(&mut p).and(&g).and(&mut m).and(&mut v).for_each(|p, &g, m, v| {
                let g = g * clip;
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                *p -= wd * *p;
                *p -= step * *m / ((*v).sqrt() / bc2_sqrt + eps);
            });
        }
        norm
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backbone::ModelConfig;
    use crate::rng;

    #[test]
    fn first_step_moves_each_weight_by_lr() {
        // with bias correction the first update is lr·sign(g) (up to eps)
        let cfg = ModelConfig::tokens(8, 1, 2, 5, 4);
        let mut p = Params::<f32>::init(&cfg, &mut rng::stream(0, "t", 0));
        let before = p.clone();
        let mut g = p.zeros_like();
        g.final_norm.fill(0.01);
        let mut opt = AdamW::new(AdamWConfig { lr: 0.1, weight_decay: 0.0, ..Default::default() }, &p);
        opt.step(&mut p, &g);
        for (a, b) in p.final_norm.iter().zip(before.final_norm.iter()) {
            assert!((b - a - 0.1).abs() < 1e-5);
        }
        assert_eq!(p.layers, before.layers);
    }

    #[test]
    fn decay_only_touches_matrices_and_clip_caps_norm() {
        let cfg = ModelConfig::tokens(8, 1, 2, 5, 4);
        let mut p = Params::<f32>::init(&cfg, &mut rng::stream(0, "t", 0));
        let before = p.clone();
        let g = p.zeros_like();
        let mut opt = AdamW::new(AdamWConfig { lr: 0.5, weight_decay: 0.1, ..Default::default() }, &p);
        opt.step(&mut p, &g);
        assert_eq!(p.final_norm, before.final_norm);
        let w0 = before.layers[0].wq[[0, 0]];
        assert!((p.layers[0].wq[[0, 0]] - w0 * 0.95).abs() < 1e-7);

        let mut big = p.zeros_like();
        big.final_norm.fill(100.0);
        let norm = opt.step(&mut p, &big);
        assert!((norm - 100.0 * 8f64.sqrt()).abs() < 1e-3);
    }
}
