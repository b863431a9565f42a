//! Analytic FLOPs from matrix-multiply dimensions. A multiply-accumulate
//! counts as two FLOPs and a training step costs three forward passes.

use crate::backbone::ModelConfig;

/// Multiply-accumulates of one forward pass over `len` positions.
pub fn forward_macs(c: &ModelConfig, len: usize) -> u64 {
    let (l, d, h) = (len as u64, c.n_embd as u64, c.ffn_hidden as u64);
    // q, k, v, o projections + scores and weighted values + gate, up, down
    let per_layer = 4 * l * d * d + 2 * l * l * d + 3 * l * d * h;
    let mut macs = c.n_layer as u64 * per_layer;
    if c.head.has_tokens() {
        macs += l * d * c.vocab_size as u64;
    }
    if c.head.has_scalar() {
        macs += l * d;
    }
    if let Some(dx) = c.continuous_input_dim {
        macs += l * d * dx as u64;
    }
    macs
}

pub fn forward_flops(c: &ModelConfig, len: usize) -> u64 {
    2 * forward_macs(c, len)
}

/// `C_step`: forward plus a backward pass costing twice the forward, per sample.
pub fn profile_step_flops(c: &ModelConfig, len: usize, batch_size: usize) -> u64 {
    3 * batch_size as u64 * forward_flops(c, len)
}

/// Cumulative compute after `step` updates.
pub fn cumulative_flops(step: u64, c_step: u64) -> u64 {
    step * c_step
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn step_is_three_forwards_and_linear_in_batch() {
        let c = ModelConfig::tokens(16, 2, 2, 10, 12);
        let f = forward_flops(&c, 12);
        assert_eq!(profile_step_flops(&c, 12, 1), 3 * f);
        assert_eq!(profile_step_flops(&c, 12, 8), 2 * profile_step_flops(&c, 12, 4));
        assert_eq!(cumulative_flops(7, 11), 77);
    }
}
