use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};

use super::Real;

/// Root-mean-square normalization. Returns the output and the per-row
/// inverse RMS needed by the backward pass.
pub(crate) fn rmsnorm<F: Real>(x: &Array2<F>, gain: &Array1<F>, eps: f64) -> (Array2<F>, Array1<F>) {
    let d = F::lit(x.ncols() as f64);
    let inv = x.map_axis(Axis(1), |row| {
        let ms = row.iter().map(|&v| v * v).sum::<F>() / d;
        F::one() / (ms + F::lit(eps)).sqrt()
    });
    let mut y = x.clone();
    Zip::from(y.rows_mut()).and(&inv).for_each(|mut row, &r| {
        Zip::from(&mut row).and(gain).for_each(|v, &g| *v = *v * r * g);
    });
    (y, inv)
}

/// Backward of [`rmsnorm`]; accumulates the gain gradient into `dgain`.
pub(crate) fn rmsnorm_backward<F: Real>(
    dy: &Array2<F>,
    x: &Array2<F>,
    gain: &Array1<F>,
    inv: &Array1<F>,
    dgain: &mut Array1<F>,
) -> Array2<F> {
    let d = F::lit(x.ncols() as f64);
    let mut dx = Array2::zeros(x.raw_dim());
    for ((mut dx_row, (dy_row, x_row)), &r) in dx
        .rows_mut()
        .into_iter()
        .zip(dy.rows().into_iter().zip(x.rows()))
        .zip(inv.iter())
    {
        let mut dot = F::zero();
        for i in 0..x_row.len() {
            let xhat = x_row[i] * r;
            let dxhat = dy_row[i] * gain[i];
            dgain[i] += dy_row[i] * xhat;
            dot += dxhat * xhat;
        }
        let mean = dot / d;
        for i in 0..x_row.len() {
            let xhat = x_row[i] * r;
            dx_row[i] = r * (dy_row[i] * gain[i] - xhat * mean);
        }
    }
    dx
}

/// Rotation table `(cos, sin)` of shape `[len, head_dim / 2]`.
pub(crate) fn rope_table(len: usize, head_dim: usize, base: f64, offset: usize) -> (Array2<f64>, Array2<f64>) {
    let half = head_dim / 2;
    let mut cos = Array2::zeros((len, half));
    let mut sin = Array2::zeros((len, half));
    for p in 0..len {
        let pos = (p + offset) as f64;
        for i in 0..half {
            let theta = pos * base.powf(-2.0 * i as f64 / head_dim as f64);
            cos[[p, i]] = theta.cos();
            sin[[p, i]] = theta.sin();
        }
    }
    (cos, sin)
}

/// Rotates interleaved pairs of every head in place. `inverse` applies the
/// transpose rotation, which is the backward of the forward rotation.
pub(crate) fn rope_inplace<F: Real>(
    x: &mut Array2<F>,
    n_head: usize,
    table: &(Array2<f64>, Array2<f64>),
    inverse: bool,
) {
    let hd = x.ncols() / n_head;
    let half = hd / 2;
    let (cos, sin) = table;
    for (p, mut row) in x.rows_mut().into_iter().enumerate() {
        for h in 0..n_head {
            for i in 0..half {
                let c = F::lit(cos[[p, i]]);
                let s = if inverse { -F::lit(sin[[p, i]]) } else { F::lit(sin[[p, i]]) };
                let a = h * hd + 2 * i;
                let (x0, x1) = (row[a], row[a + 1]);
                row[a] = x0 * c - x1 * s;
                row[a + 1] = x0 * s + x1 * c;
            }
        }
    }
}

/// Applies the rotary encoding to `x` (`[len, n_head·head_dim]`) with
/// absolute positions starting at `offset`.
pub fn apply_rope<F: Real>(x: &Array2<F>, n_head: usize, base: f64, offset: usize) -> Array2<F> {
    let table = rope_table(x.nrows(), x.ncols() / n_head, base, offset);
    let mut out = x.clone();
    rope_inplace(&mut out, n_head, &table, false);
    out
}

/// Single-head attention logits `rot(q)·rot(k)` for queries and keys placed
/// at the given absolute positions.
pub fn rope_scores(q: ArrayView2<f64>, k: ArrayView2<f64>, q_pos: usize, k_pos: usize, base: f64) -> Array2<f64> {
    let qr = apply_rope(&q.to_owned(), 1, base, q_pos);
    let kr = apply_rope(&k.to_owned(), 1, base, k_pos);
    qr.dot(&kr.t())
}

#[inline]
pub(crate) fn sigmoid<F: Real>(x: F) -> F {
    F::one() / (F::one() + (-x).exp())
}

#[inline]
pub(crate) fn silu<F: Real>(x: F) -> F {
    x * sigmoid(x)
}

#[inline]
pub(crate) fn silu_grad<F: Real>(x: F) -> F {
    let s = sigmoid(x);
    s * (F::one() + x * (F::one() - s))
}

/// Log-softmax of a row, computed stably.
pub(crate) fn log_softmax<F: Real>(row: ndarray::ArrayView1<F>) -> Vec<F> {
    let max = row.iter().fold(F::neg_infinity(), |m, &v| m.max(v));
    let lse = row.iter().map(|&v| (v - max).exp()).sum::<F>().ln() + max;
    row.iter().map(|&v| v - lse).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use rand::Rng;

    fn random(rows: usize, cols: usize, seed: u64) -> Array2<f64> {
        let mut rng = stream(seed, "ops", 0);
        Array2::from_shape_fn((rows, cols), |_| rng.random::<f64>() * 2.0 - 1.0)
    }

    #[test]
    fn rmsnorm_backward_matches_finite_differences() {
        let x = random(3, 6, 1);
        let gain = Array1::from_vec(vec![0.5, 1.0, 1.5, -0.3, 0.8, 1.2]);
        let w = random(3, 6, 2);
        let loss = |x: &Array2<f64>, g: &Array1<f64>| (&rmsnorm(x, g, 1e-6).0 * &w).sum();
        let (_, inv) = rmsnorm(&x, &gain, 1e-6);
        let mut dg = Array1::zeros(6);
        let dx = rmsnorm_backward(&w, &x, &gain, &inv, &mut dg);
        let h = 1e-6;
        for i in 0..3 {
            for j in 0..6 {
                let mut xp = x.clone();
                xp[[i, j]] += h;
                let mut xm = x.clone();
                xm[[i, j]] -= h;
                let fd = (loss(&xp, &gain) - loss(&xm, &gain)) / (2.0 * h);
                assert!((fd - dx[[i, j]]).abs() < 1e-7, "{fd} vs {}", dx[[i, j]]);
            }
        }
        for j in 0..6 {
            let mut gp = gain.clone();
            gp[j] += h;
            let mut gm = gain.clone();
            gm[j] -= h;
            let fd = (loss(&x, &gp) - loss(&x, &gm)) / (2.0 * h);
            assert!((fd - dg[j]).abs() < 1e-7);
        }
    }

    #[test]
    fn rope_inverse_undoes_rotation() {
        let x = random(5, 8, 3);
        let table = rope_table(5, 4, 10_000.0, 0);
        let mut y = x.clone();
        rope_inplace(&mut y, 2, &table, false);
        rope_inplace(&mut y, 2, &table, true);
        assert!((&y - &x).iter().all(|d| d.abs() < 1e-12));
    }

    #[test]
    fn rope_scores_depend_only_on_relative_position() {
        let q = random(1, 8, 4);
        let k = random(1, 8, 5);
        for (m, n) in [(3usize, 1usize), (10, 10), (0, 7)] {
            let base = rope_scores(q.view(), k.view(), m, n, 10_000.0)[[0, 0]];
            for shift in [1usize, 17, 250] {
                let s = rope_scores(q.view(), k.view(), m + shift, n + shift, 10_000.0)[[0, 0]];
                assert!((s - base).abs() < 1e-5, "{s} vs {base}");
            }
        }
    }

    #[test]
    fn silu_grad_matches_finite_difference() {
        for &x in &[-3.0f64, -0.5, 0.0, 0.7, 4.0] {
            let fd = (silu(x + 1e-6) - silu(x - 1e-6)) / 2e-6;
            assert!((fd - silu_grad(x)).abs() < 1e-8);
        }
    }
}
