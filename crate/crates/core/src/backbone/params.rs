use ndarray::{Array1, Array2, ArrayViewD, ArrayViewMutD, Zip};
use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::{ModelConfig, Real};

#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams<F> {
    pub attn_norm: Array1<F>,
    pub wq: Array2<F>,
    pub wk: Array2<F>,
    pub wv: Array2<F>,
    pub wo: Array2<F>,
    pub mlp_norm: Array1<F>,
    pub w_gate: Array2<F>,
    pub w_up: Array2<F>,
    pub w_down: Array2<F>,
}

/// All trainable tensors. Gradients and optimizer moments reuse this type.
#[derive(Debug, Clone, PartialEq)]
pub struct Params<F> {
    pub tok_emb: Option<Array2<F>>,
    pub x_readin: Option<Array2<F>>,
    pub x_bias: Option<Array1<F>>,
    pub y_readin: Option<Array1<F>>,
    pub y_bias: Option<Array1<F>>,
    pub cont_mask: Option<Array1<F>>,
    pub coord_row: Option<Array2<F>>,
    pub coord_col: Option<Array2<F>>,
    pub coord_box: Option<Array2<F>>,
    pub layers: Vec<LayerParams<F>>,
    pub final_norm: Array1<F>,
    pub lm_head: Option<Array2<F>>,
    pub reg_head: Option<Array1<F>>,
    pub reg_bias: Option<Array1<F>>,
}

macro_rules! visit {
    ($p:expr, $as:ident, $view:ident, $iter:ident, $push:expr) => {{
        let p = $p;
        let mut push = $push;
        if let Some(t) = p.tok_emb.$as() {
            push("tok_emb".to_string(), t.$view().into_dyn());
        }
        if let Some(t) = p.x_readin.$as() {
            push("x_readin".to_string(), t.$view().into_dyn());
        }
        if let Some(t) = p.x_bias.$as() {
            push("x_bias".to_string(), t.$view().into_dyn());
        }
        if let Some(t) = p.y_readin.$as() {
            push("y_readin".to_string(), t.$view().into_dyn());
        }
        if let Some(t) = p.y_bias.$as() {
            push("y_bias".to_string(), t.$view().into_dyn());
        }
        if let Some(t) = p.cont_mask.$as() {
            push("cont_mask".to_string(), t.$view().into_dyn());
        }
        if let Some(t) = p.coord_row.$as() {
            push("coord_row".to_string(), t.$view().into_dyn());
        }
        if let Some(t) = p.coord_col.$as() {
            push("coord_col".to_string(), t.$view().into_dyn());
        }
        if let Some(t) = p.coord_box.$as() {
            push("coord_box".to_string(), t.$view().into_dyn());
        }
        for (i, l) in p.layers.$iter().enumerate() {
            push(format!("layers.{i}.attn_norm"), l.attn_norm.$view().into_dyn());
            push(format!("layers.{i}.wq"), l.wq.$view().into_dyn());
            push(format!("layers.{i}.wk"), l.wk.$view().into_dyn());
            push(format!("layers.{i}.wv"), l.wv.$view().into_dyn());
            push(format!("layers.{i}.wo"), l.wo.$view().into_dyn());
            push(format!("layers.{i}.mlp_norm"), l.mlp_norm.$view().into_dyn());
            push(format!("layers.{i}.w_gate"), l.w_gate.$view().into_dyn());
            push(format!("layers.{i}.w_up"), l.w_up.$view().into_dyn());
            push(format!("layers.{i}.w_down"), l.w_down.$view().into_dyn());
        }
        push("final_norm".to_string(), p.final_norm.$view().into_dyn());
        if let Some(t) = p.lm_head.$as() {
            push("lm_head".to_string(), t.$view().into_dyn());
        }
        if let Some(t) = p.reg_head.$as() {
            push("reg_head".to_string(), t.$view().into_dyn());
        }
        if let Some(t) = p.reg_bias.$as() {
            push("reg_bias".to_string(), t.$view().into_dyn());
        }
    }};
}

impl<F: Real> Params<F> {
    /// Scaled-normal initialization: std 0.02, residual output projections
    /// scaled by `1/sqrt(2·n_layer)`, norm gains at one, biases at zero.
    pub fn init<R: Rng + ?Sized>(config: &ModelConfig, rng: &mut R) -> Self {
        let std = 0.02;
        let resid_std = std / ((2 * config.n_layer.max(1)) as f64).sqrt();
        let mut normal = |rows: usize, cols: usize, s: f64| -> Array2<F> {
            let dist = Normal::new(0.0, s).unwrap();
            Array2::from_shape_fn((rows, cols), |_| F::lit(dist.sample(rng)))
        };
        let d = config.n_embd;
        let h = config.ffn_hidden;
        let tok_emb = (config.vocab_size > 0).then(|| normal(config.vocab_size, d, std));
        let (x_readin, x_bias, y_readin, y_bias, cont_mask) = match config.continuous_input_dim {
            Some(din) => (
                Some(normal(din, d, std)),
                Some(Array1::zeros(d)),
                Some(normal(1, d, std).into_shape_with_order(d).unwrap()),
                Some(Array1::zeros(d)),
                Some(normal(1, d, std).into_shape_with_order(d).unwrap()),
            ),
            None => (None, None, None, None, None),
        };
        let (coord_row, coord_col, coord_box) = if config.use_coordinate_embeddings {
            (Some(normal(9, d / 3, std)), Some(normal(9, d / 3, std)), Some(normal(9, d / 3, std)))
        } else {
            (None, None, None)
        };
        let layers = (0..config.n_layer)
            .map(|_| LayerParams {
                attn_norm: Array1::ones(d),
                wq: normal(d, d, std),
                wk: normal(d, d, std),
                wv: normal(d, d, std),
                wo: normal(d, d, resid_std),
                mlp_norm: Array1::ones(d),
                w_gate: normal(d, h, std),
                w_up: normal(d, h, std),
                w_down: normal(h, d, resid_std),
            })
            .collect();
        let lm_head = config.head.has_tokens().then(|| normal(d, config.vocab_size, std));
        let (reg_head, reg_bias) = if config.head.has_scalar() {
            (Some(normal(1, d, std).into_shape_with_order(d).unwrap()), Some(Array1::zeros(1)))
        } else {
            (None, None)
        };
        Self {
            tok_emb,
            x_readin,
            x_bias,
            y_readin,
            y_bias,
            cont_mask,
            coord_row,
            coord_col,
            coord_box,
            layers,
            final_norm: Array1::ones(d),
            lm_head,
            reg_head,
            reg_bias,
        }
    }

    pub fn zeros_like(&self) -> Self {
        let z1 = |a: &Array1<F>| Array1::zeros(a.raw_dim());
        let z2 = |a: &Array2<F>| Array2::zeros(a.raw_dim());
        Self {
            tok_emb: self.tok_emb.as_ref().map(z2),
            x_readin: self.x_readin.as_ref().map(z2),
            x_bias: self.x_bias.as_ref().map(z1),
            y_readin: self.y_readin.as_ref().map(z1),
            y_bias: self.y_bias.as_ref().map(z1),
            cont_mask: self.cont_mask.as_ref().map(z1),
            coord_row: self.coord_row.as_ref().map(z2),
            coord_col: self.coord_col.as_ref().map(z2),
            coord_box: self.coord_box.as_ref().map(z2),
            layers: self
                .layers
                .iter()
                .map(|l| LayerParams {
                    attn_norm: z1(&l.attn_norm),
                    wq: z2(&l.wq),
                    wk: z2(&l.wk),
                    wv: z2(&l.wv),
                    wo: z2(&l.wo),
                    mlp_norm: z1(&l.mlp_norm),
                    w_gate: z2(&l.w_gate),
                    w_up: z2(&l.w_up),
                    w_down: z2(&l.w_down),
                })
                .collect(),
            final_norm: z1(&self.final_norm),
            lm_head: self.lm_head.as_ref().map(z2),
            reg_head: self.reg_head.as_ref().map(z1),
            reg_bias: self.reg_bias.as_ref().map(z1),
        }
    }

    /// Named views in a fixed canonical order.
    pub fn tensors(&self) -> Vec<(String, ArrayViewD<'_, F>)> {
        let mut out = Vec::new();
        visit!(self, as_ref, view, iter, |n, t| out.push((n, t)));
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<(String, ArrayViewMutD<'_, F>)> {
        let mut out = Vec::new();
        visit!(self, as_mut, view_mut, iter_mut, |n, t| out.push((n, t)));
        out
    }

    pub fn num_elements(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }

    pub fn add_assign(&mut self, other: &Self) {
        for ((_, mut a), (_, b)) in self.tensors_mut().into_iter().zip(other.tensors()) {
            Zip::from(&mut a).and(&b).for_each(|x, &y| *x += y);
        }
    }

    pub fn scale(&mut self, s: F) {
        for (_, mut a) in self.tensors_mut() {
            a.mapv_inplace(|x| x * s);
        }
    }

    pub fn sq_norm(&self) -> f64 {
        self.tensors().iter().flat_map(|(_, t)| t.iter()).map(|x| x.f64() * x.f64()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|(_, t)| t.iter().all(|x| x.is_finite()))
    }

    /// Element-type conversion (e.g. `f32` training weights to `f64` for checks).
    pub fn cast<G: Real>(&self) -> Params<G> {
        let c1 = |a: &Array1<F>| a.mapv(|x| G::lit(x.f64()));
        let c2 = |a: &Array2<F>| a.mapv(|x| G::lit(x.f64()));
        Params {
            tok_emb: self.tok_emb.as_ref().map(c2),
            x_readin: self.x_readin.as_ref().map(c2),
            x_bias: self.x_bias.as_ref().map(c1),
            y_readin: self.y_readin.as_ref().map(c1),
            y_bias: self.y_bias.as_ref().map(c1),
            cont_mask: self.cont_mask.as_ref().map(c1),
            coord_row: self.coord_row.as_ref().map(c2),
            coord_col: self.coord_col.as_ref().map(c2),
            coord_box: self.coord_box.as_ref().map(c2),
            layers: self
                .layers
                .iter()
                .map(|l| LayerParams {
                    attn_norm: c1(&l.attn_norm),
                    wq: c2(&l.wq),
                    wk: c2(&l.wk),
                    wv: c2(&l.wv),
                    wo: c2(&l.wo),
                    mlp_norm: c1(&l.mlp_norm),
                    w_gate: c2(&l.w_gate),
                    w_up: c2(&l.w_up),
                    w_down: c2(&l.w_down),
                })
                .collect(),
            final_norm: c1(&self.final_norm),
            lm_head: self.lm_head.as_ref().map(c2),
            reg_head: self.reg_head.as_ref().map(c1),
            reg_bias: self.reg_bias.as_ref().map(c1),
        }
    }
}
