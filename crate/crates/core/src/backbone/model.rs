use ndarray::{s, Array1, Array2, Axis, Zip};

use super::ops::{log_softmax, rmsnorm, rmsnorm_backward, rope_inplace, rope_table, silu, silu_grad};
use super::{CoordinateIds, ModelConfig, Params, Real};
use crate::error::{Error, Result};
use crate::maskgen::AttentionMask;
use crate::rng;
use crate::seqcore::TokenId;

/// One input position as seen by the embedding layer.
#[derive(Debug, Clone, PartialEq)]
pub enum InputCell {
    Token(TokenId),
    /// Continuous `x` read through the learned input projection.
    Vector(Vec<f64>),
    /// Observed continuous `y` read through the learned scalar projection.
    Scalar(f64),
    /// A hidden `y`: replaced by the learned mask vector.
    MaskedScalar,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ModelInput {
    pub cells: Vec<InputCell>,
    pub coords: Option<CoordinateIds>,
}

impl ModelInput {
    pub fn tokens(tokens: &[TokenId]) -> Self {
        Self { cells: tokens.iter().map(|&t| InputCell::Token(t)).collect(), coords: None }
    }

    pub fn with_coords(mut self, coords: Option<CoordinateIds>) -> Self {
        self.coords = coords;
        self
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }
}

/// Per-position predictions of one forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardOutput<F> {
    pub logits: Option<Array2<F>>,
    pub scalar_preds: Option<Array1<F>>,
    /// Shannon entropy (nats) of each position's token distribution.
    pub entropies: Option<Array1<F>>,
}

impl<F: Real> ForwardOutput<F> {
    pub fn len(&self) -> usize {
        self.logits
            .as_ref()
            .map(|l| l.nrows())
            .or(self.scalar_preds.as_ref().map(|s| s.len()))
            .unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn log_probs(&self, pos: usize) -> Vec<F> {
        let logits = self.logits.as_ref().expect("model has no token head");
        log_softmax(logits.row(pos))
    }

    pub fn probs(&self, pos: usize) -> Vec<F> {
        self.log_probs(pos).into_iter().map(|l| l.exp()).collect()
    }

    /// Most likely token and its probability; ties go to the lowest id.
    pub fn argmax(&self, pos: usize) -> (TokenId, F) {
        let lp = self.log_probs(pos);
        let mut best = 0;
        for (i, &v) in lp.iter().enumerate() {
            if v > lp[best] {
                best = i;
            }
        }
        (best as TokenId, lp[best].exp())
    }
}

fn entropies<F: Real>(logits: &Array2<F>) -> Array1<F> {
    logits.map_axis(Axis(1), |row| {
        let lp = log_softmax(row);
        -lp.iter().map(|&l| l.exp() * l).sum::<F>()
    })
}

/// Gradient of a scalar loss with respect to the model outputs.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct OutputGrad<F> {
    pub logits: Option<Array2<F>>,
    pub scalar: Option<Array1<F>>,
}

#[derive(Debug, Clone)]
pub struct Gradients<F> {
    pub params: Params<F>,
    /// Gradient with respect to the embedded input `[len, n_embd]`.
    pub input: Array2<F>,
}

#[derive(Debug, Clone)]
struct LayerTape<F> {
    x_in: Array2<F>,
    inv1: Array1<F>,
    a: Array2<F>,
    q: Array2<F>,
    k: Array2<F>,
    v: Array2<F>,
    probs: Vec<Array2<F>>,
    attn: Array2<F>,
    x_mid: Array2<F>,
    inv2: Array1<F>,
    b: Array2<F>,
    g: Array2<F>,
    u: Array2<F>,
    m: Array2<F>,
}

/// Activations retained by a training forward pass.
#[derive(Debug, Clone)]
pub struct Tape<F> {
    input: Option<ModelInput>,
    mask: AttentionMask,
    layers: Vec<LayerTape<F>>,
    x_last: Array2<F>,
    inv_f: Array1<F>,
    f: Array2<F>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model<F> {
    pub config: ModelConfig,
    pub params: Params<F>,
}

impl<F: Real> Model<F> {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let params = Params::init(&config, &mut rng::stream(seed, "init", 0));
        Ok(Self { config, params })
    }

    pub fn from_params(config: ModelConfig, params: Params<F>) -> Result<Self> {
        config.validate()?;
        Ok(Self { config, params })
    }

    pub fn cast<G: Real>(&self) -> Model<G> {
        Model { config: self.config.clone(), params: self.params.cast() }
    }

    /// Embeds cells (and grid coordinates when enabled) into `[len, n_embd]`.
    pub fn embed(&self, input: &ModelInput) -> Result<Array2<F>> {
        let len = input.len();
        if len > self.config.max_len {
            return Err(Error::Length { len, max: self.config.max_len });
        }
        let d = self.config.n_embd;
        let p = &self.params;
        let mut h = Array2::zeros((len, d));
        for (i, cell) in input.cells.iter().enumerate() {
            let mut row = h.row_mut(i);
            match cell {
                InputCell::Token(t) => {
                    let emb = p
                        .tok_emb
                        .as_ref()
                        .ok_or_else(|| Error::Shape("model has no token embedding".into()))?;
                    if *t as usize >= emb.nrows() {
                        return Err(Error::Shape(format!("token {t} outside vocabulary")));
                    }
                    row.assign(&emb.row(*t as usize));
                }
                InputCell::Vector(x) => {
                    let (w, b) = p
                        .x_readin
                        .as_ref()
                        .zip(p.x_bias.as_ref())
                        .ok_or_else(|| Error::Shape("model has no continuous input".into()))?;
                    if x.len() != w.nrows() {
                        return Err(Error::Shape(format!(
                            "input vector has dimension {}, expected {}",
                            x.len(),
                            w.nrows()
                        )));
                    }
                    row.assign(b);
                    for (j, &xj) in x.iter().enumerate() {
                        row.scaled_add(F::lit(xj), &w.row(j));
                    }
                }
                InputCell::Scalar(y) => {
                    let (w, b) = p
                        .y_readin
                        .as_ref()
                        .zip(p.y_bias.as_ref())
                        .ok_or_else(|| Error::Shape("model has no continuous input".into()))?;
                    row.assign(b);
                    row.scaled_add(F::lit(*y), w);
                }
                InputCell::MaskedScalar => {
                    let m = p
                        .cont_mask
                        .as_ref()
                        .ok_or_else(|| Error::Shape("model has no continuous mask vector".into()))?;
                    row.assign(m);
                }
            }
        }
        if let Some(coords) = &input.coords {
            if self.config.use_coordinate_embeddings {
                self.add_coordinate_embedding(&mut h, coords)?;
            }
        }
        Ok(h)
    }

    /// `h += [row(r) ‖ col(c) ‖ box(b)]` at every position that has coordinates.
    pub fn add_coordinate_embedding(&self, hidden: &mut Array2<F>, coords: &CoordinateIds) -> Result<()> {
        let p = &self.params;
        let (rows, cols, boxes) = match (&p.coord_row, &p.coord_col, &p.coord_box) {
            (Some(r), Some(c), Some(b)) => (r, c, b),
            _ => return Err(Error::Shape("coordinate embeddings are disabled".into())),
        };
        if coords.len() != hidden.nrows() {
            return Err(Error::Shape(format!(
                "{} coordinates for {} positions",
                coords.len(),
                hidden.nrows()
            )));
        }
        let third = rows.ncols();
        if 3 * third != hidden.ncols() {
            return Err(Error::Shape("hidden width is not three coordinate segments".into()));
        }
        for (i, c) in coords.0.iter().enumerate() {
            if let Some(c) = c {
                let mut row = hidden.row_mut(i);
                Zip::from(row.slice_mut(s![..third])).and(rows.row(c.row as usize)).for_each(|h, &e| *h += e);
                Zip::from(row.slice_mut(s![third..2 * third]))
                    .and(cols.row(c.col as usize))
                    .for_each(|h, &e| *h += e);
                Zip::from(row.slice_mut(s![2 * third..])).and(boxes.row(c.box_ as usize)).for_each(|h, &e| *h += e);
            }
        }
        Ok(())
    }

    pub fn forward(&self, input: &ModelInput, mask: &AttentionMask) -> Result<ForwardOutput<F>> {
        let x0 = self.embed(input)?;
        Ok(self.run(x0, mask, false)?.0)
    }

    pub fn forward_train(&self, input: &ModelInput, mask: &AttentionMask) -> Result<(ForwardOutput<F>, Tape<F>)> {
        let x0 = self.embed(input)?;
        let (out, tape) = self.run(x0, mask, true)?;
        let mut tape = tape.expect("tape requested");
        tape.input = Some(input.clone());
        Ok((out, tape))
    }

    /// Runs the stack on an already-embedded input.
    pub fn forward_embedded(
        &self,
        x0: Array2<F>,
        mask: &AttentionMask,
    ) -> Result<(ForwardOutput<F>, Tape<F>)> {
        let (out, tape) = self.run(x0, mask, true)?;
        Ok((out, tape.expect("tape requested")))
    }

    fn run(&self, x0: Array2<F>, mask: &AttentionMask, keep: bool) -> Result<(ForwardOutput<F>, Option<Tape<F>>)> {
        let len = x0.nrows();
        if len > self.config.max_len {
            return Err(Error::Length { len, max: self.config.max_len });
        }
        if mask.size() != len {
            return Err(Error::Shape(format!("mask size {} for input length {len}", mask.size())));
        }
        let cfg = &self.config;
        let eps = cfg.norm_eps;
        let n_head = cfg.n_head;
        let hd = cfg.head_dim();
        let scale = F::lit(1.0 / (hd as f64).sqrt());
        let table = rope_table(len, hd, cfg.rope_base, 0);

        let mut x = x0;
        let mut tapes = Vec::with_capacity(if keep { cfg.n_layer } else { 0 });
        for l in &self.params.layers {
            let (a, inv1) = rmsnorm(&x, &l.attn_norm, eps);
            let mut q = a.dot(&l.wq);
            let mut k = a.dot(&l.wk);
            let v = a.dot(&l.wv);
            rope_inplace(&mut q, n_head, &table, false);
            rope_inplace(&mut k, n_head, &table, false);
            let mut attn = Array2::zeros((len, cfg.n_embd));
            let mut probs = Vec::with_capacity(if keep { n_head } else { 0 });
            for h in 0..n_head {
                let r = h * hd..(h + 1) * hd;
                let qs = q.slice(s![.., r.clone()]);
                let ks = k.slice(s![.., r.clone()]);
                let vs = v.slice(s![.., r.clone()]);
                let mut p = qs.dot(&ks.t());
                masked_softmax(&mut p, mask, scale);
                attn.slice_mut(s![.., r]).assign(&p.dot(&vs));
                if keep {
                    probs.push(p);
                }
            }
            let x_mid = &x + &attn.dot(&l.wo);
            let (b, inv2) = rmsnorm(&x_mid, &l.mlp_norm, eps);
            let g = b.dot(&l.w_gate);
            let u = b.dot(&l.w_up);
            let m = Zip::from(&g).and(&u).map_collect(|&g, &u| silu(g) * u);
            let x_out = &x_mid + &m.dot(&l.w_down);
            if keep {
                tapes.push(LayerTape { x_in: x, inv1, a, q, k, v, probs, attn, x_mid, inv2, b, g, u, m });
            }
            x = x_out;
        }
        let (f, inv_f) = rmsnorm(&x, &self.params.final_norm, eps);
        let logits = self.params.lm_head.as_ref().map(|w| f.dot(w));
        let scalar_preds = self
            .params
            .reg_head
            .as_ref()
            .zip(self.params.reg_bias.as_ref())
            .map(|(w, b)| f.dot(w) + b[0]);
        let entropies = logits.as_ref().map(entropies);
        let out = ForwardOutput { logits, scalar_preds, entropies };
        let tape = keep.then(|| Tape { input: None, mask: mask.clone(), layers: tapes, x_last: x, inv_f, f });
        Ok((out, tape))
    }

    pub fn backward(&self, tape: &Tape<F>, grad: &OutputGrad<F>) -> Result<Gradients<F>> {
        let cfg = &self.config;
        let p = &self.params;
        let mut gp = p.zeros_like();
        let len = tape.f.nrows();
        let n_head = cfg.n_head;
        let hd = cfg.head_dim();
        let scale = F::lit(1.0 / (hd as f64).sqrt());
        let table = rope_table(len, hd, cfg.rope_base, 0);

        let mut df = Array2::<F>::zeros((len, cfg.n_embd));
        if let Some(dl) = &grad.logits {
            let w = p.lm_head.as_ref().ok_or_else(|| Error::Shape("no token head".into()))?;
            if dl.dim() != (len, w.ncols()) {
                return Err(Error::Shape("logit gradient has wrong shape".into()));
            }
            df += &dl.dot(&w.t());
            *gp.lm_head.as_mut().unwrap() += &tape.f.t().dot(dl);
        }
        if let Some(ds) = &grad.scalar {
            let w = p.reg_head.as_ref().ok_or_else(|| Error::Shape("no regression head".into()))?;
            if ds.len() != len {
                return Err(Error::Shape("scalar gradient has wrong length".into()));
            }
            for (i, &d) in ds.iter().enumerate() {
                df.row_mut(i).scaled_add(d, w);
            }
            *gp.reg_head.as_mut().unwrap() += &tape.f.t().dot(ds);
            gp.reg_bias.as_mut().unwrap()[0] += ds.sum();
        }
        let mut dx = rmsnorm_backward(&df, &tape.x_last, &p.final_norm, &tape.inv_f, &mut gp.final_norm);

        for (li, (l, t)) in p.layers.iter().zip(&tape.layers).enumerate().rev() {
            let gl = &mut gp.layers[li];
            // feed-forward
            gl.w_down += &t.m.t().dot(&dx);
            let dm = dx.dot(&l.w_down.t());
            let dg = Zip::from(&dm).and(&t.g).and(&t.u).map_collect(|&dm, &g, &u| dm * u * silu_grad(g));
            let du = Zip::from(&dm).and(&t.g).map_collect(|&dm, &g| dm * silu(g));
            gl.w_gate += &t.b.t().dot(&dg);
            gl.w_up += &t.b.t().dot(&du);
            let db = dg.dot(&l.w_gate.t()) + du.dot(&l.w_up.t());
            let dx_mid = &dx + &rmsnorm_backward(&db, &t.x_mid, &l.mlp_norm, &t.inv2, &mut gl.mlp_norm);

            // attention
            gl.wo += &t.attn.t().dot(&dx_mid);
            let dattn = dx_mid.dot(&l.wo.t());
            let mut dq = Array2::zeros((len, cfg.n_embd));
            let mut dk = Array2::zeros((len, cfg.n_embd));
            let mut dv = Array2::zeros((len, cfg.n_embd));
            for h in 0..n_head {
                let r = h * hd..(h + 1) * hd;
                let prob = &t.probs[h];
                let d_o = dattn.slice(s![.., r.clone()]);
                let dp = d_o.dot(&t.v.slice(s![.., r.clone()]).t());
                dv.slice_mut(s![.., r.clone()]).assign(&prob.t().dot(&d_o));
                let mut ds = dp;
                for (mut ds_row, p_row) in ds.rows_mut().into_iter().zip(prob.rows()) {
                    let dot: F = ds_row.iter().zip(p_row.iter()).map(|(&a, &b)| a * b).sum();
                    Zip::from(&mut ds_row).and(&p_row).for_each(|d, &pv| *d = pv * (*d - dot) * scale);
                }
                dq.slice_mut(s![.., r.clone()]).assign(&ds.dot(&t.k.slice(s![.., r.clone()])));
                dk.slice_mut(s![.., r.clone()]).assign(&ds.t().dot(&t.q.slice(s![.., r])));
            }
            rope_inplace(&mut dq, n_head, &table, true);
            rope_inplace(&mut dk, n_head, &table, true);
            gl.wq += &t.a.t().dot(&dq);
            gl.wk += &t.a.t().dot(&dk);
            gl.wv += &t.a.t().dot(&dv);
            let da = dq.dot(&l.wq.t()) + dk.dot(&l.wk.t()) + dv.dot(&l.wv.t());
            dx = &dx_mid + &rmsnorm_backward(&da, &t.x_in, &l.attn_norm, &t.inv1, &mut gl.attn_norm);
        }

        if let Some(input) = &tape.input {
            self.embed_backward(input, &dx, &mut gp)?;
        }
        Ok(Gradients { params: gp, input: dx })
    }

    fn embed_backward(&self, input: &ModelInput, dx: &Array2<F>, gp: &mut Params<F>) -> Result<()> {
        for (i, cell) in input.cells.iter().enumerate() {
            let d = dx.row(i);
            match cell {
                InputCell::Token(t) => {
                    let mut row = gp.tok_emb.as_mut().unwrap().row_mut(*t as usize);
                    row += &d;
                }
                InputCell::Vector(x) => {
                    let w = gp.x_readin.as_mut().unwrap();
                    for (j, &xj) in x.iter().enumerate() {
                        w.row_mut(j).scaled_add(F::lit(xj), &d);
                    }
                    *gp.x_bias.as_mut().unwrap() += &d;
                }
                InputCell::Scalar(y) => {
                    gp.y_readin.as_mut().unwrap().scaled_add(F::lit(*y), &d);
                    *gp.y_bias.as_mut().unwrap() += &d;
                }
                InputCell::MaskedScalar => {
                    *gp.cont_mask.as_mut().unwrap() += &d;
                }
            }
        }
        if let (Some(coords), true) = (&input.coords, self.config.use_coordinate_embeddings) {
            let third = self.config.n_embd / 3;
            for (i, c) in coords.0.iter().enumerate() {
                if let Some(c) = c {
                    let d = dx.row(i);
                    let mut r = gp.coord_row.as_mut().unwrap().row_mut(c.row as usize);
                    r += &d.slice(s![..third]);
                    let mut r = gp.coord_col.as_mut().unwrap().row_mut(c.col as usize);
                    r += &d.slice(s![third..2 * third]);
                    let mut r = gp.coord_box.as_mut().unwrap().row_mut(c.box_ as usize);
                    r += &d.slice(s![2 * third..]);
                }
            }
        }
        Ok(())
    }
}

impl<F> Tape<F> {
    pub fn mask(&self) -> &AttentionMask {
        &self.mask
    }
}

/// Scaled softmax over the visible keys of each row; hidden keys get exactly
/// zero weight so they cannot influence the output.
fn masked_softmax<F: Real>(scores: &mut Array2<F>, mask: &AttentionMask, scale: F) {
    for (u, mut row) in scores.rows_mut().into_iter().enumerate() {
        let vis = mask.row(u);
        let mut max = F::neg_infinity();
        for (v, &s) in row.iter().enumerate() {
            if vis[v] {
                max = max.max(s * scale);
            }
        }
        let mut sum = F::zero();
        for (v, s) in row.iter_mut().enumerate() {
            if vis[v] {
                *s = (*s * scale - max).exp();
                sum += *s;
            } else {
                *s = F::zero();
            }
        }
        row.mapv_inplace(|x| x / sum);
    }
}
