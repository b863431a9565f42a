//! Seeded training loop with periodic evaluation, checkpoints and resume.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;

use super::config::RunConfig;
use super::eval::{evaluate, prepare_example, primary_metric};
use super::flops::{cumulative_flops, profile_step_flops};
use super::optim::{AdamW, AdamWConfig};
use super::runlog::{append_record, read_records, to_csv, RunRecord};
use crate::backbone::{load_checkpoint, save_checkpoint, Checkpoint, Model, Params};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::objectives::{prepare_hybrid, prepare_tokens};
use crate::rng;
use crate::tasks::dataset::{read_jsonl, read_meta, write_atomic, Example};

/// Gradients are summed in this many fixed slices of the batch, so the
/// floating-point result does not depend on the number of threads.
pub const ACCUM_CHUNKS: usize = 8;

pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const LOG_FILE: &str = "run.jsonl";
pub const CURVE_FILE: &str = "curve.csv";
pub const CONFIG_FILE: &str = "config.txt";

#[derive(Debug, Clone)]
pub struct Data {
    /// Fixed training pool; `None` draws a fresh example for every sample.
    pub train: Option<Vec<Example>>,
    pub valid: Vec<Example>,
}

/// Reads `train.jsonl`/`valid.jsonl` from `data_dir`, or generates the
/// splits from `seed`. Training examples are padded for block paradigms.
pub fn load_data(cfg: &RunConfig, seed: u64) -> Result<Data> {
    let (train, valid) = if cfg.data_dir.is_empty() {
        let train = (cfg.train_size > 0)
            .then(|| (0..cfg.train_size as u64).map(|i| cfg.task.generate(seed, "train", i)).collect::<Result<Vec<_>>>())
            .transpose()?;
        let valid = (0..cfg.valid_size as u64).map(|i| cfg.task.generate(seed, "valid", i)).collect::<Result<Vec<_>>>()?;
        (train, valid)
    } else {
        let dir = Path::new(&cfg.data_dir);
        if let Ok(meta) = read_meta(dir) {
            if meta.task != cfg.task.task().name() {
                return Err(Error::Config(format!("{} holds {} data, config wants {}", dir.display(), meta.task, cfg.task.task())));
            }
        }
        (Some(read_jsonl(&dir.join("train.jsonl"))?), read_jsonl(&dir.join("valid.jsonl"))?)
    };
    let train = train.map(|v| v.iter().map(|e| prepare_example(cfg, e)).collect::<Result<Vec<_>>>()).transpose()?;
    if matches!(&train, Some(t) if t.is_empty()) {
        return Err(Error::Config("training set is empty".into()));
    }
    Ok(Data { train, valid })
}

/// Loss and summed gradient of one example; `None` for a sample with nothing
/// to supervise.
pub fn sample_grad(
    model: &Model<f32>,
    cfg: &RunConfig,
    ex: &Example,
    rng: &mut rng::Rng,
) -> Result<Option<(f64, Params<f32>)>> {
    let schedule = cfg.mask_schedule()?;
    let prep = match ex {
        Example::Tokens(seq) => {
            let vocab = cfg.task.vocab().ok_or_else(|| Error::Config("token example for a continuous task".into()))?;
            let coords = cfg.task.coords();
            prepare_tokens(cfg.paradigm, seq, &vocab, coords.as_ref(), cfg.block_size, &schedule, rng)?
        }
        Example::Hybrid { seq, .. } => prepare_hybrid(cfg.paradigm, seq, cfg.block_size, &schedule, rng)?,
    };
    let (out, tape) = model.forward_train(&prep.input, &prep.mask)?;
    let Some(loss) = prep.loss(&out)? else { return Ok(None) };
    let grads = model.backward(&tape, &loss.grad)?;
    Ok(Some((loss.report.total, grads.params)))
}

/// Mean loss and mean gradient over a batch. Sample `i` draws its
/// corruption from the stream `(seed, "sample", first + i)`.
pub fn batch_grad(
    model: &Model<f32>,
    cfg: &RunConfig,
    batch: &[Example],
    seed: u64,
    first: u64,
    exec: Execution,
) -> Result<(f64, Params<f32>)> {
    let b = batch.len();
    let chunks = ACCUM_CHUNKS.min(b).max(1);
    let ranges: Vec<(usize, usize)> = (0..chunks).map(|c| (c * b / chunks, (c + 1) * b / chunks)).collect();
    let parts = exec.map(&ranges, |_, &(lo, hi)| -> Result<(f64, Params<f32>)> {
        let mut g = model.params.zeros_like();
        let mut loss = 0.0;
        for i in lo..hi {
            let mut r = rng::stream(seed, "sample", first + i as u64);
            if let Some((l, gi)) = sample_grad(model, cfg, &batch[i], &mut r)? {
                loss += l;
                g.add_assign(&gi);
            }
        }
        Ok((loss, g))
    });
    let mut total = 0.0;
    let mut grads = model.params.zeros_like();
    for p in parts {
        let (l, g) = p?;
        total += l;
        grads.add_assign(&g);
    }
    grads.scale(1.0 / b as f32);
    Ok((total / b as f64, grads))
}

/// Draws training examples by global sample index: a per-epoch shuffle of
/// the fixed pool, or on-the-fly generation.
struct Sampler<'a> {
    cfg: &'a RunConfig,
    data: &'a Data,
    seed: u64,
    order: Option<(u64, Vec<usize>)>,
}

impl Sampler<'_> {
    fn get(&mut self, n: u64) -> Result<Example> {
        match &self.data.train {
            Some(pool) => {
                let len = pool.len() as u64;
                let epoch = n / len;
                if self.order.as_ref().map(|o| o.0) != Some(epoch) {
                    let mut idx: Vec<usize> = (0..pool.len()).collect();
                    idx.shuffle(&mut rng::stream(self.seed, "epoch", epoch));
                    self.order = Some((epoch, idx));
                }
                let order = &self.order.as_ref().expect("set above").1;
                Ok(pool[order[(n % len) as usize]].clone())
            }
            None => prepare_example(self.cfg, &self.cfg.task.generate(self.seed, "train", n)?),
        }
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct TrainOptions {
    pub exec: Execution,
    /// Continue from `checkpoint.bin` in the output directory when present.
    pub resume: bool,
    /// Print each record to stderr.
    pub verbose: bool,
    /// Stop after this many updates (for tests of resume); `None` runs to `steps`.
    pub stop_after: Option<u64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub records: Vec<RunRecord>,
    pub step: u64,
    pub c_step: u64,
    pub model: Model<f32>,
}

pub fn run_dir(root: &Path, cfg: &RunConfig, seed: u64) -> PathBuf {
    root.join(cfg.short_hash()).join(format!("seed-{seed}"))
}

fn checkpoint(cfg: &RunConfig, seed: u64, model: &Model<f32>, opt: &AdamW, window: (f64, u64)) -> Checkpoint {
    let extras = BTreeMap::from([
        ("run_config".to_string(), cfg.to_text()),
        ("config_hash".to_string(), cfg.hash()),
        ("seed".to_string(), seed.to_string()),
        ("loss_sum".to_string(), format!("{:?}", window.0)),
        ("loss_count".to_string(), window.1.to_string()),
    ]);
    Checkpoint {
        config: model.config.clone(),
        step: opt.t,
        extras,
        params: model.params.clone(),
        moments: Some((opt.m.clone(), opt.v.clone())),
    }
}

fn extra<T: std::str::FromStr>(ck: &Checkpoint, key: &str) -> Result<T> {
    ck.extras
        .get(key)
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| Error::Format(format!("checkpoint lacks a valid {key:?}")))
}

/// Rebuilds the run config stored in a training checkpoint.
pub fn checkpoint_run_config(ck: &Checkpoint) -> Result<RunConfig> {
    let text = ck.extras.get("run_config").ok_or_else(|| Error::Format("checkpoint has no run config".into()))?;
    RunConfig::parse(text)
}

/// Trains one `(config, seed)` run into `out`, writing `config.txt`,
/// `run.jsonl`, `curve.csv` and `checkpoint.bin`.
pub fn train(cfg: &RunConfig, seed: u64, out: &Path, opts: TrainOptions) -> Result<TrainOutcome> {
    cfg.validate()?;
    std::fs::create_dir_all(out)?;
    write_atomic(&out.join(CONFIG_FILE), cfg.to_text().as_bytes())?;
    let data = load_data(cfg, seed)?;
    let model_cfg = cfg.model_config();
    let c_step = profile_step_flops(&model_cfg, cfg.seq_len(), cfg.batch_size);
    let ck_path = out.join(CHECKPOINT_FILE);
    let log_path = out.join(LOG_FILE);
    let opt_cfg = AdamWConfig {
        lr: cfg.lr,
        beta1: cfg.beta1,
        beta2: cfg.beta2,
        eps: cfg.eps,
        weight_decay: cfg.weight_decay,
        grad_clip: cfg.grad_clip,
    };

    let (mut model, mut opt, mut window, mut records) = if opts.resume && ck_path.exists() {
        let ck = load_checkpoint(&ck_path)?;
        if extra::<String>(&ck, "config_hash")? != cfg.hash() || extra::<u64>(&ck, "seed")? != seed {
            return Err(Error::Config(format!("{} belongs to a different run", ck_path.display())));
        }
        let window = (extra::<f64>(&ck, "loss_sum")?, extra::<u64>(&ck, "loss_count")?);
        let model = Model::from_params(ck.config.clone(), ck.params.clone())?;
        let (m, v) = ck.moments.clone().ok_or_else(|| Error::Format("checkpoint has no optimizer state".into()))?;
        let opt = AdamW { config: opt_cfg, m, v, t: ck.step };
        let records: Vec<RunRecord> = if log_path.exists() {
            read_records(&log_path)?.into_iter().filter(|r| r.step <= ck.step).collect()
        } else {
            Vec::new()
        };
        let mut text = String::new();
        for r in &records {
            text.push_str(&serde_json::to_string(r)?);
            text.push('\n');
        }
        write_atomic(&log_path, text.as_bytes())?;
        (model, opt, window, records)
    } else {
        if log_path.exists() {
            std::fs::remove_file(&log_path)?;
        }
        let model = Model::<f32>::new(model_cfg, seed)?;
        let opt = AdamW::new(opt_cfg, &model.params);
        (model, opt, (0.0, 0), Vec::new())
    };

    let started = Instant::now();
    let hash = cfg.hash();
    let make = |step: u64, train_loss, metrics, diagnostic| RunRecord {
        step,
        train_loss,
        metrics,
        cumulative_flops: cumulative_flops(step, c_step),
        wall_time: started.elapsed().as_secs_f64(),
        seed,
        config_hash: hash.clone(),
        paradigm: cfg.paradigm.name().to_string(),
        task: cfg.task.task().name().to_string(),
        diagnostic,
    };
    let emit = |rec: RunRecord, records: &mut Vec<RunRecord>| -> Result<()> {
        if opts.verbose {
            eprintln!("step {:>7} loss {:>10} {:?}", rec.step, rec.train_loss.map_or("-".into(), |l| format!("{l:.5}")), rec.metrics);
        }
        append_record(&log_path, &rec)?;
        records.push(rec);
        Ok(())
    };

    if records.is_empty() {
        let metrics = evaluate(&model, cfg, &data.valid, opts.exec)?;
        emit(make(0, None, metrics, None), &mut records)?;
    }
    let eval_every = cfg.resolved_eval_every();
    let stop = opts.stop_after.map_or(cfg.steps, |s| s.min(cfg.steps));
    let mut sampler = Sampler { cfg, data: &data, seed, order: None };
    let b = cfg.batch_size as u64;
    while opt.t < stop {
        let step = opt.t;
        let batch = (0..b).map(|i| sampler.get(step * b + i)).collect::<Result<Vec<_>>>()?;
        let (loss, grads) = batch_grad(&model, cfg, &batch, seed, step * b, opts.exec)?;
        if !loss.is_finite() || !grads.is_finite() {
            let msg = format!("non-finite loss or gradient in update {}", step + 1);
            emit(make(step + 1, Some(loss), BTreeMap::new(), Some(msg)), &mut records)?;
            return Err(Error::NonFinite { step: step + 1, loss });
        }
        opt.step(&mut model.params, &grads);
        window.0 += loss;
        window.1 += 1;
        let t = opt.t;
        if t % eval_every == 0 || t == cfg.steps {
            let metrics = evaluate(&model, cfg, &data.valid, opts.exec)?;
            emit(make(t, Some(window.0 / window.1 as f64), metrics, None), &mut records)?;
            window = (0.0, 0);
        }
        if cfg.checkpoint_every > 0 && t % cfg.checkpoint_every == 0 && t < stop {
            save_checkpoint(&ck_path, &checkpoint(cfg, seed, &model, &opt, window))?;
        }
    }
    save_checkpoint(&ck_path, &checkpoint(cfg, seed, &model, &opt, window))?;
    write_atomic(&out.join(CURVE_FILE), to_csv(&records, primary_metric(cfg)).as_bytes())?;
    Ok(TrainOutcome { records, step: opt.t, c_step, model })
}
