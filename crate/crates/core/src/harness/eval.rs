//! Decoding-based validation metrics.

use std::collections::BTreeMap;

use super::config::RunConfig;
use crate::backbone::{Model, Real};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::samplers::{decode_batch, Problem};
use crate::seqcore::{pad_response, TokenSequence};
use crate::tasks::dataset::Example;
use crate::tasks::icl::eval_icl_mse;
use crate::tasks::star_graph::eval_path;
use crate::tasks::sudoku::{eval_sudoku, SudokuInstance};
use crate::tasks::TaskConfig;

pub type Metrics = BTreeMap<String, f64>;

/// Pads token responses to whole blocks when the paradigm needs it.
pub fn prepare_example(cfg: &RunConfig, ex: &Example) -> Result<Example> {
    match ex {
        Example::Tokens(seq) if cfg.pads_response() => {
            let pad = cfg.task.vocab().and_then(|v| v.pad_id()).ok_or_else(|| Error::Vocab("task has no pad token".into()))?;
            Ok(Example::Tokens(pad_response(seq, cfg.block_size, pad)?))
        }
        _ => Ok(ex.clone()),
    }
}

pub fn problem_for(cfg: &RunConfig, ex: &Example) -> Result<Problem> {
    Ok(match prepare_example(cfg, ex)? {
        Example::Tokens(seq) => {
            let vocab = cfg.task.vocab().ok_or_else(|| Error::Config("token example for a continuous task".into()))?;
            Problem::from_sequence(&seq, &vocab).with_coords(cfg.task.coords())
        }
        Example::Hybrid { seq, .. } => Problem::hybrid(&seq),
    })
}

/// Decodes the first `cfg.eval_size` examples and scores them.
pub fn evaluate<F: Real>(model: &Model<F>, cfg: &RunConfig, examples: &[Example], exec: Execution) -> Result<Metrics> {
    let n = cfg.eval_size.min(examples.len());
    if n == 0 {
        return Err(Error::Config("no validation examples".into()));
    }
    let examples = &examples[..n];
    let problems = examples.iter().map(|e| problem_for(cfg, e)).collect::<Result<Vec<_>>>()?;
    let dcfg = cfg.decode_config()?;
    let traces = decode_batch(model, &problems, &dcfg, exec)?;
    let decoded: Vec<_> = traces.into_iter().map(|t| t.final_).collect();
    let mut m = Metrics::new();
    match &cfg.task {
        TaskConfig::Icl(_) => {
            let mut total = 0.0;
            for (ex, d) in examples.iter().zip(&decoded) {
                let Example::Hybrid { seq, .. } = ex else { return Err(Error::Config("ICL needs hybrid examples".into())) };
                let pred = d.hybrid().ok_or_else(|| Error::Shape("expected hybrid output".into()))?;
                total += eval_icl_mse(&pred.target_values(), seq)?;
            }
            m.insert("mse".into(), total / n as f64);
        }
        TaskConfig::StarGraph(_) => {
            let (mut exact, mut tok) = (0.0, 0.0);
            for (ex, d) in examples.iter().zip(&decoded) {
                let (truth, pred) = responses(ex, d.tokens())?;
                // the start vertex is given in the query, so only the continuation is scored
                let (acc, all) = eval_path(pred.get(1..).unwrap_or(&[]), truth.get(1..).unwrap_or(&[]));
                exact += f64::from(u8::from(all));
                tok += acc;
            }
            m.insert("exact_match".into(), exact / n as f64);
            m.insert("token_acc".into(), tok / n as f64);
        }
        TaskConfig::Sudoku { .. } => {
            let (mut cell, mut solve, mut valid) = (0.0, 0.0, 0.0);
            for (ex, d) in examples.iter().zip(&decoded) {
                let Example::Tokens(seq) = ex else { return Err(Error::Config("Sudoku needs token examples".into())) };
                let inst = SudokuInstance::from_sequence(seq)?;
                let (_, pred) = responses(ex, d.tokens())?;
                let grid: Vec<u8> = pred.iter().map(|&t| if t <= 9 { t as u8 } else { 0 }).collect();
                let s = eval_sudoku(&grid, &inst)?;
                cell += s.cell_acc;
                solve += f64::from(u8::from(s.solve));
                valid += f64::from(u8::from(s.valid_solve));
            }
            m.insert("cell_acc".into(), cell / n as f64);
            m.insert("solve_rate".into(), solve / n as f64);
            m.insert("valid_solve_rate".into(), valid / n as f64);
        }
    }
    Ok(m)
}

/// Ground-truth response and the decoded tokens at the same positions.
fn responses(ex: &Example, pred: Option<&TokenSequence>) -> Result<(Vec<u32>, Vec<u32>)> {
    let Example::Tokens(seq) = ex else { return Err(Error::Config("expected token examples".into())) };
    let pred = pred.ok_or_else(|| Error::Shape("expected token output".into()))?;
    let truth = seq.response().to_vec();
    let got = pred.tokens[seq.prompt_len..seq.prompt_len + truth.len()].to_vec();
    Ok((truth, got))
}

pub fn primary_metric(cfg: &RunConfig) -> &'static str {
    match cfg.task {
        TaskConfig::Icl(_) => "mse",
        TaskConfig::StarGraph(_) => "exact_match",
        TaskConfig::Sudoku { .. } => "solve_rate",
    }
}
