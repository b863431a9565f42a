//! 9×9 Sudoku: 81 prompt cells (0 = empty) followed by the 81 solution cells.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::backbone::CoordinateIds;
use crate::error::{Error, Result};
use crate::seqcore::{TokenId, TokenSequence, Vocab};

pub const MASK: TokenId = 10;
pub const PAD: TokenId = 11;

pub fn vocab() -> Vocab {
    Vocab::new(12, MASK, Some(PAD), BTreeMap::from([("empty".to_string(), 0)])).expect("valid layout")
}

/// Coordinates for the prompt grid and the response grid.
pub fn coords() -> CoordinateIds {
    CoordinateIds::sudoku(2)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SudokuInstance {
    pub prompt: Vec<u8>,
    pub solution: Vec<u8>,
}

impl SudokuInstance {
    pub fn to_sequence(&self) -> TokenSequence {
        let tokens = self.prompt.iter().chain(&self.solution).map(|&c| c as TokenId).collect();
        TokenSequence { tokens, prompt_len: 81 }
    }

    pub fn from_sequence(seq: &TokenSequence) -> Result<Self> {
        if seq.len() != 162 || seq.prompt_len != 81 {
            return Err(Error::Format("sudoku sequences are 81 + 81 cells".into()));
        }
        if seq.tokens.iter().any(|&t| t > 9) {
            return Err(Error::Format("sudoku cells must be 0..=9".into()));
        }
        let cells: Vec<u8> = seq.tokens.iter().map(|&t| t as u8).collect();
        Ok(Self { prompt: cells[..81].to_vec(), solution: cells[81..].to_vec() })
    }

    pub fn empties(&self) -> impl Iterator<Item = usize> + '_ {
        (0..81).filter(|&i| self.prompt[i] == 0)
    }
}

/// The 27 row, column and box index groups.
pub fn groups() -> Vec<[usize; 9]> {
    let mut out = Vec::with_capacity(27);
    for r in 0..9 {
        out.push(std::array::from_fn(|c| r * 9 + c));
    }
    for c in 0..9 {
        out.push(std::array::from_fn(|r| r * 9 + c));
    }
    for b in 0..9 {
        let (r0, c0) = (3 * (b / 3), 3 * (b % 3));
        out.push(std::array::from_fn(|i| (r0 + i / 3) * 9 + c0 + i % 3));
    }
    out
}

/// Every group is a permutation of 1..=9.
pub fn is_valid_solution(grid: &[u8]) -> bool {
    grid.len() == 81
        && groups().iter().all(|g| {
            let mut seen = [false; 10];
            g.iter().all(|&i| {
                let v = grid[i] as usize;
                (1..=9).contains(&v) && !std::mem::replace(&mut seen[v], true)
            })
        })
}

/// `grid` is a valid solution that agrees with every given of `prompt`.
pub fn completes(prompt: &[u8], grid: &[u8]) -> bool {
    is_valid_solution(grid) && prompt.iter().zip(grid).all(|(&p, &g)| p == 0 || p == g)
}

fn fill<R: Rng + ?Sized>(grid: &mut [u8; 81], i: usize, rng: &mut R) -> bool {
    if i == 81 {
        return true;
    }
    let (r, c) = (i / 9, i % 9);
    let mut digits: [u8; 9] = std::array::from_fn(|d| d as u8 + 1);
    digits.shuffle(rng);
    for d in digits {
        let clash = (0..9).any(|k| {
            grid[r * 9 + k] == d
                || grid[k * 9 + c] == d
                || grid[(3 * (r / 3) + k / 3) * 9 + 3 * (c / 3) + k % 3] == d
        });
        if !clash {
            grid[i] = d;
            if fill(grid, i + 1, rng) {
                return true;
            }
            grid[i] = 0;
        }
    }
    false
}

/// Random full grid by randomized backtracking, then a random subset of
/// `givens` cells kept, with `givens` uniform in the inclusive range.
pub fn gen_sudoku<R: Rng + ?Sized>(rng: &mut R, givens: (usize, usize)) -> Result<SudokuInstance> {
    let (lo, hi) = givens;
    if !(17..=81).contains(&lo) || !(lo..=81).contains(&hi) {
        return Err(Error::Config(format!("givens range [{lo}, {hi}] must lie within [17, 81]")));
    }
    let mut grid = [0u8; 81];
    let ok = fill(&mut grid, 0, rng);
    debug_assert!(ok, "an empty grid always has a completion");
    let n = rng.random_range(lo..=hi);
    let mut order: Vec<usize> = (0..81).collect();
    order.shuffle(rng);
    let mut prompt = vec![0u8; 81];
    for &i in &order[..n] {
        prompt[i] = grid[i];
    }
    Ok(SudokuInstance { prompt, solution: grid.to_vec() })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SudokuScore {
    /// Accuracy over the originally empty cells.
    pub cell_acc: f64,
    /// Exact match with the stored solution.
    pub solve: bool,
    /// Any constraint-satisfying completion of the givens.
    pub valid_solve: bool,
}

pub fn eval_sudoku(pred: &[u8], inst: &SudokuInstance) -> Result<SudokuScore> {
    if pred.len() != 81 {
        return Err(Error::Shape(format!("{} predicted cells, expected 81", pred.len())));
    }
    let empties: Vec<usize> = inst.empties().collect();
    let hits = empties.iter().filter(|&&i| pred[i] == inst.solution[i]).count();
    let cell_acc = if empties.is_empty() { 1.0 } else { hits as f64 / empties.len() as f64 };
    Ok(SudokuScore { cell_acc, solve: pred == inst.solution, valid_solve: completes(&inst.prompt, pred) })
}
