//! Helpers shared by the integration tests: tiny models and independent oracles.
#![allow(dead_code)]

use std::collections::{BTreeMap, VecDeque};

use blockdiff::backbone::{Model, ModelConfig, Real};
use blockdiff::rng::stream;
use blockdiff::seqcore::{TokenSequence, Vocab};
use rand::Rng;

/// Eight symbols 0..=5, mask 6, pad 7.
pub fn vocab() -> Vocab {
    Vocab::new(8, 6, Some(7), BTreeMap::new()).unwrap()
}

pub fn random_seq(prompt: usize, response: usize, seed: u64) -> TokenSequence {
    let mut r = stream(seed, "seq", 0);
    TokenSequence::new((0..prompt + response).map(|_| r.random_range(0..6u32)).collect(), prompt).unwrap()
}

/// 2-layer, n_embd=16 model with weights spread wide enough that every
/// parameter carries a visible gradient.
pub fn tiny_model<F: Real>(vocab_size: usize, len: usize, seed: u64) -> Model<F> {
    rough(ModelConfig::tokens(16, 2, 2, vocab_size, len), seed)
}

pub fn rough<F: Real>(config: ModelConfig, seed: u64) -> Model<F> {
    let mut m = Model::<F>::new(config, seed).unwrap();
    let mut r = stream(seed, "rough", 0);
    for (name, mut t) in m.params.tensors_mut() {
        let gain = name.contains("norm");
        for x in t.iter_mut() {
            let u: f64 = r.random_range(-1.0..1.0);
            *x = F::lit(if gain { 1.0 + 0.3 * u } else { 0.4 * u });
        }
    }
    m
}

/// Breadth-first search over an undirected edge list; the unique path from
/// `start` to `goal` in a tree.
pub fn bfs(edges: &[(u32, u32)], start: u32, goal: u32) -> Option<Vec<u32>> {
    let mut adj: BTreeMap<u32, Vec<u32>> = BTreeMap::new();
    for &(a, b) in edges {
        adj.entry(a).or_default().push(b);
        adj.entry(b).or_default().push(a);
    }
    let mut prev: BTreeMap<u32, u32> = BTreeMap::new();
    let mut queue = VecDeque::from([start]);
    let mut seen = vec![start];
    while let Some(v) = queue.pop_front() {
        if v == goal {
            let mut path = vec![goal];
            while let Some(&p) = prev.get(path.last().unwrap()) {
                path.push(p);
            }
            path.reverse();
            return Some(path);
        }
        for &w in adj.get(&v).map_or(&[][..], |x| x) {
            if !seen.contains(&w) {
                seen.push(w);
                prev.insert(w, v);
                queue.push_back(w);
            }
        }
    }
    None
}

fn fits(grid: &[u8; 81], i: usize, d: u8) -> bool {
    let (r, c) = (i / 9, i % 9);
    let (br, bc) = (r / 3 * 3, c / 3 * 3);
    (0..9).all(|k| {
        grid[r * 9 + k] != d && grid[k * 9 + c] != d && grid[(br + k / 3) * 9 + bc + k % 3] != d
    })
}

/// Counts completions of `grid` by backtracking, stopping at `limit`.
pub fn count_solutions(grid: &mut [u8; 81], limit: usize) -> usize {
    let Some(i) = grid.iter().position(|&c| c == 0) else { return 1 };
    let mut n = 0;
    for d in 1..=9 {
        if fits(grid, i, d) {
            grid[i] = d;
            n += count_solutions(grid, limit - n);
            grid[i] = 0;
            if n >= limit {
                break;
            }
        }
    }
    n
}

/// Every row, column and box of a full grid is a permutation of 1..=9.
pub fn grid_is_valid(grid: &[u8]) -> bool {
    let ok = |cells: Vec<usize>| {
        let mut seen = [false; 10];
        cells.iter().all(|&i| {
            let d = grid[i] as usize;
            (1..=9).contains(&d) && !std::mem::replace(&mut seen[d], true)
        })
    };
    (0..9).all(|k| {
        ok((0..9).map(|c| k * 9 + c).collect())
            && ok((0..9).map(|r| r * 9 + k).collect())
            && ok((0..9).map(|i| (k / 3 * 3 + i / 3) * 9 + k % 3 * 3 + i % 3).collect())
    })
}

/// Offset-synchronized visibility written out directly from its definition:
/// response rows see the prompt, earlier offsets in every block and their own
/// slot; prompt rows see the prompt.
pub fn scatter_brute(len: usize, prompt: usize, s: usize) -> Vec<Vec<bool>> {
    let mut m = vec![vec![false; len]; len];
    for u in 0..len {
        for v in 0..len {
            m[u][v] = if v < prompt {
                true
            } else if u < prompt {
                false
            } else {
                let (ku, ju) = ((u - prompt) / s, (u - prompt) % s);
                let (kv, jv) = ((v - prompt) / s, (v - prompt) % s);
                jv < ju || (jv == ju && kv == ku)
            };
        }
    }
    m
}

/// Fills the empty cells of `grid` by backtracking; false if impossible.
pub fn solve(grid: &mut [u8; 81]) -> bool {
    let Some(i) = grid.iter().position(|&c| c == 0) else { return true };
    for d in 1..=9 {
        if fits(grid, i, d) {
            grid[i] = d;
            if solve(grid) {
                return true;
            }
            grid[i] = 0;
        }
    }
    false
}
