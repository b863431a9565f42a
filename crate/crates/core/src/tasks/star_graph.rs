//! Star-graph path-finding.
//!
//! Token layout for `N` nodes: nodes `0..N`, then `|`, `,`, `/`, `=`, mask
//! and pad. The prompt is the shuffled edge list (`u v |` per edge) followed
//! by `/ start , goal =`; the response is the path from start to goal.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seqcore::{TokenId, TokenSequence, Vocab};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StarGraphConfig {
    pub degree: usize,
    pub length: usize,
    pub nodes: usize,
}

impl Default for StarGraphConfig {
    fn default() -> Self {
        Self { degree: 5, length: 5, nodes: 100 }
    }
}

impl StarGraphConfig {
    pub fn validate(&self) -> Result<()> {
        if self.degree == 0 || self.length == 0 {
            return Err(Error::Config("star graph needs degree and length >= 1".into()));
        }
        if self.degree * self.length + 1 > self.nodes {
            return Err(Error::Config(format!(
                "{} branches of length {} need {} nodes, only {} available",
                self.degree,
                self.length,
                self.degree * self.length + 1,
                self.nodes
            )));
        }
        Ok(())
    }

    pub fn sep(&self) -> TokenId {
        self.nodes as TokenId
    }

    pub fn comma(&self) -> TokenId {
        self.nodes as TokenId + 1
    }

    pub fn slash(&self) -> TokenId {
        self.nodes as TokenId + 2
    }

    pub fn equals(&self) -> TokenId {
        self.nodes as TokenId + 3
    }

    pub fn vocab(&self) -> Vocab {
        let n = self.nodes as TokenId;
        let specials = BTreeMap::from([
            ("|".to_string(), n),
            (",".to_string(), n + 1),
            ("/".to_string(), n + 2),
            ("=".to_string(), n + 3),
        ]);
        Vocab::new(self.nodes + 6, n + 4, Some(n + 5), specials).expect("valid layout")
    }

    /// Prompt length: three tokens per edge plus the five-token query.
    pub fn prompt_len(&self) -> usize {
        3 * self.degree * self.length + 5
    }

    pub fn response_len(&self) -> usize {
        self.length + 1
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StarGraphInstance {
    pub seq: TokenSequence,
    pub edges: Vec<(TokenId, TokenId)>,
    pub start: TokenId,
    pub goal: TokenId,
    /// Start to goal inclusive.
    pub path: Vec<TokenId>,
}

pub fn gen_star_graph<R: Rng + ?Sized>(cfg: &StarGraphConfig, rng: &mut R) -> Result<StarGraphInstance> {
    cfg.validate()?;
    let mut nodes: Vec<TokenId> = (0..cfg.nodes as TokenId).collect();
    nodes.shuffle(rng);
    let start = nodes[0];
    let mut edges = Vec::with_capacity(cfg.degree * cfg.length);
    let mut branches = Vec::with_capacity(cfg.degree);
    for b in 0..cfg.degree {
        let branch: Vec<TokenId> = nodes[1 + b * cfg.length..1 + (b + 1) * cfg.length].to_vec();
        let mut prev = start;
        for &v in &branch {
            edges.push((prev, v));
            prev = v;
        }
        branches.push(branch);
    }
    let chosen = rng.random_range(0..cfg.degree);
    let goal = *branches[chosen].last().unwrap();
    let mut path = vec![start];
    path.extend(&branches[chosen]);
    edges.shuffle(rng);

    let mut tokens = Vec::with_capacity(cfg.prompt_len() + cfg.response_len());
    for &(u, v) in &edges {
        tokens.extend([u, v, cfg.sep()]);
    }
    tokens.extend([cfg.slash(), start, cfg.comma(), goal, cfg.equals()]);
    let prompt_len = tokens.len();
    tokens.extend(&path);
    Ok(StarGraphInstance { seq: TokenSequence::new(tokens, prompt_len)?, edges, start, goal, path })
}

/// Edge list, start and goal read back from a prompt.
pub fn parse_prompt(cfg: &StarGraphConfig, prompt: &[TokenId]) -> Result<(Vec<(TokenId, TokenId)>, TokenId, TokenId)> {
    let bad = |m: &str| Error::Format(format!("star graph prompt: {m}"));
    if prompt.len() < 5 {
        return Err(bad("too short"));
    }
    let (body, query) = prompt.split_at(prompt.len() - 5);
    if query[0] != cfg.slash() || query[2] != cfg.comma() || query[4] != cfg.equals() {
        return Err(bad("malformed query"));
    }
    if body.len() % 3 != 0 {
        return Err(bad("edge list is not a multiple of three tokens"));
    }
    let is_node = |t: TokenId| (t as usize) < cfg.nodes;
    let mut edges = Vec::with_capacity(body.len() / 3);
    for e in body.chunks(3) {
        if !is_node(e[0]) || !is_node(e[1]) || e[2] != cfg.sep() {
            return Err(bad("malformed edge"));
        }
        edges.push((e[0], e[1]));
    }
    if !is_node(query[1]) || !is_node(query[3]) {
        return Err(bad("query endpoints are not nodes"));
    }
    Ok((edges, query[1], query[3]))
}

/// `(fraction of matching positions, all match)`; `pred` is compared over
/// the length of `truth`, missing tokens counting as wrong.
pub fn eval_path(pred: &[TokenId], truth: &[TokenId]) -> (f64, bool) {
    if truth.is_empty() {
        return (1.0, true);
    }
    let hits = truth.iter().enumerate().filter(|(i, t)| pred.get(*i) == Some(t)).count();
    (hits as f64 / truth.len() as f64, hits == truth.len())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    #[test]
    fn layout() {
        let cfg = StarGraphConfig { degree: 3, length: 4, nodes: 20 };
        let inst = gen_star_graph(&cfg, &mut stream(0, "star", 0)).unwrap();
        assert_eq!(inst.seq.prompt_len, cfg.prompt_len());
        assert_eq!(inst.seq.response(), &inst.path[..]);
        assert_eq!(inst.path.len(), 5);
        assert_eq!((inst.path[0], *inst.path.last().unwrap()), (inst.start, inst.goal));
        let (edges, s, g) = parse_prompt(&cfg, inst.seq.prompt()).unwrap();
        assert_eq!((edges, s, g), (inst.edges.clone(), inst.start, inst.goal));
        let vocab = cfg.vocab();
        assert_eq!((vocab.size(), vocab.mask_id(), vocab.pad_id()), (26, 24, Some(25)));
        inst.seq.validate_clean(&vocab).unwrap();
    }

    #[test]
    fn degree_one_path_is_forced() {
        let cfg = StarGraphConfig { degree: 1, length: 3, nodes: 10 };
        let inst = gen_star_graph(&cfg, &mut stream(4, "star", 0)).unwrap();
        assert_eq!(inst.edges.len(), 3);
        let mut v = inst.start;
        for &(a, b) in inst.edges.iter().cycle().take(9) {
            if a == v {
                v = b;
            }
        }
        assert_eq!(v, inst.goal);
    }

    #[test]
    fn rejects_too_many_nodes() {
        let cfg = StarGraphConfig { degree: 10, length: 10, nodes: 100 };
        assert!(matches!(gen_star_graph(&cfg, &mut stream(0, "s", 0)), Err(Error::Config(_))));
    }

    #[test]
    fn path_metric_examples() {
        assert_eq!(eval_path(&[1, 2, 3], &[1, 2, 3]), (1.0, true));
        assert_eq!(eval_path(&[9, 2, 3, 4, 5], &[1, 2, 3, 4, 5]), (0.8, false));
        assert_eq!(eval_path(&[9, 9], &[1, 2]), (0.0, false));
    }
}
