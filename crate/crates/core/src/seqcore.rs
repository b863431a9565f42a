//! Shared sequence types: vocabularies, prompt/response token sequences,
//! block partitions of the response, and mixed continuous/discrete
//! sequences for in-context regression.

use std::collections::BTreeMap;
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type TokenId = u32;

/// Closed vocabulary with a dedicated mask symbol.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocab {
    size: usize,
    mask_id: TokenId,
    pad_id: Option<TokenId>,
    specials: BTreeMap<String, TokenId>,
}

impl Vocab {
    pub fn new(
        size: usize,
        mask_id: TokenId,
        pad_id: Option<TokenId>,
        specials: BTreeMap<String, TokenId>,
    ) -> Result<Self> {
        if size < 2 {
            return Err(Error::Vocab(format!("size {size} < 2")));
        }
        if mask_id as usize >= size {
            return Err(Error::Vocab(format!("mask id {mask_id} >= size {size}")));
        }
        if let Some(pad) = pad_id {
            if pad as usize >= size || pad == mask_id {
                return Err(Error::Vocab(format!("invalid pad id {pad}")));
            }
        }
        for (name, &id) in &specials {
            if id as usize >= size {
                return Err(Error::Vocab(format!("special {name:?} id {id} >= size")));
            }
            if id == mask_id {
                return Err(Error::Vocab(format!("special {name:?} collides with mask id")));
            }
        }
        Ok(Self { size, mask_id, pad_id, specials })
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn mask_id(&self) -> TokenId {
        self.mask_id
    }

    pub fn pad_id(&self) -> Option<TokenId> {
        self.pad_id
    }

    pub fn special(&self, name: &str) -> Option<TokenId> {
        self.specials.get(name).copied()
    }

    pub fn specials(&self) -> &BTreeMap<String, TokenId> {
        &self.specials
    }

    pub fn contains(&self, id: TokenId) -> bool {
        (id as usize) < self.size
    }
}

/// Token ids laid out as `prompt ‖ response`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenSequence {
    pub tokens: Vec<TokenId>,
    pub prompt_len: usize,
}

impl TokenSequence {
    pub fn new(tokens: Vec<TokenId>, prompt_len: usize) -> Result<Self> {
        if prompt_len > tokens.len() {
            return Err(Error::Shape(format!(
                "prompt_len {prompt_len} exceeds sequence length {}",
                tokens.len()
            )));
        }
        Ok(Self { tokens, prompt_len })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn response_len(&self) -> usize {
        self.tokens.len() - self.prompt_len
    }

    pub fn prompt(&self) -> &[TokenId] {
        &self.tokens[..self.prompt_len]
    }

    pub fn response(&self) -> &[TokenId] {
        &self.tokens[self.prompt_len..]
    }

    /// Checks the clean-data invariants against `vocab`: ids in range and no
    /// mask symbol anywhere.
    pub fn validate_clean(&self, vocab: &Vocab) -> Result<()> {
        for (i, &t) in self.tokens.iter().enumerate() {
            if !vocab.contains(t) {
                return Err(Error::Vocab(format!("token {t} at {i} out of range")));
            }
            if t == vocab.mask_id() {
                return Err(Error::Vocab(format!("clean sequence has mask at {i}")));
            }
        }
        Ok(())
    }

    /// Positions that carry real (non-pad) response tokens.
    pub fn response_targets(&self, pad_id: Option<TokenId>) -> Vec<usize> {
        (self.prompt_len..self.len())
            .filter(|&i| Some(self.tokens[i]) != pad_id)
            .collect()
    }
}

/// Partition of the response into `num_blocks` blocks of `block_size`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BlockPartition {
    pub block_size: usize,
    pub num_blocks: usize,
    pub response_start: usize,
}

impl BlockPartition {
    /// Partitions the response `[prompt_len, len)`.
    pub fn new(len: usize, prompt_len: usize, block_size: usize) -> Result<Self> {
        if block_size == 0 {
            return Err(Error::Partition("block size must be >= 1".into()));
        }
        if prompt_len > len {
            return Err(Error::Partition(format!("prompt_len {prompt_len} > length {len}")));
        }
        let response_len = len - prompt_len;
        if response_len % block_size != 0 {
            return Err(Error::Partition(format!(
                "response length {response_len} is not a multiple of block size {block_size}"
            )));
        }
        Ok(Self { block_size, num_blocks: response_len / block_size, response_start: prompt_len })
    }

    pub fn response_len(&self) -> usize {
        self.block_size * self.num_blocks
    }

    pub fn total_len(&self) -> usize {
        self.response_start + self.response_len()
    }

    /// `(block, offset)` of a response-local index `u`.
    pub fn locate(&self, u: usize) -> (usize, usize) {
        (u / self.block_size, u % self.block_size)
    }

    /// `(block, offset)` of a global position, or `None` inside the prompt.
    pub fn locate_global(&self, pos: usize) -> Option<(usize, usize)> {
        (pos >= self.response_start && pos < self.total_len())
            .then(|| self.locate(pos - self.response_start))
    }

    pub fn global(&self, block: usize, offset: usize) -> usize {
        self.response_start + block * self.block_size + offset
    }

    pub fn block_range(&self, block: usize) -> Result<Range<usize>> {
        if block >= self.num_blocks {
            return Err(Error::Partition(format!(
                "block {block} out of range for {} blocks",
                self.num_blocks
            )));
        }
        let start = self.global(block, 0);
        Ok(start..start + self.block_size)
    }

    /// Global indices `{start + k*S + j : k < K}`.
    pub fn indices_at_offset(&self, offset: usize) -> Result<Vec<usize>> {
        if offset >= self.block_size {
            return Err(Error::Offset { offset, block_size: self.block_size });
        }
        Ok((0..self.num_blocks).map(|k| self.global(k, offset)).collect())
    }
}

pub fn partition_response(seq: &TokenSequence, block_size: usize) -> Result<BlockPartition> {
    BlockPartition::new(seq.len(), seq.prompt_len, block_size)
}

pub fn indices_at_offset(part: &BlockPartition, offset: usize) -> Result<Vec<usize>> {
    part.indices_at_offset(offset)
}

/// Right-pads the response with `pad_id` up to the next multiple of `block_size`.
pub fn pad_response(seq: &TokenSequence, block_size: usize, pad_id: TokenId) -> Result<TokenSequence> {
    if block_size == 0 {
        return Err(Error::Partition("block size must be >= 1".into()));
    }
    let rem = seq.response_len() % block_size;
    let mut tokens = seq.tokens.clone();
    if rem != 0 {
        tokens.extend(std::iter::repeat_n(pad_id, block_size - rem));
    }
    TokenSequence::new(tokens, seq.prompt_len)
}

/// One cell of a mixed sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Cell {
    Scalar(f64),
    Vector(Vec<f64>),
    Token { token: TokenId },
}

impl Cell {
    pub fn as_scalar(&self) -> Option<f64> {
        match self {
            Cell::Scalar(v) => Some(*v),
            _ => None,
        }
    }

    pub fn as_vector(&self) -> Option<&[f64]> {
        match self {
            Cell::Vector(v) => Some(v),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    ContextX,
    ContextY,
    QueryX,
    TargetY,
}

impl Role {
    pub fn is_prompt(self) -> bool {
        matches!(self, Role::ContextX | Role::ContextY)
    }
}

/// Alternating `(x, y)` cells: `P` context pairs followed by `R` query pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HybridSequence {
    pub cells: Vec<Cell>,
    pub roles: Vec<Role>,
    pub d: usize,
}

impl HybridSequence {
    pub fn from_pairs(context: &[(Vec<f64>, f64)], queries: &[(Vec<f64>, f64)]) -> Result<Self> {
        let d = context
            .first()
            .or(queries.first())
            .map(|(x, _)| x.len())
            .ok_or_else(|| Error::Shape("empty hybrid sequence".into()))?;
        let mut cells = Vec::with_capacity(2 * (context.len() + queries.len()));
        let mut roles = Vec::with_capacity(cells.capacity());
        for (x, y) in context {
            cells.push(Cell::Vector(x.clone()));
            cells.push(Cell::Scalar(*y));
            roles.extend([Role::ContextX, Role::ContextY]);
        }
        for (x, y) in queries {
            cells.push(Cell::Vector(x.clone()));
            cells.push(Cell::Scalar(*y));
            roles.extend([Role::QueryX, Role::TargetY]);
        }
        let seq = Self { cells, roles, d };
        seq.validate()?;
        Ok(seq)
    }

    pub fn validate(&self) -> Result<()> {
        if self.cells.len() != self.roles.len() {
            return Err(Error::Shape("cells and roles differ in length".into()));
        }
        if self.cells.len() % 2 != 0 {
            return Err(Error::Shape("hybrid sequence must hold (x, y) pairs".into()));
        }
        let mut seen_query = false;
        for (i, pair) in self.roles.chunks(2).enumerate() {
            match (pair[0], pair[1]) {
                (Role::ContextX, Role::ContextY) if !seen_query => {}
                (Role::QueryX, Role::TargetY) => seen_query = true,
                other => {
                    return Err(Error::Shape(format!("pair {i} has invalid roles {other:?}")));
                }
            }
            let x = &self.cells[2 * i];
            let y = &self.cells[2 * i + 1];
            let dims_ok = match x {
                Cell::Vector(v) => v.len() == self.d,
                Cell::Scalar(_) => self.d == 1,
                Cell::Token { .. } => true,
            };
            if !dims_ok {
                return Err(Error::Shape(format!("x cell of pair {i} has wrong dimension")));
            }
            if matches!(y, Cell::Vector(_)) {
                return Err(Error::Shape(format!("y cell of pair {i} must be scalar")));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn prompt_pairs(&self) -> usize {
        self.roles.iter().filter(|r| **r == Role::ContextY).count()
    }

    pub fn query_pairs(&self) -> usize {
        self.roles.iter().filter(|r| **r == Role::TargetY).count()
    }

    pub fn prompt_len(&self) -> usize {
        self.roles.iter().take_while(|r| r.is_prompt()).count()
    }

    /// Cell indices of the response `y` targets.
    pub fn target_positions(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.roles[i] == Role::TargetY).collect()
    }

    pub fn target_values(&self) -> Vec<f64> {
        self.target_positions()
            .into_iter()
            .filter_map(|i| self.cells[i].as_scalar())
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn seq(len: usize, prompt_len: usize) -> TokenSequence {
        TokenSequence::new(vec![1; len], prompt_len).unwrap()
    }

    #[test]
    fn partition_examples() {
        let p = partition_response(&seq(24, 16), 4).unwrap();
        assert_eq!((p.num_blocks, p.response_start), (2, 16));
        let p = partition_response(&seq(10, 10), 1).unwrap();
        assert_eq!(p.num_blocks, 0);
        assert!(matches!(partition_response(&seq(10, 3), 4), Err(Error::Partition(_))));
        assert!(matches!(partition_response(&seq(10, 3), 0), Err(Error::Partition(_))));
    }

    #[test]
    fn response_index_seven_maps_to_block_one_offset_three() {
        let p = BlockPartition::new(20, 0, 4).unwrap();
        // oracle: enumerate the bijection
        let mut seen = std::collections::HashSet::new();
        for u in 0..20 {
            let (k, j) = p.locate(u);
            assert!(k < 5 && j < 4);
            assert_eq!(k * 4 + j, u);
            assert!(seen.insert((k, j)));
        }
        assert_eq!(seen.len(), 20);
        assert_eq!(p.locate(7), (1, 3));
    }

    #[test]
    fn offset_index_examples() {
        let p = BlockPartition::new(12, 0, 4).unwrap();
        assert_eq!(indices_at_offset(&p, 1).unwrap(), vec![1, 5, 9]);
        let p = BlockPartition::new(5, 0, 1).unwrap();
        assert_eq!(indices_at_offset(&p, 0).unwrap(), vec![0, 1, 2, 3, 4]);
        assert!(matches!(indices_at_offset(&p, 1), Err(Error::Offset { .. })));
    }

    #[test]
    fn padding_rounds_up_to_block_multiple() {
        let s = TokenSequence::new(vec![1, 2, 3, 4, 5, 6, 7], 1).unwrap();
        let padded = pad_response(&s, 4, 9).unwrap();
        assert_eq!(padded.tokens, vec![1, 2, 3, 4, 5, 6, 7, 9, 9]);
        assert!(partition_response(&padded, 4).is_ok());
        assert_eq!(padded.response_targets(Some(9)), vec![1, 2, 3, 4, 5, 6]);
        assert_eq!(pad_response(&padded, 4, 9).unwrap(), padded);
    }

    #[test]
    fn vocab_rejects_colliding_mask() {
        let mut specials = BTreeMap::new();
        specials.insert("=".to_string(), 3);
        assert!(Vocab::new(4, 3, None, specials.clone()).is_err());
        assert!(Vocab::new(4, 4, None, BTreeMap::new()).is_err());
        assert!(Vocab::new(1, 0, None, BTreeMap::new()).is_err());
        let v = Vocab::new(5, 4, Some(2), specials).unwrap();
        assert_eq!(v.special("="), Some(3));
        let clean = TokenSequence::new(vec![0, 1, 3], 1).unwrap();
        assert!(clean.validate_clean(&v).is_ok());
        let dirty = TokenSequence::new(vec![0, 4, 3], 1).unwrap();
        assert!(dirty.validate_clean(&v).is_err());
    }

    #[test]
    fn hybrid_roles_and_json_shape() {
        let ctx = vec![(vec![1.0, 2.0], 3.0)];
        let qry = vec![(vec![0.5, 0.5], 1.0), (vec![0.0, 1.0], 2.0)];
        let h = HybridSequence::from_pairs(&ctx, &qry).unwrap();
        assert_eq!((h.prompt_pairs(), h.query_pairs(), h.prompt_len()), (1, 2, 2));
        assert_eq!(h.target_positions(), vec![3, 5]);
        let json = serde_json::to_string(&h).unwrap();
        assert!(json.starts_with(r#"{"cells":[[1.0,2.0],3.0,"#), "{json}");
        assert!(json.contains(r#""roles":["context_x","context_y","query_x""#));
        let back: HybridSequence = serde_json::from_str(&json).unwrap();
        assert_eq!(back, h);

        let mut bad = h.clone();
        bad.roles.swap(0, 1);
        assert!(bad.validate().is_err());
    }

    proptest! {
        #[test]
        fn offset_sets_partition_the_response(s in 1usize..=8, k in 0usize..=8, prompt in 0usize..5) {
            let p = BlockPartition::new(prompt + s * k, prompt, s).unwrap();
            let mut all: Vec<usize> = (0..s).flat_map(|j| p.indices_at_offset(j).unwrap()).collect();
            for j in 0..s {
                let idx = p.indices_at_offset(j).unwrap();
                prop_assert_eq!(idx.len(), k);
                prop_assert!(idx.windows(2).all(|w| w[0] < w[1]));
            }
            all.sort_unstable();
            prop_assert_eq!(all, (prompt..prompt + s * k).collect::<Vec<_>>());
        }
    }
}
