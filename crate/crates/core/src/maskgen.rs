//! Attention visibility matrices for each paradigm.
//!
//! Entry `(u, v)` is true when query position `u` may attend to key position
//! `v`. Outside the AR mask, prompt rows attend bidirectionally to the prompt
//! and every response row sees the whole prompt.

use std::fmt;

use crate::error::{Error, Result};
use crate::paradigm::Paradigm;
use crate::seqcore::BlockPartition;

#[derive(Clone, PartialEq, Eq, Hash)]
pub struct AttentionMask {
    size: usize,
    bits: Vec<bool>,
}

impl AttentionMask {
    pub fn from_fn(size: usize, f: impl Fn(usize, usize) -> bool) -> Result<Self> {
        if size == 0 {
            return Err(Error::EmptyMask);
        }
        let mut bits = Vec::with_capacity(size * size);
        for u in 0..size {
            for v in 0..size {
                bits.push(f(u, v));
            }
        }
        Ok(Self { size, bits })
    }

    pub fn size(&self) -> usize {
        self.size
    }

    #[inline]
    pub fn get(&self, u: usize, v: usize) -> bool {
        self.bits[u * self.size + v]
    }

    pub fn row(&self, u: usize) -> &[bool] {
        &self.bits[u * self.size..(u + 1) * self.size]
    }

    pub fn popcount(&self) -> usize {
        self.bits.iter().filter(|b| **b).count()
    }

    /// Rows of `'1'`/`'0'`, one per query position, newline separated.
    pub fn to_grid(&self) -> String {
        let mut s = String::with_capacity(self.size * (self.size + 1));
        for u in 0..self.size {
            for &b in self.row(u) {
                s.push(if b { '1' } else { '0' });
            }
            s.push('\n');
        }
        s
    }

    pub fn from_grid(text: &str) -> Result<Self> {
        let rows: Vec<&str> = text.lines().filter(|l| !l.is_empty()).collect();
        let size = rows.len();
        let mut bits = Vec::with_capacity(size * size);
        for (u, row) in rows.iter().enumerate() {
            if row.len() != size {
                return Err(Error::Format(format!("mask row {u} has {} columns", row.len())));
            }
            for c in row.chars() {
                bits.push(match c {
                    '1' => true,
                    '0' => false,
                    other => return Err(Error::Format(format!("bad mask char {other:?}"))),
                });
            }
        }
        if size == 0 {
            return Err(Error::EmptyMask);
        }
        Ok(Self { size, bits })
    }
}

impl fmt::Debug for AttentionMask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "AttentionMask({})", self.size)?;
        f.write_str(&self.to_grid())
    }
}

pub fn causal_mask(len: usize) -> Result<AttentionMask> {
    AttentionMask::from_fn(len, |u, v| v <= u)
}

pub fn bidirectional_mask(len: usize) -> Result<AttentionMask> {
    AttentionMask::from_fn(len, |_, _| true)
}

/// Block-causal: a response row sees the prompt, all earlier blocks, and its
/// own block in both directions.
pub fn block_causal_mask(len: usize, prompt_len: usize, block_size: usize) -> Result<AttentionMask> {
    let part = BlockPartition::new(len, prompt_len, block_size)?;
    AttentionMask::from_fn(len, |u, v| match (part.locate_global(u), part.locate_global(v)) {
        (_, None) => true,
        (None, Some(_)) => false,
        (Some((ku, _)), Some((kv, _))) => kv <= ku,
    })
}

/// Offset-synchronized mask: a response row at offset `j` sees every
/// position at an earlier offset in any block, plus its own block's slot at
/// offset `j` (itself). Same-offset slots of other blocks stay hidden.
pub fn scatter_mask(len: usize, prompt_len: usize, block_size: usize) -> Result<AttentionMask> {
    let part = BlockPartition::new(len, prompt_len, block_size)?;
    AttentionMask::from_fn(len, |u, v| match (part.locate_global(u), part.locate_global(v)) {
        (_, None) => true,
        (None, Some(_)) => false,
        (Some((ku, ju)), Some((kv, jv))) => jv < ju || (jv == ju && kv == ku),
    })
}

/// Random-independence training mask: response blocks see the prompt and
/// their own left prefix, never another block.
pub fn jigsaw_train_mask(len: usize, prompt_len: usize, block_size: usize) -> Result<AttentionMask> {
    let part = BlockPartition::new(len, prompt_len, block_size)?;
    jigsaw_context_mask(&part, &vec![false; part.num_blocks])
}

/// Jigsaw mask with some blocks already committed. Committed blocks join the
/// prompt as clean bidirectional context; every other block is intra-block
/// causal over `prompt ∪ committed`. With nothing committed this is exactly
/// [`jigsaw_train_mask`].
pub fn jigsaw_context_mask(part: &BlockPartition, committed: &[bool]) -> Result<AttentionMask> {
    if committed.len() != part.num_blocks {
        return Err(Error::Partition(format!(
            "{} committed flags for {} blocks",
            committed.len(),
            part.num_blocks
        )));
    }
    let is_context = |pos: usize| match part.locate_global(pos) {
        None => true,
        Some((k, _)) => committed[k],
    };
    AttentionMask::from_fn(part.total_len(), |u, v| {
        let (u_ctx, v_ctx) = (is_context(u), is_context(v));
        if u < part.response_start {
            return v < part.response_start;
        }
        if u_ctx {
            return v_ctx;
        }
        if v_ctx {
            return true;
        }
        let (ku, _) = part.locate_global(u).unwrap();
        let (kv, _) = part.locate_global(v).unwrap();
        ku == kv && v <= u
    })
}

/// Training mask used by each paradigm.
pub fn training_mask(
    paradigm: Paradigm,
    len: usize,
    prompt_len: usize,
    block_size: usize,
) -> Result<AttentionMask> {
    match paradigm {
        Paradigm::Ar => causal_mask(len),
        Paradigm::Mdm => bidirectional_mask(len),
        Paradigm::Block => block_causal_mask(len, prompt_len, block_size),
        Paradigm::Scatter => scatter_mask(len, prompt_len, block_size),
        Paradigm::Jigsaw => jigsaw_train_mask(len, prompt_len, block_size),
    }
}

pub fn mask_popcount(m: &AttentionMask) -> usize {
    m.popcount()
}
