use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;

/// The five generation paradigms sharing one backbone.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Paradigm {
    /// Left-to-right next-token prediction under a causal mask.
    Ar,
    /// Masked diffusion with full bidirectional attention.
    Mdm,
    /// Block diffusion (SDAR-style): block-causal, bidirectional inside a block.
    Block,
    /// Synchronized offset-major generation across all blocks.
    Scatter,
    /// Entropy-planned block order with left-to-right decoding inside a block.
    Jigsaw,
}

impl Paradigm {
    pub const ALL: [Paradigm; 5] =
        [Paradigm::Ar, Paradigm::Mdm, Paradigm::Block, Paradigm::Scatter, Paradigm::Jigsaw];

    pub fn name(self) -> &'static str {
        match self {
            Paradigm::Ar => "ar",
            Paradigm::Mdm => "mdm",
            Paradigm::Block => "block",
            Paradigm::Scatter => "scatter",
            Paradigm::Jigsaw => "jigsaw",
        }
    }

    pub fn is_diffusion(self) -> bool {
        self != Paradigm::Ar
    }

    /// Paradigms whose targets are predicted from a left context (shifted
    /// teacher forcing) rather than denoised in place.
    pub fn is_causal(self) -> bool {
        matches!(self, Paradigm::Ar | Paradigm::Jigsaw)
    }

    pub fn uses_blocks(self) -> bool {
        matches!(self, Paradigm::Block | Paradigm::Scatter | Paradigm::Jigsaw)
    }
}

impl fmt::Display for Paradigm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Paradigm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "ar" => Ok(Paradigm::Ar),
            "mdm" => Ok(Paradigm::Mdm),
            "block" | "sdar" => Ok(Paradigm::Block),
            "scatter" => Ok(Paradigm::Scatter),
            "jigsaw" => Ok(Paradigm::Jigsaw),
            other => Err(Error::Paradigm(format!("unknown paradigm {other:?}"))),
        }
    }
}
