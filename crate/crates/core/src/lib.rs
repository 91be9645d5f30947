//! Case-based subgraph reasoning for knowledge-base question answering.
//!
//! The pipeline: retrieve the K nearest solved cases of a query
//! ([`retrieval`]), collect a query-specific subgraph by replaying the
//! relation chains that connect those cases to their answers
//! ([`subgraph`]), encode every subgraph with a relational GCN and pick the
//! query node most similar to the cases' answer nodes ([`gnn`]).
//!
//! [`synth`] generates the controlled pattern-reasoning benchmark,
//! [`baselines`] holds the path-voting and TransE-style comparison systems and
//! [`harness`] drives experiments from the `cbr-subg` binary.

pub mod baselines;
pub mod error;
pub mod eval;
pub mod gnn;
pub mod harness;
pub mod kg;
pub mod retrieval;
pub mod subgraph;
pub mod synth;

pub use error::{Error, Result};

use serde::{Deserialize, Serialize};

/// Dataset partition.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Valid, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Valid => "valid",
            Split::Test => "test",
        }
    }
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "valid" | "dev" | "validation" => Ok(Split::Valid),
            "test" => Ok(Split::Test),
            other => Err(Error::Config(format!("unknown split '{other}'"))),
        }
    }
}

impl std::fmt::Display for Split {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Derives an independent stream seed from a base seed and a path of labels
/// (splitmix64 over the sequence).
pub fn derive_seed(base: u64, parts: &[u64]) -> u64 {
    fn mix(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }
    parts.iter().fold(mix(base), |acc, &p| mix(acc ^ mix(p)))
}
