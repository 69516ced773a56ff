//! Off-policy learning of treatment-assignment rules from randomized
//! experiments: nuisance estimation, doubly robust scores, exact and hybrid
//! policy-tree search, two-phase experiment simulation and evaluation.

pub mod data;
pub mod error;
pub mod evaluate;
pub mod format;
pub mod nuisance;
pub mod policies;
pub mod scores;
pub mod seeding;
pub mod simulate;
pub mod treesearch;

pub use error::{Error, ErrorKind, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/overview.md")]
    mod overview {}
    #[doc = include_str!("../../../book/src/scores.md")]
    mod scores {}
    #[doc = include_str!("../../../book/src/trees.md")]
    mod trees {}
    #[doc = include_str!("../../../book/src/simulation.md")]
    mod simulation {}
    #[doc = include_str!("../../../book/src/evaluation.md")]
    mod evaluation {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
