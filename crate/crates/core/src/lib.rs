//! App usage prediction from semantic context and recent app history.
//!
//! A user's current context (task words, search query, location and hour
//! tokens) and the apps they used just before are embedded through two
//! user-shared tables, mean pooled, passed through two parallel `tanh`
//! stacks, fused by an elementwise product, and scored by a sigmoid layer
//! with one output per app. Predictions are evaluated with MRR@k and HR@k
//! against a most-recently-used baseline and the two single-branch
//! ablations.
//!
//! ```
//! use cosem::corpus::{synthesize, Coupling, SynthConfig};
//! use cosem::pipeline::{prepare_events, RunConfig};
//!
//! let events = synthesize(&SynthConfig {
//!     seed: 1,
//!     users: 3,
//!     apps: 12,
//!     chunks: 6,
//!     events_per_user: 60,
//!     coupling: Coupling::Joint,
//! })?;
//! let bundle = prepare_events(events, &RunConfig::default())?;
//! assert_eq!(bundle.stats.users, 3);
//! # Ok::<(), cosem::Error>(())
//! ```
//!
//! The guide under `book/` walks through each stage.

pub mod corpus;
pub mod embedding;
pub mod error;
pub mod evaluation;
pub mod model;
pub mod numerics;
pub mod pipeline;
pub mod training;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/intro.md")]
    mod intro {}
    #[doc = include_str!("../../../book/src/corpus.md")]
    mod corpus {}
    #[doc = include_str!("../../../book/src/embedding.md")]
    mod embedding {}
    #[doc = include_str!("../../../book/src/model.md")]
    mod model {}
    #[doc = include_str!("../../../book/src/training.md")]
    mod training {}
    #[doc = include_str!("../../../book/src/evaluation.md")]
    mod evaluation {}
    #[doc = include_str!("../../../book/src/checkpoint.md")]
    mod checkpoint {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
