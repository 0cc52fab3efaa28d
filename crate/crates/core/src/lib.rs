//! Multi-turn intent classification toolkit.
//!
//! The crate covers three connected jobs:
//!
//! * pseudo-labeling unlabeled multi-turn sessions with a retrieval-augmented,
//!   in-context LLM prompt that is run under three demonstration orderings and
//!   only kept when all three runs agree ([`pipeline`]);
//! * compressing verbose intent labels into short, unique generation targets
//!   ([`symboltune`]);
//! * training and evaluating a small hierarchical classifier head on the
//!   resulting data ([`htc`], [`eval`]).
//!
//! Everything below the LLM and embedding providers is deterministic given a
//! seed. The [`bench`] module generates a synthetic benchmark so the whole
//! pipeline can run offline against the [`llm::GoldOracleBackend`].

pub mod bench;
pub mod config;
pub mod corpus;
pub mod eval;
pub mod htc;
pub mod jsonl;
pub mod llm;
pub mod pipeline;
pub mod promptgen;
pub mod retrieval;
pub mod seed;
pub mod symboltune;
pub mod taxonomy;

pub use corpus::{LabeledExample, Session, TransitionModel};
pub use pipeline::{ConsistencyVerdict, FilterStats, PseudoLabel};
pub use retrieval::{Embedder, HashingEmbedder, RetrievalIndex};
pub use taxonomy::{Intent, Taxonomy};
