//! Personalised query rewriting from a user's successful-interaction memory.
//!
//! Given an ASR n-best and the user's memory of past successful utterances,
//! a model either proposes a corrected utterance with a confidence or
//! abstains. Two models are provided: a point-wise [`retrieval`] scorer and a
//! memory-grounded pointer-generator ([`pointer`]). Everything numeric runs on
//! the small reverse-mode engine in [`nn`].

pub mod checkpoint;
pub mod config;
pub mod corpus;
pub mod eval;
pub mod model;
pub mod nn;
pub mod pipeline;
pub mod pointer;
pub mod retrieval;
pub mod rng;
pub mod subword;
pub mod train;

pub use checkpoint::{Checkpoint, CheckpointError, Model, ModelKind};
pub use config::RunConfig;
pub use corpus::{
    semantic_match, DatasetSplit, GenConfig, Grammar, MemoryEntry, NBest, RephrasePair, UserMemory,
    Utterance,
};
pub use eval::{compute_metrics, Metrics, PrCurve, Prediction};
pub use model::{Candidate, ModelError, RewriteDecision, Rewriter};
pub use pointer::{rewrite_probability, PointerConfig, PointerModel};
pub use retrieval::{EncoderKind, RetrievalConfig, RetrievalModel};
pub use subword::SubwordVocab;
pub use train::{LossTrace, TrainConfig};
