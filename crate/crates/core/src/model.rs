//! Pieces shared by both rewriting models.

use std::collections::HashMap;
use std::sync::RwLock;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{NBest, UserMemory};
use crate::nn::{Graph, NnError, ParamStore, Var};
use crate::subword::{self, EmbeddingTable, SubwordError, SubwordVocab};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Subword(#[from] SubwordError),
    #[error("invalid input: {0}")]
    Input(String),
    #[error("divergence: {0}")]
    Divergence(String),
}

/// Output of a model before thresholding: the best candidate (absent only
/// when there is nothing to choose from) and its rewrite probability.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub tokens: Option<Vec<String>>,
    pub probability: f64,
}

/// A thresholded decision as emitted to callers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RewriteDecision {
    pub rewrite: bool,
    pub utterance: Option<String>,
    pub probability: f64,
}

impl Candidate {
    /// Fires when a candidate exists and its probability reaches `threshold`.
    pub fn decide(&self, threshold: f64) -> RewriteDecision {
        let fires = self.tokens.is_some() && self.probability >= threshold;
        RewriteDecision {
            rewrite: fires,
            utterance: self.tokens.as_ref().map(|t| t.join(" ")),
            probability: self.probability,
        }
    }
}

pub trait Rewriter: Sync {
    fn propose(&self, nbest: &NBest, memory: &UserMemory) -> Result<Candidate, ModelError>;

    fn rewrite(&self, nbest: &NBest, memory: &UserMemory, threshold: f64) -> Result<RewriteDecision, ModelError> {
        Ok(self.propose(nbest, memory)?.decide(threshold))
    }
}

/// Maps surface words to summed subword embeddings. Segmentations are cached.
#[derive(Debug)]
pub struct WordEmbedder {
    pub vocab: SubwordVocab,
    pub table: EmbeddingTable,
    cache: RwLock<HashMap<String, Vec<usize>>>,
}

impl Clone for WordEmbedder {
    fn clone(&self) -> Self {
        Self::new(self.vocab.clone(), self.table)
    }
}

impl WordEmbedder {
    pub fn new(vocab: SubwordVocab, table: EmbeddingTable) -> Self {
        Self {
            vocab,
            table,
            cache: RwLock::new(HashMap::new()),
        }
    }

    /// Subword ids of a word; the reserved surface forms map to their ids.
    pub fn ids(&self, word: &str) -> Result<Vec<usize>, ModelError> {
        if let Some(i) = subword::SPECIALS.iter().position(|s| *s == word) {
            return Ok(vec![i]);
        }
        if let Some(ids) = self.cache.read().expect("cache lock").get(word) {
            return Ok(ids.clone());
        }
        let ids = self.vocab.encode_word(word)?;
        self.cache
            .write()
            .expect("cache lock")
            .insert(word.to_string(), ids.clone());
        Ok(ids)
    }

    pub fn embed(&self, g: &mut Graph, word: &str) -> Result<Var, ModelError> {
        let ids = self.ids(word)?;
        Ok(self.table.word_embedding(g, &ids)?)
    }

    pub fn embed_all(&self, g: &mut Graph, words: &[String]) -> Result<Vec<Var>, ModelError> {
        words.iter().map(|w| self.embed(g, w)).collect()
    }
}

/// Access to a model's trainable parameters.
pub trait Trainable {
    fn params(&self) -> &ParamStore;
    fn params_mut(&mut self) -> &mut ParamStore;
}
