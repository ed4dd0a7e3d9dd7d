//! Utterances, n-best lists, user memories and rephrase pairs, plus the
//! synthetic smart-home corpus they are generated from.

mod generate;
mod grammar;
mod io;
mod split;

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use generate::{generate_pairs, generate_synthetic, noisy_nbest, GenConfig, GenOutput, SyntheticUser};
pub use grammar::{DeviceKind, DeviceSpec, Frame, Grammar, GrammarConfig, Intent};
pub use io::{read_jsonl, write_jsonl};
pub use split::split_by_user;

pub const MAX_NBEST: usize = 5;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("config error: {0}")]
    Config(String),
    #[error("invalid data: {0}")]
    Invalid(String),
    #[error("need at least 2 users to split, found {0}")]
    TooFewUsers(usize),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error on line {line}: {source}")]
    Json {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
}

/// A word sequence with its NLU annotation.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Utterance {
    pub tokens: Vec<String>,
    pub intent: String,
    pub slots: BTreeMap<String, String>,
}

impl Utterance {
    pub fn text(&self) -> String {
        self.tokens.join(" ")
    }
}

/// Up to five scored ASR hypotheses, best first.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NBest {
    pub hyps: Vec<Vec<String>>,
    pub scores: Vec<f64>,
}

impl NBest {
    pub fn new(hyps: Vec<Vec<String>>, scores: Vec<f64>) -> Result<Self, CorpusError> {
        let n = Self { hyps, scores };
        n.validate()?;
        Ok(n)
    }

    pub fn validate(&self) -> Result<(), CorpusError> {
        if self.hyps.is_empty() || self.hyps.len() > MAX_NBEST {
            return Err(CorpusError::Invalid(format!(
                "n-best must hold 1..={MAX_NBEST} hypotheses, got {}",
                self.hyps.len()
            )));
        }
        if self.scores.len() != self.hyps.len() {
            return Err(CorpusError::Invalid("one score per hypothesis".into()));
        }
        if self.scores.windows(2).any(|w| w[1] > w[0]) {
            return Err(CorpusError::Invalid("scores must be non-increasing".into()));
        }
        if self.hyps.iter().any(|h| h.is_empty() || h.iter().any(String::is_empty)) {
            return Err(CorpusError::Invalid("empty hypothesis or token".into()));
        }
        Ok(())
    }

    /// Keeps the top `n` hypotheses.
    pub fn truncated(&self, n: usize) -> NBest {
        let n = n.max(1).min(self.hyps.len());
        NBest {
            hyps: self.hyps[..n].to_vec(),
            scores: self.scores[..n].to_vec(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemoryEntry {
    pub utterance: Utterance,
    pub frequency: u32,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserMemory {
    pub user_id: String,
    pub entries: Vec<MemoryEntry>,
}

impl UserMemory {
    pub fn empty(user_id: impl Into<String>) -> Self {
        Self {
            user_id: user_id.into(),
            entries: Vec::new(),
        }
    }

    pub fn matches(&self, u: &Utterance) -> bool {
        self.entries.iter().any(|e| semantic_match(&e.utterance, u))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RephrasePair {
    pub user_id: String,
    pub first_turn: NBest,
    pub rephrase: Utterance,
    pub rewritable: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub train: Vec<RephrasePair>,
    pub test: Vec<RephrasePair>,
    pub memories: BTreeMap<String, UserMemory>,
}

impl DatasetSplit {
    /// The user's memory, or an empty one for users without history.
    pub fn memory(&self, user_id: &str) -> UserMemory {
        self.memories
            .get(user_id)
            .cloned()
            .unwrap_or_else(|| UserMemory::empty(user_id))
    }
}

/// Same intent and identical slot maps; wording may differ.
pub fn semantic_match(a: &Utterance, b: &Utterance) -> bool {
    a.intent == b.intent && a.slots == b.slots
}

/// Groups successful interactions per user by exact token sequence. Entries
/// are ordered by descending frequency, then lexicographically by tokens.
pub fn aggregate_memory(successful: &[(String, Utterance)]) -> BTreeMap<String, UserMemory> {
    let mut counts: BTreeMap<&str, HashMap<&[String], (u32, &Utterance)>> = BTreeMap::new();
    for (user, utt) in successful {
        let slot = counts
            .entry(user.as_str())
            .or_default()
            .entry(utt.tokens.as_slice())
            .or_insert((0, utt));
        slot.0 += 1;
    }
    counts
        .into_iter()
        .map(|(user, by_tokens)| {
            let mut entries: Vec<MemoryEntry> = by_tokens
                .into_values()
                .map(|(frequency, u)| MemoryEntry {
                    utterance: u.clone(),
                    frequency,
                })
                .collect();
            entries.sort_by(|a, b| {
                b.frequency
                    .cmp(&a.frequency)
                    .then_with(|| a.utterance.tokens.cmp(&b.utterance.tokens))
            });
            (
                user.to_string(),
                UserMemory {
                    user_id: user.to_string(),
                    entries,
                },
            )
        })
        .collect()
}

pub fn tokens(s: &str) -> Vec<String> {
    s.split_whitespace().map(str::to_string).collect()
}
