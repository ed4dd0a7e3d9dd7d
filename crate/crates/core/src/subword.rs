//! Byte-pair-encoding subword vocabulary and summed-subword word embeddings.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::nn::{Graph, NnError, ParamId, ParamStore, Var};

pub const END_OF_WORD: &str = "</w>";

pub const BOS: usize = 0;
pub const EOS: usize = 1;
pub const SEP: usize = 2;
pub const PAD: usize = 3;
pub const UNK: usize = 4;

/// Surface strings of the reserved ids, in id order.
pub const SPECIALS: [&str; 5] = ["<bos>", "<eos>", "<sep>", "<pad>", "<unk>"];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SubwordError {
    #[error("empty corpus")]
    EmptyCorpus,
    #[error("empty word")]
    EmptyWord,
    #[error("malformed merge on line {line}: {text:?}")]
    MalformedMerge { line: usize, text: String },
    #[error("vocabulary is not a bijection: duplicate subword {0:?}")]
    DuplicateSubword(String),
    #[error(transparent)]
    Nn(#[from] NnError),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MergeRule {
    pub left: String,
    pub right: String,
    pub rank: usize,
}

#[derive(Serialize, Deserialize)]
struct VocabRepr {
    merges: Vec<(String, String)>,
    subwords: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "VocabRepr", into = "VocabRepr")]
pub struct SubwordVocab {
    merges: Vec<MergeRule>,
    ranks: HashMap<(String, String), usize>,
    subword_to_id: HashMap<String, usize>,
    id_to_subword: Vec<String>,
}

impl From<SubwordVocab> for VocabRepr {
    fn from(v: SubwordVocab) -> Self {
        VocabRepr {
            merges: v.merges.into_iter().map(|m| (m.left, m.right)).collect(),
            subwords: v.id_to_subword[SPECIALS.len()..].to_vec(),
        }
    }
}

impl TryFrom<VocabRepr> for SubwordVocab {
    type Error = SubwordError;

    fn try_from(r: VocabRepr) -> Result<Self, Self::Error> {
        let merges = r
            .merges
            .into_iter()
            .enumerate()
            .map(|(rank, (left, right))| MergeRule { left, right, rank })
            .collect();
        SubwordVocab::from_parts(merges, r.subwords)
    }
}

fn initial_symbols(word: &str) -> Vec<String> {
    let chars: Vec<char> = word.chars().collect();
    let n = chars.len();
    chars
        .into_iter()
        .enumerate()
        .map(|(i, c)| {
            if i + 1 == n {
                format!("{c}{END_OF_WORD}")
            } else {
                c.to_string()
            }
        })
        .collect()
}

fn apply_merge(symbols: &[String], left: &str, right: &str) -> Vec<String> {
    let mut out = Vec::with_capacity(symbols.len());
    let mut i = 0;
    while i < symbols.len() {
        if i + 1 < symbols.len() && symbols[i] == left && symbols[i + 1] == right {
            out.push(format!("{left}{right}"));
            i += 2;
        } else {
            out.push(symbols[i].clone());
            i += 1;
        }
    }
    out
}

/// Learns up to `num_merges` merges by repeatedly joining the most frequent
/// adjacent symbol pair. Ties go to the lexicographically smallest pair.
pub fn learn_bpe<S: AsRef<str>>(
    corpus: &[Vec<S>],
    num_merges: usize,
) -> Result<SubwordVocab, SubwordError> {
    let mut word_freq: BTreeMap<&str, usize> = BTreeMap::new();
    for seq in corpus {
        for w in seq {
            let w = w.as_ref();
            if !w.is_empty() {
                *word_freq.entry(w).or_default() += 1;
            }
        }
    }
    if word_freq.is_empty() {
        return Err(SubwordError::EmptyCorpus);
    }

    let mut words: Vec<(Vec<String>, usize)> = word_freq
        .iter()
        .map(|(w, &f)| (initial_symbols(w), f))
        .collect();
    let mut base: Vec<String> = words.iter().flat_map(|(s, _)| s.iter().cloned()).collect();
    base.sort();
    base.dedup();

    let mut merges = Vec::new();
    while merges.len() < num_merges {
        let mut counts: BTreeMap<(&str, &str), usize> = BTreeMap::new();
        for (syms, f) in &words {
            for pair in syms.windows(2) {
                *counts.entry((pair[0].as_str(), pair[1].as_str())).or_default() += f;
            }
        }
        // BTreeMap iterates pairs in lexicographic order, so keeping the first
        // maximum gives the tie-break.
        let mut best: Option<((&str, &str), usize)> = None;
        for (pair, c) in counts {
            if best.map_or(true, |(_, bc)| c > bc) {
                best = Some((pair, c));
            }
        }
        let Some(((l, r), _)) = best else { break };
        let (l, r) = (l.to_string(), r.to_string());
        for (syms, _) in words.iter_mut() {
            *syms = apply_merge(syms, &l, &r);
        }
        merges.push(MergeRule {
            left: l,
            right: r,
            rank: merges.len(),
        });
    }

    let mut subwords = base;
    for m in &merges {
        let s = format!("{}{}", m.left, m.right);
        if !subwords.contains(&s) {
            subwords.push(s);
        }
    }
    SubwordVocab::from_parts(merges, subwords)
}

impl SubwordVocab {
    /// Rebuilds a vocabulary from merges and the learned subword list (id order,
    /// specials excluded).
    pub fn from_parts(merges: Vec<MergeRule>, subwords: Vec<String>) -> Result<Self, SubwordError> {
        let mut id_to_subword: Vec<String> = SPECIALS.iter().map(|s| s.to_string()).collect();
        id_to_subword.extend(subwords);
        let mut subword_to_id = HashMap::with_capacity(id_to_subword.len());
        for (i, s) in id_to_subword.iter().enumerate() {
            if subword_to_id.insert(s.clone(), i).is_some() {
                return Err(SubwordError::DuplicateSubword(s.clone()));
            }
        }
        let ranks = merges
            .iter()
            .map(|m| ((m.left.clone(), m.right.clone()), m.rank))
            .collect();
        Ok(Self {
            merges,
            ranks,
            subword_to_id,
            id_to_subword,
        })
    }

    pub fn merges(&self) -> &[MergeRule] {
        &self.merges
    }

    pub fn len(&self) -> usize {
        self.id_to_subword.len()
    }

    pub fn is_empty(&self) -> bool {
        self.id_to_subword.is_empty()
    }

    pub fn id(&self, subword: &str) -> Option<usize> {
        self.subword_to_id.get(subword).copied()
    }

    pub fn subword(&self, id: usize) -> Option<&str> {
        self.id_to_subword.get(id).map(String::as_str)
    }

    /// Segments `word` by applying merges in rank order.
    pub fn segment(&self, word: &str) -> Result<Vec<String>, SubwordError> {
        if word.is_empty() {
            return Err(SubwordError::EmptyWord);
        }
        let mut syms = initial_symbols(word);
        loop {
            let best = syms
                .windows(2)
                .filter_map(|p| self.ranks.get(&(p[0].clone(), p[1].clone())).copied())
                .min();
            let Some(rank) = best else { break };
            let m = &self.merges[rank];
            syms = apply_merge(&syms, &m.left, &m.right);
        }
        Ok(syms)
    }

    /// Subword ids for `word`; every symbol outside the vocabulary becomes one UNK.
    pub fn encode_word(&self, word: &str) -> Result<Vec<usize>, SubwordError> {
        Ok(self
            .segment(word)?
            .iter()
            .map(|s| self.id(s).unwrap_or(UNK))
            .collect())
    }

    /// Inverse of [`encode_word`](Self::encode_word) when no UNK is present.
    pub fn decode(&self, ids: &[usize]) -> String {
        ids.iter()
            .map(|&i| self.subword(i).unwrap_or(SPECIALS[UNK]))
            .collect::<String>()
            .replace(END_OF_WORD, "")
    }

    /// One merge per line, `left right`; the line index is the rank.
    pub fn merges_to_text(&self) -> String {
        let mut s = String::new();
        for m in &self.merges {
            s.push_str(&m.left);
            s.push(' ');
            s.push_str(&m.right);
            s.push('\n');
        }
        s
    }

    pub fn parse_merges(text: &str) -> Result<Vec<MergeRule>, SubwordError> {
        text.lines()
            .enumerate()
            .map(|(rank, line)| {
                let mut parts = line.split(' ');
                match (parts.next(), parts.next(), parts.next()) {
                    (Some(l), Some(r), None) if !l.is_empty() && !r.is_empty() => Ok(MergeRule {
                        left: l.to_string(),
                        right: r.to_string(),
                        rank,
                    }),
                    _ => Err(SubwordError::MalformedMerge {
                        line: rank + 1,
                        text: line.to_string(),
                    }),
                }
            })
            .collect()
    }
}

/// Subword embedding table stored in a [`ParamStore`]; one row per subword id.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EmbeddingTable {
    pub param: ParamId,
    pub dim: usize,
}

impl EmbeddingTable {
    pub fn new<R: rand::Rng>(
        store: &mut ParamStore,
        name: &str,
        vocab_size: usize,
        dim: usize,
        rng: &mut R,
    ) -> Result<Self, NnError> {
        let param = crate::nn::init_uniform(store, name, vec![vocab_size, dim], rng)?;
        Ok(Self { param, dim })
    }

    /// Element-wise sum of the rows for `ids`.
    pub fn word_embedding(&self, g: &mut Graph, ids: &[usize]) -> Result<Var, NnError> {
        g.embed_sum(self.param, ids)
    }

    /// Same as [`word_embedding`](Self::word_embedding) outside a graph.
    pub fn word_embedding_values(&self, store: &ParamStore, ids: &[usize]) -> Result<Vec<f64>, NnError> {
        let g = &mut Graph::new(store);
        let v = g.embed_sum(self.param, ids)?;
        Ok(g.value(v).to_vec())
    }
}
