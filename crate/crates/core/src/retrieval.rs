//! Point-wise retrieval scorer: each memory entry is encoded, used as the
//! query of a one-way attention over the encoded n-best, and the pair
//! `[memory ; n-best context]` is mapped to a probability by two dense layers.

use serde::{Deserialize, Serialize};

use crate::corpus::{semantic_match, DatasetSplit, MemoryEntry, NBest, RephrasePair, UserMemory};
use crate::model::{Candidate, ModelError, RewriteDecision, Rewriter, Trainable, WordEmbedder};
use crate::nn::{
    bce_node, init_uniform, Activation, AdamState, Attention, AttentionKind, BiLstm, Dense, Graph,
    Keys, ParamId, ParamStore, Var,
};
use crate::rng::{stream, Stream};
use crate::subword::{EmbeddingTable, SubwordVocab, SPECIALS, SEP};
use crate::train::{fit, LossTrace, TrainConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EncoderKind {
    MeanEmbedding,
    BilstmMean,
    BilstmSelfAttention,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RetrievalConfig {
    pub emb_dim: usize,
    pub hidden_dim: usize,
    pub attn_dim: usize,
    pub dense_dim: usize,
    pub encoder_kind: EncoderKind,
    pub attention_kind: AttentionKind,
    pub nbest_size: usize,
    /// Effective negatives per positive after loss re-weighting.
    pub neg_ratio: f64,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        Self {
            emb_dim: 100,
            hidden_dim: 100,
            attn_dim: 100,
            dense_dim: 100,
            encoder_kind: EncoderKind::BilstmMean,
            attention_kind: AttentionKind::Additive,
            nbest_size: 5,
            neg_ratio: 4.0,
        }
    }
}

impl RetrievalConfig {
    pub fn validate(&self) -> Result<(), String> {
        if [self.emb_dim, self.hidden_dim, self.attn_dim, self.dense_dim].contains(&0) {
            return Err("retrieval dimensions must be positive".into());
        }
        if !(1..=crate::corpus::MAX_NBEST).contains(&self.nbest_size) {
            return Err("retrieval nbest_size must be in 1..=5".into());
        }
        if !(self.neg_ratio > 0.0) {
            return Err("neg_ratio must be positive".into());
        }
        Ok(())
    }

    /// Width of an encoded memory entry.
    pub fn memory_dim(&self) -> usize {
        match self.encoder_kind {
            EncoderKind::MeanEmbedding => self.emb_dim,
            _ => 2 * self.hidden_dim,
        }
    }
}

#[derive(Clone, Debug)]
struct SelfAttention {
    w: ParamId,
    v: ParamId,
}

#[derive(Clone, Debug)]
pub struct RetrievalModel {
    pub config: RetrievalConfig,
    pub params: ParamStore,
    embedder: WordEmbedder,
    nbest_encoder: BiLstm,
    memory_encoder: Option<BiLstm>,
    self_attention: Option<SelfAttention>,
    attention: Attention,
    hidden: Dense,
    output: Dense,
}

impl Trainable for RetrievalModel {
    fn params(&self) -> &ParamStore {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }
}

impl RetrievalModel {
    pub fn new(config: RetrievalConfig, vocab: SubwordVocab, seed: u64) -> Result<Self, ModelError> {
        config.validate().map_err(ModelError::Input)?;
        let rng = &mut stream(seed, Stream::Init);
        let mut p = ParamStore::new();
        let c = &config;
        let table = EmbeddingTable::new(&mut p, "emb", vocab.len(), c.emb_dim, rng)?;
        let nbest_encoder = BiLstm::new(&mut p, "nbest_enc", c.emb_dim, c.hidden_dim, rng)?;
        let memory_encoder = match c.encoder_kind {
            EncoderKind::MeanEmbedding => None,
            _ => Some(BiLstm::new(&mut p, "mem_enc", c.emb_dim, c.hidden_dim, rng)?),
        };
        let self_attention = match c.encoder_kind {
            EncoderKind::BilstmSelfAttention => Some(SelfAttention {
                w: init_uniform(&mut p, "self_attn.w", vec![c.attn_dim, 2 * c.hidden_dim], rng)?,
                v: init_uniform(&mut p, "self_attn.v", vec![c.attn_dim], rng)?,
            }),
            _ => None,
        };
        let mdim = c.memory_dim();
        let attention = Attention::new(
            &mut p,
            "attn",
            c.attention_kind,
            mdim,
            2 * c.hidden_dim,
            c.attn_dim,
            rng,
        )?;
        let hidden = Dense::new(&mut p, "dense1", mdim + 2 * c.hidden_dim, c.dense_dim, Activation::Tanh, rng)?;
        let output = Dense::new(&mut p, "dense2", c.dense_dim, 1, Activation::Sigmoid, rng)?;
        Ok(Self {
            config,
            params: p,
            embedder: WordEmbedder::new(vocab, table),
            nbest_encoder,
            memory_encoder,
            self_attention,
            attention,
            hidden,
            output,
        })
    }

    pub fn vocab(&self) -> &SubwordVocab {
        &self.embedder.vocab
    }

    pub fn embedder(&self) -> &WordEmbedder {
        &self.embedder
    }

    /// The kept hypotheses flattened into one sequence with separators.
    pub fn flatten_nbest(&self, nbest: &NBest) -> Vec<String> {
        let nb = nbest.truncated(self.config.nbest_size);
        let mut out = Vec::new();
        for (i, h) in nb.hyps.iter().enumerate() {
            if i > 0 {
                out.push(SPECIALS[SEP].to_string());
            }
            out.extend(h.iter().cloned());
        }
        out
    }

    /// Encoded n-best positions, prepared as attention keys.
    pub fn encode_nbest(&self, g: &mut Graph, nbest: &NBest) -> Result<Keys, ModelError> {
        let words = self.flatten_nbest(nbest);
        let emb = self.embedder.embed_all(g, &words)?;
        let enc = self.nbest_encoder.encode(g, &emb)?;
        Ok(self.attention.prepare(g, &enc)?)
    }

    pub fn encode_memory(&self, g: &mut Graph, tokens: &[String]) -> Result<Var, ModelError> {
        if tokens.is_empty() {
            return Err(ModelError::Input("empty memory utterance".into()));
        }
        let emb = self.embedder.embed_all(g, tokens)?;
        let Some(enc) = &self.memory_encoder else {
            return Ok(g.mean(&emb)?);
        };
        let h = enc.encode(g, &emb)?;
        match &self.self_attention {
            None => Ok(g.mean(&h)?),
            Some(sa) => {
                let proj = h
                    .iter()
                    .map(|&x| g.affine(sa.w, x, None))
                    .collect::<Result<Vec<_>, _>>()?;
                let zero = g.zeros(self.config.attn_dim);
                let s = g.additive_scores(zero, &proj, sa.v)?;
                let w = g.softmax(s);
                Ok(g.weighted_sum(w, &h)?)
            }
        }
    }

    /// Probability node for an encoded memory against prepared n-best keys.
    pub fn score_node(&self, g: &mut Graph, nbest: &Keys, memory: Var) -> Result<Var, ModelError> {
        let (_, ctx) = self.attention.attend(g, memory, nbest)?;
        let x = g.concat(&[memory, ctx]);
        let h = self.hidden.forward(g, x)?;
        Ok(self.output.forward(g, h)?)
    }

    pub fn score_memory(&self, nbest: &NBest, entry: &MemoryEntry) -> Result<f64, ModelError> {
        let g = &mut Graph::new(&self.params);
        let keys = self.encode_nbest(g, nbest)?;
        let m = self.encode_memory(g, &entry.utterance.tokens)?;
        let s = self.score_node(g, &keys, m)?;
        Ok(g.scalar(s))
    }

    /// Scores for every entry, in memory order. The n-best is encoded once.
    pub fn score_all(&self, nbest: &NBest, memory: &UserMemory) -> Result<Vec<f64>, ModelError> {
        if memory.entries.is_empty() {
            return Ok(Vec::new());
        }
        let g = &mut Graph::new(&self.params);
        let keys = self.encode_nbest(g, nbest)?;
        memory
            .entries
            .iter()
            .map(|e| {
                let m = self.encode_memory(g, &e.utterance.tokens)?;
                let s = self.score_node(g, &keys, m)?;
                Ok(g.scalar(s))
            })
            .collect()
    }

    pub fn retrieve(
        &self,
        nbest: &NBest,
        memory: &UserMemory,
        threshold: f64,
    ) -> Result<RewriteDecision, ModelError> {
        self.rewrite(nbest, memory, threshold)
    }

    /// Summed weighted BCE over the user's entries and the number of entries.
    pub fn pair_loss(
        &self,
        g: &mut Graph,
        pair: &RephrasePair,
        memory: &UserMemory,
        neg_weight: f64,
    ) -> Result<Option<(Var, usize)>, ModelError> {
        if memory.entries.is_empty() {
            return Ok(None);
        }
        let keys = self.encode_nbest(g, &pair.first_turn)?;
        let mut terms = Vec::with_capacity(memory.entries.len());
        for (e, label) in memory.entries.iter().zip(instance_labels(pair, memory)) {
            let m = self.encode_memory(g, &e.utterance.tokens)?;
            let p = self.score_node(g, &keys, m)?;
            terms.push(bce_node(g, p, label, if label { 1.0 } else { neg_weight }));
        }
        Ok(Some((g.sum(&terms)?, terms.len())))
    }
}

/// One label per memory entry: does it semantically match the rephrase?
pub fn instance_labels(pair: &RephrasePair, memory: &UserMemory) -> Vec<bool> {
    memory
        .entries
        .iter()
        .map(|e| semantic_match(&e.utterance, &pair.rephrase))
        .collect()
}

/// Index of the highest score; ties go to the earlier entry.
pub fn argmax_first(scores: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &s) in scores.iter().enumerate() {
        if best.map_or(true, |b| s > scores[b]) {
            best = Some(i);
        }
    }
    best
}

impl Rewriter for RetrievalModel {
    fn propose(&self, nbest: &NBest, memory: &UserMemory) -> Result<Candidate, ModelError> {
        let scores = self.score_all(nbest, memory)?;
        Ok(match argmax_first(&scores) {
            None => Candidate {
                tokens: None,
                probability: 0.0,
            },
            Some(i) => Candidate {
                tokens: Some(memory.entries[i].utterance.tokens.clone()),
                probability: scores[i],
            },
        })
    }
}

/// Training instances: one `(pair, entry)` per memory entry of the pair's user.
pub struct RetrievalExample<'a> {
    pub pair: &'a RephrasePair,
    pub memory: UserMemory,
}

/// Loss weight for negatives so that they carry `neg_ratio` times the
/// positives' total weight (never up-weighted).
pub fn negative_weight(positives: usize, negatives: usize, neg_ratio: f64) -> f64 {
    if negatives == 0 || positives == 0 {
        return 1.0;
    }
    (neg_ratio * positives as f64 / negatives as f64).min(1.0)
}

pub fn train_retrieval(
    model: &mut RetrievalModel,
    adam: &mut AdamState,
    split: &DatasetSplit,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<LossTrace, ModelError> {
    let examples: Vec<RetrievalExample> = split
        .train
        .iter()
        .map(|pair| RetrievalExample {
            pair,
            memory: split.memory(&pair.user_id),
        })
        .collect();
    let (mut pos, mut neg) = (0, 0);
    for ex in &examples {
        for label in instance_labels(ex.pair, &ex.memory) {
            if label {
                pos += 1;
            } else {
                neg += 1;
            }
        }
    }
    let w = negative_weight(pos, neg, model.config.neg_ratio);
    let sizes: Vec<usize> = examples.iter().map(|e| e.memory.entries.len()).collect();
    let mut rng = stream(seed, Stream::Shuffle);
    fit(model, adam, &examples, &sizes, cfg, &mut rng, |m, g, ex| {
        m.pair_loss(g, ex.pair, &ex.memory, w)
    })
}
