//! Memory-grounded pointer-generator.
//!
//! Every n-best hypothesis and every memory utterance is encoded separately
//! (memory words carry an extra `ln(1 + frequency)` feature). At each decoder
//! step a two-level attention runs over each source: word-level inside every
//! utterance, then utterance-level over the per-utterance summaries. The
//! decoder state attends the n-best first; `[state ; n-best context]` then
//! attends the memory. The output distribution mixes the two copy
//! distributions (and optionally a generation softmax) through a learned
//! gate, and a separate head predicts whether the turn should be rewritten.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::corpus::{DatasetSplit, NBest, RephrasePair, UserMemory};
use crate::model::{Candidate, ModelError, Rewriter, Trainable, WordEmbedder};
use crate::nn::{
    bce_node, cross_entropy_node, Activation, AdamState, Attention, AttentionKind, BiLstm, Dense,
    Graph, Keys, Lstm, LstmState, NnError, ParamStore, Var, PROB_CLAMP,
};
use crate::rng::{stream, Stream};
use crate::subword::{EmbeddingTable, SubwordVocab, BOS, EOS, SPECIALS, UNK};
use crate::train::{fit, LossTrace, TrainConfig};

pub fn eos() -> String {
    SPECIALS[EOS].to_string()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PointerConfig {
    pub emb_dim: usize,
    pub hidden_dim: usize,
    pub decoder_dim: usize,
    pub attn_dim: usize,
    pub attention_kind: AttentionKind,
    /// Weight of the rewritable term; the copy term gets `1 - lambda`.
    pub lambda: f64,
    pub max_len: usize,
    pub generation_vocab: bool,
    pub no_memory: bool,
    pub nbest_size: usize,
}

impl Default for PointerConfig {
    fn default() -> Self {
        Self {
            emb_dim: 100,
            hidden_dim: 100,
            decoder_dim: 100,
            attn_dim: 100,
            attention_kind: AttentionKind::Additive,
            lambda: 0.5,
            max_len: 20,
            generation_vocab: false,
            no_memory: false,
            nbest_size: 5,
        }
    }
}

impl PointerConfig {
    pub fn validate(&self) -> Result<(), String> {
        if [self.emb_dim, self.hidden_dim, self.decoder_dim, self.attn_dim].contains(&0) {
            return Err("pointer dimensions must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(format!("lambda = {} is outside [0, 1]", self.lambda));
        }
        if self.max_len == 0 {
            return Err("max_len must be at least 1".into());
        }
        if !(1..=crate::corpus::MAX_NBEST).contains(&self.nbest_size) {
            return Err("pointer nbest_size must be in 1..=5".into());
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Origin {
    Nbest,
    Memory,
}

/// One encoded utterance: surface words (EOS included) and their encodings
/// prepared as word-level attention keys.
#[derive(Clone, Debug)]
pub struct SourceUtterance {
    pub words: Vec<String>,
    pub keys: Keys,
}

#[derive(Clone, Debug)]
pub struct SourceSet {
    pub origin: Origin,
    pub utterances: Vec<SourceUtterance>,
}

impl SourceSet {
    pub fn vocabulary(&self) -> BTreeSet<&str> {
        self.utterances
            .iter()
            .flat_map(|u| u.words.iter().map(String::as_str))
            .collect()
    }
}

/// Result of hierarchical attention over one source.
#[derive(Clone, Debug)]
pub struct Attended {
    pub utt_weights: Var,
    pub word_weights: Vec<Var>,
    pub context: Var,
}

/// Graph nodes of one decoder step.
#[derive(Clone, Debug)]
pub struct StepNodes {
    pub state: LstmState,
    pub nbest: Attended,
    pub memory: Option<Attended>,
    /// Simplex over the active sources: n-best, memory (if present), generation (if enabled).
    pub gates: Var,
    pub generation: Option<Var>,
    pub rewritable: Var,
}

/// Plain values of one decoder step.
#[derive(Clone, Debug, PartialEq)]
pub struct StepOutput {
    pub word_dist: BTreeMap<String, f64>,
    pub rewritable_prob: f64,
    pub gates: Vec<f64>,
    pub nbest_context: Vec<f64>,
    pub memory_context: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Decoded {
    pub words: Vec<String>,
    pub word_probs: Vec<f64>,
    pub rw_probs: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct PointerModel {
    pub config: PointerConfig,
    pub params: ParamStore,
    embedder: WordEmbedder,
    nbest_encoder: BiLstm,
    memory_encoder: BiLstm,
    decoder: Lstm,
    nbest_word: Attention,
    nbest_utt: Attention,
    memory_word: Attention,
    memory_utt: Attention,
    gate: Dense,
    rewritable: Dense,
    generator: Option<Dense>,
    gen_words: Vec<String>,
    gen_index: BTreeMap<String, usize>,
}

impl Trainable for PointerModel {
    fn params(&self) -> &ParamStore {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }
}

/// Generation vocabulary: every rephrase word of `pairs` plus EOS and UNK, sorted.
pub fn generation_words(pairs: &[RephrasePair]) -> Vec<String> {
    let mut set: BTreeSet<String> = pairs
        .iter()
        .flat_map(|p| p.rephrase.tokens.iter().cloned())
        .collect();
    set.insert(eos());
    set.insert(SPECIALS[UNK].to_string());
    set.into_iter().collect()
}

impl PointerModel {
    /// `gen_words` is ignored unless the generation vocabulary is enabled.
    pub fn new(
        config: PointerConfig,
        vocab: SubwordVocab,
        gen_words: Vec<String>,
        seed: u64,
    ) -> Result<Self, ModelError> {
        config.validate().map_err(ModelError::Input)?;
        let gen_words = if config.generation_vocab {
            if gen_words.is_empty() {
                return Err(ModelError::Input("empty generation vocabulary".into()));
            }
            gen_words
        } else {
            Vec::new()
        };
        let rng = &mut stream(seed, Stream::Init);
        let c = &config;
        let mut p = ParamStore::new();
        let enc = 2 * c.hidden_dim;
        let table = EmbeddingTable::new(&mut p, "emb", vocab.len(), c.emb_dim, rng)?;
        let nbest_encoder = BiLstm::new(&mut p, "nbest_enc", c.emb_dim, c.hidden_dim, rng)?;
        let memory_encoder = BiLstm::new(&mut p, "mem_enc", c.emb_dim + 1, c.hidden_dim, rng)?;
        let decoder = Lstm::new(&mut p, "dec", c.emb_dim, c.decoder_dim, rng)?;
        let k = c.attention_kind;
        let nbest_word = Attention::new(&mut p, "nb_word", k, c.decoder_dim, enc, c.attn_dim, rng)?;
        let nbest_utt = Attention::new(&mut p, "nb_utt", k, c.decoder_dim, enc, c.attn_dim, rng)?;
        let mq = c.decoder_dim + enc;
        let memory_word = Attention::new(&mut p, "mem_word", k, mq, enc, c.attn_dim, rng)?;
        let memory_utt = Attention::new(&mut p, "mem_utt", k, mq, enc, c.attn_dim, rng)?;
        let head_in = c.decoder_dim + 2 * enc;
        let n_gates = if c.generation_vocab { 3 } else { 2 };
        let gate = Dense::new(&mut p, "gate", head_in, n_gates, Activation::None, rng)?;
        let rewritable = Dense::new(&mut p, "rw", head_in, 1, Activation::Sigmoid, rng)?;
        let generator = if c.generation_vocab {
            Some(Dense::new(&mut p, "gen", c.decoder_dim, gen_words.len(), Activation::None, rng)?)
        } else {
            None
        };
        let gen_index = gen_words.iter().enumerate().map(|(i, w)| (w.clone(), i)).collect();
        Ok(Self {
            config,
            params: p,
            embedder: WordEmbedder::new(vocab, table),
            nbest_encoder,
            memory_encoder,
            decoder,
            nbest_word,
            nbest_utt,
            memory_word,
            memory_utt,
            gate,
            rewritable,
            generator,
            gen_words,
            gen_index,
        })
    }

    pub fn vocab(&self) -> &SubwordVocab {
        &self.embedder.vocab
    }

    pub fn embedder(&self) -> &WordEmbedder {
        &self.embedder
    }

    pub fn gen_words(&self) -> &[String] {
        &self.gen_words
    }

    /// Names of the parameters that only influence the word distribution.
    pub fn word_side_params(&self) -> Vec<&str> {
        let mut ids = vec![self.gate.w, self.gate.b];
        if let Some(gen) = &self.generator {
            ids.extend([gen.w, gen.b]);
        }
        ids.into_iter().map(|id| self.params.name(id)).collect()
    }

    /// The memory actually used: none in no-memory mode or when it is empty.
    fn active_memory<'m>(&self, memory: Option<&'m UserMemory>) -> Option<&'m UserMemory> {
        if self.config.no_memory {
            return None;
        }
        memory.filter(|m| !m.entries.is_empty())
    }

    pub fn encode_sources(
        &self,
        g: &mut Graph,
        nbest: &NBest,
        memory: Option<&UserMemory>,
    ) -> Result<(SourceSet, Option<SourceSet>), ModelError> {
        nbest.validate().map_err(|e| ModelError::Input(e.to_string()))?;
        let nb = nbest.truncated(self.config.nbest_size);
        let mut nb_utts = Vec::with_capacity(nb.hyps.len());
        for h in &nb.hyps {
            let mut words = h.clone();
            words.push(eos());
            let emb = self.embedder.embed_all(g, &words)?;
            let enc = self.nbest_encoder.encode(g, &emb)?;
            nb_utts.push(SourceUtterance {
                keys: self.nbest_word.prepare(g, &enc)?,
                words,
            });
        }
        let nbest_set = SourceSet {
            origin: Origin::Nbest,
            utterances: nb_utts,
        };
        let Some(memory) = self.active_memory(memory) else {
            return Ok((nbest_set, None));
        };
        let mut mem_utts = Vec::with_capacity(memory.entries.len());
        for e in &memory.entries {
            let mut words = e.utterance.tokens.clone();
            words.push(eos());
            let feat = frequency_feature(e.frequency);
            let mut inputs = Vec::with_capacity(words.len());
            for w in &words {
                let x = self.embedder.embed(g, w)?;
                let f = g.leaf(vec![feat]);
                inputs.push(g.concat(&[x, f]));
            }
            let enc = self.memory_encoder.encode(g, &inputs)?;
            mem_utts.push(SourceUtterance {
                keys: self.memory_word.prepare(g, &enc)?,
                words,
            });
        }
        Ok((
            nbest_set,
            Some(SourceSet {
                origin: Origin::Memory,
                utterances: mem_utts,
            }),
        ))
    }

    fn attention_pair(&self, origin: Origin) -> (&Attention, &Attention) {
        match origin {
            Origin::Nbest => (&self.nbest_word, &self.nbest_utt),
            Origin::Memory => (&self.memory_word, &self.memory_utt),
        }
    }

    pub fn hierarchical_attend(
        &self,
        g: &mut Graph,
        query: Var,
        source: &SourceSet,
    ) -> Result<Attended, ModelError> {
        let (word_att, utt_att) = self.attention_pair(source.origin);
        hierarchical_attend(g, word_att, utt_att, query, source)
    }

    /// One decoder step fed with `prev_word`.
    pub fn decode_step(
        &self,
        g: &mut Graph,
        state: Option<LstmState>,
        prev_word: &str,
        nbest: &SourceSet,
        memory: Option<&SourceSet>,
    ) -> Result<StepNodes, ModelError> {
        let x = self.embedder.embed(g, prev_word)?;
        let state = self.decoder.step(g, x, state)?;
        let s = state.h;
        let nb = self.hierarchical_attend(g, s, nbest)?;
        let enc = 2 * self.config.hidden_dim;
        let mem = match memory {
            Some(m) => {
                let q = g.concat(&[s, nb.context]);
                Some(self.hierarchical_attend(g, q, m)?)
            }
            None => None,
        };
        let mem_ctx = match &mem {
            Some(a) => a.context,
            None => g.zeros(enc),
        };
        let gate_in = g.concat(&[s, nb.context, mem_ctx]);
        let logits = self.gate.forward(g, gate_in)?;
        let mut active = vec![0];
        if mem.is_some() {
            active.push(1);
        }
        if self.generator.is_some() {
            active.push(2);
        }
        let gates = if active.len() == 1 {
            g.leaf(vec![1.0])
        } else {
            let picked = active
                .iter()
                .map(|&i| g.pick(logits, i))
                .collect::<Result<Vec<_>, _>>()?;
            let z = g.concat(&picked);
            g.softmax(z)
        };
        let generation = match &self.generator {
            Some(gen) => {
                let z = gen.forward(g, s)?;
                Some(g.softmax(z))
            }
            None => None,
        };
        let rw_in = g.concat(&[nb.context, mem_ctx, s]);
        let rewritable = self.rewritable.forward(g, rw_in)?;
        Ok(StepNodes {
            state,
            nbest: nb,
            memory: mem,
            gates,
            generation,
            rewritable,
        })
    }

    /// Probability node the step assigns to `word`, or `None` when no
    /// component can produce it.
    pub fn word_prob_node(
        &self,
        g: &mut Graph,
        step: &StepNodes,
        nbest: &SourceSet,
        memory: Option<&SourceSet>,
        word: &str,
    ) -> Result<Option<Var>, ModelError> {
        let mut terms = Vec::new();
        let mut slot = 0;
        if let Some(p) = copy_prob_node(g, nbest, &step.nbest, word)? {
            let gk = g.pick(step.gates, slot)?;
            terms.push(g.mul(gk, p)?);
        }
        slot += 1;
        if let (Some(src), Some(att)) = (memory, &step.memory) {
            if let Some(p) = copy_prob_node(g, src, att, word)? {
                let gk = g.pick(step.gates, slot)?;
                terms.push(g.mul(gk, p)?);
            }
            slot += 1;
        }
        if let Some(dist) = step.generation {
            let idx = self
                .gen_index
                .get(word)
                .or_else(|| self.gen_index.get(SPECIALS[UNK]))
                .copied();
            if let Some(i) = idx {
                let p = g.pick(dist, i)?;
                let gk = g.pick(step.gates, slot)?;
                terms.push(g.mul(gk, p)?);
            }
        }
        if terms.is_empty() {
            return Ok(None);
        }
        Ok(Some(g.sum(&terms)?))
    }

    /// Plain values of a step.
    pub fn step_output(
        &self,
        g: &Graph,
        step: &StepNodes,
        nbest: &SourceSet,
        memory: Option<&SourceSet>,
    ) -> StepOutput {
        let gates = g.value(step.gates).to_vec();
        let mut dist: BTreeMap<String, f64> = BTreeMap::new();
        let mut slot = 0;
        for (w, p) in copy_dist(g, nbest, &step.nbest) {
            *dist.entry(w).or_default() += gates[slot] * p;
        }
        slot += 1;
        let mut memory_context = vec![0.0; 2 * self.config.hidden_dim];
        if let (Some(src), Some(att)) = (memory, &step.memory) {
            for (w, p) in copy_dist(g, src, att) {
                *dist.entry(w).or_default() += gates[slot] * p;
            }
            slot += 1;
            memory_context = g.value(att.context).to_vec();
        }
        if let Some(gen) = step.generation {
            for (w, p) in self.gen_words.iter().zip(g.value(gen)) {
                *dist.entry(w.clone()).or_default() += gates[slot] * p;
            }
        }
        StepOutput {
            word_dist: dist,
            rewritable_prob: g.scalar(step.rewritable),
            gates,
            nbest_context: g.value(step.nbest.context).to_vec(),
            memory_context,
        }
    }

    pub fn greedy_decode(
        &self,
        nbest: &NBest,
        memory: Option<&UserMemory>,
        max_len: usize,
    ) -> Result<Decoded, ModelError> {
        if max_len == 0 {
            return Err(ModelError::Input("max_len must be at least 1".into()));
        }
        let g = &mut Graph::new(&self.params);
        let (nb, mem) = self.encode_sources(g, nbest, memory)?;
        let mut out = Decoded {
            words: Vec::new(),
            word_probs: Vec::new(),
            rw_probs: Vec::new(),
        };
        let mut state = None;
        let mut prev = SPECIALS[BOS].to_string();
        for _ in 0..max_len {
            let step = self.decode_step(g, state, &prev, &nb, mem.as_ref())?;
            let o = self.step_output(g, &step, &nb, mem.as_ref());
            let (word, p) = argmax_word(&o.word_dist);
            out.word_probs.push(p);
            out.rw_probs.push(o.rewritable_prob);
            if word == eos() {
                break;
            }
            out.words.push(word.clone());
            prev = word;
            state = Some(step.state);
        }
        Ok(out)
    }

    /// Mixed copy / rewritable loss of one pair under teacher forcing.
    pub fn pointer_loss(
        &self,
        g: &mut Graph,
        pair: &RephrasePair,
        memory: Option<&UserMemory>,
        lambda: f64,
    ) -> Result<Var, ModelError> {
        if !(0.0..=1.0).contains(&lambda) {
            return Err(ModelError::Input(format!("lambda = {lambda} is outside [0, 1]")));
        }
        let (nb, mem) = self.encode_sources(g, &pair.first_turn, memory)?;
        let mut targets = pair.rephrase.tokens.clone();
        targets.push(eos());
        let t_len = targets.len() as f64;
        let mut state = None;
        let mut prev = SPECIALS[BOS].to_string();
        let mut ce = Vec::new();
        let mut bce = Vec::new();
        for target in &targets {
            let step = self.decode_step(g, state, &prev, &nb, mem.as_ref())?;
            if pair.rewritable && lambda < 1.0 {
                let p = match self.word_prob_node(g, &step, &nb, mem.as_ref(), target)? {
                    Some(p) => p,
                    None => g.leaf(vec![0.0]),
                };
                ce.push(cross_entropy_node(g, p));
            }
            bce.push(bce_node(g, step.rewritable, pair.rewritable, 1.0));
            prev = target.clone();
            state = Some(step.state);
        }
        let b = g.sum(&bce)?;
        let mut loss = g.scale(b, lambda / t_len);
        if !ce.is_empty() {
            let c = g.sum(&ce)?;
            let c = g.scale(c, (1.0 - lambda) / t_len);
            loss = g.add(loss, c)?;
        }
        Ok(loss)
    }
}

/// `ln(1 + frequency)`.
pub fn frequency_feature(frequency: u32) -> f64 {
    (1.0 + frequency as f64).ln()
}

pub fn hierarchical_attend(
    g: &mut Graph,
    word_att: &Attention,
    utt_att: &Attention,
    query: Var,
    source: &SourceSet,
) -> Result<Attended, ModelError> {
    if source.utterances.is_empty() {
        return Err(NnError::EmptyKeys.into());
    }
    let mut word_weights = Vec::with_capacity(source.utterances.len());
    let mut summaries = Vec::with_capacity(source.utterances.len());
    for u in &source.utterances {
        let (w, c) = word_att.attend(g, query, &u.keys)?;
        word_weights.push(w);
        summaries.push(c);
    }
    let keys = utt_att.prepare(g, &summaries)?;
    let (utt_weights, context) = utt_att.attend(g, query, &keys)?;
    Ok(Attended {
        utt_weights,
        word_weights,
        context,
    })
}

/// Copy probability of every surface word: the sum over its positions of
/// utterance weight times word weight.
pub fn copy_dist(g: &Graph, source: &SourceSet, att: &Attended) -> BTreeMap<String, f64> {
    let beta = g.value(att.utt_weights);
    let mut out: BTreeMap<String, f64> = BTreeMap::new();
    for (u, utt) in source.utterances.iter().enumerate() {
        let a = g.value(att.word_weights[u]);
        for (t, w) in utt.words.iter().enumerate() {
            *out.entry(w.clone()).or_default() += beta[u] * a[t];
        }
    }
    out
}

/// Graph node for the copy probability of `word`, if it occurs in `source`.
pub fn copy_prob_node(
    g: &mut Graph,
    source: &SourceSet,
    att: &Attended,
    word: &str,
) -> Result<Option<Var>, ModelError> {
    let mut terms = Vec::new();
    for (u, utt) in source.utterances.iter().enumerate() {
        let pos: Vec<usize> = (0..utt.words.len()).filter(|&t| utt.words[t] == word).collect();
        if pos.is_empty() {
            continue;
        }
        let a = g.index_sum(att.word_weights[u], &pos)?;
        let b = g.pick(att.utt_weights, u)?;
        terms.push(g.mul(a, b)?);
    }
    if terms.is_empty() {
        return Ok(None);
    }
    Ok(Some(g.sum(&terms)?))
}

/// Most probable word; ties go to the lexicographically smaller word.
pub fn argmax_word(dist: &BTreeMap<String, f64>) -> (String, f64) {
    let mut best: Option<(&String, f64)> = None;
    for (w, &p) in dist {
        if best.map_or(true, |(_, b)| p > b) {
            best = Some((w, p));
        }
    }
    best.map(|(w, p)| (w.clone(), p)).unwrap_or_else(|| (eos(), 0.0))
}

/// `sqrt(geomean(word_probs) · geomean(rw_probs))`, computed in log space with
/// every entry clamped away from zero.
pub fn rewrite_probability(word_probs: &[f64], rw_probs: &[f64]) -> Result<f64, ModelError> {
    if word_probs.is_empty() || rw_probs.is_empty() {
        return Err(ModelError::Input("rewrite probability of an empty array".into()));
    }
    let mean_log = |xs: &[f64]| {
        xs.iter().map(|&x| x.clamp(PROB_CLAMP, 1.0).ln()).sum::<f64>() / xs.len() as f64
    };
    Ok((0.5 * (mean_log(word_probs) + mean_log(rw_probs))).exp())
}

impl Rewriter for PointerModel {
    fn propose(&self, nbest: &NBest, memory: &UserMemory) -> Result<Candidate, ModelError> {
        let d = self.greedy_decode(nbest, Some(memory), self.config.max_len)?;
        Ok(Candidate {
            probability: rewrite_probability(&d.word_probs, &d.rw_probs)?,
            tokens: Some(d.words),
        })
    }
}

pub struct PointerExample<'a> {
    pub pair: &'a RephrasePair,
    pub memory: UserMemory,
}

pub fn train_pointer(
    model: &mut PointerModel,
    adam: &mut AdamState,
    split: &DatasetSplit,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<LossTrace, ModelError> {
    let examples: Vec<PointerExample> = split
        .train
        .iter()
        .map(|pair| PointerExample {
            pair,
            memory: split.memory(&pair.user_id),
        })
        .collect();
    let sizes = vec![1; examples.len()];
    let lambda = model.config.lambda;
    let mut rng = stream(seed, Stream::Shuffle);
    fit(model, adam, &examples, &sizes, cfg, &mut rng, |m, g, ex| {
        Ok(Some((m.pointer_loss(g, ex.pair, Some(&ex.memory), lambda)?, 1)))
    })
}
