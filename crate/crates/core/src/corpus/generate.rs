//! Seeded synthetic smart-home corpus.
//!
//! Each user owns a device inventory and a weighted set of habitual frames.
//! Memories are aggregated from successful interactions sampled first; rephrase
//! pairs are sampled afterwards. A pair's first turn is an n-best whose top
//! hypothesis is always defective (acoustic confusion, dropped word, or a
//! self-correction) and whose lower ranks may contain the intended wording.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::grammar::{DeviceSpec, Frame, Grammar, GrammarConfig, Intent};
use super::{
    aggregate_memory, semantic_match, split_by_user, CorpusError, DatasetSplit, NBest,
    RephrasePair, UserMemory, Utterance,
};
use crate::rng::{stream, Stream};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GenConfig {
    pub n_users: usize,
    pub n_pairs: usize,
    pub devices_per_user: (usize, usize),
    pub successful_per_user: (usize, usize),
    pub nbest_size: usize,
    /// Probability that a pair's second turn is a fresh intent outside memory.
    pub p_nr: f64,
    /// Probability that the intended wording appears below rank 1.
    pub p_true_in_nbest: f64,
    pub p_self_correct: f64,
    pub p_word_drop: f64,
    /// Label noise: the user changes their mind between turns.
    pub p_change_mind: f64,
    pub p_favorite_template: f64,
    pub train_ratio: f64,
    pub grammar: GrammarConfig,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            n_users: 200,
            n_pairs: 5000,
            devices_per_user: (3, 8),
            successful_per_user: (15, 40),
            nbest_size: 5,
            p_nr: 0.3,
            p_true_in_nbest: 0.5,
            p_self_correct: 0.08,
            p_word_drop: 0.15,
            p_change_mind: 0.0,
            p_favorite_template: 0.7,
            train_ratio: 0.8,
            grammar: GrammarConfig::default(),
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<(), CorpusError> {
        let err = |m: String| Err(CorpusError::Config(m));
        for (name, p) in [
            ("p_nr", self.p_nr),
            ("p_true_in_nbest", self.p_true_in_nbest),
            ("p_self_correct", self.p_self_correct),
            ("p_word_drop", self.p_word_drop),
            ("p_change_mind", self.p_change_mind),
            ("p_favorite_template", self.p_favorite_template),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return err(format!("{name} = {p} is outside [0, 1]"));
            }
        }
        if self.grammar.devices.is_empty() {
            return err("empty device catalog".into());
        }
        if self.n_users < 2 {
            return err("n_users must be at least 2".into());
        }
        let (lo, hi) = self.devices_per_user;
        if lo == 0 || lo > hi || hi > self.grammar.devices.len() {
            return err(format!(
                "devices_per_user ({lo}, {hi}) must satisfy 1 <= lo <= hi <= catalog size {}",
                self.grammar.devices.len()
            ));
        }
        let (lo, hi) = self.successful_per_user;
        if lo > hi {
            return err("successful_per_user range is reversed".into());
        }
        if !(1..=super::MAX_NBEST).contains(&self.nbest_size) {
            return err("nbest_size must be in 1..=5".into());
        }
        if !(self.train_ratio > 0.0 && self.train_ratio < 1.0) {
            return err("train_ratio must lie strictly between 0 and 1".into());
        }
        Grammar::new(self.grammar.clone()).map(|_| ())
    }
}

/// Per-user latent state behind the generated data.
#[derive(Clone, Debug)]
pub struct SyntheticUser {
    pub user_id: String,
    pub devices: Vec<DeviceSpec>,
    pub habits: Vec<(Frame, f64)>,
    pub favorite_template: BTreeMap<Intent, usize>,
}

pub struct GenOutput {
    pub users: Vec<SyntheticUser>,
    pub pairs: Vec<RephrasePair>,
    pub memories: BTreeMap<String, UserMemory>,
}

fn weighted<'a, T, R: Rng>(rng: &mut R, items: &'a [(T, f64)]) -> &'a T {
    let total: f64 = items.iter().map(|(_, w)| w).sum();
    let mut x = rng.gen::<f64>() * total;
    for (t, w) in items {
        if x < *w {
            return t;
        }
        x -= w;
    }
    &items[items.len() - 1].0
}

struct Generator<'a, R: Rng> {
    cfg: &'a GenConfig,
    grammar: Grammar,
    rng: R,
}

impl<R: Rng> Generator<'_, R> {
    fn make_user(&mut self, idx: usize) -> SyntheticUser {
        let (lo, hi) = self.cfg.devices_per_user;
        let n = self.rng.gen_range(lo..=hi);
        let devices: Vec<DeviceSpec> = self
            .grammar
            .devices()
            .choose_multiple(&mut self.rng, n)
            .cloned()
            .collect();
        let mut habits = Vec::new();
        for d in &devices {
            let all = self.grammar.frames_for(d);
            for f in all.iter().filter(|f| !f.intent.takes_value()) {
                if self.rng.gen_bool(0.85) {
                    habits.push(f.clone());
                }
            }
            let valued: Vec<&Frame> = all.iter().filter(|f| f.intent.takes_value()).collect();
            if !valued.is_empty() {
                let k = self.rng.gen_range(0..=2usize);
                for f in valued.choose_multiple(&mut self.rng, k) {
                    habits.push((*f).clone());
                }
            }
        }
        if habits.is_empty() {
            let d = &devices[0];
            habits.push(self.grammar.frames_for(d)[0].clone());
        }
        let habits = habits
            .into_iter()
            .map(|f| {
                let w: f64 = self.rng.gen();
                (f, w * w + 0.05)
            })
            .collect();
        let favorite_template = Intent::ALL
            .into_iter()
            .map(|i| {
                let k = self.grammar.num_templates(i).max(1);
                (i, self.rng.gen_range(0..k))
            })
            .collect();
        SyntheticUser {
            user_id: format!("user{idx:04}"),
            devices,
            habits,
            favorite_template,
        }
    }

    fn realize_for(&mut self, user: &SyntheticUser, frame: &Frame) -> Utterance {
        let t = if self.rng.gen_bool(self.cfg.p_favorite_template) {
            user.favorite_template[&frame.intent]
        } else {
            self.rng.gen_range(0..self.grammar.num_templates(frame.intent).max(1))
        };
        self.grammar.realize(frame, t)
    }

    /// One random edit: an acoustic confusion, a dropped word, or (when
    /// `filler` is set) an inserted filler word.
    fn edit(&mut self, tokens: &[String], filler: bool) -> Vec<String> {
        let mut out = tokens.to_vec();
        let confusable: Vec<usize> = (0..out.len())
            .filter(|&i| !self.grammar.confusions(&out[i]).is_empty())
            .collect();
        let r: f64 = self.rng.gen();
        let drop = r < self.cfg.p_word_drop || (!filler && confusable.is_empty());
        if drop && out.len() > 1 {
            let i = self.rng.gen_range(0..out.len());
            out.remove(i);
        } else if !confusable.is_empty() && (r < 0.9 || !filler) {
            let i = *confusable.choose(&mut self.rng).expect("non-empty");
            let c = self.grammar.confusions(&out[i]).choose(&mut self.rng).expect("non-empty").clone();
            out[i] = c;
        } else {
            let i = self.rng.gen_range(0..=out.len());
            let filler = ["uh", "the", "a", "um"].choose(&mut self.rng).expect("non-empty");
            out.insert(i, filler.to_string());
        }
        out
    }

    fn is_defective(&self, hyp: &[String], truth: &Utterance) -> bool {
        match self.grammar.parse(hyp) {
            Some(u) => !semantic_match(&u, truth),
            None => true,
        }
    }

    fn defective_top(&mut self, truth: &Utterance) -> Vec<String> {
        let frame = self.grammar.parse_frame(&truth.tokens);
        if let Some(f) = &frame {
            if matches!(f.intent, Intent::TurnOn | Intent::TurnOff)
                && self.rng.gen_bool(self.cfg.p_self_correct)
            {
                let wrong = if f.intent == Intent::TurnOn { "off" } else { "on" };
                let mut hyp = vec!["turn".to_string(), wrong.to_string(), "no".to_string()];
                hyp.extend(truth.tokens.iter().cloned());
                return hyp;
            }
        }
        for _ in 0..30 {
            // Fillers alone are harmless to copy around, so the top carries
            // at least one confusion or dropped word.
            let mut hyp = self.edit(&truth.tokens, false);
            if self.rng.gen_bool(0.3) {
                hyp = self.edit(&hyp, true);
            }
            if !hyp.is_empty() && self.is_defective(&hyp, truth) {
                return hyp;
            }
        }
        let device: Vec<String> = frame
            .map(|f| super::tokens(&f.device))
            .unwrap_or_default();
        let mut hyp: Vec<String> = truth
            .tokens
            .iter()
            .filter(|t| !device.contains(t))
            .cloned()
            .collect();
        if hyp.is_empty() || !self.is_defective(&hyp, truth) {
            hyp = vec!["uh".to_string()];
        }
        hyp
    }

    fn nbest(&mut self, truth: &Utterance) -> NBest {
        let top = self.defective_top(truth);
        self.nbest_below(truth, top)
    }

    /// Fills ranks 2..k with defective variations of `top`, so its
    /// misrecognition persists down the list unless the true wording itself
    /// is placed.
    fn nbest_below(&mut self, truth: &Utterance, top: Vec<String>) -> NBest {
        let k = self.cfg.nbest_size;
        let mut hyps: Vec<Vec<String>> = vec![top];
        let truth_rank = if k > 1 && self.rng.gen_bool(self.cfg.p_true_in_nbest) {
            Some(self.rng.gen_range(1..k))
        } else {
            None
        };
        let mut tries = 0;
        while hyps.len() < k && tries < 60 {
            tries += 1;
            if Some(hyps.len()) == truth_rank {
                hyps.push(truth.tokens.clone());
                continue;
            }
            let cand = self.edit(&hyps[0], true);
            if !cand.is_empty() && self.is_defective(&cand, truth) && !hyps.contains(&cand) {
                hyps.push(cand);
            }
        }
        let mut scores = Vec::with_capacity(hyps.len());
        let mut s = -self.rng.gen_range(0.2..2.0);
        for _ in 0..hyps.len() {
            scores.push(s);
            s -= self.rng.gen_range(0.1..1.5);
        }
        NBest { hyps, scores }
    }

    /// A frame not semantically present in `memory`.
    fn fresh_frame(&mut self, user: &SyntheticUser, memory: &UserMemory) -> Frame {
        let in_memory = |f: &Frame, g: &Grammar| {
            let u = g.realize(f, 0);
            memory.matches(&u)
        };
        let owned: Vec<Frame> = user
            .devices
            .iter()
            .flat_map(|d| self.grammar.frames_for(d))
            .filter(|f| !in_memory(f, &self.grammar))
            .collect();
        let others: Vec<Frame> = self
            .grammar
            .devices()
            .iter()
            .filter(|d| !user.devices.contains(d))
            .flat_map(|d| self.grammar.frames_for(d))
            .filter(|f| !in_memory(f, &self.grammar))
            .collect();
        let pick_owned = !owned.is_empty() && (others.is_empty() || self.rng.gen_bool(0.5));
        let pool = if pick_owned { &owned } else { &others };
        // On/off frames dominate real traffic; bias towards them.
        let simple: Vec<&Frame> = pool.iter().filter(|f| !f.intent.takes_value()).collect();
        if !simple.is_empty() && self.rng.gen_bool(0.6) {
            return (*simple.choose(&mut self.rng).expect("non-empty")).clone();
        }
        pool.choose(&mut self.rng)
            .cloned()
            .expect("catalog has frames outside any memory")
    }
}

/// Users, pairs and memories before the train/test split.
pub fn generate_pairs(cfg: &GenConfig, seed: u64) -> Result<GenOutput, CorpusError> {
    cfg.validate()?;
    let grammar = Grammar::new(cfg.grammar.clone())?;
    let mut gen = Generator {
        cfg,
        grammar,
        rng: stream(seed, Stream::Data),
    };
    let users: Vec<SyntheticUser> = (0..cfg.n_users).map(|i| gen.make_user(i)).collect();

    // Successful interactions come first (the aggregation window).
    let mut successful = Vec::new();
    for u in &users {
        let (lo, hi) = cfg.successful_per_user;
        let n = gen.rng.gen_range(lo..=hi);
        for _ in 0..n {
            let f = weighted(&mut gen.rng, &u.habits).clone();
            let utt = gen.realize_for(u, &f);
            successful.push((u.user_id.clone(), utt));
        }
    }
    let mut memories = aggregate_memory(&successful);
    for u in &users {
        memories
            .entry(u.user_id.clone())
            .or_insert_with(|| UserMemory::empty(&u.user_id));
    }

    let mut pairs = Vec::with_capacity(cfg.n_pairs);
    for _ in 0..cfg.n_pairs {
        let u = &users[gen.rng.gen_range(0..users.len())];
        let memory = &memories[&u.user_id];
        let remembered: Vec<(Frame, f64)> = memory
            .entries
            .iter()
            .filter_map(|e| {
                gen.grammar
                    .parse_frame(&e.utterance.tokens)
                    .map(|f| (f, e.frequency as f64))
            })
            .collect();
        let fresh = remembered.is_empty() || gen.rng.gen_bool(cfg.p_nr);
        let (intended, rephrase) = if fresh {
            let f = gen.fresh_frame(u, memory);
            let utt = gen.realize_for(u, &f);
            (utt.clone(), utt)
        } else {
            let f = weighted(&mut gen.rng, &remembered).clone();
            let utt = gen.realize_for(u, &f);
            if gen.rng.gen_bool(cfg.p_change_mind) {
                let other = gen.fresh_frame(u, memory);
                let r = gen.realize_for(u, &other);
                (utt, r)
            } else {
                (utt.clone(), utt)
            }
        };
        let first_turn = gen.nbest(&intended);
        let rewritable = memory.matches(&rephrase);
        pairs.push(RephrasePair {
            user_id: u.user_id.clone(),
            first_turn,
            rephrase,
            rewritable,
        });
    }
    Ok(GenOutput {
        users,
        pairs,
        memories,
    })
}

/// A first-turn n-best for `truth` under the generator's noise model: a
/// defective top hypothesis (or the given one) followed by edited variants.
pub fn noisy_nbest<R: Rng>(
    cfg: &GenConfig,
    truth: &Utterance,
    top: Option<Vec<String>>,
    rng: &mut R,
) -> Result<NBest, CorpusError> {
    cfg.validate()?;
    let mut gen = Generator {
        cfg,
        grammar: Grammar::new(cfg.grammar.clone())?,
        rng,
    };
    Ok(match top {
        Some(top) => gen.nbest_below(truth, top),
        None => gen.nbest(truth),
    })
}

/// Generates the corpus and splits it by user.
pub fn generate_synthetic(cfg: &GenConfig, seed: u64) -> Result<DatasetSplit, CorpusError> {
    let out = generate_pairs(cfg, seed)?;
    split_by_user(out.pairs, out.memories, cfg.train_ratio, seed)
}
