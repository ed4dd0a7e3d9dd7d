//! Glue between data, models and evaluation.

use rayon::prelude::*;

use crate::checkpoint::{Model, ModelKind};
use crate::config::RunConfig;
use crate::corpus::{DatasetSplit, Grammar, RephrasePair};
use crate::eval::Prediction;
use crate::model::{ModelError, Rewriter};
use crate::nn::AdamState;
use crate::pointer::{generation_words, train_pointer, PointerModel};
use crate::retrieval::{train_retrieval, RetrievalModel};
use crate::subword::{learn_bpe, SubwordError, SubwordVocab};
use crate::train::{LossTrace, TrainConfig};

/// Learns the subword vocabulary from training-side text only: training
/// n-bests and rephrases plus the memories of training users.
pub fn learn_vocab(split: &DatasetSplit, num_merges: usize) -> Result<SubwordVocab, SubwordError> {
    let mut corpus: Vec<Vec<String>> = Vec::new();
    let mut users = std::collections::BTreeSet::new();
    for p in &split.train {
        corpus.extend(p.first_turn.hyps.iter().cloned());
        corpus.push(p.rephrase.tokens.clone());
        users.insert(p.user_id.as_str());
    }
    for u in users {
        if let Some(m) = split.memories.get(u) {
            corpus.extend(m.entries.iter().map(|e| e.utterance.tokens.clone()));
        }
    }
    learn_bpe(&corpus, num_merges)
}

/// A freshly initialised model of `kind` with the run's hyperparameters.
pub fn build_model(
    kind: ModelKind,
    cfg: &RunConfig,
    vocab: SubwordVocab,
    train: &[RephrasePair],
) -> Result<Model, ModelError> {
    Ok(match kind {
        ModelKind::Retrieval => Model::Retrieval(RetrievalModel::new(cfg.retrieval.clone(), vocab, cfg.seed)?),
        ModelKind::Pointer | ModelKind::PointerNoMemory => {
            let mut pc = cfg.pointer.clone();
            pc.no_memory = kind == ModelKind::PointerNoMemory;
            let words = if pc.generation_vocab { generation_words(train) } else { Vec::new() };
            Model::Pointer(PointerModel::new(pc, vocab, words, cfg.seed)?)
        }
    })
}

pub fn train_config_for(kind: ModelKind, cfg: &RunConfig) -> TrainConfig {
    match kind {
        ModelKind::Retrieval => cfg.retrieval_train.clone(),
        _ => cfg.pointer_train.clone(),
    }
}

pub fn train_model(
    model: &mut Model,
    adam: &mut AdamState,
    split: &DatasetSplit,
    train: &TrainConfig,
    seed: u64,
) -> Result<LossTrace, ModelError> {
    match model {
        Model::Retrieval(m) => train_retrieval(m, adam, split, train, seed),
        Model::Pointer(m) => train_pointer(m, adam, split, train, seed),
    }
}

/// Raw predictions for `pairs`, in input order.
pub fn predict_all<M: Rewriter>(
    model: &M,
    pairs: &[RephrasePair],
    split: &DatasetSplit,
    grammar: &Grammar,
) -> Result<Vec<Prediction>, ModelError> {
    pairs
        .par_iter()
        .map(|p| {
            let memory = split.memory(&p.user_id);
            let c = model.propose(&p.first_turn, &memory)?;
            Ok(Prediction::new(p, c, grammar))
        })
        .collect()
}
