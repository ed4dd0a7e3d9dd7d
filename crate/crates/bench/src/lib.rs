//! Shared fixtures for the benchmarks: a small synthetic corpus and freshly
//! initialised models at the default widths.

use memrw_core::corpus::{generate_synthetic, DatasetSplit, GenConfig};
use memrw_core::pipeline::learn_vocab;
use memrw_core::{PointerConfig, PointerModel, RetrievalConfig, RetrievalModel, RunConfig};

pub struct Fixture {
    pub split: DatasetSplit,
    pub retrieval: RetrievalModel,
    pub pointer: PointerModel,
}

pub fn fixture() -> Fixture {
    let cfg = RunConfig {
        data: GenConfig {
            n_users: 40,
            n_pairs: 400,
            ..GenConfig::default()
        },
        ..RunConfig::default()
    };
    let split = generate_synthetic(&cfg.data, cfg.seed).expect("valid config");
    let vocab = learn_vocab(&split, cfg.subword.num_merges).expect("vocab");
    let retrieval = RetrievalModel::new(RetrievalConfig::default(), vocab.clone(), cfg.seed).expect("model");
    let pointer = PointerModel::new(PointerConfig::default(), vocab, Vec::new(), cfg.seed).expect("model");
    Fixture {
        split,
        retrieval,
        pointer,
    }
}
