use memrw_core::corpus::tokens;
use memrw_core::nn::AdamState;
use memrw_core::subword::learn_bpe;
use memrw_core::{
    Checkpoint, CheckpointError, LossTrace, Model, ModelKind, PointerConfig, PointerModel, RetrievalConfig,
    RetrievalModel, SubwordVocab, TrainConfig,
};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn vocab() -> SubwordVocab {
    learn_bpe(&[tokens("turn on the laundry room light no off")], 10).unwrap()
}

fn models() -> Vec<Model> {
    let r = RetrievalConfig {
        emb_dim: 4,
        hidden_dim: 3,
        attn_dim: 3,
        dense_dim: 5,
        ..RetrievalConfig::default()
    };
    let p = PointerConfig {
        emb_dim: 4,
        hidden_dim: 3,
        decoder_dim: 3,
        attn_dim: 3,
        generation_vocab: true,
        ..PointerConfig::default()
    };
    let words = vec!["<eos>".into(), "<unk>".into(), "on".into()];
    vec![
        Model::Retrieval(RetrievalModel::new(r, vocab(), 3).unwrap()),
        Model::Pointer(PointerModel::new(p.clone(), vocab(), words, 4).unwrap()),
        Model::Pointer(PointerModel::new(PointerConfig { no_memory: true, generation_vocab: false, ..p }, vocab(), Vec::new(), 5).unwrap()),
    ]
}

/// Optimiser state and trace full of values with long decimal expansions.
fn awkward_state(model: &Model, rng: &mut ChaCha8Rng) -> (AdamState, LossTrace, TrainConfig) {
    let mut adam = AdamState::with_lr(model.params(), 0.1 + 0.2);
    adam.step = 17;
    for row in adam.m.iter_mut().chain(adam.v.iter_mut()) {
        for x in row.iter_mut() {
            *x = rng.gen::<f64>() / 3.0;
        }
    }
    let trace = LossTrace {
        steps: (0..50).map(|_| rng.gen::<f64>() * 7.0).collect(),
        epochs: (0..5).map(|_| (rng.gen::<f64>() + 1e-3).ln()).collect(),
    };
    let train = TrainConfig {
        epochs: 3,
        batch_size: 7,
        lr: 1.0 / 3.0,
    };
    (adam, trace, train)
}

fn bytes(c: &Checkpoint) -> Vec<u8> {
    let mut out = Vec::new();
    c.write(&mut out).unwrap();
    out
}

#[test]
fn write_read_write_is_byte_identical() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for model in models() {
        let (adam, trace, train) = awkward_state(&model, &mut rng);
        let first = bytes(&model.to_checkpoint(u64::MAX - 1, &train, Some(&adam), &trace));
        let ckpt = Checkpoint::read(first.as_slice()).unwrap();
        assert_eq!(ckpt.header.trace, trace);
        assert_eq!(ckpt.header.train, train);
        let (back, back_adam) = Model::from_checkpoint(&ckpt).unwrap();
        let back_adam = back_adam.expect("optimiser state stored");
        assert_eq!(back_adam.step, adam.step);
        assert_eq!(back_adam.lr.to_bits(), adam.lr.to_bits());
        assert_eq!(back_adam.m, adam.m);
        assert_eq!(back_adam.v, adam.v);
        for ((_, n1, t1), (_, n2, t2)) in model.params().iter().zip(back.params().iter()) {
            assert_eq!(n1, n2);
            let a: Vec<u64> = t1.values().iter().map(|x| x.to_bits()).collect();
            let b: Vec<u64> = t2.values().iter().map(|x| x.to_bits()).collect();
            assert_eq!(a, b, "{n1}");
        }
        let second = bytes(&back.to_checkpoint(ckpt.header.seed, &ckpt.header.train, Some(&back_adam), &ckpt.header.trace));
        assert_eq!(first, second, "{:?}", model.kind());
    }
}

#[test]
fn model_kind_survives_the_round_trip() {
    let kinds: Vec<ModelKind> = models()
        .iter()
        .map(|m| {
            let c = m.to_checkpoint(1, &TrainConfig::default(), None, &LossTrace::default());
            Model::from_checkpoint(&Checkpoint::read(bytes(&c).as_slice()).unwrap()).unwrap().0.kind()
        })
        .collect();
    assert_eq!(kinds, vec![ModelKind::Retrieval, ModelKind::Pointer, ModelKind::PointerNoMemory]);
}

#[test]
fn corrupt_input_is_rejected() {
    let model = &models()[0];
    let good = bytes(&model.to_checkpoint(1, &TrainConfig::default(), None, &LossTrace::default()));

    let mut bad_magic = good.clone();
    bad_magic[0] ^= 0xff;
    assert!(matches!(Checkpoint::read(bad_magic.as_slice()), Err(CheckpointError::BadMagic)));

    let mut bad_version = good.clone();
    bad_version[5] = bad_version[5].wrapping_add(1);
    assert!(matches!(Checkpoint::read(bad_version.as_slice()), Err(CheckpointError::Version(_))));

    for cut in [3, 12, good.len() / 2, good.len() - 1] {
        assert!(Checkpoint::read(&good[..cut]).is_err(), "truncated at {cut}");
    }

    // A parameter with the wrong shape must not load silently.
    let mut ckpt = Checkpoint::read(good.as_slice()).unwrap();
    let a = &mut ckpt.arrays[0];
    a.values.pop();
    a.shape = vec![a.values.len()];
    assert!(Model::from_checkpoint(&ckpt).is_err());
}
