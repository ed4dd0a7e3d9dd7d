mod common;

use std::collections::BTreeMap;

use common::*;
use memrw_core::corpus::{tokens, MemoryEntry, NBest, RephrasePair, UserMemory, Utterance};
use memrw_core::nn::{AdamState, Attention, AttentionKind, Gradients, Graph, ParamStore};
use memrw_core::pointer::{
    copy_dist, eos, frequency_feature, hierarchical_attend, rewrite_probability, train_pointer,
    Origin, PointerConfig, PointerModel, SourceSet, SourceUtterance,
};
use memrw_core::subword::{learn_bpe, SubwordVocab, BOS, SPECIALS};
use memrw_core::{DatasetSplit, TrainConfig};

fn utt(text: &str) -> Utterance {
    let t = tokens(text);
    let intent = if t.contains(&"off".to_string()) { "TurnOff" } else { "TurnOn" };
    let device = t.last().cloned().unwrap_or_default();
    Utterance {
        tokens: t,
        intent: intent.into(),
        slots: BTreeMap::from([("device".to_string(), device)]),
    }
}

fn nbest(hyps: &[&str]) -> NBest {
    let scores = (0..hyps.len()).map(|i| -(i as f64)).collect();
    NBest::new(hyps.iter().map(|h| tokens(h)).collect(), scores).unwrap()
}

fn memory(entries: &[(&str, u32)]) -> UserMemory {
    UserMemory {
        user_id: "u".into(),
        entries: entries
            .iter()
            .map(|(t, f)| MemoryEntry {
                utterance: utt(t),
                frequency: *f,
            })
            .collect(),
    }
}

fn vocab() -> SubwordVocab {
    learn_bpe(&[tokens("turn on off the fan fun lamp tv uh bedroom bathroom 0")], 12).unwrap()
}

fn small() -> PointerConfig {
    PointerConfig {
        emb_dim: 3,
        hidden_dim: 2,
        decoder_dim: 3,
        attn_dim: 2,
        ..PointerConfig::default()
    }
}

fn scrambled(config: PointerConfig, seed: u64) -> PointerModel {
    let mut m = PointerModel::new(config, vocab(), vec![], seed).unwrap();
    let names: Vec<String> = m.params.iter().map(|(_, n, _)| n.to_string()).collect();
    for (i, name) in names.iter().enumerate() {
        set_param(&mut m.params, name, |k| ((k * 5 + i * 11 + seed as usize) % 19) as f64 / 19.0 - 0.5);
    }
    m
}

fn ids(m: &PointerModel, w: &str) -> Vec<usize> {
    m.embedder().ids(w).unwrap()
}

fn with_eos(words: &[String]) -> Vec<String> {
    let mut w = words.to_vec();
    w.push(eos());
    w
}

#[test]
fn frequency_feature_is_log_one_plus_count() {
    assert!((frequency_feature(1) - std::f64::consts::LN_2).abs() < 1e-15);
    assert_eq!(frequency_feature(0), 0.0);
    assert!((frequency_feature(9) - 10f64.ln()).abs() < 1e-15);
}

#[test]
fn sources_have_one_sequence_per_utterance_and_carry_the_feature() {
    let m = scrambled(small(), 1);
    let s = &m.params;
    let g = &mut Graph::new(s);
    let nb = nbest(&["turn on the fun", "turn on fan"]);
    let mem = memory(&[("turn on fan", 1), ("turn off tv", 4)]);
    let (n, me) = m.encode_sources(g, &nb, Some(&mem)).unwrap();
    assert_eq!(n.utterances.len(), 2);
    assert_eq!(n.utterances[0].words.len(), 5);
    assert_eq!(n.utterances[1].words.len(), 4);
    assert_eq!(n.utterances[0].words.last(), Some(&eos()));
    let me = me.unwrap();
    assert_eq!(me.utterances.len(), 2);

    for (u, e) in me.utterances.iter().zip(&mem.entries) {
        let words = with_eos(&e.utterance.tokens);
        let xs: Vec<Vec<f64>> = words
            .iter()
            .map(|w| {
                let mut x = embed(s, &ids(&m, w));
                x.push(frequency_feature(e.frequency));
                x
            })
            .collect();
        let want = bilstm(s, "mem_enc", &xs);
        for (k, w) in u.keys.raw.iter().zip(&want) {
            assert_close(g.value(*k), w, 1e-14);
        }
    }
    let (_, none) = scrambled(PointerConfig { no_memory: true, ..small() }, 1)
        .encode_sources(&mut Graph::new(s), &nb, Some(&mem))
        .unwrap();
    assert!(none.is_none());
}

/// A source whose keys are given directly, scored by a 1×1 multiplicative
/// attention with weight 1 and query 1, so that weights = softmax(keys).
fn literal_source(store: &mut ParamStore, utts: &[(&[&str], &[f64])]) -> (Attention, Attention, Vec<(Vec<String>, Vec<Vec<f64>>)>) {
    let mut rng = memrw_core::rng::stream(0, memrw_core::rng::Stream::Init);
    let w = Attention::new(store, "w", AttentionKind::Multiplicative, 1, 1, 1, &mut rng).unwrap();
    let u = Attention::new(store, "u", AttentionKind::Multiplicative, 1, 1, 1, &mut rng).unwrap();
    set_param(store, "w.w", |_| 1.0);
    set_param(store, "u.w", |_| 1.0);
    let raw = utts
        .iter()
        .map(|(words, keys)| {
            (
                words.iter().map(|s| s.to_string()).collect(),
                keys.iter().map(|k| vec![*k]).collect(),
            )
        })
        .collect();
    (w, u, raw)
}

fn build(g: &mut Graph, att: &Attention, raw: &[(Vec<String>, Vec<Vec<f64>>)]) -> SourceSet {
    SourceSet {
        origin: Origin::Nbest,
        utterances: raw
            .iter()
            .map(|(words, keys)| {
                let k: Vec<_> = keys.iter().map(|v| g.leaf(v.clone())).collect();
                SourceUtterance {
                    words: words.clone(),
                    keys: att.prepare(g, &k).unwrap(),
                }
            })
            .collect(),
    }
}

#[test]
fn single_token_source_copies_with_certainty() {
    let mut store = ParamStore::new();
    let (w, u, raw) = literal_source(&mut store, &[(&["fan"], &[0.3])]);
    let g = &mut Graph::new(&store);
    let src = build(g, &w, &raw);
    let q = g.leaf(vec![1.0]);
    let a = hierarchical_attend(g, &w, &u, q, &src).unwrap();
    assert_eq!(copy_dist(g, &src, &a), BTreeMap::from([("fan".to_string(), 1.0)]));
    assert_eq!(g.value(a.context), &[0.3]);
}

#[test]
fn repeated_words_accumulate_mass() {
    let mut store = ParamStore::new();
    let keys = [0.3f64.ln(), 0.5f64.ln(), 0.2f64.ln()];
    let (w, u, raw) = literal_source(&mut store, &[(&["on", "fan", "on"], &keys)]);
    let g = &mut Graph::new(&store);
    let src = build(g, &w, &raw);
    let q = g.leaf(vec![1.0]);
    let a = hierarchical_attend(g, &w, &u, q, &src).unwrap();
    let d = copy_dist(g, &src, &a);
    assert!((d["on"] - 0.5).abs() < 1e-15);
    assert!((d["fan"] - 0.5).abs() < 1e-15);
}

#[test]
fn empty_source_is_an_error() {
    let mut store = ParamStore::new();
    let (w, u, _) = literal_source(&mut store, &[]);
    let g = &mut Graph::new(&store);
    let q = g.leaf(vec![1.0]);
    let src = SourceSet {
        origin: Origin::Memory,
        utterances: vec![],
    };
    assert!(hierarchical_attend(g, &w, &u, q, &src).is_err());
}

#[test]
fn two_by_two_hierarchy_matches_scalar_arithmetic() {
    let mut store = ParamStore::new();
    let (w, u, raw) = literal_source(&mut store, &[(&["turn", "fan"], &[0.4, -0.1]), (&["fan", "off"], &[1.2, 0.7])]);
    let g = &mut Graph::new(&store);
    let src = build(g, &w, &raw);
    let q = g.leaf(vec![1.0]);
    let a = hierarchical_attend(g, &w, &u, q, &src).unwrap();

    let e = |x: f64| x.exp();
    let a0 = [e(0.4) / (e(0.4) + e(-0.1)), e(-0.1) / (e(0.4) + e(-0.1))];
    let a1 = [e(1.2) / (e(1.2) + e(0.7)), e(0.7) / (e(1.2) + e(0.7))];
    let c0 = a0[0] * 0.4 + a0[1] * -0.1;
    let c1 = a1[0] * 1.2 + a1[1] * 0.7;
    let b = [e(c0) / (e(c0) + e(c1)), e(c1) / (e(c0) + e(c1))];
    let d = copy_dist(g, &src, &a);
    assert!((d["turn"] - b[0] * a0[0]).abs() < 1e-15);
    assert!((d["fan"] - (b[0] * a0[1] + b[1] * a1[0])).abs() < 1e-15);
    assert!((d["off"] - b[1] * a1[1]).abs() < 1e-15);
    assert!((g.value(a.context)[0] - (b[0] * c0 + b[1] * c1)).abs() < 1e-15);
    let total: f64 = d.values().sum();
    assert!((total - 1.0).abs() < 1e-15);
}

/// Independent recomputation of the first decoder step.
fn reference_step(m: &PointerModel, nb: &NBest, mem: &UserMemory) -> (BTreeMap<String, f64>, f64) {
    let s = &m.params;
    let encode = |prefix: &str, words: &[String], feat: Option<f64>| {
        let xs: Vec<Vec<f64>> = words
            .iter()
            .map(|w| {
                let mut x = embed(s, &ids(m, w));
                x.extend(feat);
                x
            })
            .collect();
        bilstm(s, prefix, &xs)
    };
    let h = lstm(s, "dec", &[embed(s, &[BOS])], false).remove(0);
    let hier = |word: &str, utt: &str, q: &[f64], srcs: &[(Vec<String>, Vec<Vec<f64>>)]| {
        let word_w: Vec<Vec<f64>> = srcs.iter().map(|(_, k)| additive_weights(s, word, q, k)).collect();
        let sums: Vec<Vec<f64>> = srcs.iter().zip(&word_w).map(|((_, k), a)| weighted(a, k)).collect();
        let beta = additive_weights(s, utt, q, &sums);
        let ctx = weighted(&beta, &sums);
        let mut copy: BTreeMap<String, f64> = BTreeMap::new();
        for (u, (words, _)) in srcs.iter().enumerate() {
            for (t, w) in words.iter().enumerate() {
                *copy.entry(w.clone()).or_default() += beta[u] * word_w[u][t];
            }
        }
        (copy, ctx)
    };
    let nb_src: Vec<(Vec<String>, Vec<Vec<f64>>)> = nb
        .hyps
        .iter()
        .map(|hy| {
            let w = with_eos(hy);
            let k = encode("nbest_enc", &w, None);
            (w, k)
        })
        .collect();
    let mem_src: Vec<(Vec<String>, Vec<Vec<f64>>)> = mem
        .entries
        .iter()
        .map(|e| {
            let w = with_eos(&e.utterance.tokens);
            let k = encode("mem_enc", &w, Some(frequency_feature(e.frequency)));
            (w, k)
        })
        .collect();
    let (copy_nb, c_nb) = hier("nb_word", "nb_utt", &h, &nb_src);
    let q2: Vec<f64> = h.iter().chain(&c_nb).copied().collect();
    let (copy_mem, c_mem) = hier("mem_word", "mem_utt", &q2, &mem_src);
    let gate_in: Vec<f64> = h.iter().chain(&c_nb).chain(&c_mem).copied().collect();
    let gates = softmax(&dense(s, "gate", &gate_in));
    let mut dist = BTreeMap::new();
    for (w, p) in copy_nb {
        *dist.entry(w).or_default() += gates[0] * p;
    }
    for (w, p) in copy_mem {
        *dist.entry(w).or_default() += gates[1] * p;
    }
    let rw_in: Vec<f64> = c_nb.iter().chain(&c_mem).chain(&h).copied().collect();
    (dist, sig(dense(s, "rw", &rw_in)[0]))
}

fn first_step(m: &PointerModel, nb: &NBest, mem: Option<&UserMemory>) -> memrw_core::pointer::StepOutput {
    let g = &mut Graph::new(&m.params);
    let (n, me) = m.encode_sources(g, nb, mem).unwrap();
    let step = m.decode_step(g, None, SPECIALS[BOS], &n, me.as_ref()).unwrap();
    m.step_output(g, &step, &n, me.as_ref())
}

#[test]
fn full_step_matches_scalar_arithmetic() {
    let m = scrambled(small(), 3);
    let nb = nbest(&["turn on the fun", "turn on fan"]);
    let mem = memory(&[("turn on fan", 3), ("turn off bedroom", 1)]);
    let o = first_step(&m, &nb, Some(&mem));
    let (dist, rw) = reference_step(&m, &nb, &mem);
    assert_eq!(o.word_dist.keys().collect::<Vec<_>>(), dist.keys().collect::<Vec<_>>());
    for (w, p) in &dist {
        assert!((o.word_dist[w] - p).abs() < 1e-12, "{w}: {} vs {p}", o.word_dist[w]);
    }
    assert!((o.rewritable_prob - rw).abs() < 1e-12);
    let total: f64 = o.word_dist.values().sum();
    assert!((total - 1.0).abs() < 1e-12);
}

#[test]
fn forced_gates_isolate_one_source() {
    let nb = nbest(&["turn on the fun"]);
    let mem = memory(&[("turn off bedroom", 2)]);
    let mut m = scrambled(small(), 4);
    set_param(&mut m.params, "gate.w", |_| 0.0);
    set_param(&mut m.params, "gate.b", |i| [800.0, -800.0][i]);
    let o = first_step(&m, &nb, Some(&mem));
    assert_eq!(o.gates, vec![1.0, 0.0]);
    let nb_only = {
        let mut nm = m.clone();
        nm.config.no_memory = true;
        first_step(&nm, &nb, Some(&mem))
    };
    for (w, p) in &o.word_dist {
        assert_eq!(*p, nb_only.word_dist.get(w).copied().unwrap_or(0.0), "{w}");
    }
    for w in ["bedroom", "off"] {
        assert_eq!(o.word_dist[w], 0.0);
    }

    set_param(&mut m.params, "gate.b", |i| [-800.0, 800.0][i]);
    let o = first_step(&m, &nb, Some(&mem));
    let mem_words: Vec<String> = with_eos(&tokens("turn off bedroom"));
    for (w, p) in &o.word_dist {
        if *p > 0.0 {
            assert!(mem_words.contains(w), "{w} has mass {p}");
        }
    }
}

#[test]
fn memory_only_words_are_bounded_by_the_memory_gate() {
    for seed in 0..10 {
        let m = scrambled(small(), seed);
        let o = first_step(&m, &nbest(&["turn on the fun"]), Some(&memory(&[("turn off bedroom", 2)])));
        assert!(o.word_dist["bedroom"] <= o.gates[1] + 1e-15);
        assert!(o.word_dist["off"] <= o.gates[1] + 1e-15);
    }
}

#[test]
fn no_memory_mode_equals_empty_memory() {
    let mem_mode = scrambled(small(), 6);
    let mut plain = mem_mode.clone();
    plain.config.no_memory = true;
    let nb = nbest(&["turn on the fun", "turn on fan"]);
    let empty = UserMemory::empty("u");
    let full = memory(&[("turn on fan", 2)]);
    let a = mem_mode.greedy_decode(&nb, Some(&empty), 6).unwrap();
    let b = plain.greedy_decode(&nb, Some(&full), 6).unwrap();
    let c = plain.greedy_decode(&nb, None, 6).unwrap();
    assert_eq!(a, b);
    assert_eq!(b, c);
    let pair = RephrasePair {
        user_id: "u".into(),
        first_turn: nb,
        rephrase: utt("turn on fan"),
        rewritable: true,
    };
    let ga = &mut Graph::new(&mem_mode.params);
    let va = mem_mode.pointer_loss(ga, &pair, Some(&empty), 0.3).unwrap();
    let gb = &mut Graph::new(&plain.params);
    let vb = plain.pointer_loss(gb, &pair, Some(&full), 0.3).unwrap();
    assert_eq!(ga.scalar(va).to_bits(), gb.scalar(vb).to_bits());
}

/// No-memory model whose attention is uniform everywhere.
fn uniform_model() -> PointerModel {
    let mut m = scrambled(PointerConfig { no_memory: true, ..small() }, 2);
    for p in ["nb_word.v", "nb_utt.v"] {
        set_param(&mut m.params, p, |_| 0.0);
    }
    m
}

#[test]
fn decoding_stops_immediately_when_eos_is_certain() {
    let m = uniform_model();
    let d = m.greedy_decode(&nbest(&["<eos>"]), None, 20).unwrap();
    assert!(d.words.is_empty());
    assert_eq!(d.word_probs, vec![1.0]);
    assert_eq!(d.rw_probs.len(), 1);
}

#[test]
fn decoding_is_truncated_at_max_len() {
    let m = uniform_model();
    // "0" sorts before "<eos>" and holds 2/3 of the mass at every step.
    let d = m.greedy_decode(&nbest(&["0 0"]), None, 4).unwrap();
    assert_eq!(d.words, vec!["0"; 4]);
    assert_eq!(d.word_probs.len(), 4);
    assert!(d.word_probs.iter().all(|p| (p - 2.0 / 3.0).abs() < 1e-15));
    assert!(m.greedy_decode(&nbest(&["0"]), None, 0).is_err());
}

#[test]
fn greedy_ties_go_to_the_smaller_word() {
    let m = uniform_model();
    // {"0": 1/2, "<eos>": 1/2}: the tie resolves to "0".
    let d = m.greedy_decode(&nbest(&["0"]), None, 1).unwrap();
    assert_eq!(d.words, vec!["0"]);
    // {"fan": 1/2, "<eos>": 1/2}: "<eos>" is smaller and ends the output.
    let d = m.greedy_decode(&nbest(&["fan"]), None, 3).unwrap();
    assert!(d.words.is_empty());
}

#[test]
fn rewrite_probability_examples() {
    assert_eq!(rewrite_probability(&[1.0, 1.0], &[1.0]).unwrap(), 1.0);
    let want = ((0.72f64).sqrt() * 0.95).sqrt();
    let got = rewrite_probability(&[0.9, 0.8], &[0.95]).unwrap();
    assert!((got - want).abs() < 1e-15);
    assert!((got - 0.8978).abs() < 1e-4);
    assert!(rewrite_probability(&[], &[0.5]).is_err());
    assert!(rewrite_probability(&[0.5], &[]).is_err());
    let zero = rewrite_probability(&[0.0, 0.9], &[0.9]).unwrap();
    assert!(zero > 0.0 && zero < 1e-3);
    assert!(zero < rewrite_probability(&[1e-6, 0.9], &[0.9]).unwrap());
}

fn loss(m: &PointerModel, pair: &RephrasePair, mem: Option<&UserMemory>, lambda: f64) -> f64 {
    let g = &mut Graph::new(&m.params);
    let v = m.pointer_loss(g, pair, mem, lambda).unwrap();
    g.scalar(v)
}

#[test]
fn non_rewritable_loss_is_the_rewritable_term_only() {
    let m = scrambled(small(), 8);
    let mem = memory(&[("turn on fan", 2)]);
    let pair = RephrasePair {
        user_id: "u".into(),
        first_turn: nbest(&["turn on the tea"]),
        rephrase: utt("turn on tv"),
        rewritable: false,
    };
    assert_eq!(loss(&m, &pair, Some(&mem), 0.0), 0.0);
    let full = loss(&m, &pair, Some(&mem), 1.0);
    assert!(full > 0.0);
    for lambda in [0.25, 0.5, 0.8] {
        assert!((loss(&m, &pair, Some(&mem), lambda) - lambda * full).abs() < 1e-14);
    }
    // With the label flipped the copy term appears.
    let rw = RephrasePair { rewritable: true, ..pair };
    assert!(loss(&m, &rw, Some(&mem), 0.5) > 0.0);
}

#[test]
fn certain_targets_cost_nothing_without_the_rewritable_term() {
    let m = uniform_model();
    let pair = RephrasePair {
        user_id: "u".into(),
        first_turn: nbest(&["<eos>"]),
        rephrase: Utterance {
            tokens: vec![eos()],
            intent: "TurnOn".into(),
            slots: BTreeMap::new(),
        },
        rewritable: true,
    };
    // Only the upper probability clamp remains: -ln(1 - 1e-12).
    assert!(loss(&m, &pair, None, 0.0) <= 1.0001e-12);
}

#[test]
fn one_step_half_and_half_costs_ln_two() {
    let mut m = uniform_model();
    set_param(&mut m.params, "rw.w", |_| 0.0);
    set_param(&mut m.params, "rw.b", |_| 0.0);
    let pair = RephrasePair {
        user_id: "u".into(),
        first_turn: nbest(&["0"]),
        rephrase: Utterance {
            tokens: vec![],
            intent: "TurnOn".into(),
            slots: BTreeMap::new(),
        },
        rewritable: true,
    };
    let l = loss(&m, &pair, None, 0.5);
    assert!((l - std::f64::consts::LN_2).abs() < 1e-15, "{l}");
}

#[test]
fn pure_rewritable_loss_leaves_word_side_untouched() {
    let cfg = PointerConfig {
        generation_vocab: true,
        ..small()
    };
    let words = vec![eos(), "fan".into(), "turn".into(), "<unk>".into()];
    let m = PointerModel::new(cfg, vocab(), words, 9).unwrap();
    let pair = RephrasePair {
        user_id: "u".into(),
        first_turn: nbest(&["turn on the fun"]),
        rephrase: utt("turn on fan"),
        rewritable: true,
    };
    let mem = memory(&[("turn on fan", 2)]);
    let grads = |lambda: f64| {
        let g = &mut Graph::new(&m.params);
        let l = m.pointer_loss(g, &pair, Some(&mem), lambda).unwrap();
        let mut gr = Gradients::zeros_like(&m.params);
        g.backward(l, &mut gr).unwrap();
        gr
    };
    let word_side = m.word_side_params();
    assert_eq!(word_side.len(), 4);
    let g1 = grads(1.0);
    let g_half = grads(0.5);
    for name in &word_side {
        let id = m.params.id(name).unwrap();
        assert!(g1.get(id).iter().all(|&x| x == 0.0), "{name}");
        assert!(g_half.get(id).iter().any(|&x| x != 0.0), "{name}");
    }
}

#[test]
fn generation_vocab_extends_the_support() {
    let cfg = PointerConfig {
        generation_vocab: true,
        ..small()
    };
    let words = vec![eos(), "lamp".into(), "<unk>".into()];
    let m = PointerModel::new(cfg, vocab(), words, 9).unwrap();
    let o = first_step(&m, &nbest(&["turn on fan"]), Some(&memory(&[("turn off tv", 1)])));
    assert_eq!(o.gates.len(), 3);
    assert!(o.word_dist["lamp"] > 0.0);
    let total: f64 = o.word_dist.values().sum();
    assert!((total - 1.0).abs() < 1e-12);
}

fn rerank_split() -> DatasetSplit {
    let devices = ["fan", "lamp", "tv", "bedroom", "bathroom"];
    let mut train = Vec::new();
    for i in 0..20 {
        let d = devices[i % devices.len()];
        let verb = if i % 2 == 0 { "on" } else { "off" };
        let truth = format!("turn {verb} the {d}");
        let wrong = format!("turn {verb} the {}", if d == "fan" { "fun" } else { "uh" });
        let dropped = format!("turn the {d}");
        let first = nbest(&[&wrong, &truth, &dropped]);
        train.push(RephrasePair {
            user_id: format!("u{i}"),
            first_turn: first,
            rephrase: utt(&truth),
            rewritable: true,
        });
    }
    DatasetSplit {
        train,
        test: vec![],
        memories: BTreeMap::new(),
    }
}

#[test]
fn no_memory_model_learns_to_rerank() {
    let cfg = PointerConfig {
        emb_dim: 12,
        hidden_dim: 12,
        decoder_dim: 12,
        attn_dim: 12,
        no_memory: true,
        ..PointerConfig::default()
    };
    let mut m = PointerModel::new(cfg, vocab(), vec![], 21).unwrap();
    let split = rerank_split();
    let tc = TrainConfig {
        epochs: 150,
        batch_size: 10,
        lr: 1e-2,
    };
    let mut adam = AdamState::with_lr(&m.params, tc.lr);
    train_pointer(&mut m, &mut adam, &split, &tc, 21).unwrap();
    let hits = split
        .train
        .iter()
        .filter(|p| m.greedy_decode(&p.first_turn, None, 10).unwrap().words == p.first_turn.hyps[1])
        .count();
    assert!(hits >= 18, "{hits}/20");
}

#[test]
fn training_is_deterministic() {
    let run = || {
        let mut m = PointerModel::new(small(), vocab(), vec![], 4).unwrap();
        let mut adam = AdamState::new(&m.params);
        let tc = TrainConfig {
            epochs: 2,
            batch_size: 4,
            lr: 1e-2,
        };
        let trace = train_pointer(&mut m, &mut adam, &rerank_split(), &tc, 4).unwrap();
        (trace, m.params)
    };
    let (a, pa) = run();
    let (b, pb) = run();
    assert_eq!(a, b);
    for ((_, _, x), (_, _, y)) in pa.iter().zip(pb.iter()) {
        assert_eq!(x.values(), y.values());
    }
}
