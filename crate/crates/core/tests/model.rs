//! Model-level contracts: causality, determinism, toggles and degenerate settings.

mod common;

use common::*;
use lpcsm_core::model::{block_forward, init_params, model_forward, ModelConfig, Toggles};
use lpcsm_core::objective::{loss_and_grads, LossWeights, Sequence};
use lpcsm_core::optim::{Sgd, SgdConfig};
use lpcsm_core::{ParameterStore, Tensor};

fn cfg16(toggles: Toggles) -> ModelConfig {
    ModelConfig {
        vocab_size: 13,
        width: 12,
        layers: 2,
        window: 5,
        heads: 3,
        chunk_size: 4,
        max_seq_len: 32,
        toggles,
        ..ModelConfig::default()
    }
}

fn set(store: &mut ParameterStore, name: &str, f: impl Fn(usize) -> f64) {
    let t = store.get(name).unwrap();
    let data = (0..t.len()).map(f).collect();
    let t = Tensor::new(t.shape().to_vec(), data).unwrap();
    store.set(name, t).unwrap();
}

#[test]
fn causality() {
    for bits in [0u8, 31, 7, 21] {
        let cfg = cfg16(Toggles::from_bits(bits));
        let store = store_for(&cfg, 3);
        let mut r = rng(4);
        let tokens = random_tokens(&mut r, cfg.vocab_size, 20);
        let base = model_forward(&tokens, &store, &cfg).unwrap();
        for t in 0..19 {
            let mut changed = tokens.clone();
            changed[t + 1] = (changed[t + 1] + 1) % cfg.vocab_size;
            let out = model_forward(&changed, &store, &cfg).unwrap();
            for i in 0..=t {
                assert_eq!(out.logits.lm.row(i), base.logits.lm.row(i), "toggles {bits}, pos {i}");
            }
            assert_ne!(out.logits.lm.row(t + 1), base.logits.lm.row(t + 1));
        }
    }
}

#[test]
fn determinism() {
    let cfg = cfg16(Toggles::all());
    let tokens = random_tokens(&mut rng(1), cfg.vocab_size, 17);
    let a = model_forward(&tokens, &store_for(&cfg, 9), &cfg).unwrap();
    let b = model_forward(&tokens, &store_for(&cfg, 9), &cfg).unwrap();
    let bits = |t: &Tensor| t.data().iter().map(|x| x.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&a.logits.lm), bits(&b.logits.lm));
    assert_eq!(a.aux, b.aux);
}

#[test]
fn every_toggle_is_live() {
    let full = cfg16(Toggles::all());
    let store = store_for(&full, 5);
    let tokens = random_tokens(&mut rng(6), full.vocab_size, 16);
    let base = model_forward(&tokens, &store, &full).unwrap();
    for name in Toggles::NAMES {
        let mut cfg = full.clone();
        cfg.toggles.set(name, false).unwrap();
        let out = model_forward(&tokens, &store, &cfg).unwrap();
        assert_ne!(out.logits, base.logits, "toggle {name} had no effect");
    }
}

#[test]
fn zero_novelty_gain_equals_transport_off() {
    let on = ModelConfig { alpha_n: 0.0, ..cfg16(Toggles::all()) };
    let mut off = on.clone();
    off.toggles.ont = false;
    let tokens = random_tokens(&mut rng(8), on.vocab_size, 24);
    let mut store_on = store_for(&on, 8);
    let mut store_off = store_on.clone();
    let eos = on.vocab_size - 1;
    let mut targets = tokens[1..].to_vec();
    targets.push(eos);
    let seq = Sequence { inputs: tokens, targets };
    let mut opt_on = Sgd::new(SgdConfig { lr: 0.05, ..Default::default() }).unwrap();
    let mut opt_off = opt_on.clone();
    for _ in 0..100 {
        let (l1, g1, _) = loss_and_grads(&store_on, &on, &LossWeights::default(), &seq, eos).unwrap();
        let (l2, g2, _) = loss_and_grads(&store_off, &off, &LossWeights::default(), &seq, eos).unwrap();
        assert_eq!(l1.total.to_bits(), l2.total.to_bits());
        opt_on.step(&mut store_on, &g1).unwrap();
        opt_off.step(&mut store_off, &g2).unwrap();
    }
    for (a, b) in store_on.iter().zip(store_off.iter()) {
        assert_eq!(a.tensor, b.tensor, "{}", a.name);
    }
}

#[test]
fn degenerate_routing_equals_plain_residual() {
    let on = cfg16(Toggles::all());
    let mut off = on.clone();
    off.toggles.mhc = false;
    let tokens = random_tokens(&mut rng(10), on.vocab_size, 20);
    let s = on.mhc.streams;

    // one live stream and a near-identity transport
    let mut store = store_for(&on, 10);
    for l in 0..on.layers {
        set(&mut store, &format!("layers.{l}.mhc.pre"), |i| if i == 0 { 1.0 } else { 0.0 });
        set(&mut store, &format!("layers.{l}.mhc.post"), |i| if i == 0 { 1.0 } else { 0.0 });
        set(&mut store, &format!("layers.{l}.mhc.logits"), |i| if i % (s + 1) == 0 { 40.0 } else { 0.0 });
    }
    let a = model_forward(&tokens, &store, &on).unwrap();
    let b = model_forward(&tokens, &store, &off).unwrap();
    assert!(a.logits.lm.max_abs_diff(&b.logits.lm) <= 1e-12);

    // identical streams under a uniform transport
    for l in 0..on.layers {
        set(&mut store, &format!("layers.{l}.mhc.pre"), |_| 1.0);
        set(&mut store, &format!("layers.{l}.mhc.post"), |_| 1.0 / s as f64);
        set(&mut store, &format!("layers.{l}.mhc.logits"), |_| 0.0);
    }
    let a = model_forward(&tokens, &store, &on).unwrap();
    assert!(a.logits.lm.max_abs_diff(&b.logits.lm) <= 1e-12);
}

#[test]
fn disabled_mechanisms_contribute_nothing() {
    let cfg = cfg16(Toggles { slow_memory: false, predictive_coding: false, mhc: false, ..Toggles::all() });
    let tokens = random_tokens(&mut rng(12), cfg.vocab_size, 20);
    let store = store_for(&cfg, 12);
    let base = model_forward(&tokens, &store, &cfg).unwrap();
    // scramble every parameter only a disabled mechanism reads
    let mut other = store.clone();
    let names: Vec<String> = store.names().map(str::to_string).collect();
    for n in names.iter().filter(|n| {
        [".pred.", ".refine.", ".ctrl.", ".mhc.", ".mem.w_g", ".mem.w_c"].iter().any(|k| n.contains(k))
    }) {
        set(&mut other, n, |i| 0.37 * (i as f64 + 1.0).sin());
    }
    let out = model_forward(&tokens, &other, &cfg).unwrap();
    assert_eq!(out.logits.lm, base.logits.lm);
    for aux in &out.aux {
        assert_eq!(aux.writes, 0);
        assert_eq!(aux.slow_norm, 0.0);
    }
}

fn embedding_pathway(tokens: &[usize], store: &ParameterStore, cfg: &ModelConfig) -> Tensor {
    let tok = store.get("embed.token").unwrap();
    let pos = store.get("embed.pos").unwrap();
    let d = cfg.width;
    let rows: Vec<f64> = tokens
        .iter()
        .enumerate()
        .flat_map(|(i, &t)| (0..d).map(move |j| tok.row(t)[j] + pos.row(i)[j]))
        .collect();
    let h = Tensor::new(vec![tokens.len(), d], rows).unwrap();
    let hn = lpcsm_core::norm::rmsnorm(&h, store.get("final_norm.gain").unwrap(), cfg.norm_eps).unwrap();
    let w = store.get("lm_head.w").unwrap();
    let b = store.get("lm_head.b").unwrap();
    let lm = lpcsm_core::tensor::matmul(&hn, w).unwrap();
    let v = cfg.vocab_size;
    Tensor::new(lm.shape().to_vec(), lm.data().iter().enumerate().map(|(i, x)| x + b.data()[i % v]).collect()).unwrap()
}

#[test]
fn zero_fuse_and_ffn_reduce_to_embeddings() {
    let cfg = cfg16(Toggles { mhc: false, ..Toggles::all() });
    let mut store = store_for(&cfg, 14);
    for l in 0..cfg.layers {
        for leaf in ["fuse.w", "ffn.w2", "ffn.b2"] {
            set(&mut store, &format!("layers.{l}.{leaf}"), |_| 0.0);
        }
    }
    let tokens = random_tokens(&mut rng(14), cfg.vocab_size, 12);
    let out = model_forward(&tokens, &store, &cfg).unwrap();
    assert!(out.logits.lm.max_abs_diff(&embedding_pathway(&tokens, &store, &cfg)) < 1e-12);

    let empty = ModelConfig { layers: 0, ..cfg.clone() };
    let store = init_params(&empty, &mut rng(15)).unwrap();
    let out = model_forward(&tokens, &store, &empty).unwrap();
    assert!(out.logits.lm.max_abs_diff(&embedding_pathway(&tokens, &store, &empty)) < 1e-12);
}

#[test]
fn one_chunk_one_write() {
    let cfg = cfg16(Toggles::all());
    let store = store_for(&cfg, 16);
    let h = Tensor::new(vec![4, 12], (0..48).map(|i| (i as f64 * 0.3).cos()).collect()).unwrap();
    let out = block_forward(&h, 1, &store, &cfg).unwrap();
    assert_eq!(out.aux.writes, 1);
    let h3 = Tensor::new(vec![3, 12], h.data()[..36].to_vec()).unwrap();
    assert_eq!(block_forward(&h3, 1, &store, &cfg).unwrap().aux.writes, 0);
    assert!(block_forward(&h, 2, &store, &cfg).is_err());
}

#[test]
fn frozen_ratio_never_moves() {
    let mut cfg = cfg16(Toggles::all());
    cfg.controller.adaptive = false;
    let mut store = store_for(&cfg, 17);
    let before: Vec<u64> = (0..cfg.layers)
        .map(|l| store.get(&format!("layers.{l}.ctrl.ratio_raw")).unwrap().data()[0].to_bits())
        .collect();
    let mut opt = Sgd::new(SgdConfig { lr: 0.05, ..Default::default() }).unwrap();
    let mut r = rng(18);
    let eos = cfg.vocab_size - 1;
    for _ in 0..100 {
        let inputs = random_tokens(&mut r, eos, 12);
        let mut targets = inputs[1..].to_vec();
        targets.push(eos);
        let (_, g, _) = loss_and_grads(&store, &cfg, &LossWeights::default(), &Sequence { inputs, targets }, eos).unwrap();
        opt.step(&mut store, &g).unwrap();
    }
    let after: Vec<u64> = (0..cfg.layers)
        .map(|l| store.get(&format!("layers.{l}.ctrl.ratio_raw")).unwrap().data()[0].to_bits())
        .collect();
    assert_eq!(before, after);
}
