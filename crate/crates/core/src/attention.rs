//! Windowed causal attention: position `t` reads positions `[t − w + 1, t]`.
//!
//! The default variant takes queries, keys and values from one shared projection
//! `{prefix}.qkv: [d × 3d]`. The latent variant compresses the key/value side
//! through `{prefix}.z: [d × ℓ]` and lifts it back with `{prefix}.k_up` and
//! `{prefix}.v_up: [ℓ × d]`, with its own query map `{prefix}.q`. Both finish with
//! `{prefix}.out: [d × d]`. Scores are scaled by `1/sqrt(head_dim)`; there is no
//! positional term inside attention.

use alloc::vec::Vec;

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::params::ParameterStore;
use crate::tensor::Tensor;

/// Additive score for keys outside the window. `exp` of it underflows to exactly 0.
const MASKED: f64 = -1e30;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AttentionConfig {
    pub window: usize,
    pub heads: usize,
    pub head_dim: usize,
    pub latent_dim: Option<usize>,
}

impl AttentionConfig {
    pub fn width(&self) -> usize {
        self.heads * self.head_dim
    }

    pub fn validate(&self) -> Result<()> {
        if self.window < 1 {
            return Err(Error::invalid("attention window must be at least 1"));
        }
        if self.heads < 1 || self.head_dim < 1 {
            return Err(Error::invalid("attention needs at least one head of positive width"));
        }
        if self.latent_dim == Some(0) {
            return Err(Error::invalid("latent_dim must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionOutput {
    /// `[T × d]`.
    pub read: Tensor,
    /// `[heads × T × T]` over absolute key positions.
    pub attention_weights: Option<Tensor>,
}

pub(crate) struct AttentionVars {
    pub read: Var,
    pub weights: Vec<Var>,
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Variant {
    Shared,
    Latent(usize),
}

/// Whether a query at absolute position `q` may read a key at position `k`.
pub fn in_window(q: usize, k: usize, window: usize) -> bool {
    k <= q && k + window > q
}

fn window_mask(q_start: usize, nq: usize, k_start: usize, nk: usize, window: usize) -> Tensor {
    let mut data = Vec::with_capacity(nq * nk);
    for i in 0..nq {
        for j in 0..nk {
            data.push(if in_window(q_start + i, k_start + j, window) { 0.0 } else { MASKED });
        }
    }
    Tensor::from_parts(alloc::vec![nq, nk], data)
}

/// Attention for query rows `queries` (absolute positions starting at `q_start`)
/// over key rows `keys` (absolute positions starting at `k_start`). Both are
/// post-norm hidden rows `[n × d]`.
pub(crate) fn attend(
    tape: &mut Tape,
    store: &ParameterStore,
    prefix: &str,
    cfg: &AttentionConfig,
    queries: Var,
    q_start: usize,
    keys: Var,
    k_start: usize,
) -> Result<AttentionVars> {
    cfg.validate()?;
    let variant = match cfg.latent_dim {
        Some(l) => Variant::Latent(l),
        None => Variant::Shared,
    };
    attend_with(tape, store, prefix, cfg, variant, queries, q_start, keys, k_start)
}

#[allow(clippy::too_many_arguments)]
fn attend_with(
    tape: &mut Tape,
    store: &ParameterStore,
    prefix: &str,
    cfg: &AttentionConfig,
    variant: Variant,
    queries: Var,
    q_start: usize,
    keys: Var,
    k_start: usize,
) -> Result<AttentionVars> {
    let d = cfg.width();
    let nq = tape.value(queries).rows();
    let nk = tape.value(keys).rows();
    if tape.value(queries).cols() != d || tape.value(keys).cols() != d {
        return Err(Error::ShapeMismatch {
            op: "attention",
            lhs: tape.shape(queries).to_vec(),
            rhs: alloc::vec![d],
        });
    }

    let (q, k, v) = match variant {
        Variant::Shared => {
            let w = tape.param(store, &alloc::format!("{prefix}.qkv"))?;
            let wq = tape.cols(w, 0, d)?;
            let wk = tape.cols(w, d, 2 * d)?;
            let wv = tape.cols(w, 2 * d, 3 * d)?;
            let q = tape.matmul(queries, wq)?;
            let k = tape.matmul(keys, wk)?;
            let v = tape.matmul(keys, wv)?;
            (q, k, v)
        }
        Variant::Latent(_) => {
            let wq = tape.param(store, &alloc::format!("{prefix}.q"))?;
            let wz = tape.param(store, &alloc::format!("{prefix}.z"))?;
            let wk = tape.param(store, &alloc::format!("{prefix}.k_up"))?;
            let wv = tape.param(store, &alloc::format!("{prefix}.v_up"))?;
            let q = tape.matmul(queries, wq)?;
            let z = tape.matmul(keys, wz)?;
            let k = tape.matmul(z, wk)?;
            let v = tape.matmul(z, wv)?;
            (q, k, v)
        }
    };

    let mask = tape.constant(window_mask(q_start, nq, k_start, nk, cfg.window));
    let inv_scale = 1.0 / crate::math::sqrt(cfg.head_dim as f64);
    let mut heads = Vec::with_capacity(cfg.heads);
    let mut weights = Vec::with_capacity(cfg.heads);
    for h in 0..cfg.heads {
        let (lo, hi) = (h * cfg.head_dim, (h + 1) * cfg.head_dim);
        let qh = tape.cols(q, lo, hi)?;
        let kh = tape.cols(k, lo, hi)?;
        let vh = tape.cols(v, lo, hi)?;
        let kt = tape.transpose(kh)?;
        let scores = tape.matmul(qh, kt)?;
        let scores = tape.scale(scores, inv_scale)?;
        let scores = tape.add(scores, mask)?;
        let p = tape.softmax_last(scores)?;
        heads.push(tape.matmul(p, vh)?);
        weights.push(p);
    }
    let joined = if heads.len() == 1 {
        heads[0]
    } else {
        tape.concat(&heads, 1)?
    };
    let wo = tape.param(store, &alloc::format!("{prefix}.out"))?;
    let read = tape.matmul(joined, wo)?;
    Ok(AttentionVars { read, weights })
}

fn run(
    hidden: &Tensor,
    cfg: &AttentionConfig,
    params: &ParameterStore,
    prefix: &str,
    variant: Variant,
) -> Result<AttentionOutput> {
    cfg.validate()?;
    if hidden.rank() != 2 {
        return Err(Error::invalid("attention expects a [T × d] matrix"));
    }
    let mut tape = Tape::inference();
    let x = tape.constant(hidden.clone());
    let out = attend_with(&mut tape, params, prefix, cfg, variant, x, 0, x, 0)?;
    let parts: Vec<&Tensor> = out.weights.iter().map(|&w| tape.value(w)).collect();
    let t = hidden.rows();
    let stacked = crate::tensor::concat(&parts, 0)?.with_shape(alloc::vec![cfg.heads, t, t])?;
    Ok(AttentionOutput {
        read: tape.value(out.read).clone(),
        attention_weights: Some(stacked),
    })
}

/// Shared-projection windowed attention over a whole `[T × d]` sequence.
pub fn local_attention(
    hidden: &Tensor,
    cfg: &AttentionConfig,
    params: &ParameterStore,
    prefix: &str,
) -> Result<AttentionOutput> {
    run(hidden, cfg, params, prefix, Variant::Shared)
}

/// Latent-bottleneck windowed attention; requires `cfg.latent_dim`.
pub fn latent_attention(
    hidden: &Tensor,
    cfg: &AttentionConfig,
    params: &ParameterStore,
    prefix: &str,
) -> Result<AttentionOutput> {
    let l = cfg
        .latent_dim
        .ok_or_else(|| Error::invalid("latent_attention requires latent_dim"))?;
    run(hidden, cfg, params, prefix, Variant::Latent(l))
}

/// Differentiable windowed self-attention over rows `x: [T × d]` at positions `0..T`.
/// The variant follows `cfg.latent_dim`.
pub fn local_attention_var(
    tape: &mut Tape,
    store: &ParameterStore,
    prefix: &str,
    cfg: &AttentionConfig,
    x: Var,
) -> Result<Var> {
    Ok(attend(tape, store, prefix, cfg, x, 0, x, 0)?.read)
}

/// Register attention parameters for `cfg` under `prefix`.
pub fn init_params<R: rand_core::RngCore + ?Sized>(
    store: &mut ParameterStore,
    prefix: &str,
    cfg: &AttentionConfig,
    rng: &mut R,
) -> Result<()> {
    let d = cfg.width();
    match cfg.latent_dim {
        None => store.insert(&alloc::format!("{prefix}.qkv"), crate::model::glorot(rng, d, 3 * d), true)?,
        Some(l) => {
            store.insert(&alloc::format!("{prefix}.q"), crate::model::glorot(rng, d, d), true)?;
            store.insert(&alloc::format!("{prefix}.z"), crate::model::glorot(rng, d, l), true)?;
            store.insert(&alloc::format!("{prefix}.k_up"), crate::model::glorot(rng, l, d), true)?;
            store.insert(&alloc::format!("{prefix}.v_up"), crate::model::glorot(rng, l, d), true)?;
        }
    }
    store.insert(&alloc::format!("{prefix}.out"), crate::model::glorot(rng, d, d), true)
}
