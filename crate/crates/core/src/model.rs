//! Block and stack composition.
//!
//! One block: `n = rmsnorm(h)`; windowed attention `a` over `n`; a per-token
//! memory pass over `n` producing the read `r` (fast update, read, accumulate,
//! slow write at chunk boundaries); the predictive estimate `ĥ` of `n`, gated by
//! the causal event mask; `x = h + [a ‖ r ‖ mask ⊙ ĥ] W_f`; and finally
//! `x + FFN(rmsnorm(x))`, optionally through the stream router.
//!
//! Every forward pass is a *segment*: a run of consecutive tokens starting at
//! some absolute position with per-layer state carried in a [`LayerCache`].
//! Teacher forcing is one segment from a fresh cache; incremental decoding is a
//! sequence of one-token segments. Both go through the same code.

use alloc::collections::VecDeque;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand_core::RngCore;

use crate::attention::{self, AttentionConfig};
use crate::autodiff::{Tape, Var};
use crate::controller::{self, ControllerParams};
use crate::correction;
use crate::error::{Error, Result};
use crate::math::{norm_sq, sqrt};
use crate::memory::{self, ChunkAccumulator, FastState, SlowState};
use crate::mhc;
use crate::norm::rmsnorm_var;
use crate::params::ParameterStore;
use crate::rng::uniform;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct ControllerConfig {
    pub ratio_min: f64,
    pub ratio_max: f64,
    pub ratio_init: f64,
    pub temperature: f64,
    /// When false the ratio parameter is frozen at `ratio_init`.
    pub adaptive: bool,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        ControllerConfig {
            ratio_min: 0.05,
            ratio_max: 0.95,
            ratio_init: 0.25,
            temperature: 1.0,
            adaptive: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct MhcConfig {
    pub streams: usize,
    pub iters: usize,
}

impl Default for MhcConfig {
    fn default() -> Self {
        MhcConfig { streams: 4, iters: 20 }
    }
}

/// Ablation switches. Every combination is valid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct Toggles {
    pub slow_memory: bool,
    pub predictive_coding: bool,
    pub ont: bool,
    pub stop_head: bool,
    pub mhc: bool,
}

impl Default for Toggles {
    fn default() -> Self {
        Toggles::all()
    }
}

impl Toggles {
    pub const NAMES: [&'static str; 5] = ["slow_memory", "predictive_coding", "ont", "stop_head", "mhc"];

    pub fn all() -> Self {
        Toggles {
            slow_memory: true,
            predictive_coding: true,
            ont: true,
            stop_head: true,
            mhc: true,
        }
    }

    /// Toggles from the low five bits of `bits`, in [`Toggles::NAMES`] order.
    pub fn from_bits(bits: u8) -> Self {
        Toggles {
            slow_memory: bits & 1 != 0,
            predictive_coding: bits & 2 != 0,
            ont: bits & 4 != 0,
            stop_head: bits & 8 != 0,
            mhc: bits & 16 != 0,
        }
    }

    pub fn get(&self, name: &str) -> Option<bool> {
        Some(match name {
            "slow_memory" => self.slow_memory,
            "predictive_coding" => self.predictive_coding,
            "ont" => self.ont,
            "stop_head" => self.stop_head,
            "mhc" => self.mhc,
            _ => return None,
        })
    }

    pub fn set(&mut self, name: &str, on: bool) -> Result<()> {
        let slot = match name {
            "slow_memory" => &mut self.slow_memory,
            "predictive_coding" => &mut self.predictive_coding,
            "ont" => &mut self.ont,
            "stop_head" => &mut self.stop_head,
            "mhc" => &mut self.mhc,
            _ => return Err(Error::invalid(format!("unknown toggle `{name}`"))),
        };
        *slot = on;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub width: usize,
    pub layers: usize,
    pub window: usize,
    pub heads: usize,
    #[cfg_attr(feature = "serde", serde(skip_serializing_if = "Option::is_none"))]
    pub latent_dim: Option<usize>,
    pub chunk_size: usize,
    /// Refinement steps of the predictive pathway.
    pub refine_steps: usize,
    /// ONT novelty gain. Must be nonnegative.
    pub alpha_n: f64,
    pub norm_eps: f64,
    pub max_seq_len: usize,
    pub controller: ControllerConfig,
    pub mhc: MhcConfig,
    pub toggles: Toggles,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            vocab_size: 32,
            width: 32,
            layers: 2,
            window: 32,
            heads: 4,
            latent_dim: None,
            chunk_size: 64,
            refine_steps: 2,
            alpha_n: 0.5,
            norm_eps: crate::norm::DEFAULT_EPS,
            max_seq_len: 256,
            controller: ControllerConfig::default(),
            mhc: MhcConfig::default(),
            toggles: Toggles::default(),
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("vocab_size", self.vocab_size),
            ("width", self.width),
            ("window", self.window),
            ("heads", self.heads),
            ("chunk_size", self.chunk_size),
            ("max_seq_len", self.max_seq_len),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::invalid(format!("{name} must be positive")));
            }
        }
        if self.width % self.heads != 0 {
            return Err(Error::invalid("width must be divisible by heads"));
        }
        if !(self.alpha_n >= 0.0 && self.alpha_n.is_finite()) {
            return Err(Error::invalid("alpha_n must be finite and nonnegative"));
        }
        if !(self.norm_eps >= 0.0) {
            return Err(Error::invalid("norm_eps must be nonnegative"));
        }
        if self.mhc.streams < 2 || self.mhc.iters < 1 {
            return Err(Error::invalid("mhc needs at least two streams and one iteration"));
        }
        let c = &self.controller;
        if !(c.ratio_init > c.ratio_min && c.ratio_init < c.ratio_max) {
            return Err(Error::invalid("controller ratio_init must lie strictly inside the bounds"));
        }
        self.controller_params(0.0).validate()?;
        self.attention().validate()
    }

    pub fn attention(&self) -> AttentionConfig {
        AttentionConfig {
            window: self.window,
            heads: self.heads,
            head_dim: self.width / self.heads.max(1),
            latent_dim: self.latent_dim,
        }
    }

    fn controller_params(&self, ratio_raw: f64) -> ControllerParams {
        ControllerParams {
            bias: 0.0,
            scale: 1.0,
            temperature: self.controller.temperature,
            ratio_raw,
            ratio_min: self.controller.ratio_min,
            ratio_max: self.controller.ratio_max,
            adaptive: self.controller.adaptive,
        }
    }
}

/// Glorot-uniform `[fan_in × fan_out]` matrix.
pub fn glorot<R: RngCore + ?Sized>(rng: &mut R, fan_in: usize, fan_out: usize) -> Tensor {
    let limit = sqrt(6.0 / (fan_in + fan_out) as f64);
    let data = (0..fan_in * fan_out).map(|_| uniform(rng, -limit, limit)).collect();
    Tensor::from_parts(vec![fan_in, fan_out], data)
}

pub fn layer_prefix(layer: usize) -> String {
    format!("layers.{layer}")
}

/// Fresh parameters for `cfg`. Parameters of disabled mechanisms are created
/// too, so every ablation variant starts from the same draw for a given seed.
pub fn init_params<R: RngCore + ?Sized>(cfg: &ModelConfig, rng: &mut R) -> Result<ParameterStore> {
    cfg.validate()?;
    let d = cfg.width;
    let v = cfg.vocab_size;
    let mut s = ParameterStore::new();
    let embed = |rng: &mut R, rows: usize| {
        let data = (0..rows * d).map(|_| uniform(rng, -0.1, 0.1)).collect();
        Tensor::from_parts(vec![rows, d], data)
    };
    s.insert("embed.token", embed(rng, v), true)?;
    s.insert("embed.pos", embed(rng, cfg.max_seq_len), true)?;
    for l in 0..cfg.layers {
        let p = layer_prefix(l);
        s.insert(&format!("{p}.norm_in.gain"), Tensor::full(vec![d], 1.0), true)?;
        attention::init_params(&mut s, &format!("{p}.attn"), &cfg.attention(), rng)?;
        memory::init_params(&mut s, &format!("{p}.mem"), d, rng)?;
        correction::init_params(&mut s, &format!("{p}.pred"), 2 * d, d, rng)?;
        correction::init_params(&mut s, &format!("{p}.refine"), 3 * d, d, rng)?;
        let c = &cfg.controller;
        controller::init_params(&mut s, &format!("{p}.ctrl"), c.ratio_init, c.ratio_min, c.ratio_max, c.adaptive)?;
        s.insert(&format!("{p}.fuse.w"), glorot(rng, 3 * d, d), true)?;
        s.insert(&format!("{p}.norm_ffn.gain"), Tensor::full(vec![d], 1.0), true)?;
        s.insert(&format!("{p}.ffn.w1"), glorot(rng, d, 4 * d), true)?;
        s.insert(&format!("{p}.ffn.b1"), Tensor::zeros(vec![4 * d]), true)?;
        s.insert(&format!("{p}.ffn.w2"), glorot(rng, 4 * d, d), true)?;
        s.insert(&format!("{p}.ffn.b2"), Tensor::zeros(vec![d]), true)?;
        mhc::init_params(&mut s, &format!("{p}.mhc"), cfg.mhc.streams, rng)?;
    }
    s.insert("final_norm.gain", Tensor::full(vec![d], 1.0), true)?;
    // small output weights start the model near uniform predictions
    let head = glorot(rng, d, v);
    let k = 1.0 / sqrt(d as f64);
    s.insert("lm_head.w", crate::tensor::map(&head, |x| k * x), true)?;
    s.insert("lm_head.b", Tensor::zeros(vec![v]), true)?;
    s.insert("stop_head.w", glorot(rng, d, 1), true)?;
    s.insert("stop_head.b", Tensor::zeros(vec![1]), true)?;
    Ok(s)
}

/// State one layer carries from one segment to the next.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerCache {
    /// Post-norm rows of the most recent positions, oldest first, at most `window`.
    pub history: VecDeque<Vec<f64>>,
    pub fast: FastState,
    pub slow: SlowState,
    pub chunk: ChunkAccumulator,
    /// Error norms of every position so far; the event controller ranks within them.
    pub errors: Vec<f64>,
}

impl LayerCache {
    pub fn new(cfg: &ModelConfig) -> Result<Self> {
        Ok(LayerCache {
            history: VecDeque::new(),
            fast: FastState::zeros(cfg.width),
            slow: SlowState::zeros(cfg.width),
            chunk: ChunkAccumulator::new(cfg.width, cfg.chunk_size)?,
            errors: Vec::new(),
        })
    }
}

/// Per-layer diagnostics of one forward segment.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockAux {
    pub error_norms: Vec<f64>,
    /// Hard event bits per position.
    pub mask: Vec<f64>,
    pub effective_ratio: f64,
    /// The controller's target ratio.
    pub ratio: f64,
    pub fast_norm: f64,
    pub slow_norm: f64,
    pub writes: usize,
}

/// Differentiable loss ingredients of one layer.
#[derive(Debug, Clone, Copy)]
pub struct BlockTerms {
    /// Mean squared error norm over the segment; `None` with predictive coding off.
    pub pred: Option<Var>,
    /// Mean of the straight-through mask; `None` with predictive coding off.
    pub ratio: Option<Var>,
    /// `(‖m^f‖² + ‖m^s‖²) / d` at the last position.
    pub mem: Var,
}

pub struct BlockVars {
    pub hidden: Var,
    pub aux: BlockAux,
    pub terms: BlockTerms,
}

fn row_const(tape: &mut Tape, v: &Tensor) -> Var {
    tape.constant(Tensor::from_parts(vec![1, v.len()], v.data().to_vec()))
}

fn flat(t: &Tensor) -> Tensor {
    Tensor::from_parts(vec![t.len()], t.data().to_vec())
}

/// Run one block over the rows of `h: [n × d]`, which sit at absolute positions
/// `start..start + n`, advancing `cache`.
pub fn block_segment(
    tape: &mut Tape,
    store: &ParameterStore,
    cfg: &ModelConfig,
    layer: usize,
    h: Var,
    start: usize,
    cache: &mut LayerCache,
) -> Result<BlockVars> {
    block_inner(tape, store, cfg, layer, h, start, cache).map_err(|e| e.in_layer(layer))
}

fn block_inner(
    tape: &mut Tape,
    store: &ParameterStore,
    cfg: &ModelConfig,
    layer: usize,
    h: Var,
    start: usize,
    cache: &mut LayerCache,
) -> Result<BlockVars> {
    let p = layer_prefix(layer);
    let d = cfg.width;
    let n = tape.value(h).rows();
    if n == 0 || tape.value(h).cols() != d {
        return Err(Error::InvalidShape {
            shape: tape.shape(h).to_vec(),
            len: tape.value(h).len(),
        });
    }
    let toggles = cfg.toggles;

    let gain = tape.param(store, &format!("{p}.norm_in.gain"))?;
    let normed = rmsnorm_var(tape, h, gain, cfg.norm_eps)?;

    // attention over cached rows followed by this segment
    let (keys, k_start) = if cache.history.is_empty() {
        (normed, start)
    } else {
        let rows = cache.history.len();
        let data: Vec<f64> = cache.history.iter().flatten().copied().collect();
        let past = tape.constant(Tensor::from_parts(vec![rows, d], data));
        (tape.concat(&[past, normed], 0)?, start - rows)
    };
    let a = attention::attend(tape, store, &format!("{p}.attn"), &cfg.attention(), normed, start, keys, k_start)?.read;

    // memory pass
    let mem = format!("{p}.mem");
    let mut fast = row_const(tape, &cache.fast.value);
    let mut slow = row_const(tape, &cache.slow.value);
    let mut acc = row_const(tape, cache.chunk.running_sum());
    let mut count = cache.chunk.count();
    let mut chunk_index = cache.slow.chunk_index;
    let mut writes = 0;
    let mut reads = Vec::with_capacity(n);
    for i in 0..n {
        let pos = start + i;
        let ni = tape.row(normed, i)?;
        fast = memory::fast_update_var(tape, store, &mem, ni, fast)?;
        reads.push(memory::memory_read_var(tape, store, &mem, ni, fast, slow)?);
        acc = tape.add(acc, fast)?;
        count += 1;
        if (pos + 1) % cfg.chunk_size == 0 {
            if toggles.slow_memory {
                let summary = tape.scale(acc, 1.0 / count as f64)?;
                slow = memory::slow_write_var(tape, store, &mem, ni, summary, slow, cfg.alpha_n, toggles.ont)?;
                chunk_index += 1;
                writes += 1;
            }
            acc = tape.constant(Tensor::zeros(vec![1, d]));
            count = 0;
        }
    }
    let r = tape.concat(&reads, 0)?;

    // predictive correction gated by the event controller
    let ctrl_prefix = format!("{p}.ctrl");
    let c = &cfg.controller;
    let (corrected, error_norms, mask, pred_term, ratio_term) = if toggles.predictive_coding {
        let est = correction::predict_and_refine_var(
            tape,
            store,
            &format!("{p}.pred"),
            &format!("{p}.refine"),
            a,
            r,
            normed,
            cfg.refine_steps,
        )?;
        let err = tape.sub(normed, est)?;
        let norms = correction::row_norms(tape.value(err));
        let vars = controller::controller_vars(tape, store, &ctrl_prefix, c.temperature, c.ratio_min, c.ratio_max)?;
        let mut bits = Vec::with_capacity(n);
        let mut gates = Vec::with_capacity(n);
        for &e in &norms {
            cache.errors.push(e);
            let (gate, bit) = controller::causal_event(tape, &vars, &cache.errors)?;
            gates.push(gate);
            bits.push(bit);
        }
        let gate = tape.concat(&gates, 0)?;
        let corrected = tape.mul(gate, est)?;
        let sq = tape.mul(err, err)?;
        let total = tape.sum(sq)?;
        let pred = tape.scale(total, 1.0 / n as f64)?;
        let ratio = tape.mean(gate)?;
        (corrected, norms, bits, Some(pred), Some(ratio))
    } else {
        let zeros = vec![0.0; n];
        cache.errors.extend_from_slice(&zeros);
        let params = ControllerParams::from_store(store, &ctrl_prefix, c.temperature, c.ratio_min, c.ratio_max)?;
        let all = controller::causal_mask(&cache.errors, &params)?;
        let bits = all[all.len() - n..].to_vec();
        (tape.constant(Tensor::zeros(vec![n, d])), zeros, bits, None, None)
    };

    let joined = tape.concat(&[a, r, corrected], 1)?;
    let wf = tape.param(store, &format!("{p}.fuse.w"))?;
    let fused = tape.matmul(joined, wf)?;
    let x = tape.add(h, fused)?;

    let gain = tape.param(store, &format!("{p}.norm_ffn.gain"))?;
    let xn = rmsnorm_var(tape, x, gain, cfg.norm_eps)?;
    let w1 = tape.param(store, &format!("{p}.ffn.w1"))?;
    let b1 = tape.param(store, &format!("{p}.ffn.b1"))?;
    let w2 = tape.param(store, &format!("{p}.ffn.w2"))?;
    let b2 = tape.param(store, &format!("{p}.ffn.b2"))?;
    let hidden = tape.linear(xn, w1, Some(b1))?;
    let hidden = tape.tanh(hidden)?;
    let update = tape.linear(hidden, w2, Some(b2))?;
    let out = if toggles.mhc {
        mhc::route_var(tape, store, &format!("{p}.mhc"), cfg.mhc.iters, x, update)?
    } else {
        tape.add(x, update)?
    };

    let ff = tape.mul(fast, fast)?;
    let ss = tape.mul(slow, slow)?;
    let both = tape.add(ff, ss)?;
    let both = tape.sum(both)?;
    let mem_term = tape.scale(both, 1.0 / d as f64)?;

    // advance the cache
    for i in 0..n {
        cache.history.push_back(tape.value(normed).row(i).to_vec());
        if cache.history.len() > cfg.window {
            cache.history.pop_front();
        }
    }
    cache.fast = FastState {
        value: flat(tape.value(fast)),
    };
    cache.slow = SlowState {
        value: flat(tape.value(slow)),
        chunk_index,
    };
    cache.chunk = ChunkAccumulator::from_parts(flat(tape.value(acc)), count, cfg.chunk_size);

    let ratio = controller::clamp_ratio(&ControllerParams::from_store(
        store,
        &ctrl_prefix,
        c.temperature,
        c.ratio_min,
        c.ratio_max,
    )?);
    let aux = BlockAux {
        effective_ratio: mask.iter().sum::<f64>() / n as f64,
        error_norms,
        mask,
        ratio,
        fast_norm: sqrt(norm_sq(cache.fast.value.data())),
        slow_norm: sqrt(norm_sq(cache.slow.value.data())),
        writes,
    };
    Ok(BlockVars {
        hidden: out,
        aux,
        terms: BlockTerms {
            pred: pred_term,
            ratio: ratio_term,
            mem: mem_term,
        },
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockOutput {
    pub hidden: Tensor,
    pub aux: BlockAux,
}

/// One block over `h: [T × d]` from a fresh state.
pub fn block_forward(h: &Tensor, layer: usize, store: &ParameterStore, cfg: &ModelConfig) -> Result<BlockOutput> {
    if layer >= cfg.layers {
        return Err(Error::invalid(format!("layer {layer} out of range")));
    }
    let mut tape = Tape::inference();
    let hv = tape.constant(h.clone());
    let mut cache = LayerCache::new(cfg)?;
    let out = block_segment(&mut tape, store, cfg, layer, hv, 0, &mut cache)?;
    Ok(BlockOutput {
        hidden: tape.value(out.hidden).clone(),
        aux: out.aux,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Logits {
    /// `[T × V]`.
    pub lm: Tensor,
    /// `[T]`; absent when the stop head is off.
    pub stop: Option<Tensor>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelOutput {
    pub logits: Logits,
    pub aux: Vec<BlockAux>,
}

/// Tape handles of a forward segment through the whole stack.
pub struct ForwardVars {
    /// `[n × V]`.
    pub lm: Var,
    /// `[n × 1]`.
    pub stop: Option<Var>,
    pub aux: Vec<BlockAux>,
    pub terms: Vec<BlockTerms>,
}

fn check_tokens(tokens: &[usize], start: usize, cfg: &ModelConfig) -> Result<()> {
    if tokens.is_empty() {
        return Err(Error::invalid("empty token sequence"));
    }
    if start + tokens.len() > cfg.max_seq_len {
        return Err(Error::SequenceTooLong {
            len: start + tokens.len(),
            max: cfg.max_seq_len,
        });
    }
    if let Some(&token) = tokens.iter().find(|&&t| t >= cfg.vocab_size) {
        return Err(Error::TokenOutOfRange {
            token,
            vocab: cfg.vocab_size,
        });
    }
    Ok(())
}

/// Run `tokens` (absolute positions `start..`) through embedding, every block
/// and both heads, advancing one cache per layer.
pub fn forward_segment(
    tape: &mut Tape,
    store: &ParameterStore,
    cfg: &ModelConfig,
    tokens: &[usize],
    start: usize,
    caches: &mut [LayerCache],
) -> Result<ForwardVars> {
    check_tokens(tokens, start, cfg)?;
    if caches.len() != cfg.layers {
        return Err(Error::invalid("one cache per layer required"));
    }
    let table = tape.param(store, "embed.token")?;
    let tok = tape.gather_rows(table, tokens)?;
    let positions: Vec<usize> = (start..start + tokens.len()).collect();
    let table = tape.param(store, "embed.pos")?;
    let pos = tape.gather_rows(table, &positions)?;
    let mut h = tape.add(tok, pos)?;
    let mut aux = Vec::with_capacity(cfg.layers);
    let mut terms = Vec::with_capacity(cfg.layers);
    for (l, cache) in caches.iter_mut().enumerate() {
        let out = block_segment(tape, store, cfg, l, h, start, cache)?;
        h = out.hidden;
        aux.push(out.aux);
        terms.push(out.terms);
    }
    let gain = tape.param(store, "final_norm.gain")?;
    let hf = rmsnorm_var(tape, h, gain, cfg.norm_eps)?;
    let w = tape.param(store, "lm_head.w")?;
    let b = tape.param(store, "lm_head.b")?;
    let lm = tape.linear(hf, w, Some(b))?;
    let stop = if cfg.toggles.stop_head {
        let w = tape.param(store, "stop_head.w")?;
        let b = tape.param(store, "stop_head.b")?;
        Some(tape.linear(hf, w, Some(b))?)
    } else {
        None
    };
    Ok(ForwardVars { lm, stop, aux, terms })
}

pub fn fresh_caches(cfg: &ModelConfig) -> Result<Vec<LayerCache>> {
    (0..cfg.layers).map(|_| LayerCache::new(cfg)).collect()
}

/// Teacher-forced forward pass on a tape from position 0.
pub fn forward_tape(tape: &mut Tape, store: &ParameterStore, cfg: &ModelConfig, tokens: &[usize]) -> Result<ForwardVars> {
    let mut caches = fresh_caches(cfg)?;
    forward_segment(tape, store, cfg, tokens, 0, &mut caches)
}

pub(crate) fn logits_of(tape: &Tape, vars: &ForwardVars) -> Logits {
    Logits {
        lm: tape.value(vars.lm).clone(),
        stop: vars.stop.map(|s| flat(tape.value(s))),
    }
}

pub fn model_forward(tokens: &[usize], store: &ParameterStore, cfg: &ModelConfig) -> Result<ModelOutput> {
    let mut tape = Tape::inference();
    let vars = forward_tape(&mut tape, store, cfg, tokens)?;
    Ok(ModelOutput {
        logits: logits_of(&tape, &vars),
        aux: vars.aux,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny() -> ModelConfig {
        ModelConfig {
            vocab_size: 11,
            width: 8,
            layers: 2,
            window: 3,
            heads: 2,
            chunk_size: 4,
            max_seq_len: 32,
            ..ModelConfig::default()
        }
    }

    #[test]
    fn shapes_and_writes() {
        let cfg = tiny();
        let store = init_params(&cfg, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let out = model_forward(&[1, 2, 3, 4, 5, 6, 7, 8, 9], &store, &cfg).unwrap();
        assert_eq!(out.logits.lm.shape(), &[9, 11]);
        assert_eq!(out.logits.stop.as_ref().unwrap().shape(), &[9]);
        assert_eq!(out.aux.len(), 2);
        assert_eq!(out.aux[0].writes, 2);
    }

    #[test]
    fn input_errors() {
        let cfg = tiny();
        let store = init_params(&cfg, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert!(matches!(
            model_forward(&[11], &store, &cfg),
            Err(Error::TokenOutOfRange { token: 11, vocab: 11 })
        ));
        assert!(matches!(
            model_forward(&[0; 33], &store, &cfg),
            Err(Error::SequenceTooLong { len: 33, max: 32 })
        ));
    }

    #[test]
    fn config_validation() {
        assert!(tiny().validate().is_ok());
        assert!(ModelConfig { alpha_n: -0.1, ..tiny() }.validate().is_err());
        assert!(ModelConfig { heads: 3, ..tiny() }.validate().is_err());
        assert!(ModelConfig { chunk_size: 0, ..tiny() }.validate().is_err());
    }

    #[test]
    fn toggle_bits_cover_all_combinations() {
        let mut seen = alloc::collections::BTreeSet::new();
        for b in 0..32u8 {
            let t = Toggles::from_bits(b);
            seen.insert(Toggles::NAMES.map(|n| t.get(n).unwrap()));
        }
        assert_eq!(seen.len(), 32);
        assert_eq!(Toggles::from_bits(31), Toggles::all());
    }
}
