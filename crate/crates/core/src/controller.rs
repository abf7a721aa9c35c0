//! Sparse event controller.
//!
//! Per-token error norms are z-normalized, passed through a learned
//! scale/bias and a temperature, and thresholded at the `(1 − ratio)` quantile so
//! that exactly `ceil(ratio · T)` tokens fire. The forward value is the hard
//! mask; gradients take the soft path `σ(score − θ)` (straight-through). The
//! ratio is `ratio_min + (ratio_max − ratio_min)·σ(ratio_raw)`.
//!
//! Inside the model the controller runs causally: token `t` is scored and
//! thresholded against the error norms of tokens `0..=t` only, so cached decoding
//! sees exactly what teacher forcing sees.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::math::{ceil, ln, sigmoid, sqrt};
use crate::params::ParameterStore;
use crate::tensor::Tensor;

/// Added to the standard deviation before dividing.
pub const STD_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControllerParams {
    pub bias: f64,
    pub scale: f64,
    pub temperature: f64,
    pub ratio_raw: f64,
    pub ratio_min: f64,
    pub ratio_max: f64,
    pub adaptive: bool,
}

impl ControllerParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.ratio_min > 0.0 && self.ratio_min < self.ratio_max && self.ratio_max <= 1.0) {
            return Err(Error::invalid("controller bounds must satisfy 0 < ratio_min < ratio_max <= 1"));
        }
        if !(self.temperature > 0.0) {
            return Err(Error::invalid("controller temperature must be positive"));
        }
        Ok(())
    }

    /// Read the learned scalars `{prefix}.bias`, `.scale`, `.ratio_raw` from a store.
    pub fn from_store(
        store: &ParameterStore,
        prefix: &str,
        temperature: f64,
        ratio_min: f64,
        ratio_max: f64,
    ) -> Result<Self> {
        let get = |leaf: &str| store.require(&format!("{prefix}.{leaf}")).and_then(Tensor::item);
        Ok(ControllerParams {
            bias: get("bias")?,
            scale: get("scale")?,
            ratio_raw: get("ratio_raw")?,
            temperature,
            ratio_min,
            ratio_max,
            adaptive: store.is_trainable(&format!("{prefix}.ratio_raw")),
        })
    }
}

/// `ratio_raw` that makes [`clamp_ratio`] return `ratio`.
pub fn raw_for_ratio(ratio: f64, ratio_min: f64, ratio_max: f64) -> f64 {
    let s = (ratio - ratio_min) / (ratio_max - ratio_min);
    ln(s / (1.0 - s))
}

#[derive(Debug, Clone, PartialEq)]
pub struct EventMask {
    /// Exactly binary.
    pub hard: Tensor,
    pub soft: Tensor,
    pub effective_ratio: f64,
    /// The quantile the scores were thresholded at.
    pub threshold: f64,
}

pub fn clamp_ratio(p: &ControllerParams) -> f64 {
    p.ratio_min + (p.ratio_max - p.ratio_min) * sigmoid(p.ratio_raw)
}

/// Population z-scores of `errors`.
pub fn normalize(errors: &[f64]) -> Vec<f64> {
    let n = errors.len() as f64;
    let mean = errors.iter().sum::<f64>() / n;
    let var = errors.iter().map(|e| (e - mean) * (e - mean)).sum::<f64>() / n;
    let denom = sqrt(var) + STD_FLOOR;
    errors.iter().map(|e| (e - mean) / denom).collect()
}

pub fn event_scores(errors: &[f64], p: &ControllerParams) -> Result<Tensor> {
    if errors.is_empty() {
        return Err(Error::invalid("event_scores needs at least one token"));
    }
    let scores = normalize(errors)
        .into_iter()
        .map(|z| (p.scale * z + p.bias) / p.temperature)
        .collect();
    Tensor::vector(scores)
}

/// Number of tokens that fire for `ratio` over `len` tokens.
pub fn active_count(ratio: f64, len: usize) -> usize {
    (ceil(ratio * len as f64) as usize).clamp(1, len)
}

pub fn hard_mask(scores: &[f64], ratio: f64) -> Result<EventMask> {
    if !(ratio > 0.0 && ratio <= 1.0) {
        return Err(Error::invalid("mask ratio must lie in (0, 1]"));
    }
    if scores.is_empty() {
        return Err(Error::invalid("hard_mask needs at least one score"));
    }
    let k = active_count(ratio, scores.len());
    let mut order: Vec<usize> = (0..scores.len()).collect();
    // descending score, then ascending index
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let threshold = scores[order[k - 1]];
    let mut hard = vec![0.0; scores.len()];
    for &i in &order[..k] {
        hard[i] = 1.0;
    }
    let soft = scores.iter().map(|s| sigmoid(s - threshold)).collect();
    Ok(EventMask {
        hard: Tensor::vector(hard)?,
        soft: Tensor::vector(soft)?,
        effective_ratio: k as f64 / scores.len() as f64,
        threshold,
    })
}

/// Tape handles for one layer's controller.
pub(crate) struct ControllerVars {
    bias: Var,
    scale: Var,
    /// `logit(ratio)`; carries the ratio's gradient into the soft path.
    shift: Var,
    params: ControllerParams,
}

pub(crate) fn controller_vars(
    tape: &mut Tape,
    store: &ParameterStore,
    prefix: &str,
    temperature: f64,
    ratio_min: f64,
    ratio_max: f64,
) -> Result<ControllerVars> {
    let params = ControllerParams::from_store(store, prefix, temperature, ratio_min, ratio_max)?;
    let bias = tape.param(store, &format!("{prefix}.bias"))?;
    let scale = tape.param(store, &format!("{prefix}.scale"))?;
    let raw = tape.param(store, &format!("{prefix}.ratio_raw"))?;
    let sig = tape.sigmoid(raw)?;
    let spread = tape.scale(sig, ratio_max - ratio_min)?;
    let lo = tape.scalar(ratio_min);
    let ratio = tape.add(spread, lo)?;
    let log_r = tape.ln(ratio)?;
    let rest = tape.rsub_scalar(1.0, ratio)?;
    let log_rest = tape.ln(rest)?;
    let shift = tape.sub(log_r, log_rest)?;
    Ok(ControllerVars {
        bias,
        scale,
        shift,
        params,
    })
}

/// Event for the last token of `history` (error norms of tokens `0..=t`).
/// Returns the straight-through mask value as a `[1 × 1]` handle and its hard bit.
pub(crate) fn causal_event(tape: &mut Tape, vars: &ControllerVars, history: &[f64]) -> Result<(Var, f64)> {
    let p = &vars.params;
    let ratio = clamp_ratio(p);
    let scores = event_scores(history, p)?;
    let mask = hard_mask(scores.data(), ratio)?;
    let t = history.len() - 1;
    let hard = mask.hard.data()[t];

    let z = *normalize(history).last().unwrap();
    let zc = tape.scalar(z);
    let scaled = tape.mul(vars.scale, zc)?;
    let score = tape.add(scaled, vars.bias)?;
    let score = tape.scale(score, 1.0 / p.temperature)?;
    let shift_now = tape.value(vars.shift).item()?;
    let offset = tape.scalar(-mask.threshold - shift_now);
    let centred = tape.add(score, offset)?;
    let centred = tape.add(centred, vars.shift)?;
    let soft = tape.sigmoid(centred)?;
    let soft = tape.reshape(soft, &[1, 1])?;
    let ste = tape.straight_through(soft, Tensor::from_parts(vec![1, 1], vec![hard]))?;
    Ok((ste, hard))
}

/// Hard bits for every token of a sequence under the causal rule, without a tape.
pub fn causal_mask(errors: &[f64], p: &ControllerParams) -> Result<Vec<f64>> {
    let ratio = clamp_ratio(p);
    (1..=errors.len())
        .map(|t| {
            let scores = event_scores(&errors[..t], p)?;
            Ok(hard_mask(scores.data(), ratio)?.hard.data()[t - 1])
        })
        .collect()
}

pub fn init_params(
    store: &mut ParameterStore,
    prefix: &str,
    ratio_init: f64,
    ratio_min: f64,
    ratio_max: f64,
    adaptive: bool,
) -> Result<()> {
    store.insert(&format!("{prefix}.bias"), Tensor::from_parts(vec![1], vec![0.0]), true)?;
    store.insert(&format!("{prefix}.scale"), Tensor::from_parts(vec![1], vec![1.0]), true)?;
    let raw = raw_for_ratio(ratio_init, ratio_min, ratio_max);
    store.insert(&format!("{prefix}.ratio_raw"), Tensor::from_parts(vec![1], vec![raw]), adaptive)
}
