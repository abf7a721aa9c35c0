//! Incremental decoding.
//!
//! A [`DecodeCache`] holds one [`LayerCache`] per layer plus the next absolute
//! position. Each step runs a one-token segment through the same block code as
//! teacher forcing, so cached logits reproduce teacher-forced ones.

use alloc::vec::Vec;

use crate::autodiff::Tape;
use crate::error::{Error, Result};
use crate::math::sigmoid;
use crate::model::{forward_segment, fresh_caches, logits_of, LayerCache, Logits, ModelConfig};
use crate::params::ParameterStore;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct DecodeCache {
    pub layers: Vec<LayerCache>,
    pub position: usize,
}

pub fn init_cache(cfg: &ModelConfig) -> Result<DecodeCache> {
    cfg.validate()?;
    Ok(DecodeCache {
        layers: fresh_caches(cfg)?,
        position: 0,
    })
}

/// Logits for one position.
#[derive(Debug, Clone, PartialEq)]
pub struct StepLogits {
    /// `[V]`.
    pub lm: Tensor,
    pub stop: Option<f64>,
}

fn last_row(logits: &Logits) -> StepLogits {
    let rows = logits.lm.rows();
    let lm = logits.lm.row(rows - 1).to_vec();
    let n = lm.len();
    StepLogits {
        lm: Tensor::vector(lm).unwrap_or_else(|_| Tensor::zeros(alloc::vec![n])),
        stop: logits.stop.as_ref().map(|s| s.data()[rows - 1]),
    }
}

/// Feed `tokens` at the cache's position and return the logits of every fed
/// position.
pub fn feed(tokens: &[usize], mut cache: DecodeCache, store: &ParameterStore, cfg: &ModelConfig) -> Result<(Logits, DecodeCache)> {
    let mut tape = Tape::inference();
    let vars = forward_segment(&mut tape, store, cfg, tokens, cache.position, &mut cache.layers)?;
    cache.position += tokens.len();
    Ok((logits_of(&tape, &vars), cache))
}

pub fn step_decode(
    token: usize,
    cache: DecodeCache,
    store: &ParameterStore,
    cfg: &ModelConfig,
) -> Result<(StepLogits, DecodeCache)> {
    if cache.position >= cfg.max_seq_len {
        return Err(Error::SequenceTooLong {
            len: cache.position + 1,
            max: cfg.max_seq_len,
        });
    }
    let (logits, cache) = feed(&[token], cache, store, cfg)?;
    Ok((last_row(&logits), cache))
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StopRule {
    pub eos: Option<usize>,
    /// Halt once `σ(stop score)` exceeds this. Ignored without a stop head.
    pub stop_threshold: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    MaxNew,
    Eos,
    StopHead,
    MaxSeqLen,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Generation {
    /// Prompt followed by the generated tokens.
    pub tokens: Vec<usize>,
    pub reason: StopReason,
}

/// Lowest index among the maxima.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// Greedy decoding.
pub fn generate(
    prompt: &[usize],
    max_new: usize,
    store: &ParameterStore,
    cfg: &ModelConfig,
    rule: &StopRule,
) -> Result<Generation> {
    if prompt.is_empty() {
        return Err(Error::invalid("generation needs a nonempty prompt"));
    }
    let mut tokens = prompt.to_vec();
    if max_new == 0 {
        return Ok(Generation {
            tokens,
            reason: StopReason::MaxNew,
        });
    }
    let (logits, mut cache) = feed(prompt, init_cache(cfg)?, store, cfg)?;
    let mut step = last_row(&logits);
    for produced in 1..=max_new {
        if tokens.len() >= cfg.max_seq_len {
            return Ok(Generation {
                tokens,
                reason: StopReason::MaxSeqLen,
            });
        }
        let next = argmax(step.lm.data());
        tokens.push(next);
        if rule.eos == Some(next) {
            return Ok(Generation { tokens, reason: StopReason::Eos });
        }
        if let (Some(th), Some(score)) = (rule.stop_threshold, step.stop) {
            if sigmoid(score) > th {
                return Ok(Generation {
                    tokens,
                    reason: StopReason::StopHead,
                });
            }
        }
        if produced == max_new {
            break;
        }
        let (s, c) = step_decode(next, cache, store, cfg)?;
        step = s;
        cache = c;
    }
    Ok(Generation {
        tokens,
        reason: StopReason::MaxNew,
    })
}
