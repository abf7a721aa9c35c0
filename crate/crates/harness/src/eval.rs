//! Held-out evaluation on a synthetic task.

use lpcsm_core::model::model_forward;
use lpcsm_core::objective::lm_loss;
use lpcsm_core::runtime::argmax;
use lpcsm_core::{ModelConfig, ParameterStore};

use crate::error::Result;
use crate::tasks::TaskConfig;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalResult {
    pub sequences: usize,
    /// Mean next-token cross-entropy.
    pub lm: f64,
    /// Fraction of positions whose argmax equals the target.
    pub accuracy: f64,
}

pub fn evaluate(
    store: &ParameterStore,
    cfg: &ModelConfig,
    task: &TaskConfig,
    sequences: usize,
    seed: u64,
) -> Result<EvalResult> {
    task.check(cfg)?;
    let batch = task.with_seed(cfg.vocab_size, seed).make_batch(sequences)?;
    let (mut lm, mut hits, mut positions) = (0.0, 0usize, 0usize);
    for seq in &batch {
        let logits = model_forward(&seq.inputs, store, cfg)?.logits.lm;
        lm += lm_loss(&logits, &seq.targets)?;
        for (t, target) in seq.targets.iter().enumerate() {
            hits += usize::from(argmax(logits.row(t)) == *target);
        }
        positions += seq.targets.len();
    }
    Ok(EvalResult {
        sequences,
        lm: lm / sequences.max(1) as f64,
        accuracy: hits as f64 / positions.max(1) as f64,
    })
}
