//! Delayed-identifier probe.
//!
//! Each prompt is `preamble, HEADER, key, distractor, TRIGGER, key` from the
//! key-recall generator. The model is teacher-forced over the whole prompt and
//! the reported cross-entropy averages `−log p` over the key tokens after the
//! trigger only.

use std::path::Path;

use lpcsm_core::model::model_forward;
use lpcsm_core::objective::lm_loss;
use lpcsm_core::{ModelConfig, ParameterStore, Tensor};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::model_to_toml;
use crate::error::{HarnessError, Result};
use crate::tasks::{SyntheticTask, TaskKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProbeSpec {
    pub prompts: usize,
    pub prompt_len: usize,
    pub distractor_len: usize,
    pub key_len: usize,
    pub seed: u64,
}

impl Default for ProbeSpec {
    fn default() -> Self {
        ProbeSpec {
            prompts: 6,
            prompt_len: 192,
            distractor_len: 128,
            key_len: 8,
            seed: 0x5eed,
        }
    }
}

impl ProbeSpec {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        toml::from_str(&text).map_err(|e| HarnessError::config(e.to_string()))
    }

    fn task(&self, vocab_size: usize) -> SyntheticTask {
        SyntheticTask {
            kind: TaskKind::KeyRecall,
            vocab_size,
            seq_len: self.prompt_len,
            key_len: self.key_len,
            distractor_len: self.distractor_len,
            seed: self.seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeResult {
    pub key_ce: f64,
    pub prompt_len: usize,
    /// SHA-256 of the canonical model configuration, hex.
    pub fingerprint: String,
}

pub fn fingerprint(cfg: &ModelConfig) -> String {
    Sha256::digest(model_to_toml(cfg).as_bytes())
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

pub fn probe_delayed_identifier(store: &ParameterStore, cfg: &ModelConfig, spec: &ProbeSpec) -> Result<ProbeResult> {
    if spec.key_len == 0 {
        return Err(HarnessError::config("probe key region is empty"));
    }
    if spec.prompts == 0 {
        return Err(HarnessError::config("probe needs at least one prompt"));
    }
    let task = spec.task(cfg.vocab_size);
    task.check(cfg.max_seq_len)?;
    let trig = task.trigger_index();
    let mut total = 0.0;
    for seq in task.make_batch(spec.prompts)? {
        let out = model_forward(&seq.inputs, store, cfg)?;
        let lm = &out.logits.lm;
        let rows: Vec<f64> = (trig..trig + spec.key_len).flat_map(|t| lm.row(t).to_vec()).collect();
        let logits = Tensor::matrix(spec.key_len, cfg.vocab_size, rows)?;
        total += lm_loss(&logits, &seq.targets[trig..trig + spec.key_len])?;
    }
    Ok(ProbeResult {
        key_ce: total / spec.prompts as f64,
        prompt_len: spec.prompt_len,
        fingerprint: fingerprint(cfg),
    })
}
