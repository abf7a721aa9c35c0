//! Synthetic sequence tasks.
//!
//! Token conventions for a vocabulary of size `V`: `V − 1` is end-of-sequence.
//! The copy task uses `V − 2` as its delimiter and draws content from
//! `[0, V − 2)`. Key recall uses `V − 2` as the trigger, `V − 3` as the header
//! and draws content from `[0, V − 3)`.
//!
//! Every sequence comes with next-token targets: the inputs shifted left by one
//! with end-of-sequence as the final target.

use std::path::PathBuf;

use lpcsm_core::objective::Sequence;
use lpcsm_core::ModelConfig;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TaskKind {
    /// `prefix, DELIM, prefix, prefix, …` truncated to the sequence length.
    Copy,
    /// `preamble, HEADER, key, distractor, TRIGGER, key`.
    KeyRecall,
    /// Random windows of a byte-tokenized text file.
    Corpus,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TaskConfig {
    pub kind: TaskKind,
    pub seq_len: usize,
    /// Prefix length for copy, key length for key recall.
    pub key_len: usize,
    pub distractor_len: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub corpus: Option<PathBuf>,
}

impl Default for TaskConfig {
    fn default() -> Self {
        TaskConfig {
            kind: TaskKind::Copy,
            seq_len: 64,
            key_len: 16,
            distractor_len: 0,
            corpus: None,
        }
    }
}

impl TaskConfig {
    pub fn check(&self, model: &ModelConfig) -> Result<()> {
        self.with_seed(model.vocab_size, 0).check(model.max_seq_len)?;
        if self.kind == TaskKind::Corpus {
            if self.corpus.is_none() {
                return Err(HarnessError::config("corpus task needs `corpus = <path>`"));
            }
            if model.vocab_size != crate::tokenizer::VOCAB_SIZE {
                return Err(HarnessError::config(format!(
                    "corpus task needs vocab_size = {}",
                    crate::tokenizer::VOCAB_SIZE
                )));
            }
        }
        Ok(())
    }

    pub fn with_seed(&self, vocab_size: usize, seed: u64) -> SyntheticTask {
        SyntheticTask {
            kind: self.kind,
            vocab_size,
            seq_len: self.seq_len,
            key_len: self.key_len,
            distractor_len: self.distractor_len,
            seed,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SyntheticTask {
    pub kind: TaskKind,
    pub vocab_size: usize,
    pub seq_len: usize,
    pub key_len: usize,
    pub distractor_len: usize,
    pub seed: u64,
}

pub fn eos(vocab_size: usize) -> usize {
    vocab_size - 1
}

pub fn delimiter(vocab_size: usize) -> usize {
    vocab_size - 2
}

pub fn trigger(vocab_size: usize) -> usize {
    vocab_size - 2
}

pub fn header(vocab_size: usize) -> usize {
    vocab_size - 3
}

/// Seed for the batch of training step `step` under run seed `seed`.
pub fn step_seed(seed: u64, step: usize) -> u64 {
    seed ^ (step as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// A finished token sequence as teacher-forcing inputs and targets.
pub fn to_sequence(tokens: Vec<usize>, eos: usize) -> Sequence {
    let mut targets = tokens[1..].to_vec();
    targets.push(eos);
    Sequence { inputs: tokens, targets }
}

impl SyntheticTask {
    pub fn check(&self, max_seq_len: usize) -> Result<()> {
        if self.seq_len == 0 {
            return Err(HarnessError::config("task seq_len must be positive"));
        }
        if self.seq_len > max_seq_len {
            return Err(HarnessError::config(format!(
                "task sequences of length {} exceed max_seq_len {max_seq_len}",
                self.seq_len
            )));
        }
        match self.kind {
            TaskKind::Copy => {
                if self.vocab_size < 3 {
                    return Err(HarnessError::config("copy task needs vocab_size >= 3"));
                }
                if self.key_len == 0 || self.key_len + 2 > self.seq_len {
                    return Err(HarnessError::config("copy task needs 0 < key_len <= seq_len - 2"));
                }
            }
            TaskKind::KeyRecall => {
                if self.vocab_size < 4 {
                    return Err(HarnessError::config("key-recall task needs vocab_size >= 4"));
                }
                if self.key_len == 0 {
                    return Err(HarnessError::config("key region is empty"));
                }
                if self.core_len() > self.seq_len {
                    return Err(HarnessError::config(format!(
                        "key-recall layout needs {} tokens but seq_len is {}",
                        self.core_len(),
                        self.seq_len
                    )));
                }
            }
            TaskKind::Corpus => {}
        }
        Ok(())
    }

    /// Header, key, distractor, trigger and the recalled key.
    fn core_len(&self) -> usize {
        2 * self.key_len + self.distractor_len + 2
    }

    /// Index of the trigger token in a key-recall sequence; the key targets sit
    /// at positions `trigger..trigger + key_len`.
    pub fn trigger_index(&self) -> usize {
        self.seq_len - self.key_len - 1
    }

    fn copy_tokens(&self, rng: &mut ChaCha8Rng) -> Vec<usize> {
        let content = self.vocab_size - 2;
        let prefix: Vec<usize> = (0..self.key_len).map(|_| rng.gen_range(0..content)).collect();
        let mut tokens = prefix.clone();
        tokens.push(delimiter(self.vocab_size));
        tokens.extend(prefix.iter().cycle().take(self.seq_len - self.key_len - 1));
        tokens
    }

    fn key_recall_tokens(&self, rng: &mut ChaCha8Rng) -> Vec<usize> {
        let content = self.vocab_size - 3;
        let mut draw = |n: usize| (0..n).map(|_| rng.gen_range(0..content)).collect::<Vec<_>>();
        let mut tokens = draw(self.seq_len - self.core_len());
        let key = draw(self.key_len);
        let distractor = draw(self.distractor_len);
        tokens.push(header(self.vocab_size));
        tokens.extend(&key);
        tokens.extend(distractor);
        tokens.push(trigger(self.vocab_size));
        tokens.extend(&key);
        tokens
    }

    /// `batch` sequences; a pure function of the task (including its seed).
    pub fn make_batch(&self, batch: usize) -> Result<Vec<Sequence>> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let eos = eos(self.vocab_size);
        (0..batch)
            .map(|_| {
                let tokens = match self.kind {
                    TaskKind::Copy => self.copy_tokens(&mut rng),
                    TaskKind::KeyRecall => self.key_recall_tokens(&mut rng),
                    TaskKind::Corpus => {
                        return Err(HarnessError::config("corpus batches come from a loaded corpus"));
                    }
                };
                Ok(to_sequence(tokens, eos))
            })
            .collect()
    }
}

/// Windows of a tokenized corpus.
pub fn corpus_batch(tokens: &[usize], seq_len: usize, batch: usize, seed: u64) -> Result<Vec<Sequence>> {
    if tokens.len() < seq_len + 1 {
        return Err(HarnessError::config(format!(
            "corpus has {} tokens, fewer than seq_len + 1",
            tokens.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..batch)
        .map(|_| {
            let start = rng.gen_range(0..=tokens.len() - seq_len - 1);
            Sequence {
                inputs: tokens[start..start + seq_len].to_vec(),
                targets: tokens[start + 1..start + seq_len + 1].to_vec(),
            }
        })
        .collect())
}
