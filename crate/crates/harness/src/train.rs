//! Training loop and metrics log.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use lpcsm_core::model::init_params;
use lpcsm_core::objective::{loss_and_grads, Sequence};
use lpcsm_core::optim::{average, Sgd};
use lpcsm_core::{LossBreakdown, ParameterStore};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::checkpoint::save_checkpoint;
use crate::config::RunConfig;
use crate::error::{HarnessError, Result};
use crate::tasks::{corpus_batch, eos, step_seed, TaskConfig, TaskKind};
use crate::tokenizer;

pub const CSV_HEADER: &str = "step,lm,pred,sparse,mem,stop,total,effective_ratio,tokens_per_second";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepMetrics {
    pub step: usize,
    /// Batch means.
    pub loss: LossBreakdown,
    /// Mean hard event density over layers and examples.
    pub effective_ratio: f64,
    /// Lowest and highest controller target ratio over layers.
    pub ratio_low: f64,
    pub ratio_high: f64,
    pub tokens_per_second: f64,
}

impl StepMetrics {
    pub fn csv_row(&self) -> String {
        let l = &self.loss;
        format!(
            "{},{},{},{},{},{},{},{},{:.1}",
            self.step, l.lm, l.pred, l.sparse, l.mem, l.stop, l.total, self.effective_ratio, self.tokens_per_second
        )
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub store: ParameterStore,
    pub metrics: Vec<StepMetrics>,
}

impl TrainOutcome {
    /// Mean of `f` over the last `window` steps.
    pub fn final_mean(&self, window: usize, f: impl Fn(&StepMetrics) -> f64) -> f64 {
        let tail = &self.metrics[self.metrics.len().saturating_sub(window.max(1))..];
        if tail.is_empty() {
            return f64::NAN;
        }
        tail.iter().map(f).sum::<f64>() / tail.len() as f64
    }
}

/// Seeded source of training batches.
pub enum BatchSource {
    Synthetic { task: TaskConfig, vocab_size: usize, batch: usize },
    Corpus { tokens: Vec<usize>, seq_len: usize, batch: usize },
}

impl BatchSource {
    pub fn new(cfg: &RunConfig) -> Result<Self> {
        if cfg.task.kind != TaskKind::Corpus {
            return Ok(BatchSource::Synthetic {
                task: cfg.task.clone(),
                vocab_size: cfg.model.vocab_size,
                batch: cfg.train.batch_size,
            });
        }
        let path = cfg
            .task
            .corpus
            .as_ref()
            .ok_or_else(|| HarnessError::config("corpus task needs a path"))?;
        let bytes = fs::read(path).map_err(|e| HarnessError::io(path, e))?;
        Ok(BatchSource::Corpus {
            tokens: tokenizer::encode(&bytes),
            seq_len: cfg.task.seq_len,
            batch: cfg.train.batch_size,
        })
    }

    pub fn batch(&self, seed: u64, step: usize) -> Result<Vec<Sequence>> {
        let s = step_seed(seed, step);
        match self {
            BatchSource::Synthetic { task, vocab_size, batch } => task.with_seed(*vocab_size, s).make_batch(*batch),
            BatchSource::Corpus { tokens, seq_len, batch } => corpus_batch(tokens, *seq_len, *batch, s),
        }
    }
}

/// Parameters at step zero for `seed`.
pub fn initial_params(cfg: &RunConfig, seed: u64) -> Result<ParameterStore> {
    Ok(init_params(&cfg.model, &mut ChaCha8Rng::seed_from_u64(seed))?)
}

fn mean_breakdown(parts: &[LossBreakdown]) -> LossBreakdown {
    let k = 1.0 / parts.len() as f64;
    let mut m = LossBreakdown::default();
    for p in parts {
        m.lm += p.lm;
        m.pred += p.pred;
        m.sparse += p.sparse;
        m.mem += p.mem;
        m.stop += p.stop;
        m.total += p.total;
    }
    LossBreakdown {
        lm: m.lm * k,
        pred: m.pred * k,
        sparse: m.sparse * k,
        mem: m.mem * k,
        stop: m.stop * k,
        total: m.total * k,
    }
}

/// Where a failing run leaves its parameters.
pub fn dump_path(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".nonfinite");
    PathBuf::from(s)
}

/// Train for `steps` steps. `on_step` sees each step's metrics as they are
/// produced. On a non-finite loss or gradient the current parameters are
/// written to `dump` (when given) and a numeric error is returned.
pub fn train(
    cfg: &RunConfig,
    steps: usize,
    seed: u64,
    dump: Option<&Path>,
    mut on_step: impl FnMut(&StepMetrics) -> Result<()>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let source = BatchSource::new(cfg)?;
    let mut store = initial_params(cfg, seed)?;
    let mut opt = Sgd::new(cfg.optimizer)?;
    let eos = if cfg.task.kind == TaskKind::Corpus {
        tokenizer::EOS
    } else {
        eos(cfg.model.vocab_size)
    };
    let mut metrics = Vec::with_capacity(steps);
    for step in 0..steps {
        let start = Instant::now();
        let batch = source.batch(seed, step)?;
        let results: Vec<_> = batch
            .par_iter()
            .map(|seq| loss_and_grads(&store, &cfg.model, &cfg.loss, seq, eos))
            .collect();
        let fail = |store: &ParameterStore, detail: String| -> HarnessError {
            let dumped = dump.and_then(|p| save_checkpoint(store, &cfg.model, p).ok().map(|_| p.to_path_buf()));
            HarnessError::Numeric { step, detail, dump: dumped }
        };
        let mut losses = Vec::with_capacity(results.len());
        let mut grads = Vec::with_capacity(results.len());
        let mut eff = 0.0;
        let (mut ratio_low, mut ratio_high) = (f64::INFINITY, f64::NEG_INFINITY);
        let mut layers_seen = 0usize;
        for r in results {
            let (loss, g, aux) = match r {
                Ok(v) => v,
                Err(e) if e.is_non_finite() => return Err(fail(&store, e.to_string())),
                Err(e) => return Err(e.into()),
            };
            if !loss.total.is_finite() {
                return Err(fail(&store, format!("total loss {}", loss.total)));
            }
            for a in &aux {
                eff += a.effective_ratio;
                ratio_low = ratio_low.min(a.ratio);
                ratio_high = ratio_high.max(a.ratio);
            }
            layers_seen += aux.len();
            losses.push(loss);
            grads.push(g);
        }
        let mean = average(&grads);
        match opt.step(&mut store, &mean) {
            Ok(_) => {}
            Err(e) if e.is_non_finite() => return Err(fail(&store, e.to_string())),
            Err(e) => return Err(e.into()),
        }
        let tokens: usize = batch.iter().map(|s| s.inputs.len()).sum();
        let per_layer = if layers_seen == 0 { 0.0 } else { 1.0 / layers_seen as f64 };
        let m = StepMetrics {
            step,
            loss: mean_breakdown(&losses),
            effective_ratio: eff * per_layer,
            ratio_low,
            ratio_high,
            tokens_per_second: tokens as f64 / start.elapsed().as_secs_f64().max(1e-9),
        };
        on_step(&m)?;
        metrics.push(m);
    }
    Ok(TrainOutcome { store, metrics })
}

/// Writes the metrics CSV, header first, one flushed row per step.
pub struct CsvLog<W: Write> {
    out: W,
}

impl<W: Write> CsvLog<W> {
    pub fn new(mut out: W) -> std::io::Result<Self> {
        writeln!(out, "{CSV_HEADER}")?;
        Ok(CsvLog { out })
    }

    pub fn row(&mut self, m: &StepMetrics) -> std::io::Result<()> {
        writeln!(self.out, "{}", m.csv_row())?;
        self.out.flush()
    }
}
