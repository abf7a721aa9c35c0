//! Training objective.
//!
//! `total = lm + λ_pred·pred + λ_sparse·sparse + λ_mem·mem + λ_stop·stop` with
//! - `lm`: mean next-token cross-entropy,
//! - `pred`: squared error norm of the predictive estimate, averaged over tokens and layers,
//! - `sparse`: squared effective event ratio, averaged over layers,
//! - `mem`: `(‖m^f‖² + ‖m^s‖²)/d` at the final position, averaged over layers,
//! - `stop`: binary cross-entropy of the stop head against the end-of-sequence indicator.
//!
//! Terms of disabled mechanisms, and terms whose weight is zero, stay off the
//! tape entirely, so they contribute exactly zero gradient.

use alloc::vec;
use alloc::vec::Vec;

use crate::autodiff::{Gradients, Tape, Var};
use crate::error::{Error, Result};
use crate::math::{exp, ln};
use crate::model::{forward_tape, BlockAux, ModelConfig};
use crate::params::ParameterStore;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct LossWeights {
    pub lambda_pred: f64,
    pub lambda_sparse: f64,
    pub lambda_mem: f64,
    pub lambda_stop: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda_pred: 0.1,
            lambda_sparse: 0.01,
            lambda_mem: 0.001,
            lambda_stop: 0.1,
        }
    }
}

impl LossWeights {
    pub const ZERO: LossWeights = LossWeights {
        lambda_pred: 0.0,
        lambda_sparse: 0.0,
        lambda_mem: 0.0,
        lambda_stop: 0.0,
    };

    pub fn validate(&self) -> Result<()> {
        let all = [self.lambda_pred, self.lambda_sparse, self.lambda_mem, self.lambda_stop];
        if all.iter().all(|l| *l >= 0.0 && l.is_finite()) {
            Ok(())
        } else {
            Err(Error::invalid("loss weights must be finite and nonnegative"))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossBreakdown {
    pub lm: f64,
    pub pred: f64,
    pub sparse: f64,
    pub mem: f64,
    pub stop: f64,
    pub total: f64,
}

/// Fill in `total` from the components.
pub fn total_loss(b: LossBreakdown, w: &LossWeights) -> LossBreakdown {
    let total = b.lm + w.lambda_pred * b.pred + w.lambda_sparse * b.sparse + w.lambda_mem * b.mem + w.lambda_stop * b.stop;
    LossBreakdown { total, ..b }
}

fn check_targets(rows: usize, vocab: usize, targets: &[usize]) -> Result<()> {
    if targets.len() != rows {
        return Err(Error::invalid("one target per position required"));
    }
    if let Some(&token) = targets.iter().find(|&&t| t >= vocab) {
        return Err(Error::TokenOutOfRange { token, vocab });
    }
    Ok(())
}

/// Mean of `−log softmax(logits)[target]` over rows.
pub fn lm_loss(logits: &Tensor, targets: &[usize]) -> Result<f64> {
    let mut tape = Tape::inference();
    let l = tape.constant(logits.clone());
    let loss = lm_loss_var(&mut tape, l, targets)?;
    tape.value(loss).item()
}

pub fn lm_loss_var(tape: &mut Tape, logits: Var, targets: &[usize]) -> Result<Var> {
    let value = tape.value(logits);
    if value.rank() != 2 {
        return Err(Error::InvalidShape {
            shape: value.shape().to_vec(),
            len: value.len(),
        });
    }
    let (rows, vocab) = (value.rows(), value.cols());
    check_targets(rows, vocab, targets)?;
    let maxes: Vec<f64> = (0..rows)
        .map(|i| value.row(i).iter().copied().fold(f64::NEG_INFINITY, f64::max))
        .collect();
    let mut pick = vec![0.0; rows * vocab];
    for (i, &t) in targets.iter().enumerate() {
        pick[i * vocab + t] = 1.0;
    }
    let maxes = tape.constant(Tensor::from_parts(vec![rows, 1], maxes));
    let shifted = tape.sub(logits, maxes)?;
    let e = tape.exp(shifted)?;
    let z = tape.sum_last(e)?;
    let lse = tape.ln(z)?;
    let logp = tape.sub(shifted, lse)?;
    let pick = tape.constant(Tensor::from_parts(vec![rows, vocab], pick));
    let chosen = tape.mul(logp, pick)?;
    let total = tape.sum(chosen)?;
    tape.scale(total, -1.0 / rows as f64)
}

/// Mean binary cross-entropy of logits against `{0, 1}` targets.
pub fn bce_with_logits(scores: &[f64], targets: &[f64]) -> Result<f64> {
    if scores.len() != targets.len() || scores.is_empty() {
        return Err(Error::invalid("bce needs one target per score"));
    }
    let total: f64 = scores
        .iter()
        .zip(targets)
        .map(|(&z, &y)| z.max(0.0) + ln(1.0 + exp(-z.abs())) - y * z)
        .sum();
    Ok(total / scores.len() as f64)
}

/// `max(z, 0) + ln(1 + e^{−|z|}) − y·z`, averaged.
pub fn bce_with_logits_var(tape: &mut Tape, scores: Var, targets: &[f64]) -> Result<Var> {
    let n = tape.value(scores).len();
    if targets.len() != n {
        return Err(Error::invalid("bce needs one target per score"));
    }
    let shape = tape.shape(scores).to_vec();
    let zero = tape.scalar(0.0);
    let pos = tape.maximum(scores, zero)?;
    let neg = tape.neg(scores)?;
    let abs = tape.maximum(scores, neg)?;
    let nabs = tape.neg(abs)?;
    let e = tape.exp(nabs)?;
    let one = tape.scalar(1.0);
    let e1 = tape.add(e, one)?;
    let soft = tape.ln(e1)?;
    let y = tape.constant(Tensor::from_parts(shape, targets.to_vec()));
    let yz = tape.mul(y, scores)?;
    let a = tape.add(pos, soft)?;
    let per = tape.sub(a, yz)?;
    tape.mean(per)
}

/// One teacher-forced training sequence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sequence {
    pub inputs: Vec<usize>,
    /// `inputs` shifted left by one, ending in the end-of-sequence token.
    pub targets: Vec<usize>,
}

impl Sequence {
    pub fn stop_targets(&self, eos: usize) -> Vec<f64> {
        self.targets.iter().map(|&t| if t == eos { 1.0 } else { 0.0 }).collect()
    }
}

pub struct ObjectiveVars {
    pub total: Var,
    pub breakdown: LossBreakdown,
    pub aux: Vec<BlockAux>,
}

fn mean_of(tape: &mut Tape, vars: &[Var]) -> Result<Option<Var>> {
    let Some((&first, rest)) = vars.split_first() else {
        return Ok(None);
    };
    let mut acc = first;
    for &v in rest {
        acc = tape.add(acc, v)?;
    }
    Ok(Some(tape.scale(acc, 1.0 / vars.len() as f64)?))
}

/// Build the full objective for one sequence on `tape`.
pub fn objective_var(
    tape: &mut Tape,
    store: &ParameterStore,
    cfg: &ModelConfig,
    weights: &LossWeights,
    seq: &Sequence,
    eos: usize,
) -> Result<ObjectiveVars> {
    weights.validate()?;
    let fwd = forward_tape(tape, store, cfg, &seq.inputs)?;
    let lm = lm_loss_var(tape, fwd.lm, &seq.targets)?;

    let preds: Vec<Var> = fwd.terms.iter().filter_map(|t| t.pred).collect();
    let mut ratios_sq = Vec::new();
    for r in fwd.terms.iter().filter_map(|t| t.ratio) {
        ratios_sq.push(tape.mul(r, r)?);
    }
    let mems: Vec<Var> = fwd.terms.iter().map(|t| t.mem).collect();
    let pred = mean_of(tape, &preds)?;
    let sparse = mean_of(tape, &ratios_sq)?;
    let mem = mean_of(tape, &mems)?;
    let stop = match fwd.stop {
        Some(s) => Some(bce_with_logits_var(tape, s, &seq.stop_targets(eos))?),
        None => None,
    };

    let value = |tape: &Tape, v: Option<Var>| v.map_or(Ok(0.0), |v| tape.value(v).item());
    let breakdown = total_loss(
        LossBreakdown {
            lm: tape.value(lm).item()?,
            pred: value(tape, pred)?,
            sparse: value(tape, sparse)?,
            mem: value(tape, mem)?,
            stop: value(tape, stop)?,
            total: 0.0,
        },
        weights,
    );

    let mut total = lm;
    for (term, lambda) in [
        (pred, weights.lambda_pred),
        (sparse, weights.lambda_sparse),
        (mem, weights.lambda_mem),
        (stop, weights.lambda_stop),
    ] {
        if let Some(t) = term {
            if lambda != 0.0 {
                let w = tape.scale(t, lambda)?;
                total = tape.add(total, w)?;
            }
        }
    }
    Ok(ObjectiveVars {
        total,
        breakdown,
        aux: fwd.aux,
    })
}

/// Loss breakdown, gradients of the total, and per-layer diagnostics.
pub fn loss_and_grads(
    store: &ParameterStore,
    cfg: &ModelConfig,
    weights: &LossWeights,
    seq: &Sequence,
    eos: usize,
) -> Result<(LossBreakdown, Gradients, Vec<BlockAux>)> {
    let mut tape = Tape::new();
    let obj = objective_var(&mut tape, store, cfg, weights, seq, eos)?;
    let grads = tape.backward(obj.total)?;
    Ok((obj.breakdown, grads, obj.aux))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_cross_entropy() {
        let l = lm_loss(&Tensor::zeros(vec![3, 16]), &[0, 5, 15]).unwrap();
        assert!((l - ln(16.0)).abs() < 1e-12);
    }

    #[test]
    fn confident_cross_entropy() {
        let mut d = vec![0.0; 4];
        d[2] = 800.0;
        let l = lm_loss(&Tensor::new(vec![1, 4], d).unwrap(), &[2]).unwrap();
        assert_eq!(l, 0.0);
    }

    #[test]
    fn direct_log_probability() {
        let data = vec![0.3, -1.2, 2.0, 0.1, 0.0, -0.4, 1.5, 0.7];
        let logits = Tensor::new(vec![2, 4], data.clone()).unwrap();
        let l = lm_loss(&logits, &[2, 0]).unwrap();
        let p = |row: &[f64], t: usize| exp(row[t]) / row.iter().map(|x| exp(*x)).sum::<f64>();
        let want = -(ln(p(&data[..4], 2)) + ln(p(&data[4..], 0))) / 2.0;
        assert!((l - want).abs() < 1e-12);
        assert!(lm_loss(&logits, &[4, 0]).is_err());
        assert!(lm_loss(&logits, &[0]).is_err());
    }

    #[test]
    fn uninformative_stop_scores() {
        let l = bce_with_logits(&[0.0; 4], &[1.0, 0.0, 1.0, 0.0]).unwrap();
        assert!((l - ln(2.0)).abs() < 1e-15);
        let mut tape = Tape::inference();
        let s = tape.constant(Tensor::new(vec![3, 1], vec![2.5, -40.0, 0.3]).unwrap());
        let v = bce_with_logits_var(&mut tape, s, &[1.0, 0.0, 0.0]).unwrap();
        let want = bce_with_logits(&[2.5, -40.0, 0.3], &[1.0, 0.0, 0.0]).unwrap();
        assert!((tape.value(v).item().unwrap() - want).abs() < 1e-15);
    }

    #[test]
    fn weighted_total() {
        let b = LossBreakdown { lm: 2.0, pred: 0.5, ..Default::default() };
        let w = LossWeights { lambda_pred: 1.0, ..LossWeights::ZERO };
        assert_eq!(total_loss(b, &w).total, 2.5);
        assert_eq!(total_loss(LossBreakdown { sparse: 3.0, ..b }, &LossWeights::ZERO).total, 2.0);
        assert!(LossWeights { lambda_mem: -1.0, ..LossWeights::ZERO }.validate().is_err());
    }
}
