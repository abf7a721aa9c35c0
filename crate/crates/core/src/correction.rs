//! Predictive correction: estimate the current hidden state from the attention
//! and memory reads, then refine the estimate with its own mismatch.
//!
//! `ĥ⁽⁰⁾ = f_pred([a ‖ r])`, `ĥ⁽ˢ⁺¹⁾ = ĥ⁽ˢ⁾ + f_refine([a ‖ r ‖ h − ĥ⁽ˢ⁾])`, where both
//! maps are two-layer tanh perceptrons with hidden width `d`
//! (`{prefix}.w1`, `b1`, `w2`, `b2`).

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::params::ParameterStore;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct PredictionState {
    pub estimate: Tensor,
    pub step: usize,
    /// `h − estimate`, once a target has been seen.
    pub last_error: Option<Tensor>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ErrorStats {
    /// `‖h_t − ĥ_t‖₂` per token.
    pub per_token_error_norm: Tensor,
    pub mean_error: f64,
}

impl ErrorStats {
    pub fn from_norms(norms: Vec<f64>) -> Result<Self> {
        let mean_error = norms.iter().sum::<f64>() / norms.len().max(1) as f64;
        Ok(ErrorStats {
            per_token_error_norm: Tensor::vector(norms)?,
            mean_error,
        })
    }
}

/// `tanh(x W1 + b1) W2 + b2`.
pub fn mlp_var(tape: &mut Tape, store: &ParameterStore, prefix: &str, x: Var) -> Result<Var> {
    let w1 = tape.param(store, &format!("{prefix}.w1"))?;
    let b1 = tape.param(store, &format!("{prefix}.b1"))?;
    let w2 = tape.param(store, &format!("{prefix}.w2"))?;
    let b2 = tape.param(store, &format!("{prefix}.b2"))?;
    let hidden = tape.linear(x, w1, Some(b1))?;
    let hidden = tape.tanh(hidden)?;
    tape.linear(hidden, w2, Some(b2))
}

pub fn predict_init_var(
    tape: &mut Tape,
    store: &ParameterStore,
    prefix: &str,
    a: Var,
    r: Var,
) -> Result<Var> {
    let x = tape.concat(&[a, r], 1)?;
    mlp_var(tape, store, prefix, x)
}

pub fn refine_step_var(
    tape: &mut Tape,
    store: &ParameterStore,
    prefix: &str,
    a: Var,
    r: Var,
    h: Var,
    estimate: Var,
) -> Result<Var> {
    let err = tape.sub(h, estimate)?;
    let x = tape.concat(&[a, r, err], 1)?;
    let delta = mlp_var(tape, store, prefix, x)?;
    tape.add(estimate, delta)
}

/// Unrolled prediction: initialize, then `steps` refinements. Returns the final
/// estimate for rows `h: [n × d]`.
#[allow(clippy::too_many_arguments)]
pub fn predict_and_refine_var(
    tape: &mut Tape,
    store: &ParameterStore,
    pred_prefix: &str,
    refine_prefix: &str,
    a: Var,
    r: Var,
    h: Var,
    steps: usize,
) -> Result<Var> {
    let mut estimate = predict_init_var(tape, store, pred_prefix, a, r)?;
    for _ in 0..steps {
        estimate = refine_step_var(tape, store, refine_prefix, a, r, h, estimate)?;
    }
    Ok(estimate)
}

fn as_row(tape: &mut Tape, v: &Tensor) -> Result<Var> {
    Ok(tape.constant(v.with_shape(vec![1, v.len()])?))
}

fn flat(t: &Tensor) -> Tensor {
    Tensor::from_parts(vec![t.len()], t.data().to_vec())
}

pub fn predict_init(a: &Tensor, r: &Tensor, params: &ParameterStore, prefix: &str) -> Result<PredictionState> {
    let mut tape = Tape::inference();
    let av = as_row(&mut tape, a)?;
    let rv = as_row(&mut tape, r)?;
    let est = predict_init_var(&mut tape, params, prefix, av, rv)?;
    Ok(PredictionState {
        estimate: flat(tape.value(est)),
        step: 0,
        last_error: None,
    })
}

/// One refinement against target `h`; fails once `max_steps` refinements have run.
pub fn refine_step(
    a: &Tensor,
    r: &Tensor,
    h: &Tensor,
    state: &PredictionState,
    params: &ParameterStore,
    prefix: &str,
    max_steps: usize,
) -> Result<PredictionState> {
    if state.step >= max_steps {
        return Err(Error::RefinementExhausted(max_steps));
    }
    let mut tape = Tape::inference();
    let av = as_row(&mut tape, a)?;
    let rv = as_row(&mut tape, r)?;
    let hv = as_row(&mut tape, h)?;
    let ev = as_row(&mut tape, &state.estimate)?;
    let next = refine_step_var(&mut tape, params, prefix, av, rv, hv, ev)?;
    let estimate = flat(tape.value(next));
    let err = crate::tensor::zip_broadcast("refine", h, &estimate, |x, y| x - y)?;
    Ok(PredictionState {
        estimate,
        step: state.step + 1,
        last_error: Some(err),
    })
}

pub(crate) fn row_norms(diff: &Tensor) -> Vec<f64> {
    let c = diff.cols();
    diff.data()
        .chunks(c)
        .map(|row| crate::math::sqrt(crate::math::norm_sq(row)))
        .collect()
}

pub fn error_stats(h: &Tensor, estimates: &Tensor) -> Result<ErrorStats> {
    if h.shape() != estimates.shape() || h.rank() != 2 {
        return Err(Error::ShapeMismatch {
            op: "error_stats",
            lhs: h.shape().to_vec(),
            rhs: estimates.shape().to_vec(),
        });
    }
    let diff = crate::tensor::zip_broadcast("error_stats", h, estimates, |x, y| x - y)?;
    ErrorStats::from_norms(row_norms(&diff))
}

pub fn init_params<R: rand_core::RngCore + ?Sized>(
    store: &mut ParameterStore,
    prefix: &str,
    input: usize,
    width: usize,
    rng: &mut R,
) -> Result<()> {
    store.insert(&format!("{prefix}.w1"), crate::model::glorot(rng, input, width), true)?;
    store.insert(&format!("{prefix}.b1"), Tensor::zeros(vec![width]), true)?;
    store.insert(&format!("{prefix}.w2"), crate::model::glorot(rng, width, width), true)?;
    store.insert(&format!("{prefix}.b2"), Tensor::zeros(vec![width]), true)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::tanh;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn v(d: &[f64]) -> Tensor {
        Tensor::vector(d.to_vec()).unwrap()
    }

    fn rand_vec(rng: &mut ChaCha8Rng, n: usize) -> Tensor {
        v(&(0..n).map(|_| crate::rng::uniform(rng, -1.0, 1.0)).collect::<Vec<_>>())
    }

    fn stores(d: usize, seed: u64) -> ParameterStore {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut s = ParameterStore::new();
        init_params(&mut s, "pred", 2 * d, d, &mut rng).unwrap();
        init_params(&mut s, "refine", 3 * d, d, &mut rng).unwrap();
        // nonzero biases so the oracle exercises them
        for n in ["pred.b1", "pred.b2", "refine.b1", "refine.b2"] {
            s.set(n, rand_vec(&mut rng, d)).unwrap();
        }
        s
    }

    fn zeroed(mut s: ParameterStore, prefix: &str) -> ParameterStore {
        for leaf in ["w1", "b1", "w2", "b2"] {
            let n = format!("{prefix}.{leaf}");
            let shape = s.get(&n).unwrap().shape().to_vec();
            s.set(&n, Tensor::zeros(shape)).unwrap();
        }
        s
    }

    // straight-line two-layer perceptron
    fn mlp(s: &ParameterStore, prefix: &str, x: &[f64]) -> Vec<f64> {
        let affine = |w: &Tensor, b: &Tensor, x: &[f64]| -> Vec<f64> {
            let n = w.cols();
            (0..n)
                .map(|j| b.data()[j] + x.iter().enumerate().map(|(i, xi)| xi * w.data()[i * n + j]).sum::<f64>())
                .collect()
        };
        let g = |l: &str| s.get(&format!("{prefix}.{l}")).unwrap();
        let hidden: Vec<f64> = affine(g("w1"), g("b1"), x).into_iter().map(tanh).collect();
        affine(g("w2"), g("b2"), &hidden)
    }

    #[test]
    fn zero_weights_predict_zero() {
        let s = zeroed(stores(3, 1), "pred");
        let p = predict_init(&v(&[1., 2., 3.]), &v(&[4., 5., 6.]), &s, "pred").unwrap();
        assert_eq!(p.estimate.data(), &[0., 0., 0.]);
        assert_eq!(p.step, 0);
    }

    #[test]
    fn duplicated_input_matches_oracle() {
        let s = stores(3, 2);
        let a = v(&[0.1, -0.5, 0.9]);
        let p = predict_init(&a, &a, &s, "pred").unwrap();
        let mut x = a.data().to_vec();
        x.extend_from_slice(a.data());
        let want = mlp(&s, "pred", &x);
        for (g, w) in p.estimate.data().iter().zip(&want) {
            assert!((g - w).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_refiner_keeps_estimate() {
        let s = zeroed(stores(3, 3), "refine");
        let (a, r, h) = (v(&[0.1, 0.2, 0.3]), v(&[0.3, 0.2, 0.1]), v(&[1., 1., 1.]));
        let p0 = predict_init(&a, &r, &s, "pred").unwrap();
        let p1 = refine_step(&a, &r, &h, &p0, &s, "refine", 2).unwrap();
        let p2 = refine_step(&a, &r, &h, &p1, &s, "refine", 2).unwrap();
        assert_eq!(p2.estimate, p0.estimate);
        assert_eq!(p2.step, 2);
        assert_eq!(
            refine_step(&a, &r, &h, &p2, &s, "refine", 2),
            Err(Error::RefinementExhausted(2))
        );
    }

    #[test]
    fn exact_estimate_feeds_zero_error_slice() {
        let s = stores(2, 4);
        let (a, r) = (v(&[0.4, -0.1]), v(&[0.2, 0.6]));
        let p0 = predict_init(&a, &r, &s, "pred").unwrap();
        let h = p0.estimate.clone();
        let p1 = refine_step(&a, &r, &h, &p0, &s, "refine", 1).unwrap();
        let mut x = a.data().to_vec();
        x.extend_from_slice(r.data());
        x.extend_from_slice(&[0.0, 0.0]);
        let delta = mlp(&s, "refine", &x);
        for i in 0..2 {
            assert!((p1.estimate.data()[i] - (h.data()[i] + delta[i])).abs() < 1e-12);
        }
    }

    #[test]
    fn two_steps_match_manual_unroll() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let s = stores(4, 5);
        let (a, r, h) = (rand_vec(&mut rng, 4), rand_vec(&mut rng, 4), rand_vec(&mut rng, 4));
        let mut state = predict_init(&a, &r, &s, "pred").unwrap();
        for _ in 0..2 {
            state = refine_step(&a, &r, &h, &state, &s, "refine", 2).unwrap();
        }
        let mut x = a.data().to_vec();
        x.extend_from_slice(r.data());
        let mut est = mlp(&s, "pred", &x);
        for _ in 0..2 {
            let mut x = a.data().to_vec();
            x.extend_from_slice(r.data());
            x.extend(h.data().iter().zip(&est).map(|(h, e)| h - e));
            let d = mlp(&s, "refine", &x);
            est = est.iter().zip(&d).map(|(e, d)| e + d).collect();
        }
        for (g, w) in state.estimate.data().iter().zip(&est) {
            assert!((g - w).abs() < 1e-12);
        }
        let err = state.last_error.unwrap();
        for i in 0..4 {
            assert!((err.data()[i] - (h.data()[i] - est[i])).abs() < 1e-12);
        }
    }

    #[test]
    fn error_stats_examples() {
        let h = Tensor::matrix(2, 2, vec![1., 2., 3., 4.]).unwrap();
        let s = error_stats(&h, &h).unwrap();
        assert_eq!(s.per_token_error_norm.data(), &[0., 0.]);
        assert_eq!(s.mean_error, 0.0);
        let est = Tensor::matrix(2, 2, vec![-2., -2., 3., 4.]).unwrap();
        let s = error_stats(&h, &est).unwrap();
        assert_eq!(s.per_token_error_norm.data(), &[5., 0.]);
        assert_eq!(s.mean_error, 2.5);
        assert!(error_stats(&h, &Tensor::zeros(vec![2, 3])).is_err());
    }

    #[test]
    fn error_stats_random_batch() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let h = Tensor::matrix(5, 3, (0..15).map(|_| crate::rng::uniform(&mut rng, -1., 1.)).collect()).unwrap();
        let e = Tensor::matrix(5, 3, (0..15).map(|_| crate::rng::uniform(&mut rng, -1., 1.)).collect()).unwrap();
        let s = error_stats(&h, &e).unwrap();
        for t in 0..5 {
            let want = (0..3)
                .map(|j| (h.row(t)[j] - e.row(t)[j]).powi(2))
                .sum::<f64>()
                .sqrt();
            assert!((s.per_token_error_norm.data()[t] - want).abs() < 1e-12);
            assert!(s.per_token_error_norm.data()[t] >= 0.0);
        }
    }
}
