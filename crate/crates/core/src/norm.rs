//! RMSNorm.

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const DEFAULT_EPS: f64 = 1e-6;

/// `gain ⊙ x / sqrt(mean(x²) + eps)` over the last axis of `x`.
pub fn rmsnorm_var(tape: &mut Tape, x: Var, gain: Var, eps: f64) -> Result<Var> {
    if eps < 0.0 {
        return Err(Error::invalid("rmsnorm eps must be nonnegative"));
    }
    let xs = tape.value(x).shape();
    let width = *xs
        .last()
        .ok_or_else(|| Error::invalid("rmsnorm needs a last axis"))?;
    if tape.value(gain).len() != width {
        return Err(Error::ShapeMismatch {
            op: "rmsnorm",
            lhs: xs.to_vec(),
            rhs: tape.value(gain).shape().to_vec(),
        });
    }
    let sq = tape.mul(x, x)?;
    let ms = tape.mean_last(sq)?;
    let eps = tape.scalar(eps);
    let shifted = tape.add(ms, eps)?;
    let rms = tape.sqrt(shifted)?;
    let inv = tape.recip(rms)?;
    let y = tape.mul(x, inv)?;
    tape.mul(y, gain)
}

pub fn rmsnorm(x: &Tensor, gain: &Tensor, eps: f64) -> Result<Tensor> {
    let mut tape = Tape::inference();
    let xv = tape.constant(x.clone());
    let gv = tape.constant(gain.clone());
    let y = rmsnorm_var(&mut tape, xv, gv, eps)?;
    Ok(tape.value(y).clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn v(d: &[f64]) -> Tensor {
        Tensor::vector(d.to_vec()).unwrap()
    }

    #[test]
    fn unit_rms_is_fixed_point() {
        let y = rmsnorm(&v(&[1., 1., 1., 1.]), &v(&[1., 1., 1., 1.]), 0.0).unwrap();
        assert_eq!(y.data(), &[1., 1., 1., 1.]);
    }

    #[test]
    fn three_four() {
        let y = rmsnorm(&v(&[3., 4.]), &v(&[1., 1.]), 0.0).unwrap();
        let r = libm::sqrt(12.5);
        assert!((y.data()[0] - 3.0 / r).abs() < 1e-15);
        assert!((y.data()[1] - 4.0 / r).abs() < 1e-15);
        assert!((y.data()[0] - 0.8485).abs() < 1e-4);
        assert!((y.data()[1] - 1.1314).abs() < 1e-4);
    }

    #[test]
    fn zero_input_with_eps() {
        let y = rmsnorm(&v(&[0., 0.]), &v(&[1., 1.]), 1e-6).unwrap();
        assert_eq!(y.data(), &[0., 0.]);
    }

    #[test]
    fn rejects_bad_gain_and_scalar() {
        assert!(rmsnorm(&v(&[1., 2.]), &v(&[1.]), 1e-6).is_err());
        assert!(rmsnorm(&Tensor::scalar(1.0), &v(&[1.]), 1e-6).is_err());
    }

    #[test]
    fn rows_normalize_independently() {
        let x = Tensor::matrix(2, 2, vec![3., 4., 1., 1.]).unwrap();
        let y = rmsnorm(&x, &v(&[2., 1.]), 0.0).unwrap();
        let r = libm::sqrt(12.5);
        assert!((y.data()[0] - 6.0 / r).abs() < 1e-15);
        assert_eq!(&y.data()[2..], &[2., 1.]);
    }
}
