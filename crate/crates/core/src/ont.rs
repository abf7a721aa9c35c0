//! Orthogonal Novelty Transport.
//!
//! For a chunk summary `c` and reference state `m`, the aligned part `P_m(c)` is
//! the projection of `c` onto `span(m)` (zero when `m = 0`) and the novelty
//! `N_m(c) = c − P_m(c)` is what `m` does not already carry. The transport
//! `T_α(c, m) = c + α·N_m(c)` amplifies only the novelty, which keeps
//! `⟨T, m⟩ = ⟨c, m⟩` and makes `T` the closest point to the unconstrained target
//! `Y_α(c) = (1 + α)·c` on that affine constraint set.
//!
//! Everything here is exact-arithmetic geometry on plain vectors; the
//! differentiable version used inside the model lives in [`crate::memory`].

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math::{dot, norm_sq, sqrt};
use crate::tensor::Tensor;

/// Reference norms below this are treated as the zero reference.
pub const ZERO_REFERENCE_NORM: f64 = 1e-30;

#[derive(Debug, Clone, PartialEq)]
pub struct NoveltyDecomposition {
    pub aligned: Tensor,
    pub novelty: Tensor,
    /// `‖m‖²`.
    pub reference_norm_sq: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransportResult {
    pub transported: Tensor,
    pub alpha: f64,
    pub decomposition: NoveltyDecomposition,
}

fn check_pair(c: &Tensor, m: &Tensor) -> Result<()> {
    if c.rank() != 1 || c.shape() != m.shape() {
        return Err(Error::ShapeMismatch {
            op: "ont",
            lhs: c.shape().to_vec(),
            rhs: m.shape().to_vec(),
        });
    }
    Ok(())
}

/// Whether `m` is the zero reference for ONT purposes.
pub fn is_zero_reference(m: &[f64]) -> bool {
    let nn = norm_sq(m);
    nn == 0.0 || sqrt(nn) < ZERO_REFERENCE_NORM
}

fn vec_of(data: Vec<f64>) -> Tensor {
    let n = data.len();
    Tensor::from_parts(alloc::vec![n], data)
}

/// `P_m(c)`.
pub fn ont_proj(c: &Tensor, m: &Tensor) -> Result<Tensor> {
    check_pair(c, m)?;
    if is_zero_reference(m.data()) {
        return Ok(Tensor::zeros(c.shape().to_vec()));
    }
    let coef = dot(c.data(), m.data()) / norm_sq(m.data());
    Ok(vec_of(m.data().iter().map(|x| coef * x).collect()))
}

/// `N_m(c) = c − P_m(c)`.
pub fn ont_novelty(c: &Tensor, m: &Tensor) -> Result<Tensor> {
    Ok(decompose(c, m)?.novelty)
}

pub fn decompose(c: &Tensor, m: &Tensor) -> Result<NoveltyDecomposition> {
    let aligned = ont_proj(c, m)?;
    let novelty = vec_of(
        c.data()
            .iter()
            .zip(aligned.data())
            .map(|(x, p)| x - p)
            .collect(),
    );
    Ok(NoveltyDecomposition {
        aligned,
        novelty,
        reference_norm_sq: norm_sq(m.data()),
    })
}

/// `T_α(c, m) = c + α·N_m(c)`; for the zero reference this is `(1 + α)·c`.
/// Any real `α` is accepted here; the model restricts it to `α ≥ 0`.
pub fn ont_transport(alpha: f64, c: &Tensor, m: &Tensor) -> Result<TransportResult> {
    let decomposition = decompose(c, m)?;
    let transported = if is_zero_reference(m.data()) {
        vec_of(c.data().iter().map(|x| (1.0 + alpha) * x).collect())
    } else {
        vec_of(
            c.data()
                .iter()
                .zip(decomposition.novelty.data())
                .map(|(x, n)| x + alpha * n)
                .collect(),
        )
    };
    Ok(TransportResult {
        transported,
        alpha,
        decomposition,
    })
}

/// `Y_α(c) = (1 + α)·c`.
pub fn ont_target(alpha: f64, c: &Tensor) -> Tensor {
    Tensor::from_parts(
        c.shape().to_vec(),
        c.data().iter().map(|x| (1.0 + alpha) * x).collect(),
    )
}

/// Closest point to `Y_α(c)` on `{x : ⟨x, m⟩ = ⟨c, m⟩}`, computed directly as an
/// affine projection without going through the novelty decomposition.
pub fn ont_oracle_min(alpha: f64, c: &Tensor, m: &Tensor) -> Result<Tensor> {
    check_pair(c, m)?;
    let y = ont_target(alpha, c);
    if is_zero_reference(m.data()) {
        return Ok(y);
    }
    let shift = (dot(c.data(), m.data()) - dot(y.data(), m.data())) / norm_sq(m.data());
    Ok(vec_of(
        y.data()
            .iter()
            .zip(m.data())
            .map(|(yi, mi)| yi + shift * mi)
            .collect(),
    ))
}

/// `𝒥(x) = ½‖x − c‖² − α·⟨x − c, N_m(c)⟩`.
pub fn ont_write_objective(alpha: f64, c: &Tensor, m: &Tensor, x: &Tensor) -> Result<f64> {
    check_pair(c, m)?;
    check_pair(c, x)?;
    let n = ont_novelty(c, m)?;
    let diff: Vec<f64> = x.data().iter().zip(c.data()).map(|(a, b)| a - b).collect();
    Ok(0.5 * norm_sq(&diff) - alpha * dot(&diff, n.data()))
}

/// `⟨x, m⟩ − ⟨c, m⟩`: zero exactly when `x` is a feasible write.
pub fn feasibility_gap(c: &Tensor, m: &Tensor, x: &Tensor) -> Result<f64> {
    check_pair(c, m)?;
    check_pair(c, x)?;
    Ok(dot(x.data(), m.data()) - dot(c.data(), m.data()))
}
