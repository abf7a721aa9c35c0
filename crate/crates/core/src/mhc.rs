//! Multi-stream residual routing.
//!
//! The residual is lifted into `S` streams with per-stream scalars `pre`, mixed
//! across streams by a Sinkhorn-normalized transport `P = sinkhorn(logits)`, and
//! collapsed with per-stream scalars `post` before the block update is added:
//! `out = Σᵢ postᵢ · (P · (pre ⊗ h))ᵢ + update`.
//!
//! Parameters live at `{prefix}.pre: [S]`, `{prefix}.post: [S]` and
//! `{prefix}.logits: [S × S]`.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::math::exp;
use crate::params::ParameterStore;
use crate::rng::uniform;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct TransportMatrix {
    pub matrix: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MixWeights {
    pub pre_mix: Tensor,
    pub post_mix: Tensor,
    pub transport_logits: Tensor,
}

impl MixWeights {
    pub fn streams(&self) -> usize {
        self.pre_mix.len()
    }

    pub fn from_store(store: &ParameterStore, prefix: &str) -> Result<Self> {
        Ok(MixWeights {
            pre_mix: store.require(&format!("{prefix}.pre"))?.clone(),
            post_mix: store.require(&format!("{prefix}.post"))?.clone(),
            transport_logits: store.require(&format!("{prefix}.logits"))?.clone(),
        })
    }

    fn validate(&self) -> Result<()> {
        let s = self.streams();
        if s < 2 {
            return Err(Error::invalid("stream routing needs at least two streams"));
        }
        if self.post_mix.len() != s || self.transport_logits.shape() != [s, s] {
            return Err(Error::ShapeMismatch {
                op: "mhc",
                lhs: self.pre_mix.shape().to_vec(),
                rhs: self.transport_logits.shape().to_vec(),
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StreamState {
    /// `[S × d]`.
    pub streams: Tensor,
}

fn check_logits(logits: &Tensor, iters: usize) -> Result<usize> {
    if iters < 1 {
        return Err(Error::invalid("sinkhorn needs at least one iteration"));
    }
    if logits.rank() != 2 || logits.rows() != logits.cols() {
        return Err(Error::InvalidShape {
            shape: logits.shape().to_vec(),
            len: logits.len(),
        });
    }
    if !logits.is_finite() {
        return Err(Error::NonFinite("sinkhorn logits"));
    }
    Ok(logits.rows())
}

pub fn sinkhorn_normalize(logits: &Tensor, iters: usize) -> Result<TransportMatrix> {
    let s = check_logits(logits, iters)?;
    let mut m: Vec<f64> = logits.data().iter().map(|&x| exp(x)).collect();
    for _ in 0..iters {
        for row in m.chunks_mut(s) {
            let total: f64 = row.iter().sum();
            row.iter_mut().for_each(|x| *x /= total);
        }
        for j in 0..s {
            let total: f64 = (0..s).map(|i| m[i * s + j]).sum();
            for i in 0..s {
                m[i * s + j] /= total;
            }
        }
    }
    if m.iter().any(|x| !x.is_finite() || *x <= 0.0) {
        return Err(Error::NonFinite("sinkhorn"));
    }
    Ok(TransportMatrix {
        matrix: Tensor::from_parts(vec![s, s], m),
    })
}

/// Unrolled Sinkhorn on the tape; the same sequence of operations as
/// [`sinkhorn_normalize`].
pub fn sinkhorn_var(tape: &mut Tape, logits: Var, iters: usize) -> Result<Var> {
    let s = check_logits(tape.value(logits), iters)?;
    let mut m = tape.exp(logits)?;
    for _ in 0..iters {
        let rows = tape.sum_axis(m, 1)?;
        let inv = tape.recip(rows)?;
        m = tape.mul(m, inv)?;
        let cols = tape.sum_axis(m, 0)?;
        let inv = tape.recip(cols)?;
        m = tape.mul(m, inv)?;
    }
    debug_assert_eq!(tape.shape(m), [s, s]);
    Ok(m)
}

pub fn lift(h_in: &Tensor, pre_mix: &Tensor) -> StreamState {
    let d = h_in.len();
    let mut streams = Vec::with_capacity(pre_mix.len() * d);
    for &p in pre_mix.data() {
        streams.extend(h_in.data().iter().map(|x| p * x));
    }
    StreamState {
        streams: Tensor::from_parts(vec![pre_mix.len(), d], streams),
    }
}

pub fn mhc_route(h_in: &Tensor, block_update: &Tensor, w: &MixWeights, iters: usize) -> Result<Tensor> {
    w.validate()?;
    if h_in.shape() != block_update.shape() {
        return Err(Error::ShapeMismatch {
            op: "mhc_route",
            lhs: h_in.shape().to_vec(),
            rhs: block_update.shape().to_vec(),
        });
    }
    let p = sinkhorn_normalize(&w.transport_logits, iters)?;
    let lifted = lift(h_in, &w.pre_mix);
    let routed = crate::tensor::matmul(&p.matrix, &lifted.streams)?;
    let post = w.post_mix.with_shape(vec![1, w.streams()])?;
    let collapsed = crate::tensor::matmul(&post, &routed)?;
    let out = collapsed
        .data()
        .iter()
        .zip(block_update.data())
        .map(|(a, b)| a + b)
        .collect();
    Ok(Tensor::from_parts(h_in.shape().to_vec(), out))
}

/// Route every row of `x: [T × d]` and add `update: [T × d]`.
pub(crate) fn route_var(
    tape: &mut Tape,
    store: &ParameterStore,
    prefix: &str,
    iters: usize,
    x: Var,
    update: Var,
) -> Result<Var> {
    let shape = tape.shape(x).to_vec();
    let pre = tape.param(store, &format!("{prefix}.pre"))?;
    let post = tape.param(store, &format!("{prefix}.post"))?;
    let logits = tape.param(store, &format!("{prefix}.logits"))?;
    let s = tape.value(pre).len();
    if s < 2 {
        return Err(Error::invalid("stream routing needs at least two streams"));
    }
    let p = sinkhorn_var(tape, logits, iters)?;
    let flat = tape.reshape(x, &[1, shape.iter().product()])?;
    let pre_col = tape.reshape(pre, &[s, 1])?;
    let streams = tape.matmul(pre_col, flat)?;
    let routed = tape.matmul(p, streams)?;
    let post_row = tape.reshape(post, &[1, s])?;
    let collapsed = tape.matmul(post_row, routed)?;
    let collapsed = tape.reshape(collapsed, &shape)?;
    tape.add(collapsed, update)
}

pub fn init_params<R: rand_core::RngCore + ?Sized>(
    store: &mut ParameterStore,
    prefix: &str,
    streams: usize,
    rng: &mut R,
) -> Result<()> {
    let pre = (0..streams).map(|_| 1.0 + uniform(rng, -0.1, 0.1)).collect();
    let post = (0..streams)
        .map(|_| 1.0 / streams as f64 + uniform(rng, -0.02, 0.02))
        .collect();
    let logits = (0..streams * streams).map(|_| uniform(rng, -0.1, 0.1)).collect();
    store.insert(&format!("{prefix}.pre"), Tensor::from_parts(vec![streams], pre), true)?;
    store.insert(&format!("{prefix}.post"), Tensor::from_parts(vec![streams], post), true)?;
    store.insert(
        &format!("{prefix}.logits"),
        Tensor::from_parts(vec![streams, streams], logits),
        true,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], d: &[f64]) -> Tensor {
        Tensor::new(shape.to_vec(), d.to_vec()).unwrap()
    }

    #[test]
    fn uniform_logits() {
        let p = sinkhorn_normalize(&Tensor::zeros(vec![2, 2]), 1).unwrap();
        assert_eq!(p.matrix.data(), &[0.5; 4]);
    }

    #[test]
    fn dominant_diagonal_tends_to_identity() {
        let logits = t(&[3, 3], &[8., 0., 0., 0., 8., 0., 0., 0., 8.]);
        let p = sinkhorn_normalize(&logits, 50).unwrap();
        for i in 0..3 {
            assert!((p.matrix.data()[i * 4] - 1.0).abs() < 1e-3);
        }
    }

    #[test]
    fn degenerate_weights_recover_plain_residual() {
        let h = t(&[3], &[0.5, -1.0, 2.0]);
        let u = t(&[3], &[0.1, 0.2, 0.3]);
        let w = MixWeights {
            pre_mix: t(&[2], &[1., 0.]),
            post_mix: t(&[2], &[1., 0.]),
            transport_logits: t(&[2, 2], &[40., 0., 0., 40.]),
        };
        let out = mhc_route(&h, &u, &w, 20).unwrap();
        for i in 0..3 {
            assert!((out.data()[i] - (h.data()[i] + u.data()[i])).abs() < 1e-12);
        }

        let w = MixWeights {
            pre_mix: t(&[2], &[1., 1.]),
            post_mix: t(&[2], &[0.5, 0.5]),
            transport_logits: Tensor::zeros(vec![2, 2]),
        };
        let out = mhc_route(&h, &u, &w, 3).unwrap();
        for i in 0..3 {
            assert!((out.data()[i] - (h.data()[i] + u.data()[i])).abs() < 1e-15);
        }
    }

    #[test]
    fn tape_matches_values() {
        let logits = t(&[3, 3], &[0.3, -1.2, 2.0, 0.1, 0.0, -0.4, 1.5, 0.7, -2.2]);
        let p = sinkhorn_normalize(&logits, 7).unwrap();
        let mut tape = Tape::inference();
        let l = tape.constant(logits);
        let v = sinkhorn_var(&mut tape, l, 7).unwrap();
        assert!(tape.value(v).max_abs_diff(&p.matrix) < 1e-15);
    }

    #[test]
    fn errors() {
        assert!(sinkhorn_normalize(&Tensor::zeros(vec![2, 2]), 0).is_err());
        assert!(sinkhorn_normalize(&Tensor::from_parts(vec![2, 2], vec![0., f64::INFINITY, 0., 0.]), 1).is_err());
        let w = MixWeights {
            pre_mix: t(&[1], &[1.]),
            post_mix: t(&[1], &[1.]),
            transport_logits: t(&[1, 1], &[0.]),
        };
        assert!(mhc_route(&t(&[2], &[1., 1.]), &t(&[2], &[1., 1.]), &w, 1).is_err());
    }

    #[test]
    fn routing_gradients() {
        use crate::gradcheck::grad_check;
        use rand_chacha::rand_core::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        let mut store = ParameterStore::new();
        init_params(&mut store, "m", 3, &mut rng).unwrap();
        let x: Vec<f64> = (0..8).map(|_| uniform(&mut rng, -1.0, 1.0)).collect();
        let u: Vec<f64> = (0..8).map(|_| uniform(&mut rng, -1.0, 1.0)).collect();
        store.insert("x", Tensor::from_parts(vec![2, 4], x), true).unwrap();
        store.insert("u", Tensor::from_parts(vec![2, 4], u), true).unwrap();
        let weights: Vec<f64> = (0..8).map(|i| 0.3 * i as f64 - 1.0).collect();
        let report = grad_check(
            |tape, s| {
                let x = tape.param(s, "x")?;
                let u = tape.param(s, "u")?;
                let out = route_var(tape, s, "m", 20, x, u)?;
                let w = tape.constant(Tensor::from_parts(vec![2, 4], weights.clone()));
                let p = tape.mul(out, w)?;
                tape.sum(p)
            },
            &store,
            1e-6,
            1e-4,
        )
        .unwrap();
        assert!(report.pass, "{report:?}");
    }

    #[test]
    fn tape_routing_matches_vector_routing() {
        use rand_chacha::rand_core::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        let mut store = ParameterStore::new();
        init_params(&mut store, "m", 4, &mut rng).unwrap();
        let w = MixWeights::from_store(&store, "m").unwrap();
        let x: Vec<f64> = (0..6).map(|_| uniform(&mut rng, -1.0, 1.0)).collect();
        let u: Vec<f64> = (0..6).map(|_| uniform(&mut rng, -1.0, 1.0)).collect();
        let mut tape = Tape::inference();
        let xv = tape.constant(Tensor::from_parts(vec![2, 3], x.clone()));
        let uv = tape.constant(Tensor::from_parts(vec![2, 3], u.clone()));
        let out = route_var(&mut tape, &store, "m", 20, xv, uv).unwrap();
        for row in 0..2 {
            let h = Tensor::from_parts(vec![3], x[row * 3..row * 3 + 3].to_vec());
            let b = Tensor::from_parts(vec![3], u[row * 3..row * 3 + 3].to_vec());
            let want = mhc_route(&h, &b, &w, 20).unwrap();
            for (a, b) in tape.value(out).row(row).iter().zip(want.data()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }
}
