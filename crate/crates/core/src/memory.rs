//! Dual-timescale memory.
//!
//! The fast state is a gated recurrent trace updated every token:
//! `m_t = d_t ⊙ m_{t−1} + (1 − d_t) ⊙ u_t` with `d_t = σ(h W_d)`, `u_t = tanh(h W_u)`.
//! The slow state only moves at chunk boundaries, where the mean of the chunk's
//! fast states is transported by ONT against the previous slow state and written
//! through a gate `g = σ(h W_g)` taken at the boundary token. The readout mixes
//! both: `r = [σ(h W_qf) ⊙ m^f ‖ σ(h W_qs) ⊙ m^s] W_r`.
//!
//! Parameters under `{prefix}`: `w_d`, `w_u`, `w_qf`, `w_qs`, `w_g`, `w_c`
//! (all `[d × d]`) and `w_r` (`[2d × d]`). Gates carry no bias.

use alloc::format;
use alloc::vec;

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::ont;
use crate::params::ParameterStore;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct FastState {
    pub value: Tensor,
}

impl FastState {
    pub fn zeros(width: usize) -> Self {
        FastState {
            value: Tensor::zeros(vec![width]),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SlowState {
    pub value: Tensor,
    pub chunk_index: usize,
}

impl SlowState {
    pub fn zeros(width: usize) -> Self {
        SlowState {
            value: Tensor::zeros(vec![width]),
            chunk_index: 0,
        }
    }
}

/// Running sum of fast states within the current chunk.
#[derive(Debug, Clone, PartialEq)]
pub struct ChunkAccumulator {
    running_sum: Tensor,
    count: usize,
    chunk_size: usize,
}

impl ChunkAccumulator {
    pub fn new(width: usize, chunk_size: usize) -> Result<Self> {
        if chunk_size == 0 {
            return Err(Error::invalid("chunk_size must be positive"));
        }
        Ok(ChunkAccumulator {
            running_sum: Tensor::zeros(vec![width]),
            count: 0,
            chunk_size,
        })
    }

    pub(crate) fn from_parts(running_sum: Tensor, count: usize, chunk_size: usize) -> Self {
        ChunkAccumulator {
            running_sum,
            count,
            chunk_size,
        }
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn chunk_size(&self) -> usize {
        self.chunk_size
    }

    pub fn running_sum(&self) -> &Tensor {
        &self.running_sum
    }

    pub fn is_full(&self) -> bool {
        self.count == self.chunk_size
    }

    /// Chunk summary `c = running_sum / count`.
    pub fn mean(&self) -> Result<Tensor> {
        if self.count == 0 {
            return Err(Error::EmptyChunk);
        }
        let k = 1.0 / self.count as f64;
        Ok(crate::tensor::map(&self.running_sum, |x| k * x))
    }

    /// The chunk summary and an emptied accumulator.
    pub fn flush(&self) -> Result<(Tensor, ChunkAccumulator)> {
        let mean = self.mean()?;
        let empty = ChunkAccumulator::new(self.running_sum.len(), self.chunk_size)?;
        Ok((mean, empty))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MemoryReadout {
    pub value: Tensor,
}

pub(crate) fn name(prefix: &str, leaf: &str) -> alloc::string::String {
    format!("{prefix}.{leaf}")
}

/// `d ⊙ prev + (1 − d) ⊙ u` on pre-activated gates.
pub(crate) fn gated_blend(tape: &mut Tape, gate: Var, prev: Var, write: Var) -> Result<Var> {
    let keep = tape.mul(gate, prev)?;
    let one_minus = tape.rsub_scalar(1.0, gate)?;
    let fresh = tape.mul(one_minus, write)?;
    tape.add(keep, fresh)
}

/// Project `h: [n × d]` through a memory weight.
pub(crate) fn project(tape: &mut Tape, store: &ParameterStore, prefix: &str, leaf: &str, h: Var) -> Result<Var> {
    let w = tape.param(store, &name(prefix, leaf))?;
    tape.matmul(h, w)
}

pub fn fast_update_var(
    tape: &mut Tape,
    store: &ParameterStore,
    prefix: &str,
    h: Var,
    prev: Var,
) -> Result<Var> {
    let d = project(tape, store, prefix, "w_d", h)?;
    let d = tape.sigmoid(d)?;
    let u = project(tape, store, prefix, "w_u", h)?;
    let u = tape.tanh(u)?;
    gated_blend(tape, d, prev, u)
}

/// `r = [qf ⊙ fast ‖ qs ⊙ slow] W_r` with the query gates already squashed.
pub(crate) fn read_gated(
    tape: &mut Tape,
    store: &ParameterStore,
    prefix: &str,
    qf: Var,
    fast: Var,
    qs: Var,
    slow: Var,
) -> Result<Var> {
    let f = tape.mul(qf, fast)?;
    let s = tape.mul(qs, slow)?;
    let joined = tape.concat(&[f, s], 1)?;
    project(tape, store, prefix, "w_r", joined)
}

pub fn memory_read_var(
    tape: &mut Tape,
    store: &ParameterStore,
    prefix: &str,
    h: Var,
    fast: Var,
    slow: Var,
) -> Result<Var> {
    let qf = project(tape, store, prefix, "w_qf", h)?;
    let qf = tape.sigmoid(qf)?;
    let qs = project(tape, store, prefix, "w_qs", h)?;
    let qs = tape.sigmoid(qs)?;
    read_gated(tape, store, prefix, qf, fast, qs, slow)
}

/// Differentiable ONT transport of a `[1 × d]` summary against a `[1 × d]` reference.
pub fn ont_transport_var(tape: &mut Tape, alpha: f64, c: Var, m: Var) -> Result<Var> {
    if ont::is_zero_reference(tape.value(m).data()) {
        return tape.scale(c, 1.0 + alpha);
    }
    let cm = tape.mul(c, m)?;
    let dot = tape.sum(cm)?;
    let mm = tape.mul(m, m)?;
    let nn = tape.sum(mm)?;
    let inv = tape.recip(nn)?;
    let coef = tape.mul(dot, inv)?;
    let aligned = tape.mul(m, coef)?;
    let novelty = tape.sub(c, aligned)?;
    let push = tape.scale(novelty, alpha)?;
    tape.add(c, push)
}

/// Slow write from an already squashed gate `g` and chunk summary `c`.
pub(crate) fn slow_write_gated(
    tape: &mut Tape,
    store: &ParameterStore,
    prefix: &str,
    gate: Var,
    summary: Var,
    slow: Var,
    alpha_n: f64,
    ont_enabled: bool,
) -> Result<Var> {
    // α = 0 is the identity transport; skipping it keeps the two paths bit-identical
    let transported = if ont_enabled && alpha_n != 0.0 {
        ont_transport_var(tape, alpha_n, summary, slow)?
    } else {
        summary
    };
    let u = project(tape, store, prefix, "w_c", transported)?;
    let u = tape.tanh(u)?;
    gated_blend(tape, gate, slow, u)
}

#[allow(clippy::too_many_arguments)]
pub fn slow_write_var(
    tape: &mut Tape,
    store: &ParameterStore,
    prefix: &str,
    h_boundary: Var,
    summary: Var,
    slow: Var,
    alpha_n: f64,
    ont_enabled: bool,
) -> Result<Var> {
    let g = project(tape, store, prefix, "w_g", h_boundary)?;
    let g = tape.sigmoid(g)?;
    slow_write_gated(tape, store, prefix, g, summary, slow, alpha_n, ont_enabled)
}

fn row(tape: &mut Tape, v: &Tensor) -> Result<Var> {
    let n = v.len();
    Ok(tape.constant(v.with_shape(vec![1, n])?))
}

fn check_width(h: &Tensor, state: &Tensor) -> Result<()> {
    if h.len() != state.len() {
        return Err(Error::ShapeMismatch {
            op: "memory",
            lhs: h.shape().to_vec(),
            rhs: state.shape().to_vec(),
        });
    }
    Ok(())
}

fn flat(tape: &Tape, v: Var) -> Tensor {
    let t = tape.value(v);
    Tensor::from_parts(vec![t.len()], t.data().to_vec())
}

pub fn fast_update(h: &Tensor, prev: &FastState, params: &ParameterStore, prefix: &str) -> Result<FastState> {
    check_width(h, &prev.value)?;
    let mut tape = Tape::inference();
    let hv = row(&mut tape, h)?;
    let pv = row(&mut tape, &prev.value)?;
    let out = fast_update_var(&mut tape, params, prefix, hv, pv)?;
    Ok(FastState {
        value: flat(&tape, out),
    })
}

pub fn memory_read(
    h: &Tensor,
    fast: &FastState,
    slow: &SlowState,
    params: &ParameterStore,
    prefix: &str,
) -> Result<MemoryReadout> {
    check_width(h, &fast.value)?;
    check_width(h, &slow.value)?;
    let mut tape = Tape::inference();
    let hv = row(&mut tape, h)?;
    let fv = row(&mut tape, &fast.value)?;
    let sv = row(&mut tape, &slow.value)?;
    let out = memory_read_var(&mut tape, params, prefix, hv, fv, sv)?;
    Ok(MemoryReadout {
        value: flat(&tape, out),
    })
}

pub fn accumulate(acc: &ChunkAccumulator, fast: &FastState) -> Result<ChunkAccumulator> {
    if acc.is_full() {
        return Err(Error::ChunkFull(acc.chunk_size));
    }
    check_width(&acc.running_sum, &fast.value)?;
    let sum = crate::tensor::zip_broadcast("accumulate", &acc.running_sum, &fast.value, |a, b| a + b)?;
    Ok(ChunkAccumulator {
        running_sum: sum,
        count: acc.count + 1,
        chunk_size: acc.chunk_size,
    })
}

/// Write the accumulated chunk into the slow state. The caller resets the
/// accumulator afterwards.
pub fn slow_write(
    h_boundary: &Tensor,
    acc: &ChunkAccumulator,
    slow: &SlowState,
    alpha_n: f64,
    ont_enabled: bool,
    params: &ParameterStore,
    prefix: &str,
) -> Result<SlowState> {
    let summary = acc.mean()?;
    check_width(h_boundary, &slow.value)?;
    check_width(&summary, &slow.value)?;
    let mut tape = Tape::inference();
    let hv = row(&mut tape, h_boundary)?;
    let cv = row(&mut tape, &summary)?;
    let sv = row(&mut tape, &slow.value)?;
    let out = slow_write_var(&mut tape, params, prefix, hv, cv, sv, alpha_n, ont_enabled)?;
    Ok(SlowState {
        value: flat(&tape, out),
        chunk_index: slow.chunk_index + 1,
    })
}

pub fn init_params<R: rand_core::RngCore + ?Sized>(
    store: &mut ParameterStore,
    prefix: &str,
    width: usize,
    rng: &mut R,
) -> Result<()> {
    for leaf in ["w_d", "w_u", "w_qf", "w_qs", "w_g", "w_c"] {
        store.insert(&name(prefix, leaf), crate::model::glorot(rng, width, width), true)?;
    }
    store.insert(&name(prefix, "w_r"), crate::model::glorot(rng, 2 * width, width), true)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::{sigmoid, tanh};
    use alloc::vec::Vec;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn v(d: &[f64]) -> Tensor {
        Tensor::vector(d.to_vec()).unwrap()
    }

    fn rand_vec(rng: &mut ChaCha8Rng, n: usize) -> Tensor {
        v(&(0..n).map(|_| crate::rng::uniform(rng, -1.0, 1.0)).collect::<Vec<_>>())
    }

    fn store(width: usize, seed: u64) -> ParameterStore {
        let mut s = ParameterStore::new();
        init_params(&mut s, "mem", width, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        s
    }

    fn zero_store(width: usize) -> ParameterStore {
        let mut s = store(width, 0);
        let names: Vec<_> = s.names().map(alloc::string::String::from).collect();
        for n in names {
            let shape = s.get(&n).unwrap().shape().to_vec();
            s.set(&n, Tensor::zeros(shape)).unwrap();
        }
        s
    }

    // x·W for a row vector x and a row-major [in × out] W
    fn vecmat(x: &[f64], w: &Tensor) -> Vec<f64> {
        let out = w.cols();
        (0..out)
            .map(|j| x.iter().enumerate().map(|(i, xi)| xi * w.data()[i * out + j]).sum())
            .collect()
    }

    #[test]
    fn zero_weights_halve_the_state() {
        let s = zero_store(3);
        let prev = FastState { value: v(&[0.4, -0.8, 1.0]) };
        let out = fast_update(&v(&[1., 2., 3.]), &prev, &s, "mem").unwrap();
        assert_eq!(out.value.data(), &[0.2, -0.4, 0.5]);
    }

    #[test]
    fn full_write_limit() {
        let mut s = store(2, 3);
        // large negative decay logits: d → 0
        s.set("mem.w_d", Tensor::matrix(2, 2, vec![-500., -500., -500., -500.]).unwrap()).unwrap();
        let h = v(&[1.0, 1.0]);
        let out = fast_update(&h, &FastState::zeros(2), &s, "mem").unwrap();
        let u: Vec<f64> = vecmat(h.data(), s.get("mem.w_u").unwrap()).into_iter().map(tanh).collect();
        for (a, b) in out.value.data().iter().zip(&u) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn fast_update_matches_formula() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let s = store(5, 12);
        let h = rand_vec(&mut rng, 5);
        let prev = FastState { value: rand_vec(&mut rng, 5) };
        let out = fast_update(&h, &prev, &s, "mem").unwrap();
        let d = vecmat(h.data(), s.get("mem.w_d").unwrap());
        let u = vecmat(h.data(), s.get("mem.w_u").unwrap());
        for i in 0..5 {
            let di = sigmoid(d[i]);
            let want = di * prev.value.data()[i] + (1.0 - di) * tanh(u[i]);
            assert!((out.value.data()[i] - want).abs() < 1e-12);
        }
    }

    #[test]
    fn read_examples() {
        let s = store(3, 4);
        let h = v(&[0.3, -0.1, 0.9]);
        let r = memory_read(&h, &FastState::zeros(3), &SlowState::zeros(3), &s, "mem").unwrap();
        assert_eq!(r.value.data(), &[0.0, 0.0, 0.0]);

        // with slow forced to zero only the fast half of W_r contributes
        let fast = FastState { value: v(&[0.5, -0.5, 0.25]) };
        let r = memory_read(&h, &fast, &SlowState::zeros(3), &s, "mem").unwrap();
        let mut s2 = s.clone();
        let wr = s.get("mem.w_r").unwrap();
        let mut scrambled = wr.data().to_vec();
        for x in scrambled[9..].iter_mut() {
            *x = 7.0;
        }
        s2.set("mem.w_r", Tensor::matrix(6, 3, scrambled).unwrap()).unwrap();
        let r2 = memory_read(&h, &fast, &SlowState::zeros(3), &s2, "mem").unwrap();
        assert_eq!(r.value, r2.value);
    }

    #[test]
    fn read_matches_formula() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let s = store(4, 22);
        let h = rand_vec(&mut rng, 4);
        let fast = FastState { value: rand_vec(&mut rng, 4) };
        let slow = SlowState { value: rand_vec(&mut rng, 4), chunk_index: 3 };
        let r = memory_read(&h, &fast, &slow, &s, "mem").unwrap();
        let qf = vecmat(h.data(), s.get("mem.w_qf").unwrap());
        let qs = vecmat(h.data(), s.get("mem.w_qs").unwrap());
        let mut joined = Vec::new();
        for i in 0..4 {
            joined.push(sigmoid(qf[i]) * fast.value.data()[i]);
        }
        for i in 0..4 {
            joined.push(sigmoid(qs[i]) * slow.value.data()[i]);
        }
        let want = vecmat(&joined, s.get("mem.w_r").unwrap());
        for (a, b) in r.value.data().iter().zip(&want) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn accumulator_means() {
        let acc = ChunkAccumulator::new(2, 2).unwrap();
        let acc = accumulate(&acc, &FastState { value: v(&[1., 1.]) }).unwrap();
        let acc = accumulate(&acc, &FastState { value: v(&[3., 3.]) }).unwrap();
        let (mean, empty) = acc.flush().unwrap();
        assert_eq!(mean.data(), &[2., 2.]);
        assert_eq!(empty.count(), 0);
        assert_eq!(
            accumulate(&acc, &FastState { value: v(&[0., 0.]) }),
            Err(Error::ChunkFull(2))
        );

        let acc = ChunkAccumulator::new(2, 4).unwrap();
        let one = accumulate(&acc, &FastState { value: v(&[0.7, -0.2]) }).unwrap();
        assert_eq!(one.mean().unwrap().data(), &[0.7, -0.2]);
        assert_eq!(acc.mean(), Err(Error::EmptyChunk));

        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let xs: Vec<Tensor> = (0..4).map(|_| rand_vec(&mut rng, 3)).collect();
        let mut acc = ChunkAccumulator::new(3, 4).unwrap();
        for x in &xs {
            acc = accumulate(&acc, &FastState { value: x.clone() }).unwrap();
        }
        let mean = acc.mean().unwrap();
        for j in 0..3 {
            let want = xs.iter().map(|x| x.data()[j]).sum::<f64>() / 4.0;
            assert!((mean.data()[j] - want).abs() < 1e-14);
        }
    }

    fn filled(values: &[&[f64]], chunk: usize) -> ChunkAccumulator {
        let mut acc = ChunkAccumulator::new(values[0].len(), chunk).unwrap();
        for x in values {
            acc = accumulate(&acc, &FastState { value: v(x) }).unwrap();
        }
        acc
    }

    #[test]
    fn first_write_amplifies_summary() {
        let s = store(3, 8);
        let acc = filled(&[&[0.2, -0.4, 0.6], &[0.4, 0.0, 0.2]], 2);
        let h = v(&[0.1, 0.2, 0.3]);
        let alpha = 0.5;
        let out = slow_write(&h, &acc, &SlowState::zeros(3), alpha, true, &s, "mem").unwrap();
        assert_eq!(out.chunk_index, 1);
        // independent evaluation with c* = (1 + α)·c
        let c: Vec<f64> = acc.mean().unwrap().data().iter().map(|x| (1.0 + alpha) * x).collect();
        let g = vecmat(h.data(), s.get("mem.w_g").unwrap());
        let u = vecmat(&c, s.get("mem.w_c").unwrap());
        for i in 0..3 {
            let want = (1.0 - sigmoid(g[i])) * tanh(u[i]);
            assert!((out.value.data()[i] - want).abs() < 1e-12);
        }
    }

    #[test]
    fn retain_gate_limit_keeps_old_state() {
        let mut s = store(2, 9);
        s.set("mem.w_g", Tensor::matrix(2, 2, vec![400., 400., 400., 400.]).unwrap()).unwrap();
        let slow = SlowState { value: v(&[0.3, -0.7]), chunk_index: 4 };
        let acc = filled(&[&[0.9, 0.9]], 1);
        let out = slow_write(&v(&[1.0, 1.0]), &acc, &slow, 0.5, true, &s, "mem").unwrap();
        assert!(out.value.max_abs_diff(&slow.value) < 1e-12);
        assert_eq!(out.chunk_index, 5);
    }

    #[test]
    fn zero_alpha_matches_disabled_ont() {
        let s = store(3, 10);
        let slow = SlowState { value: v(&[0.3, -0.7, 0.1]), chunk_index: 1 };
        let acc = filled(&[&[0.2, 0.5, -0.1], &[0.0, 0.1, 0.3]], 2);
        let h = v(&[0.5, 0.5, -0.5]);
        let a = slow_write(&h, &acc, &slow, 0.0, true, &s, "mem").unwrap();
        let b = slow_write(&h, &acc, &slow, 0.0, false, &s, "mem").unwrap();
        assert_eq!(a, b);
        let c = slow_write(&h, &acc, &slow, 0.5, true, &s, "mem").unwrap();
        assert_ne!(a.value, c.value);
        let empty = ChunkAccumulator::new(3, 2).unwrap();
        assert_eq!(slow_write(&h, &empty, &slow, 0.5, true, &s, "mem"), Err(Error::EmptyChunk));
    }

    #[test]
    fn tape_transport_agrees_with_geometry() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for _ in 0..50 {
            let c = rand_vec(&mut rng, 6);
            let m = rand_vec(&mut rng, 6);
            let alpha = crate::rng::uniform(&mut rng, -2.0, 4.0);
            let want = ont::ont_transport(alpha, &c, &m).unwrap().transported;
            let mut tape = Tape::inference();
            let cv = tape.constant(c.with_shape(vec![1, 6]).unwrap());
            let mv = tape.constant(m.with_shape(vec![1, 6]).unwrap());
            let out = ont_transport_var(&mut tape, alpha, cv, mv).unwrap();
            assert!(tape.value(out).max_abs_diff(&want) < 1e-12);
        }
    }

    #[test]
    fn width_mismatch() {
        let s = store(3, 1);
        assert!(fast_update(&v(&[1., 2.]), &FastState::zeros(3), &s, "mem").is_err());
        assert!(memory_read(&v(&[1., 2.]), &FastState::zeros(3), &SlowState::zeros(3), &s, "mem").is_err());
    }
}
