//! Stochastic gradient descent with momentum and global-norm clipping.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::autodiff::Gradients;
use crate::error::{Error, Result};
use crate::params::ParameterStore;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct SgdConfig {
    pub lr: f64,
    pub momentum: f64,
    /// Global gradient-norm ceiling; `0` disables clipping.
    pub clip: f64,
}

impl Default for SgdConfig {
    fn default() -> Self {
        SgdConfig {
            lr: 3e-4,
            momentum: 0.9,
            clip: 1.0,
        }
    }
}

impl SgdConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::invalid("learning rate must be positive"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::invalid("momentum must lie in [0, 1)"));
        }
        if !(self.clip >= 0.0) {
            return Err(Error::invalid("clip must be nonnegative"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepStats {
    /// Global norm before clipping.
    pub grad_norm: f64,
    /// Factor the gradient was multiplied by.
    pub clip_scale: f64,
}

#[derive(Debug, Clone)]
pub struct Sgd {
    cfg: SgdConfig,
    velocity: BTreeMap<String, Vec<f64>>,
}

impl Sgd {
    pub fn new(cfg: SgdConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Sgd {
            cfg,
            velocity: BTreeMap::new(),
        })
    }

    pub fn config(&self) -> &SgdConfig {
        &self.cfg
    }

    /// Apply one update. Frozen parameters are never touched.
    pub fn step(&mut self, store: &mut ParameterStore, grads: &Gradients) -> Result<StepStats> {
        let grad_norm = grads.global_norm();
        if !grad_norm.is_finite() {
            return Err(Error::NonFinite("gradient"));
        }
        let clip_scale = if self.cfg.clip > 0.0 && grad_norm > self.cfg.clip {
            self.cfg.clip / grad_norm
        } else {
            1.0
        };
        for (name, g) in grads.iter() {
            if !store.is_trainable(name) {
                continue;
            }
            let values = store
                .data_mut(name)
                .ok_or_else(|| Error::MissingParameter(name.to_string()))?;
            if values.len() != g.len() {
                return Err(Error::ShapeMismatch {
                    op: "sgd",
                    lhs: alloc::vec![values.len()],
                    rhs: g.shape().to_vec(),
                });
            }
            let v = self
                .velocity
                .entry(name.to_string())
                .or_insert_with(|| alloc::vec![0.0; g.len()]);
            for ((p, vi), gi) in values.iter_mut().zip(v.iter_mut()).zip(g.data()) {
                *vi = self.cfg.momentum * *vi + clip_scale * gi;
                *p -= self.cfg.lr * *vi;
            }
        }
        Ok(StepStats { grad_norm, clip_scale })
    }
}

/// Elementwise mean of several gradient sets, summed in the order given.
pub fn average(sets: &[Gradients]) -> Gradients {
    let mut sums: BTreeMap<String, Tensor> = BTreeMap::new();
    let mut order: Vec<String> = Vec::new();
    for set in sets {
        for (name, g) in set.iter() {
            match sums.get_mut(name) {
                Some(acc) => {
                    for (a, b) in acc.data_mut().iter_mut().zip(g.data()) {
                        *a += b;
                    }
                }
                None => {
                    order.push(name.to_string());
                    sums.insert(name.to_string(), g.clone());
                }
            }
        }
    }
    let k = 1.0 / sets.len().max(1) as f64;
    let entries = order
        .into_iter()
        .map(|name| {
            let g = sums.remove(&name).unwrap();
            let scaled = crate::tensor::map(&g, |x| x * k);
            (name, scaled)
        })
        .collect();
    Gradients::from_entries(entries)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn store() -> ParameterStore {
        let mut s = ParameterStore::new();
        s.insert("a", Tensor::vector(vec![1.0, 2.0]).unwrap(), true).unwrap();
        s.insert("b", Tensor::vector(vec![5.0]).unwrap(), false).unwrap();
        s
    }

    fn grads(a: [f64; 2], b: f64) -> Gradients {
        Gradients::from_entries(vec![
            ("a".to_string(), Tensor::vector(a.to_vec()).unwrap()),
            ("b".to_string(), Tensor::vector(vec![b]).unwrap()),
        ])
    }

    #[test]
    fn momentum_update() {
        let mut s = store();
        let mut opt = Sgd::new(SgdConfig { lr: 0.1, momentum: 0.5, clip: 0.0 }).unwrap();
        opt.step(&mut s, &grads([1.0, -1.0], 3.0)).unwrap();
        opt.step(&mut s, &grads([1.0, -1.0], 3.0)).unwrap();
        // v1 = g, v2 = 1.5 g
        let a = s.get("a").unwrap().data();
        assert!((a[0] - (1.0 - 0.25)).abs() < 1e-15);
        assert!((a[1] - (2.0 + 0.25)).abs() < 1e-15);
        assert_eq!(s.get("b").unwrap().data(), &[5.0]);
    }

    #[test]
    fn clipping() {
        let mut s = store();
        let mut opt = Sgd::new(SgdConfig { lr: 1.0, momentum: 0.0, clip: 1.0 }).unwrap();
        let st = opt.step(&mut s, &grads([3.0, 4.0], 0.0)).unwrap();
        assert_eq!(st.grad_norm, 5.0);
        let a = s.get("a").unwrap().data();
        assert!((a[0] - 0.4).abs() < 1e-15 && (a[1] - 1.2).abs() < 1e-15);
    }

    #[test]
    fn averaging() {
        let m = average(&[grads([1.0, 2.0], 0.0), grads([3.0, 4.0], 2.0)]);
        assert_eq!(m.get("a").unwrap().data(), &[2.0, 3.0]);
        assert_eq!(m.get("b").unwrap().data(), &[1.0]);
    }

    #[test]
    fn rejects_bad_config() {
        assert!(Sgd::new(SgdConfig { lr: 0.0, ..Default::default() }).is_err());
        assert!(Sgd::new(SgdConfig { momentum: 1.0, ..Default::default() }).is_err());
    }
}
