//! Central finite-difference checks against the tape's reverse-mode gradients.

use alloc::string::String;
use alloc::vec::Vec;

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::params::ParameterStore;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckOptions {
    pub eps: f64,
    pub tol: f64,
    /// Check at most this many evenly spaced coordinates per parameter.
    pub max_coords_per_param: Option<usize>,
}

impl GradCheckOptions {
    pub fn new(eps: f64, tol: f64) -> Self {
        GradCheckOptions {
            eps,
            tol,
            max_coords_per_param: None,
        }
    }

    pub fn sampled(mut self, max_coords: usize) -> Self {
        self.max_coords_per_param = Some(max_coords);
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mismatch {
    pub param: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradReport {
    /// Maximum relative error per checked trainable parameter.
    pub per_param: Vec<(String, f64)>,
    pub max_rel_error: f64,
    pub pass: bool,
    pub eps: f64,
    pub tol: f64,
    pub coords_checked: usize,
    pub worst: Option<Mismatch>,
}

/// `|a − n| / max(1, |a|, |n|)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / 1f64.max(analytic.abs()).max(numeric.abs())
}

fn evaluate<F>(loss_fn: &F, params: &ParameterStore) -> Result<f64>
where
    F: Fn(&mut Tape, &ParameterStore) -> Result<Var>,
{
    let mut tape = Tape::inference();
    let root = loss_fn(&mut tape, params)?;
    tape.value(root).item()
}

/// Check every coordinate of every trainable parameter.
pub fn grad_check<F>(loss_fn: F, params: &ParameterStore, eps: f64, tol: f64) -> Result<GradReport>
where
    F: Fn(&mut Tape, &ParameterStore) -> Result<Var>,
{
    grad_check_with(loss_fn, params, GradCheckOptions::new(eps, tol))
}

pub fn grad_check_with<F>(
    loss_fn: F,
    params: &ParameterStore,
    opts: GradCheckOptions,
) -> Result<GradReport>
where
    F: Fn(&mut Tape, &ParameterStore) -> Result<Var>,
{
    if !(opts.eps > 0.0 && opts.eps <= 1e-2) {
        return Err(Error::invalid("grad_check eps must lie in (0, 1e-2]"));
    }
    let f0 = evaluate(&loss_fn, params)?;
    let f1 = evaluate(&loss_fn, params)?;
    if f0.to_bits() != f1.to_bits() {
        return Err(Error::Nondeterministic);
    }

    let mut tape = Tape::new();
    let root = loss_fn(&mut tape, params)?;
    let grads = tape.backward(root)?;

    let mut work = params.clone();
    let mut per_param = Vec::new();
    let mut max_rel = 0.0f64;
    let mut worst: Option<Mismatch> = None;
    let mut coords_checked = 0;

    for entry in params.iter().filter(|e| e.trainable) {
        let n = entry.tensor.len();
        let analytic = grads.get(&entry.name);
        let coords: Vec<usize> = match opts.max_coords_per_param {
            Some(k) if k < n => (0..k).map(|j| j * n / k + (n / k) / 2).collect(),
            _ => (0..n).collect(),
        };
        let mut param_max = 0.0f64;
        for i in coords {
            let orig = entry.tensor.data()[i];
            work.data_mut(&entry.name).unwrap()[i] = orig + opts.eps;
            let plus = evaluate(&loss_fn, &work)?;
            work.data_mut(&entry.name).unwrap()[i] = orig - opts.eps;
            let minus = evaluate(&loss_fn, &work)?;
            work.data_mut(&entry.name).unwrap()[i] = orig;
            let numeric = (plus - minus) / (2.0 * opts.eps);
            let a = analytic.map_or(0.0, |g| g.data()[i]);
            let rel = relative_error(a, numeric);
            coords_checked += 1;
            param_max = param_max.max(rel);
            if rel > max_rel || worst.is_none() {
                max_rel = max_rel.max(rel);
                worst = Some(Mismatch {
                    param: entry.name.clone(),
                    index: i,
                    analytic: a,
                    numeric,
                });
            }
        }
        per_param.push((entry.name.clone(), param_max));
    }

    Ok(GradReport {
        per_param,
        max_rel_error: max_rel,
        pass: max_rel <= opts.tol,
        eps: opts.eps,
        tol: opts.tol,
        coords_checked,
        worst,
    })
}
