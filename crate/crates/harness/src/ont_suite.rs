//! Randomized check of the ONT write identities.
//!
//! Each trial draws a dimension in 1..=64, vectors with entries in [−1, 1]
//! and a gain in [−2, 4]. Every tenth trial uses a gain of exactly zero and
//! every seventh a zero reference.

use std::fmt;
use std::time::{Duration, Instant};

use lpcsm_core::ont::{decompose, feasibility_gap, ont_oracle_min, ont_transport, ont_write_objective};
use lpcsm_core::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;

#[derive(Debug, Clone, Copy)]
pub struct Check {
    pub name: &'static str,
    pub tolerance: f64,
    pub worst: f64,
}

impl Check {
    pub fn passed(&self) -> bool {
        self.worst <= self.tolerance
    }
}

#[derive(Debug, Clone)]
pub struct OntReport {
    pub trials: usize,
    pub checks: [Check; 5],
    pub zero_alpha_trials: usize,
    pub zero_reference_trials: usize,
    pub elapsed: Duration,
}

impl OntReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(Check::passed)
    }
}

impl fmt::Display for OntReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{} trials ({} with α = 0, {} with m = 0) in {:.3} s",
            self.trials,
            self.zero_alpha_trials,
            self.zero_reference_trials,
            self.elapsed.as_secs_f64()
        )?;
        for c in &self.checks {
            writeln!(
                f,
                "  {:<14} worst {:.3e}  tol {:.0e}  {}",
                c.name,
                c.worst,
                c.tolerance,
                if c.passed() { "ok" } else { "FAIL" }
            )?;
        }
        Ok(())
    }
}

fn draw(rng: &mut ChaCha8Rng, n: usize) -> Tensor {
    Tensor::vector((0..n).map(|_| rng.gen_range(-1.0..=1.0)).collect()).expect("vector")
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn max_abs(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

pub fn run(trials: usize, seed: u64) -> Result<OntReport> {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut checks = [
        Check { name: "feasibility", tolerance: 1e-10, worst: 0.0 },
        Check { name: "decomposition", tolerance: 1e-12, worst: 0.0 },
        Check { name: "pythagorean", tolerance: 1e-9, worst: 0.0 },
        Check { name: "oracle", tolerance: 1e-10, worst: 0.0 },
        Check { name: "variational", tolerance: 1e-9, worst: 0.0 },
    ];
    let (mut zero_alpha, mut zero_ref) = (0, 0);
    for i in 0..trials {
        let n = rng.gen_range(1..=64);
        let alpha = if i % 10 == 0 {
            zero_alpha += 1;
            0.0
        } else {
            rng.gen_range(-2.0..=4.0)
        };
        let c = draw(&mut rng, n);
        let m = if i % 7 == 0 {
            zero_ref += 1;
            Tensor::zeros(vec![n])
        } else {
            draw(&mut rng, n)
        };
        let t = ont_transport(alpha, &c, &m)?;
        let tv = t.transported.data();
        let d = decompose(&c, &m)?;
        let (p, nv) = (d.aligned.data(), d.novelty.data());

        let gap = feasibility_gap(&c, &m, &t.transported)?.abs();
        let sum: Vec<f64> = p.iter().zip(nv).map(|(a, b)| a + b).collect();
        let cc = dot(c.data(), c.data());
        let pyth = (cc - dot(p, p) - dot(nv, nv)).abs() / cc.max(f64::MIN_POSITIVE);
        let oracle = max_abs(tv, ont_oracle_min(alpha, &c, &m)?.data());

        // A feasible competitor: T plus a direction orthogonal to m.
        let z = draw(&mut rng, n);
        let zn = decompose(&z, &m)?.novelty;
        let x = Tensor::vector(tv.iter().zip(zn.data()).map(|(a, b)| a + b).collect())?;
        let lhs = ont_write_objective(alpha, &c, &m, &x)? - ont_write_objective(alpha, &c, &m, &t.transported)?;
        let rhs = 0.5 * dot(zn.data(), zn.data());

        let errs = [gap, max_abs(&sum, c.data()), pyth, oracle, (lhs - rhs).abs()];
        for (check, e) in checks.iter_mut().zip(errs) {
            check.worst = check.worst.max(if e.is_nan() { f64::INFINITY } else { e });
        }
    }
    Ok(OntReport {
        trials,
        checks,
        zero_alpha_trials: zero_alpha,
        zero_reference_trials: zero_ref,
        elapsed: start.elapsed(),
    })
}
