//! Ablation driver: the full model and single-mechanism removals trained on
//! the same seed and batch stream.

use std::fmt;

use lpcsm_core::Toggles;

use crate::config::RunConfig;
use crate::error::{HarnessError, Result};
use crate::train::train;

#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub variant: String,
    pub final_lm: f64,
    /// Relative change of `final_lm` against the full model, in percent.
    pub delta_pct: f64,
    pub tokens_per_second: f64,
    pub final_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct AblationTable {
    pub rows: Vec<AblationRow>,
}

impl fmt::Display for AblationTable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<24} {:>10} {:>9} {:>10} {:>11}", "variant", "final LM", "Δ%", "tokens/s", "final ratio")?;
        for r in &self.rows {
            writeln!(
                f,
                "{:<24} {:>10.4} {:>+9.2} {:>10.0} {:>11.3}",
                r.variant, r.final_lm, r.delta_pct, r.tokens_per_second, r.final_ratio
            )?;
        }
        Ok(())
    }
}

/// Train the base configuration (with every toggle of `remove` switched on)
/// and one variant per name in `remove` with that mechanism switched off.
pub fn ablate(base: &RunConfig, remove: &[&str], steps: usize, seed: u64) -> Result<AblationTable> {
    let mut full = base.clone();
    for name in remove {
        full.model
            .toggles
            .set(name, true)
            .map_err(|e| HarnessError::config(e.to_string()))?;
    }
    let mut variants = vec![("full".to_string(), full.clone())];
    for name in remove {
        let mut cfg = full.clone();
        cfg.model.toggles.set(name, false)?;
        variants.push((format!("w/o {name}"), cfg));
    }
    let window = base.train.final_window;
    let mut rows: Vec<AblationRow> = Vec::with_capacity(variants.len());
    for (variant, cfg) in variants {
        let out = train(&cfg, steps, seed, None, |_| Ok(()))?;
        let final_lm = out.final_mean(window, |m| m.loss.lm);
        let reference = rows.first().map_or(final_lm, |r| r.final_lm);
        rows.push(AblationRow {
            variant,
            final_lm,
            delta_pct: 100.0 * (final_lm - reference) / reference,
            tokens_per_second: out.final_mean(steps, |m| m.tokens_per_second),
            final_ratio: out.final_mean(window, |m| m.effective_ratio),
        });
    }
    Ok(AblationTable { rows })
}

/// All five mechanism names.
pub fn all_toggles() -> Vec<&'static str> {
    Toggles::NAMES.to_vec()
}
