//! Ensemble-size sweeps and the logarithmic scaling fit.

mod export;
mod fit;
mod run;

pub use export::{plot_csv, results_csv, summary_json};
pub use fit::{fit_scaling_law, ols, spearman, FitResult};
pub use run::{
    asr_eval, run_scaling, untargeted_eval, Pool, RunRecord, ScalingConfig, ScalingImage, ScalingResult, ScalingRow,
};

use serde::{Deserialize, Serialize};

use crate::error::{config, Result};
use crate::models::Zoo;

/// Success predicate fitted against `ln T`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Targeted,
    Untargeted,
}

/// Rows whose mean success exceeds `saturation` are left out of the fit
/// unless `include_saturated` is set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FitWindow {
    pub saturation: f64,
    pub include_saturated: bool,
}

impl Default for FitWindow {
    fn default() -> Self {
        Self {
            saturation: 0.95,
            include_saturated: false,
        }
    }
}

/// `(T, mean success)` of the pooled rows of `pool` inside the fit window.
pub fn fit_points(result: &ScalingResult, pool: Pool, metric: Metric, window: FitWindow) -> Vec<(f64, f64)> {
    result
        .pooled(pool)
        .into_iter()
        .map(|r| {
            let v = match metric {
                Metric::Targeted => r.asr_mean,
                Metric::Untargeted => r.untargeted_mean,
            };
            (r.t as f64, v)
        })
        .filter(|&(_, v)| window.include_saturated || v <= window.saturation)
        .collect()
}

pub fn fit_pooled(result: &ScalingResult, pool: Pool, metric: Metric, window: FitWindow) -> Result<FitResult> {
    fit_scaling_law(&fit_points(result, pool, metric, window))
}

/// Spearman correlation between pooled held-out loss and targeted ASR across `T`.
pub fn loss_asr_symmetry(result: &ScalingResult) -> f64 {
    let rows = result.pooled(Pool::Heldout);
    let loss: Vec<f64> = rows.iter().map(|r| r.loss_mean).collect();
    let asr: Vec<f64> = rows.iter().map(|r| r.asr_mean).collect();
    spearman(&loss, &asr)
}

/// Untargeted-metric fits for the normal and the adversarially trained pool.
pub fn at_limitation_from_result(result: &ScalingResult, window: FitWindow) -> Result<(FitResult, FitResult)> {
    if result.pooled(Pool::HeldoutAt).is_empty() {
        return Err(config("result has no adversarially trained held-out rows"));
    }
    Ok((
        fit_pooled(result, Pool::Heldout, Metric::Untargeted, window)?,
        fit_pooled(result, Pool::HeldoutAt, Metric::Untargeted, window)?,
    ))
}

pub fn at_limitation_eval(zoo: &Zoo, cfg: &ScalingConfig) -> Result<(FitResult, FitResult)> {
    if zoo.heldout_at.is_empty() {
        return Err(config("zoo has no adversarially trained held-out models"));
    }
    at_limitation_from_result(&run_scaling(zoo, cfg)?, FitWindow::default())
}
