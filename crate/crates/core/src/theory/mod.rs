//! Monte Carlo checks of ensemble-minimizer asymptotics on a prototype-softmax family.

mod clt;
mod family;
mod optim;

pub use clt::{convergence_rate_fit, fisher_check, samples_csv, verify_clt, Check, FisherCheck, PerT, TheoryReport};
pub use family::{
    class_anchors, mean_prototype, pool_loss_grad, population_grad, population_loss, sample_model, PrototypeModel,
};
pub use optim::{find_xhat, find_xstar, gradient_descent, hessian_fd, minimize_pool, Minimizer};

use serde::{Deserialize, Serialize};

use crate::error::{config, Result};
use crate::rng::Seed;

/// Pass bands for the report checks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TheoryTolerances {
    /// `chi_mean` at the largest T must lie within `D · (1 ± chi_mean_band)`.
    pub chi_mean_band: f64,
    pub fisher_max_rel_err: f64,
    pub xhat_cov_max_rel_err: f64,
    pub rate_slope_min: f64,
    pub rate_slope_max: f64,
}

impl Default for TheoryTolerances {
    fn default() -> Self {
        Self {
            chi_mean_band: 0.15,
            fisher_max_rel_err: 0.1,
            xhat_cov_max_rel_err: 0.3,
            rate_slope_min: -0.65,
            rate_slope_max: -0.35,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TheoryConfig {
    pub dim: usize,
    pub num_classes: usize,
    /// Standard deviation of the per-class anchors.
    pub anchor_scale: f64,
    /// Standard deviation of the per-model prototype offsets.
    pub jitter: f64,
    pub temperature: f64,
    pub oracle_size: usize,
    pub t_values: Vec<usize>,
    pub trials_per_t: usize,
    pub target_class: usize,
    /// Gradient-norm threshold for both minimizers.
    pub tol: f64,
    pub max_iter: usize,
    pub hessian_step: f64,
    pub tolerances: TheoryTolerances,
    pub seed: Seed,
}

impl Default for TheoryConfig {
    fn default() -> Self {
        Self {
            dim: 8,
            num_classes: 4,
            anchor_scale: 0.01,
            jitter: 0.1,
            temperature: 1.0,
            oracle_size: 4096,
            t_values: vec![64, 128, 256],
            trials_per_t: 400,
            target_class: 0,
            tol: 1e-10,
            max_iter: 100_000,
            hessian_step: 1e-4,
            tolerances: TheoryTolerances::default(),
            seed: 0,
        }
    }
}

impl TheoryConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dim < 2 {
            return Err(config("dim must be at least 2"));
        }
        if self.num_classes < 2 {
            return Err(config("num_classes must be at least 2"));
        }
        if self.target_class >= self.num_classes {
            return Err(config("target_class out of range"));
        }
        if !(self.anchor_scale >= 0.0) || !(self.jitter >= 0.0) {
            return Err(config("anchor_scale and jitter must be non-negative"));
        }
        if !(self.temperature > 0.0) {
            return Err(config("temperature must be positive"));
        }
        if self.t_values.is_empty() || self.t_values.contains(&0) {
            return Err(config("t_values must be non-empty and positive"));
        }
        let t_max = *self.t_values.iter().max().expect("non-empty");
        if self.oracle_size < 4 * t_max {
            return Err(config(format!(
                "oracle_size {} must be at least 4 × max(t_values) = {}",
                self.oracle_size,
                4 * t_max
            )));
        }
        if self.trials_per_t < 2 {
            return Err(config("trials_per_t must be at least 2"));
        }
        if !(self.tol > 0.0) || !(self.hessian_step > 0.0) || self.max_iter == 0 {
            return Err(config("tol, hessian_step and max_iter must be positive"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests;
