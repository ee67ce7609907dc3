use serde::{Deserialize, Serialize};

use crate::error::{config, Result};
use crate::rng::Seed;
use crate::tensor::{Budget, ImageTensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Ifgsm,
    Mifgsm,
    Micwa,
    Ssacwa,
    Embedding,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Ifgsm => "ifgsm",
            Method::Mifgsm => "mifgsm",
            Method::Micwa => "micwa",
            Method::Ssacwa => "ssacwa",
            Method::Embedding => "embedding",
        }
    }
}

/// Spectrum-simulation sampling parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SsaParams {
    pub num_samples: usize,
    /// Standard deviation of the pixel-space Gaussian noise.
    pub noise_sigma: f64,
    /// Half-width of the multiplicative spectral mask `U(1 − ρ, 1 + ρ)`.
    pub mask_rho: f64,
}

impl Default for SsaParams {
    fn default() -> Self {
        Self {
            num_samples: 20,
            noise_sigma: 8.0 / 255.0,
            mask_rho: 0.5,
        }
    }
}

impl SsaParams {
    pub fn validate(&self) -> Result<()> {
        if self.num_samples == 0 {
            return Err(config("ssa.num_samples must be at least 1"));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(config("ssa.noise_sigma must be a non-negative real"));
        }
        if !(0.0..1.0).contains(&self.mask_rho) {
            return Err(config("ssa.mask_rho must lie in [0, 1)"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AttackConfig {
    pub method: Method,
    pub budget: Budget,
    pub steps: usize,
    /// α, the sign-step of I-FGSM / MI-FGSM.
    pub step_size: f64,
    /// μ
    pub momentum_decay: f64,
    /// r, length of the CWA reverse step.
    pub reverse_step: f64,
    /// β, the CWA inner sign-step.
    pub inner_step: f64,
    pub ssa: SsaParams,
    pub seed: Seed,
}

impl Default for AttackConfig {
    fn default() -> Self {
        Self {
            method: Method::Ssacwa,
            budget: Budget::from_255(8.0).expect("valid budget"),
            steps: 40,
            step_size: 2.0 / 255.0,
            momentum_decay: 1.0,
            reverse_step: 16.0 / 255.0 / 15.0,
            inner_step: 2.0 / 255.0,
            ssa: SsaParams::default(),
            seed: 0,
        }
    }
}

impl AttackConfig {
    pub fn with_method(method: Method) -> Self {
        Self {
            method,
            ..Self::default()
        }
    }

    pub fn epsilon(&self) -> f64 {
        self.budget.epsilon()
    }

    /// Range checks on every field, whether or not the method reads it.
    pub fn validate(&self) -> Result<()> {
        Budget::new(self.epsilon()).map_err(|_| config("budget must lie in [0, 1]"))?;
        if self.steps == 0 {
            return Err(config("steps must be positive"));
        }
        let positive = |v: f64| v > 0.0 && v.is_finite();
        if !positive(self.step_size) {
            return Err(config("step_size must be positive"));
        }
        if !positive(self.inner_step) {
            return Err(config("inner_step must be positive"));
        }
        if !(0.0..=1.0).contains(&self.momentum_decay) {
            return Err(config("momentum_decay must lie in [0, 1]"));
        }
        if !(self.reverse_step >= 0.0 && self.reverse_step.is_finite()) {
            return Err(config("reverse_step must be non-negative"));
        }
        self.ssa.validate()
    }
}

/// Outcome of one attack run.
///
/// `trace[t]` is the objective summary at the iterate after step `t`; the
/// value at the starting point is kept separately in `initial_trace`. For
/// cross-entropy attacks the summary is the mean surrogate loss, for the
/// embedding attack the mean cosine similarity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackResult {
    pub adv: ImageTensor,
    pub trace: Vec<f64>,
    pub initial_trace: f64,
    /// Per-step ℓ1 magnitude of the aggregated update direction.
    pub grad_stats: Vec<f64>,
    pub steps_run: usize,
    /// Gradient evaluations dropped because they were zero or undefined.
    pub skipped: usize,
    pub warnings: Vec<String>,
}

impl AttackResult {
    pub fn final_trace(&self) -> f64 {
        self.trace.last().copied().unwrap_or(self.initial_trace)
    }
}
