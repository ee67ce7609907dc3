use serde::{Deserialize, Serialize};

use crate::error::{config, Result};
use crate::rng::{Seed, StreamRng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Relu,
}

impl Activation {
    pub(crate) fn apply(self, v: f64) -> f64 {
        match self {
            Activation::Tanh => v.tanh(),
            Activation::Relu => v.max(0.0),
        }
    }

    /// Derivative expressed through the pre-activation.
    pub(crate) fn derivative(self, pre: f64, post: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - post * post,
            Activation::Relu => {
                if pre > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Architecture {
    LinearSoftmax,
    Mlp {
        hidden_widths: Vec<usize>,
        activation: Activation,
    },
    PrototypeSoftmax {
        temperature: f64,
    },
}

impl Architecture {
    pub fn label(&self) -> String {
        match self {
            Architecture::LinearSoftmax => "linear".into(),
            Architecture::Mlp {
                hidden_widths,
                activation,
            } => {
                let widths: Vec<String> = hidden_widths.iter().map(|w| w.to_string()).collect();
                format!("mlp({})-{:?}", widths.join(","), activation).to_lowercase()
            }
            Architecture::PrototypeSoftmax { temperature } => format!("prototype(t={temperature})"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainingParams {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub at_flag: bool,
    pub at_epsilon: f64,
    /// Multiplier on the fan-in scaled initial weights of the input layer.
    pub init_gain: f64,
}

impl Default for TrainingParams {
    fn default() -> Self {
        Self {
            learning_rate: 0.1,
            epochs: 30,
            batch_size: 16,
            at_flag: false,
            at_epsilon: 0.0,
            init_gain: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub architecture: Architecture,
    pub init_seed: Seed,
    pub training: TrainingParams,
}

impl ModelSpec {
    pub fn validate(&self) -> Result<()> {
        match &self.architecture {
            Architecture::Mlp { hidden_widths, .. } => {
                if hidden_widths.is_empty() || hidden_widths.contains(&0) {
                    return Err(config("mlp hidden_widths must be non-empty and positive"));
                }
            }
            Architecture::PrototypeSoftmax { temperature } => {
                if !(*temperature > 0.0) {
                    return Err(config("prototype temperature must be positive"));
                }
            }
            Architecture::LinearSoftmax => {}
        }
        let t = &self.training;
        if !(t.learning_rate > 0.0) || t.batch_size == 0 {
            return Err(config("learning_rate and batch_size must be positive"));
        }
        if !(0.0..=1.0).contains(&t.at_epsilon) {
            return Err(config("at_epsilon must lie in [0, 1]"));
        }
        if !t.at_flag && t.at_epsilon != 0.0 {
            return Err(config("at_epsilon must be 0 when at_flag is false"));
        }
        Ok(())
    }
}

/// A weighted finite mixture over architectures used to draw i.i.d. zoo specs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpecMixture {
    pub components: Vec<(f64, Architecture)>,
    pub training: TrainingParams,
}

impl Default for SpecMixture {
    /// Uniform over mlp widths {(32), (64), (32,16)} × {tanh, relu}, input gain 5.
    fn default() -> Self {
        let mut components = Vec::new();
        for widths in [vec![32], vec![64], vec![32, 16]] {
            for activation in [Activation::Tanh, Activation::Relu] {
                components.push((
                    1.0,
                    Architecture::Mlp {
                        hidden_widths: widths.clone(),
                        activation,
                    },
                ));
            }
        }
        Self {
            components,
            training: TrainingParams {
                init_gain: 5.0,
                ..TrainingParams::default()
            },
        }
    }
}

impl SpecMixture {
    pub fn validate(&self) -> Result<()> {
        if self.components.is_empty() {
            return Err(config("spec mixture has no components"));
        }
        if self.components.iter().any(|(w, _)| !(*w >= 0.0) || !w.is_finite()) {
            return Err(config("mixture weights must be finite and non-negative"));
        }
        if self.components.iter().map(|(w, _)| w).sum::<f64>() <= 0.0 {
            return Err(config("mixture weights sum to zero"));
        }
        Ok(())
    }

    pub fn sample(&self, init_seed: Seed, rng: &mut StreamRng) -> ModelSpec {
        let total: f64 = self.components.iter().map(|(w, _)| w).sum();
        let mut u = rng.uniform() * total;
        let mut chosen = &self.components[self.components.len() - 1].1;
        for (w, arch) in &self.components {
            if u < *w {
                chosen = arch;
                break;
            }
            u -= w;
        }
        ModelSpec {
            architecture: chosen.clone(),
            init_seed,
            training: self.training.clone(),
        }
    }
}
