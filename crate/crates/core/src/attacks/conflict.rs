//! Gradient-conflict probe: how much the aggregated update direction shrinks
//! as the ensemble grows.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attacks::config::{AttackConfig, Method};
use crate::attacks::run_attack;
use crate::error::{config, Result};
use crate::models::{TrainedModel, Zoo};
use crate::rng::{RngStream, Seed};
use crate::tensor::ImageTensor;

const ENSEMBLE_STREAM: u64 = 21;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProbeConfig {
    pub trials: usize,
    /// Steps run before the magnitude is read off.
    pub steps: usize,
    pub seed: Seed,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            trials: 20,
            steps: 10,
            seed: 0,
        }
    }
}

/// Mean magnitude per `T`.
///
/// For mifgsm the magnitude is `‖(1/T) Σ l1_normalize(g_i)‖₁` at the last
/// step; for micwa it is `‖m‖₁` after the last inner pass. Trial `j` attacks
/// `instances[j % len]` with a fresh uniform draw of `T` surrogates.
pub fn gradient_conflict_probe(
    zoo: &Zoo,
    method: Method,
    t_values: &[usize],
    instances: &[(ImageTensor, usize)],
    attack: &AttackConfig,
    probe: &ProbeConfig,
) -> Result<Vec<(usize, f64)>> {
    if !matches!(method, Method::Mifgsm | Method::Micwa) {
        return Err(config(format!(
            "conflict probe supports mifgsm and micwa, not {}",
            method.name()
        )));
    }
    if instances.is_empty() || probe.trials == 0 || probe.steps == 0 {
        return Err(config("conflict probe needs instances, trials and steps"));
    }
    let n = zoo.surrogates.len();
    if let Some(&bad) = t_values.iter().find(|&&t| t == 0 || t > n) {
        return Err(config(format!("T = {bad} outside 1..={n}")));
    }
    let cfg = AttackConfig {
        method,
        steps: probe.steps,
        ..attack.clone()
    };
    let mut table = Vec::with_capacity(t_values.len());
    for &t in t_values {
        let magnitudes = (0..probe.trials)
            .into_par_iter()
            .map(|trial| {
                let stream = RngStream::new(probe.seed, ENSEMBLE_STREAM).path(&[t as u64, trial as u64]);
                let picks = stream.rng().sample_without_replacement(n, t);
                let ensemble: Vec<&TrainedModel> = picks.iter().map(|&i| &zoo.surrogates[i]).collect();
                let (x, y) = &instances[trial % instances.len()];
                let run_cfg = AttackConfig {
                    seed: stream.child(1).rng().next_u64(),
                    ..cfg.clone()
                };
                let result = run_attack(&ensemble, x, *y, &run_cfg)?;
                Ok(*result.grad_stats.last().expect("at least one step"))
            })
            .collect::<Result<Vec<f64>>>()?;
        table.push((t, magnitudes.iter().sum::<f64>() / magnitudes.len() as f64));
    }
    Ok(table)
}
