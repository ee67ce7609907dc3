use serde::{Deserialize, Serialize};

use crate::error::{contract, Result};
use crate::rng::{RngStream, StreamRng};
use crate::theory::TheoryConfig;

const ANCHOR_STREAM: u64 = 40;

/// Classifier with logits `z_k(x) = −‖x − c_k‖² / (2τ)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrototypeModel {
    /// Row-major `K × D`.
    pub prototypes: Vec<f64>,
    pub num_classes: usize,
    pub dim: usize,
    pub temperature: f64,
}

impl PrototypeModel {
    pub fn new(prototypes: Vec<Vec<f64>>, temperature: f64) -> Result<Self> {
        let dim = prototypes.first().map_or(0, Vec::len);
        if prototypes.is_empty() || dim == 0 || prototypes.iter().any(|c| c.len() != dim) {
            return Err(contract("prototypes must be a non-empty K × D array"));
        }
        if !(temperature > 0.0) {
            return Err(contract("temperature must be positive"));
        }
        Ok(Self {
            num_classes: prototypes.len(),
            dim,
            prototypes: prototypes.concat(),
            temperature,
        })
    }

    pub fn prototype(&self, k: usize) -> &[f64] {
        &self.prototypes[k * self.dim..(k + 1) * self.dim]
    }

    pub fn logits(&self, x: &[f64]) -> Vec<f64> {
        (0..self.num_classes)
            .map(|k| {
                let d2: f64 = self.prototype(k).iter().zip(x).map(|(c, v)| (v - c).powi(2)).sum();
                -d2 / (2.0 * self.temperature)
            })
            .collect()
    }

    /// Cross-entropy toward `y` and its gradient `Σ_k (p_k − δ_ky)(c_k − x)/τ`.
    pub fn loss_grad(&self, x: &[f64], y: usize) -> (f64, Vec<f64>) {
        let z = self.logits(x);
        let zmax = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = z.iter().map(|v| (v - zmax).exp()).sum();
        let lse = zmax + sum.ln();
        let mut grad = vec![0.0; self.dim];
        for k in 0..self.num_classes {
            let coef = (z[k] - lse).exp() - if k == y { 1.0 } else { 0.0 };
            for (g, (c, v)) in grad.iter_mut().zip(self.prototype(k).iter().zip(x)) {
                *g += coef * (c - v) / self.temperature;
            }
        }
        (lse - z[y], grad)
    }

    pub fn loss(&self, x: &[f64], y: usize) -> f64 {
        self.loss_grad(x, y).0
    }
}

/// Class anchors, `K × D` Gaussian draws scaled by `anchor_scale`, fixed by the config seed.
pub fn class_anchors(cfg: &TheoryConfig) -> Vec<Vec<f64>> {
    let mut rng = RngStream::new(cfg.seed, ANCHOR_STREAM).rng();
    (0..cfg.num_classes)
        .map(|_| (0..cfg.dim).map(|_| cfg.anchor_scale * rng.normal()).collect())
        .collect()
}

/// One member of the family: anchors plus i.i.d. `N(0, jitter²)` offsets.
pub fn sample_model(cfg: &TheoryConfig, rng: &mut StreamRng) -> PrototypeModel {
    sample_with_anchors(cfg, &class_anchors(cfg), rng)
}

pub(crate) fn sample_with_anchors(cfg: &TheoryConfig, anchors: &[Vec<f64>], rng: &mut StreamRng) -> PrototypeModel {
    let prototypes = anchors
        .iter()
        .flat_map(|a| a.iter().map(|&v| v + cfg.jitter * rng.normal()).collect::<Vec<_>>())
        .collect();
    PrototypeModel {
        prototypes,
        num_classes: cfg.num_classes,
        dim: cfg.dim,
        temperature: cfg.temperature,
    }
}

fn check_pool(pool: &[PrototypeModel], x: &[f64], y: usize) -> Result<()> {
    if pool.is_empty() {
        return Err(contract("model pool is empty"));
    }
    if pool.iter().any(|m| m.dim != x.len()) {
        return Err(contract("point dimension does not match the pool"));
    }
    if pool.iter().any(|m| y >= m.num_classes) {
        return Err(contract(format!("class {y} out of range")));
    }
    Ok(())
}

/// Running mean, exact when every term is equal.
pub(crate) fn running_mean<'a>(rows: impl Iterator<Item = &'a [f64]>, len: usize) -> Vec<f64> {
    let mut mean = vec![0.0; len];
    for (k, row) in rows.enumerate() {
        let w = 1.0 / (k + 1) as f64;
        mean.iter_mut().zip(row).for_each(|(m, v)| *m += (v - *m) * w);
    }
    mean
}

/// Mean loss and mean gradient over a pool.
pub fn pool_loss_grad(x: &[f64], pool: &[PrototypeModel], y: usize) -> Result<(f64, Vec<f64>)> {
    check_pool(pool, x, y)?;
    let rows: Vec<Vec<f64>> = pool
        .iter()
        .map(|m| {
            let (l, mut g) = m.loss_grad(x, y);
            g.push(l);
            g
        })
        .collect();
    let mut mean = running_mean(rows.iter().map(Vec::as_slice), x.len() + 1);
    let loss = mean.pop().expect("loss slot");
    Ok((loss, mean))
}

pub fn population_loss(x: &[f64], oracle_pool: &[PrototypeModel], y: usize) -> Result<f64> {
    Ok(pool_loss_grad(x, oracle_pool, y)?.0)
}

pub fn population_grad(x: &[f64], oracle_pool: &[PrototypeModel], y: usize) -> Result<Vec<f64>> {
    Ok(pool_loss_grad(x, oracle_pool, y)?.1)
}

/// Mean class-`y` prototype of a pool; the class anchor when the pool has no jitter.
pub fn mean_prototype(pool: &[PrototypeModel], y: usize) -> Result<Vec<f64>> {
    let first = pool.first().ok_or_else(|| contract("model pool is empty"))?;
    if y >= first.num_classes {
        return Err(contract(format!("class {y} out of range")));
    }
    Ok(running_mean(pool.iter().map(|m| m.prototype(y)), first.dim))
}
