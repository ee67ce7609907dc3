//! Per-member objectives driven by the optimizers.

use crate::error::{contract, Result};
use crate::models::TrainedModel;
use crate::tensor::ImageTensor;

pub(crate) trait Objective: Sync {
    fn len(&self) -> usize;

    /// Value and input gradient of member `i`, or `None` when the member is
    /// undefined at `x` and must be skipped.
    fn value_grad(&self, i: usize, x: &ImageTensor) -> Option<(f64, ImageTensor)>;

    fn value(&self, i: usize, x: &ImageTensor) -> Option<f64>;

    /// Maps a mean member value to the number recorded in the trace.
    fn report(&self, mean_value: f64) -> f64 {
        mean_value
    }

    /// Trace summary at `x`, averaged over the members defined there.
    fn summary(&self, x: &ImageTensor) -> f64 {
        let mut sum = 0.0;
        let mut n = 0usize;
        for i in 0..self.len() {
            if let Some(v) = self.value(i, x) {
                sum += v;
                n += 1;
            }
        }
        if n == 0 {
            f64::NAN
        } else {
            self.report(sum / n as f64)
        }
    }
}

pub(crate) struct CrossEntropy<'a> {
    pub models: &'a [&'a TrainedModel],
    pub target: usize,
}

impl<'a> CrossEntropy<'a> {
    pub fn new(models: &'a [&'a TrainedModel], x: &ImageTensor, target: usize) -> Result<Self> {
        if models.is_empty() {
            return Err(contract("ensemble is empty"));
        }
        for m in models {
            if m.input_shape != x.shape() {
                return Err(contract(format!(
                    "input shape {} does not match model shape {}",
                    x.shape(),
                    m.input_shape
                )));
            }
            if target >= m.num_classes {
                return Err(contract(format!("target class {target} outside 0..{}", m.num_classes)));
            }
        }
        Ok(Self { models, target })
    }
}

impl Objective for CrossEntropy<'_> {
    fn len(&self) -> usize {
        self.models.len()
    }

    fn value_grad(&self, i: usize, x: &ImageTensor) -> Option<(f64, ImageTensor)> {
        Some(self.models[i].loss_and_grad(x, self.target))
    }

    fn value(&self, i: usize, x: &ImageTensor) -> Option<f64> {
        Some(self.models[i].loss_ce(x, self.target))
    }
}

/// `1 − cos(embed(x), target)` and its input gradient; `None` when either
/// embedding has zero norm.
pub fn embedding_loss_and_grad(
    encoder: &TrainedModel,
    x: &ImageTensor,
    target: &[f64],
) -> Result<Option<(f64, ImageTensor)>> {
    let (e, pullback) = encoder.embed_with_pullback(x)?;
    let Some((cos, dcos)) = cosine_with_grad(&e, target) else {
        return Ok(None);
    };
    let upstream: Vec<f64> = dcos.iter().map(|v| -v).collect();
    Ok(Some((1.0 - cos, pullback.apply(&upstream))))
}

fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

pub(crate) fn cosine(a: &[f64], b: &[f64]) -> Option<f64> {
    let (na, nb) = (norm2(a), norm2(b));
    if na == 0.0 || nb == 0.0 {
        return None;
    }
    Some(a.iter().zip(b).map(|(p, q)| p * q).sum::<f64>() / (na * nb))
}

/// Cosine similarity and its gradient with respect to `e`.
fn cosine_with_grad(e: &[f64], t: &[f64]) -> Option<(f64, Vec<f64>)> {
    let (ne, nt) = (norm2(e), norm2(t));
    if ne == 0.0 || nt == 0.0 {
        return None;
    }
    let cos = e.iter().zip(t).map(|(p, q)| p * q).sum::<f64>() / (ne * nt);
    let grad = e
        .iter()
        .zip(t)
        .map(|(&ev, &tv)| tv / (ne * nt) - cos * ev / (ne * ne))
        .collect();
    Some((cos, grad))
}

pub(crate) struct EmbeddingObjective<'a> {
    pub encoders: &'a [&'a TrainedModel],
    pub targets: Vec<Vec<f64>>,
}

impl<'a> EmbeddingObjective<'a> {
    pub fn new(encoders: &'a [&'a TrainedModel], x_nat: &ImageTensor, x_tar: &ImageTensor) -> Result<Self> {
        if encoders.is_empty() {
            return Err(contract("encoder list is empty"));
        }
        if x_nat.shape() != x_tar.shape() {
            return Err(contract("x_tar must have the shape of x_nat"));
        }
        let targets = encoders.iter().map(|m| m.embed(x_tar)).collect::<Result<Vec<_>>>()?;
        Ok(Self { encoders, targets })
    }

    /// Encoders whose target embedding is zero and therefore never contribute.
    pub fn degenerate_targets(&self) -> usize {
        self.targets.iter().filter(|t| norm2(t) == 0.0).count()
    }
}

impl Objective for EmbeddingObjective<'_> {
    fn len(&self) -> usize {
        self.encoders.len()
    }

    fn value_grad(&self, i: usize, x: &ImageTensor) -> Option<(f64, ImageTensor)> {
        embedding_loss_and_grad(self.encoders[i], x, &self.targets[i]).expect("checked at construction")
    }

    fn value(&self, i: usize, x: &ImageTensor) -> Option<f64> {
        let e = self.encoders[i].embed(x).expect("checked at construction");
        cosine(&e, &self.targets[i]).map(|c| 1.0 - c)
    }

    fn report(&self, mean_value: f64) -> f64 {
        1.0 - mean_value
    }
}
