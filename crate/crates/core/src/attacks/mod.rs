//! Ensemble attacks. Every attack is targeted: it minimizes the mean
//! cross-entropy of the surrogates to `y_target` by sign descent inside the
//! ℓ∞ ball of radius ε around `x_nat`, intersected with `[0, 1]`.

mod config;
mod conflict;
mod cwa;
pub mod export;
mod momentum;
mod objective;
mod ssa;

pub use config::{AttackConfig, AttackResult, Method, SsaParams};
pub use conflict::{gradient_conflict_probe, ProbeConfig};
pub use objective::embedding_loss_and_grad;
pub use ssa::ssa_gradient;

use crate::error::{contract, Result};
use crate::models::TrainedModel;
use crate::tensor::ImageTensor;
use cwa::{run_cwa, CwaParams};
use momentum::run_momentum;
use objective::{CrossEntropy, EmbeddingObjective, Objective};

/// `(1/T) Σ CE(f_i(x), y)` and its exact input gradient.
pub fn ensemble_loss(ensemble: &[&TrainedModel], x: &ImageTensor, y: usize) -> Result<(f64, ImageTensor)> {
    let objective = CrossEntropy::new(ensemble, x, y)?;
    let mut loss = 0.0;
    let mut grad = ImageTensor::zeros(x.shape());
    for i in 0..objective.len() {
        let (l, g) = objective.value_grad(i, x).expect("cross-entropy is defined everywhere");
        loss += l;
        grad.axpy_in_place(1.0, &g);
    }
    let inv = 1.0 / ensemble.len() as f64;
    Ok((loss * inv, grad.scale(inv)))
}

fn check_input(x_nat: &ImageTensor, cfg: &AttackConfig) -> Result<()> {
    cfg.validate()?;
    if !x_nat.is_finite() {
        return Err(contract("x_nat contains non-finite values"));
    }
    Ok(())
}

fn cwa_params(cfg: &AttackConfig, with_ssa: bool) -> CwaParams {
    CwaParams {
        eps: cfg.epsilon(),
        steps: cfg.steps,
        mu: cfg.momentum_decay,
        reverse_step: cfg.reverse_step,
        inner_step: cfg.inner_step,
        ssa: with_ssa.then_some(cfg.ssa),
        seed: cfg.seed,
    }
}

/// Runs the cross-entropy attack selected by `cfg.method`, calling
/// `observer` with every iterate right after it is produced.
pub fn run_attack_observed(
    ensemble: &[&TrainedModel],
    x_nat: &ImageTensor,
    y_target: usize,
    cfg: &AttackConfig,
    observer: &mut dyn FnMut(&ImageTensor),
) -> Result<AttackResult> {
    check_input(x_nat, cfg)?;
    let objective = CrossEntropy::new(ensemble, x_nat, y_target)?;
    let eps = cfg.epsilon();
    match cfg.method {
        Method::Ifgsm => run_momentum(&objective, x_nat, eps, cfg.steps, cfg.step_size, 0.0, observer),
        Method::Mifgsm => run_momentum(
            &objective,
            x_nat,
            eps,
            cfg.steps,
            cfg.step_size,
            cfg.momentum_decay,
            observer,
        ),
        Method::Micwa => run_cwa(&objective, x_nat, &cwa_params(cfg, false), observer),
        Method::Ssacwa => run_cwa(&objective, x_nat, &cwa_params(cfg, true), observer),
        Method::Embedding => Err(contract(
            "the embedding attack needs a target image; use attack_embedding",
        )),
    }
}

pub fn run_attack(
    ensemble: &[&TrainedModel],
    x_nat: &ImageTensor,
    y_target: usize,
    cfg: &AttackConfig,
) -> Result<AttackResult> {
    run_attack_observed(ensemble, x_nat, y_target, cfg, &mut |_| {})
}

fn with_method(cfg: &AttackConfig, method: Method) -> AttackConfig {
    AttackConfig { method, ..cfg.clone() }
}

/// I-FGSM: MI-FGSM with μ = 0.
pub fn attack_ifgsm(
    ensemble: &[&TrainedModel],
    x_nat: &ImageTensor,
    y_target: usize,
    cfg: &AttackConfig,
) -> Result<AttackResult> {
    run_attack(ensemble, x_nat, y_target, &with_method(cfg, Method::Ifgsm))
}

pub fn attack_mifgsm(
    ensemble: &[&TrainedModel],
    x_nat: &ImageTensor,
    y_target: usize,
    cfg: &AttackConfig,
) -> Result<AttackResult> {
    run_attack(ensemble, x_nat, y_target, &with_method(cfg, Method::Mifgsm))
}

pub fn attack_micwa(
    ensemble: &[&TrainedModel],
    x_nat: &ImageTensor,
    y_target: usize,
    cfg: &AttackConfig,
) -> Result<AttackResult> {
    run_attack(ensemble, x_nat, y_target, &with_method(cfg, Method::Micwa))
}

pub fn attack_ssacwa(
    ensemble: &[&TrainedModel],
    x_nat: &ImageTensor,
    y_target: usize,
    cfg: &AttackConfig,
) -> Result<AttackResult> {
    run_attack(ensemble, x_nat, y_target, &with_method(cfg, Method::Ssacwa))
}

/// Maximizes the mean cosine similarity between the encoders' embeddings of
/// the iterate and of `x_tar`, using the SSA-CWA optimizer on the loss
/// `1 − cos`. The trace holds mean cosine similarities.
pub fn attack_embedding_observed(
    encoders: &[&TrainedModel],
    x_nat: &ImageTensor,
    x_tar: &ImageTensor,
    cfg: &AttackConfig,
    observer: &mut dyn FnMut(&ImageTensor),
) -> Result<AttackResult> {
    check_input(x_nat, cfg)?;
    let objective = EmbeddingObjective::new(encoders, x_nat, x_tar)?;
    let degenerate = objective.degenerate_targets();
    let mut result = run_cwa(&objective, x_nat, &cwa_params(cfg, true), observer)?;
    if degenerate > 0 {
        result
            .warnings
            .push(format!("{degenerate} encoder(s) have a zero target embedding"));
    }
    Ok(result)
}

pub fn attack_embedding(
    encoders: &[&TrainedModel],
    x_nat: &ImageTensor,
    x_tar: &ImageTensor,
    cfg: &AttackConfig,
) -> Result<AttackResult> {
    attack_embedding_observed(encoders, x_nat, x_tar, cfg, &mut |_| {})
}

/// Mean cosine similarity between each encoder's embedding of `x` and of `x_tar`,
/// over the encoders where both embeddings are non-zero.
pub fn mean_cosine_similarity(encoders: &[&TrainedModel], x: &ImageTensor, x_tar: &ImageTensor) -> Result<f64> {
    let objective = EmbeddingObjective::new(encoders, x, x_tar)?;
    Ok(objective.summary(x))
}
