//! Spectrum simulation: gradients averaged over random frequency-domain
//! augmentations `x' = idct2(dct2(x + ξ) ⊙ M)`.

use crate::attacks::config::SsaParams;
use crate::attacks::objective::{CrossEntropy, Objective};
use crate::dct::DctPlan;
use crate::models::TrainedModel;
use crate::rng::StreamRng;
use crate::tensor::ImageTensor;

/// One augmented copy of `x`. Draw order per sample: all of ξ, then all of M.
pub(crate) fn spectrum_sample(x: &ImageTensor, params: &SsaParams, plan: &DctPlan, rng: &mut StreamRng) -> ImageTensor {
    let mut noisy = x.clone();
    for v in noisy.as_mut_slice() {
        *v += params.noise_sigma * rng.normal();
    }
    let mut spectrum = plan.forward(&noisy);
    let rho = params.mask_rho;
    for v in spectrum.as_mut_slice() {
        *v *= rng.uniform_range(1.0 - rho, 1.0 + rho);
    }
    plan.inverse(&spectrum)
}

/// Mean gradient of member `i` over `N` spectrum samples; samples where the
/// member is undefined are dropped from the mean.
pub(crate) fn ssa_member_gradient(
    objective: &dyn Objective,
    i: usize,
    x: &ImageTensor,
    params: &SsaParams,
    plan: &DctPlan,
    rng: &mut StreamRng,
) -> Option<ImageTensor> {
    let mut acc = ImageTensor::zeros(x.shape());
    let mut count = 0usize;
    for _ in 0..params.num_samples {
        let xp = spectrum_sample(x, params, plan, rng);
        if let Some((_, g)) = objective.value_grad(i, &xp) {
            acc.axpy_in_place(1.0, &g);
            count += 1;
        }
    }
    (count > 0).then(|| acc.scale(1.0 / count as f64))
}

/// `(1/N) Σ_n ∇_x CE(model(x'_n), y_target)`.
pub fn ssa_gradient(
    model: &TrainedModel,
    x: &ImageTensor,
    y_target: usize,
    params: &SsaParams,
    rng: &mut StreamRng,
) -> ImageTensor {
    let models = [model];
    let objective = CrossEntropy {
        models: &models,
        target: y_target,
    };
    let plan = DctPlan::new(x.shape());
    ssa_member_gradient(&objective, 0, x, params, &plan, rng).expect("cross-entropy is defined everywhere")
}
