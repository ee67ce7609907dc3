//! I-FGSM and MI-FGSM on the averaged ensemble objective.

use crate::attacks::config::AttackResult;
use crate::attacks::objective::Objective;
use crate::error::{Error, Result};
use crate::tensor::{l1_normalize, sign_step_in_place, ImageTensor};

/// `m ← μ·m + ĝ`, shared by every momentum method so reductions stay exact.
pub(crate) fn momentum_update(m: &mut ImageTensor, mu: f64, g_hat: &ImageTensor) {
    for (mv, &gv) in m.as_mut_slice().iter_mut().zip(g_hat.as_slice()) {
        *mv = mu * *mv + gv;
    }
}

pub(crate) fn check_finite(value: f64, what: &str, step: usize) -> Result<f64> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(Error::NonFinite(format!("{what} at step {step} is {value}")))
    }
}

pub(crate) fn run_momentum(
    objective: &dyn Objective,
    x_nat: &ImageTensor,
    eps: f64,
    steps: usize,
    step_size: f64,
    mu: f64,
    observer: &mut dyn FnMut(&ImageTensor),
) -> Result<AttackResult> {
    let shape = x_nat.shape();
    let mut x = x_nat.clamp01();
    let mut m = ImageTensor::zeros(shape);
    let mut trace = Vec::with_capacity(steps);
    let mut grad_stats = Vec::with_capacity(steps);
    let mut initial_trace = f64::NAN;
    let mut skipped = 0;
    let mut warnings = Vec::new();

    for t in 0..steps {
        let mut loss_sum = 0.0;
        let mut g_sum = ImageTensor::zeros(shape);
        let mut dir_sum = ImageTensor::zeros(shape);
        let mut n = 0usize;
        for i in 0..objective.len() {
            let Some((loss, g)) = objective.value_grad(i, &x) else {
                skipped += 1;
                continue;
            };
            loss_sum += loss;
            g_sum.axpy_in_place(1.0, &g);
            match l1_normalize(&g) {
                Ok(gh) => dir_sum.axpy_in_place(1.0, &gh),
                Err(Error::ZeroGradient) => {}
                Err(e) => return Err(e),
            }
            n += 1;
        }
        if n == 0 {
            return Err(Error::NonFinite(format!("no ensemble member defined at step {t}")));
        }
        let summary = check_finite(objective.report(loss_sum / n as f64), "mean surrogate objective", t)?;
        if t == 0 {
            initial_trace = summary;
        } else {
            trace.push(summary);
        }
        let inv = 1.0 / n as f64;
        grad_stats.push(dir_sum.norm_l1() * inv);
        match l1_normalize(&g_sum.scale(inv)) {
            Ok(g_hat) => momentum_update(&mut m, mu, &g_hat),
            Err(Error::ZeroGradient) => {
                if t == 0 {
                    warnings.push("stalled: zero ensemble gradient at step 0".to_string());
                }
            }
            Err(e) => return Err(e),
        }
        sign_step_in_place(&mut x, &m, step_size, x_nat, eps);
        observer(&x);
    }
    trace.push(check_finite(objective.summary(&x), "mean surrogate objective", steps)?);
    Ok(AttackResult {
        adv: x,
        trace,
        initial_trace,
        grad_stats,
        steps_run: steps,
        skipped,
        warnings,
    })
}
