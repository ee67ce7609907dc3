//! MI-CWA and SSA-CWA: sequential per-model SAM-style updates.
//!
//! Per outer step the ensemble is visited in a shuffled order. Each visit
//! takes a reverse (loss-ascending) step of length `r` along the previous
//! member's ℓ1-normalized gradient, evaluates the member there, folds the
//! normalized gradient into the momentum and sign-descends by `β`.

use crate::attacks::config::{AttackResult, SsaParams};
use crate::attacks::momentum::{check_finite, momentum_update};
use crate::attacks::objective::Objective;
use crate::attacks::ssa::ssa_member_gradient;
use crate::dct::DctPlan;
use crate::error::{Error, Result};
use crate::rng::RngStream;
use crate::tensor::{l1_normalize, project_in_place, sign_step_in_place, ImageTensor};

pub(crate) const ORDER_STREAM: u64 = 11;
pub(crate) const SSA_STREAM: u64 = 12;

pub(crate) struct CwaParams {
    pub eps: f64,
    pub steps: usize,
    pub mu: f64,
    pub reverse_step: f64,
    pub inner_step: f64,
    pub ssa: Option<SsaParams>,
    pub seed: u64,
}

pub(crate) fn run_cwa(
    objective: &dyn Objective,
    x_nat: &ImageTensor,
    p: &CwaParams,
    observer: &mut dyn FnMut(&ImageTensor),
) -> Result<AttackResult> {
    let shape = x_nat.shape();
    let root = RngStream::root(p.seed);
    let plan = p.ssa.map(|_| DctPlan::new(shape));
    let mut x = x_nat.clamp01();
    let mut m = ImageTensor::zeros(shape);
    let mut g_prev_hat: Option<ImageTensor> = None;
    let mut trace = Vec::with_capacity(p.steps);
    let mut grad_stats = Vec::with_capacity(p.steps);
    let mut skipped = 0;
    let mut warnings = Vec::new();
    let initial_trace = check_finite(objective.summary(&x), "mean surrogate objective", 0)?;

    let mut order: Vec<usize> = Vec::with_capacity(objective.len());
    for t in 0..p.steps {
        order.clear();
        order.extend(0..objective.len());
        root.path(&[ORDER_STREAM, t as u64]).rng().shuffle(&mut order);
        for &i in &order {
            let x_r = match &g_prev_hat {
                Some(gp) if p.reverse_step > 0.0 => {
                    let mut xr = x.axpy(p.reverse_step, gp)?;
                    project_in_place(&mut xr, x_nat, p.eps);
                    xr
                }
                _ => x.clone(),
            };
            let g = match (&p.ssa, &plan) {
                (Some(ssa), Some(plan)) => {
                    let mut rng = root.path(&[SSA_STREAM, t as u64, i as u64]).rng();
                    ssa_member_gradient(objective, i, &x_r, ssa, plan, &mut rng)
                }
                _ => objective.value_grad(i, &x_r).map(|(_, g)| g),
            };
            let Some(g) = g else {
                skipped += 1;
                continue;
            };
            let g_hat = match l1_normalize(&g) {
                Ok(v) => v,
                Err(Error::ZeroGradient) => {
                    skipped += 1;
                    continue;
                }
                Err(e) => return Err(e),
            };
            momentum_update(&mut m, p.mu, &g_hat);
            sign_step_in_place(&mut x, &m, p.inner_step, x_nat, p.eps);
            observer(&x);
            g_prev_hat = Some(g_hat);
        }
        if t == 0 && g_prev_hat.is_none() {
            warnings.push("stalled: every member was skipped in the first pass".to_string());
        }
        grad_stats.push(m.norm_l1());
        trace.push(check_finite(objective.summary(&x), "mean surrogate objective", t + 1)?);
    }
    Ok(AttackResult {
        adv: x,
        trace,
        initial_trace,
        grad_stats,
        steps_run: p.steps,
        skipped,
        warnings,
    })
}
