use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{contract, Error, Result};
use crate::theory::family::{mean_prototype, pool_loss_grad, PrototypeModel};

const ARMIJO_C: f64 = 1e-4;
const MIN_STEP: f64 = 1e-30;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Minimizer {
    pub x: Vec<f64>,
    pub loss: f64,
    pub grad_norm: f64,
    pub iterations: usize,
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

/// Gradient descent with a backtracking line search until `‖∇f‖₂ ≤ tol`.
///
/// Each search starts from the Barzilai–Borwein step of the last move. A step
/// is accepted on Armijo decrease, or, once decreases sink below rounding of
/// `f`, when the loss holds within rounding and the gradient norm shrinks.
pub fn gradient_descent<F>(f: F, x0: Vec<f64>, tol: f64, max_iter: usize) -> Result<Minimizer>
where
    F: Fn(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    if !(tol > 0.0) {
        return Err(contract("tolerance must be positive"));
    }
    let mut x = x0;
    let (mut fx, mut g) = f(&x)?;
    let mut gn = norm(&g);
    let mut step = 1.0;
    let mut last_move: Option<(Vec<f64>, Vec<f64>)> = None;
    for iter in 0..max_iter {
        if !gn.is_finite() || !fx.is_finite() {
            return Err(Error::NonFinite(format!("objective at iteration {iter}")));
        }
        if gn <= tol {
            return Ok(Minimizer {
                x,
                loss: fx,
                grad_norm: gn,
                iterations: iter,
            });
        }
        let slack = 8.0 * f64::EPSILON * fx.abs().max(1.0);
        step = match &last_move {
            Some((s, dg)) => {
                let sy: f64 = s.iter().zip(dg).map(|(a, b)| a * b).sum();
                let ss: f64 = s.iter().map(|a| a * a).sum();
                if sy > 0.0 {
                    ss / sy
                } else {
                    2.0 * step
                }
            }
            None => step,
        };
        loop {
            let trial: Vec<f64> = x.iter().zip(&g).map(|(a, b)| a - step * b).collect();
            let (ft, gt) = f(&trial)?;
            let gtn = norm(&gt);
            let armijo = ft <= fx - ARMIJO_C * step * gn * gn;
            let flat = ft <= fx + slack && gtn < gn;
            if armijo || flat {
                last_move = Some((
                    trial.iter().zip(&x).map(|(a, b)| a - b).collect::<Vec<f64>>(),
                    gt.iter().zip(&g).map(|(a, b)| a - b).collect::<Vec<f64>>(),
                ));
                x = trial;
                fx = ft;
                g = gt;
                gn = gtn;
                break;
            }
            step *= 0.5;
            if step < MIN_STEP {
                return Err(Error::OptimizerFailed {
                    iterations: iter,
                    grad_norm: gn,
                });
            }
        }
    }
    if gn <= tol {
        return Ok(Minimizer {
            x,
            loss: fx,
            grad_norm: gn,
            iterations: max_iter,
        });
    }
    Err(Error::OptimizerFailed {
        iterations: max_iter,
        grad_norm: gn,
    })
}

/// Minimizer of the mean loss over `pool` started from `x0`.
pub fn minimize_pool(pool: &[PrototypeModel], y: usize, x0: Vec<f64>, tol: f64, max_iter: usize) -> Result<Minimizer> {
    gradient_descent(|x| pool_loss_grad(x, pool, y), x0, tol, max_iter)
}

/// Population minimizer `x*` over the oracle pool, started from the pool's mean class-`y` prototype.
pub fn find_xstar(oracle_pool: &[PrototypeModel], y: usize, tol: f64, max_iter: usize) -> Result<Minimizer> {
    minimize_pool(oracle_pool, y, mean_prototype(oracle_pool, y)?, tol, max_iter)
}

/// Ensemble minimizer `x̂`, started from the ensemble's mean class-`y` prototype.
pub fn find_xhat(ensemble: &[PrototypeModel], y: usize, tol: f64, max_iter: usize) -> Result<Minimizer> {
    minimize_pool(ensemble, y, mean_prototype(ensemble, y)?, tol, max_iter)
}

/// Central differences of `grad_fn`, symmetrized.
pub fn hessian_fd<F>(grad_fn: F, x: &[f64], step: f64) -> Result<DMatrix<f64>>
where
    F: Fn(&[f64]) -> Result<Vec<f64>>,
{
    if !(step > 0.0) {
        return Err(contract("finite-difference step must be positive"));
    }
    let d = x.len();
    let mut h = DMatrix::zeros(d, d);
    let mut probe = x.to_vec();
    for j in 0..d {
        probe[j] = x[j] + step;
        let gp = grad_fn(&probe)?;
        probe[j] = x[j] - step;
        let gm = grad_fn(&probe)?;
        probe[j] = x[j];
        if gp.len() != d || gm.len() != d {
            return Err(contract("gradient length differs from the point dimension"));
        }
        for i in 0..d {
            h[(i, j)] = (gp[i] - gm[i]) / (2.0 * step);
        }
    }
    Ok((&h + h.transpose()) * 0.5)
}
