use std::fmt::Write as _;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::RngStream;
use crate::scaling::ols;
use crate::theory::family::{
    class_anchors, population_grad, population_loss, running_mean, sample_with_anchors, PrototypeModel,
};
use crate::theory::optim::{find_xhat, find_xstar, hessian_fd};
use crate::theory::TheoryConfig;

pub(crate) const ORACLE_STREAM: u64 = 41;
pub(crate) const ENSEMBLE_STREAM: u64 = 42;
const _: () = assert!(ORACLE_STREAM != ENSEMBLE_STREAM);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerT {
    pub t: usize,
    /// `2T·(𝕃(x̂) − 𝕃(x*))` per trial.
    pub delta_loss_stat: Vec<f64>,
    /// `‖x̂ − x*‖₂` per trial.
    pub dist_l2: Vec<f64>,
    pub chi_mean: f64,
    pub chi_var: f64,
    pub mean_dist: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub lo: f64,
    pub hi: f64,
    pub pass: bool,
}

impl Check {
    /// Passes when `lo ≤ value ≤ hi`.
    pub fn new(name: &str, value: f64, lo: f64, hi: f64) -> Self {
        Self {
            name: name.into(),
            value,
            lo,
            hi,
            pass: value >= lo && value <= hi,
        }
    }

    /// Passes when `value > bound`.
    pub fn greater(name: &str, value: f64, bound: f64) -> Self {
        Self {
            pass: value > bound,
            ..Self::new(name, value, bound, f64::INFINITY)
        }
    }

    /// Passes when `value < bound`.
    pub fn less(name: &str, value: f64, bound: f64) -> Self {
        Self {
            pass: value < bound,
            ..Self::new(name, value, f64::NEG_INFINITY, bound)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TheoryReport {
    pub config: TheoryConfig,
    pub x_star: Vec<f64>,
    pub x_star_loss: f64,
    pub x_star_iterations: usize,
    pub per_t: Vec<PerT>,
    pub chi_target_mean: f64,
    pub chi_target_var: f64,
    /// At the largest T.
    pub chi_mean: f64,
    pub chi_var: f64,
    pub rate_slope: f64,
    pub rate_stderr: f64,
    pub fisher_frobenius_rel_err: f64,
    pub hessian_min_eigenvalue: f64,
    pub xhat_cov_rel_err: f64,
    pub checks: Vec<Check>,
    pub passed: bool,
}

impl TheoryReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// `T,trial,delta_loss_stat,dist_l2`
pub fn samples_csv(report: &TheoryReport) -> String {
    let mut out = String::from("T,trial,delta_loss_stat,dist_l2\n");
    for row in &report.per_t {
        for (trial, (s, d)) in row.delta_loss_stat.iter().zip(&row.dist_l2).enumerate() {
            let _ = writeln!(out, "{},{},{},{}", row.t, trial, s, d);
        }
    }
    out
}

/// OLS slope of `ln mean_dist` on `ln T` with its standard error.
pub fn convergence_rate_fit(per_t: &[PerT]) -> Result<(f64, f64)> {
    if per_t.len() < 3 {
        return Err(Error::DegenerateDesign(format!(
            "{} T value(s); need at least 3",
            per_t.len()
        )));
    }
    let points: Vec<(f64, f64)> = per_t.iter().map(|r| ((r.t as f64).ln(), r.mean_dist.ln())).collect();
    let fit = ols(&points)?;
    Ok((fit.scaling_alpha, fit.alpha_stderr))
}

#[derive(Debug, Clone, PartialEq)]
pub struct FisherCheck {
    pub hessian: DMatrix<f64>,
    /// Population covariance of per-model gradients.
    pub score_cov: DMatrix<f64>,
    pub rel_err: f64,
    pub min_eigenvalue: f64,
}

/// Compares `Cov_M(∇ℓ_i(x))` against the finite-difference Hessian of the pool mean.
pub fn fisher_check(pool: &[PrototypeModel], x: &[f64], y: usize, step: f64) -> Result<FisherCheck> {
    let hessian = hessian_fd(|p| population_grad(p, pool, y), x, step)?;
    let d = x.len();
    let grads: Vec<Vec<f64>> = pool.iter().map(|m| m.loss_grad(x, y).1).collect();
    let mean = running_mean(grads.iter().map(Vec::as_slice), d);
    let mut score_cov = DMatrix::zeros(d, d);
    for g in &grads {
        let c = nalgebra::DVector::from_iterator(d, g.iter().zip(&mean).map(|(a, m)| a - m));
        score_cov += &c * c.transpose();
    }
    score_cov /= pool.len() as f64;
    let rel_err = (&score_cov - &hessian).norm() / hessian.norm();
    let min_eigenvalue = hessian.clone().symmetric_eigen().eigenvalues.min();
    Ok(FisherCheck {
        hessian,
        score_cov,
        rel_err,
        min_eigenvalue,
    })
}

fn mean_var(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var)
}

pub(crate) fn oracle_pool(cfg: &TheoryConfig, anchors: &[Vec<f64>]) -> Vec<PrototypeModel> {
    let root = RngStream::new(cfg.seed, ORACLE_STREAM);
    (0..cfg.oracle_size)
        .into_par_iter()
        .map(|i| sample_with_anchors(cfg, anchors, &mut root.child(i as u64).rng()))
        .collect()
}

pub(crate) fn ensemble(cfg: &TheoryConfig, anchors: &[Vec<f64>], t: usize, trial: usize) -> Vec<PrototypeModel> {
    let mut rng = RngStream::new(cfg.seed, ENSEMBLE_STREAM)
        .path(&[t as u64, trial as u64])
        .rng();
    (0..t).map(|_| sample_with_anchors(cfg, anchors, &mut rng)).collect()
}

/// Runs every (T, trial) pair and summarizes against the χ²(D) and covariance limits.
pub fn verify_clt(cfg: &TheoryConfig) -> Result<TheoryReport> {
    cfg.validate()?;
    let y = cfg.target_class;
    let anchors = class_anchors(cfg);
    let oracle = oracle_pool(cfg, &anchors);
    let xstar = find_xstar(&oracle, y, cfg.tol, cfg.max_iter)?;
    let l_star = population_loss(&xstar.x, &oracle, y)?;

    let units: Vec<(usize, usize)> = cfg
        .t_values
        .iter()
        .flat_map(|&t| (0..cfg.trials_per_t).map(move |trial| (t, trial)))
        .collect();
    let samples: Vec<(f64, f64, Vec<f64>)> = units
        .par_iter()
        .map(|&(t, trial)| {
            let run = || -> Result<(f64, f64, Vec<f64>)> {
                let members = ensemble(cfg, &anchors, t, trial);
                let xhat = find_xhat(&members, y, cfg.tol, cfg.max_iter)?;
                let stat = 2.0 * t as f64 * (population_loss(&xhat.x, &oracle, y)? - l_star);
                let diff: Vec<f64> = xhat.x.iter().zip(&xstar.x).map(|(a, b)| a - b).collect();
                let dist = diff.iter().map(|v| v * v).sum::<f64>().sqrt();
                Ok((stat, dist, diff))
            };
            run().map_err(|e| Error::Trial {
                t,
                trial,
                source: Box::new(e),
            })
        })
        .collect::<Result<_>>()?;

    let per_t: Vec<PerT> = cfg
        .t_values
        .iter()
        .enumerate()
        .map(|(i, &t)| {
            let chunk = &samples[i * cfg.trials_per_t..(i + 1) * cfg.trials_per_t];
            let stats: Vec<f64> = chunk.iter().map(|s| s.0).collect();
            let dists: Vec<f64> = chunk.iter().map(|s| s.1).collect();
            let (chi_mean, chi_var) = mean_var(&stats);
            let mean_dist = dists.iter().sum::<f64>() / dists.len() as f64;
            PerT {
                t,
                delta_loss_stat: stats,
                dist_l2: dists,
                chi_mean,
                chi_var,
                mean_dist,
            }
        })
        .collect();

    let fisher = fisher_check(&oracle, &xstar.x, y, cfg.hessian_step)?;

    let (t_max_idx, &t_max) = cfg
        .t_values
        .iter()
        .enumerate()
        .max_by_key(|(_, t)| **t)
        .expect("validated non-empty");
    let chunk = &samples[t_max_idx * cfg.trials_per_t..(t_max_idx + 1) * cfg.trials_per_t];
    let xhat_cov_rel_err = match fisher.hessian.clone().try_inverse() {
        Some(h_inv) => {
            let d = cfg.dim;
            let n = chunk.len() as f64;
            let scaled: Vec<Vec<f64>> = chunk
                .iter()
                .map(|s| s.2.iter().map(|v| v * (t_max as f64).sqrt()).collect())
                .collect();
            let mut mean = vec![0.0; d];
            for z in &scaled {
                mean.iter_mut().zip(z).for_each(|(a, b)| *a += b / n);
            }
            let mut cov = DMatrix::zeros(d, d);
            for z in &scaled {
                let c = nalgebra::DVector::from_iterator(d, z.iter().zip(&mean).map(|(a, m)| a - m));
                cov += &c * c.transpose();
            }
            cov /= n - 1.0;
            (&cov - &h_inv).norm() / h_inv.norm()
        }
        None => f64::NAN,
    };

    let (rate_slope, rate_stderr) = convergence_rate_fit(&per_t).unwrap_or((f64::NAN, f64::NAN));
    let top = &per_t[t_max_idx];
    let d = cfg.dim as f64;
    let tol = &cfg.tolerances;
    let checks = vec![
        Check::new(
            "chi_mean",
            top.chi_mean,
            d * (1.0 - tol.chi_mean_band),
            d * (1.0 + tol.chi_mean_band),
        ),
        Check::new("fisher_frobenius_rel_err", fisher.rel_err, 0.0, tol.fisher_max_rel_err),
        Check::new("xhat_cov_rel_err", xhat_cov_rel_err, 0.0, tol.xhat_cov_max_rel_err),
        Check::new("rate_slope", rate_slope, tol.rate_slope_min, tol.rate_slope_max),
        Check::new("hessian_min_eigenvalue", fisher.min_eigenvalue, -1e-8, f64::INFINITY),
    ];
    let passed = checks.iter().all(|c| c.pass);
    Ok(TheoryReport {
        config: cfg.clone(),
        x_star: xstar.x,
        x_star_loss: l_star,
        x_star_iterations: xstar.iterations,
        chi_target_mean: d,
        chi_target_var: 2.0 * d,
        chi_mean: top.chi_mean,
        chi_var: top.chi_var,
        per_t,
        rate_slope,
        rate_stderr,
        fisher_frobenius_rel_err: fisher.rel_err,
        hessian_min_eigenvalue: fisher.min_eigenvalue,
        xhat_cov_rel_err,
        checks,
        passed,
    })
}
