//! `ASR = α ln T + C` by ordinary least squares, plus rank correlation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    /// Slope on `ln T`.
    pub scaling_alpha: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub n_points: usize,
    /// OLS covariance of `(α, C)`; NaN when there are no residual degrees of freedom.
    pub covariance: [[f64; 2]; 2],
    pub alpha_stderr: f64,
    pub intercept_stderr: f64,
}

/// Least-squares line through `(x, y)`.
pub fn ols(points: &[(f64, f64)]) -> Result<FitResult> {
    let n = points.len();
    if n < 2 {
        return Err(Error::DegenerateDesign(format!("{n} point(s); need at least 2")));
    }
    if points.iter().any(|(x, y)| !x.is_finite() || !y.is_finite()) {
        return Err(Error::NonFinite("fit input".into()));
    }
    let nf = n as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / nf;
    let my = points.iter().map(|p| p.1).sum::<f64>() / nf;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = points.iter().map(|p| (p.1 - my).powi(2)).sum();
    let spread = points.iter().fold(0.0f64, |a, p| a.max((p.0 - mx).abs()));
    if sxx == 0.0 || spread <= 1e-12 * mx.abs().max(1.0) {
        return Err(Error::DegenerateDesign("all regressor values identical".into()));
    }
    let alpha = sxy / sxx;
    let intercept = my - alpha * mx;
    let ssr: f64 = points.iter().map(|p| (p.1 - intercept - alpha * p.0).powi(2)).sum();
    let r_squared = if syy == 0.0 {
        0.0
    } else {
        (1.0 - ssr / syy).clamp(0.0, 1.0)
    };
    let sigma2 = if n > 2 { ssr / (nf - 2.0) } else { f64::NAN };
    let var_alpha = sigma2 / sxx;
    let var_c = sigma2 * (1.0 / nf + mx * mx / sxx);
    let cov = -mx * sigma2 / sxx;
    Ok(FitResult {
        scaling_alpha: alpha,
        intercept,
        r_squared,
        n_points: n,
        covariance: [[var_alpha, cov], [cov, var_c]],
        alpha_stderr: var_alpha.sqrt(),
        intercept_stderr: var_c.sqrt(),
    })
}

/// Fits `asr = α ln T + C` over `(T, asr)` points.
pub fn fit_scaling_law(points: &[(f64, f64)]) -> Result<FitResult> {
    if let Some(&(t, _)) = points.iter().find(|(t, _)| !(*t >= 1.0)) {
        return Err(Error::DegenerateDesign(format!("T = {t} is below 1")));
    }
    let logged: Vec<(f64, f64)> = points.iter().map(|&(t, a)| (t.ln(), a)).collect();
    ols(&logged)
}

/// Average ranks (1-based), ties sharing their mean rank.
fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut out = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            out[k] = rank;
        }
        i = j + 1;
    }
    out
}

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    if va == 0.0 || vb == 0.0 {
        0.0
    } else {
        cov / (va * vb).sqrt()
    }
}

/// Spearman rank correlation; 0 when either rank vector is constant.
pub fn spearman(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "spearman needs paired samples");
    if a.len() < 2 {
        return 0.0;
    }
    pearson(&ranks(a), &ranks(b))
}
