//! Exact Gaussian-process regression with a squared-exponential kernel.
//!
//! Hyperparameters are fixed from config; no marginal-likelihood tuning.
//! Point counts stay tiny (one per trial), so a dense Cholesky solve is all
//! the machinery needed.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const JITTER: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GpConfig {
    /// Per-dimension length scales in the same units as the inputs.
    pub lengthscales: Vec<f64>,
    pub signal_var: f64,
    pub noise_var: f64,
    /// Fixed prior mean; `None` uses the mean of the observations.
    pub prior_mean: Option<f64>,
}

impl GpConfig {
    /// Length scales set to `frac` of each dimension's width.
    pub fn for_bounds(bounds: &[(f64, f64)], frac: f64, signal_var: f64, noise_var: f64) -> Self {
        GpConfig {
            lengthscales: bounds.iter().map(|(lo, hi)| frac * (hi - lo)).collect(),
            signal_var,
            noise_var,
            prior_mean: None,
        }
    }
}

/// Fitted surrogate: observations plus the factored kernel matrix.
#[derive(Debug, Clone)]
pub struct GpSurrogate {
    xs: Vec<Vec<f64>>,
    ys: Vec<f64>,
    cfg: GpConfig,
    prior_mean: f64,
    /// Lower-triangular Cholesky factor of K + (noise + jitter) I.
    chol: Vec<f64>,
    /// (K + noise I)^-1 (y - prior_mean)
    alpha: Vec<f64>,
}

/// Fit an exact GP to observed (x, y) points.
pub fn gp_fit(points: &[(Vec<f64>, f64)], cfg: &GpConfig) -> Result<GpSurrogate> {
    if points.is_empty() {
        return Err(Error::EmptyInput("gp_fit needs at least one point".into()));
    }
    let n = points.len();
    let xs: Vec<Vec<f64>> = points.iter().map(|(x, _)| x.clone()).collect();
    let ys: Vec<f64> = points.iter().map(|(_, y)| *y).collect();
    let prior_mean = cfg
        .prior_mean
        .unwrap_or_else(|| ys.iter().sum::<f64>() / n as f64);

    let mut k = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let v = kernel(&xs[i], &xs[j], cfg);
            k[i * n + j] = v;
            k[j * n + i] = v;
        }
        k[i * n + i] += cfg.noise_var + JITTER;
    }
    let chol = cholesky(&k, n).ok_or(Error::SingularSystem)?;
    let resid: Vec<f64> = ys.iter().map(|y| y - prior_mean).collect();
    let alpha = chol_solve(&chol, n, &resid);

    Ok(GpSurrogate {
        xs,
        ys,
        cfg: cfg.clone(),
        prior_mean,
        chol,
        alpha,
    })
}

impl GpSurrogate {
    pub fn len(&self) -> usize {
        self.xs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.xs.is_empty()
    }

    /// Lowest observed value and its input.
    pub fn best_observed(&self) -> (&[f64], f64) {
        let mut best = 0;
        for i in 1..self.ys.len() {
            if self.ys[i] < self.ys[best] {
                best = i;
            }
        }
        (&self.xs[best], self.ys[best])
    }

    /// Posterior mean and variance of the latent function at `x`.
    pub fn posterior(&self, x: &[f64]) -> (f64, f64) {
        let n = self.xs.len();
        let kx: Vec<f64> = self
            .xs
            .iter()
            .map(|xi| kernel(xi, x, &self.cfg))
            .collect();
        let mean = self.prior_mean
            + kx.iter()
                .zip(&self.alpha)
                .map(|(k, a)| k * a)
                .sum::<f64>();
        // var = k(x,x) - v^T v with v = L^-1 kx
        let v = forward_sub(&self.chol, n, &kx);
        let var = self.cfg.signal_var - v.iter().map(|vi| vi * vi).sum::<f64>();
        (mean, var.max(0.0))
    }
}

fn kernel(a: &[f64], b: &[f64], cfg: &GpConfig) -> f64 {
    let mut d2 = 0.0;
    for ((ai, bi), l) in a.iter().zip(b).zip(&cfg.lengthscales) {
        let z = (ai - bi) / l;
        d2 += z * z;
    }
    cfg.signal_var * (-0.5 * d2).exp()
}

/// Dense Cholesky; returns the lower factor or `None` if not positive
/// definite.
fn cholesky(k: &[f64], n: usize) -> Option<Vec<f64>> {
    let mut l = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let mut sum = k[i * n + j];
            for p in 0..j {
                sum -= l[i * n + p] * l[j * n + p];
            }
            if i == j {
                if sum <= 0.0 {
                    return None;
                }
                l[i * n + i] = sum.sqrt();
            } else {
                l[i * n + j] = sum / l[j * n + j];
            }
        }
    }
    Some(l)
}

/// Solve L z = b.
fn forward_sub(l: &[f64], n: usize, b: &[f64]) -> Vec<f64> {
    let mut z = vec![0.0; n];
    for i in 0..n {
        let mut sum = b[i];
        for j in 0..i {
            sum -= l[i * n + j] * z[j];
        }
        z[i] = sum / l[i * n + i];
    }
    z
}

/// Solve (L L^T) x = b.
fn chol_solve(l: &[f64], n: usize, b: &[f64]) -> Vec<f64> {
    let z = forward_sub(l, n, b);
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let mut sum = z[i];
        for j in i + 1..n {
            sum -= l[j * n + i] * x[j];
        }
        x[i] = sum / l[i * n + i];
    }
    x
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg_1d(l: f64, s2: f64, noise: f64) -> GpConfig {
        GpConfig {
            lengthscales: vec![l],
            signal_var: s2,
            noise_var: noise,
            prior_mean: Some(0.0),
        }
    }

    #[test]
    fn single_point_interpolates() {
        let cfg = cfg_1d(0.5, 1.0, 0.0);
        let gp = gp_fit(&[(vec![0.3], 0.7)], &cfg).unwrap();
        let (m, v) = gp.posterior(&[0.3]);
        assert!((m - 0.7).abs() < 1e-6);
        assert!(v < 1e-6);
    }

    #[test]
    fn reverts_to_prior_far_from_data() {
        let cfg = GpConfig {
            prior_mean: Some(0.25),
            ..cfg_1d(0.1, 0.8, 1e-4)
        };
        let gp = gp_fit(&[(vec![0.0], 0.9)], &cfg).unwrap();
        let (m, v) = gp.posterior(&[50.0]);
        assert!((m - 0.25).abs() < 1e-9);
        assert!((v - 0.8).abs() < 1e-9);
    }

    #[test]
    fn two_point_posterior_matches_direct_inverse() {
        // independent oracle: direct 2x2 inversion
        let cfg = cfg_1d(0.4, 0.9, 1e-3);
        let (x1, y1) = (0.2, 0.5);
        let (x2, y2) = (0.8, 0.1);
        let gp = gp_fit(&[(vec![x1], y1), (vec![x2], y2)], &cfg).unwrap();
        let q = 0.5;

        let k = |a: f64, b: f64| 0.9 * (-0.5 * ((a - b) / 0.4_f64).powi(2)).exp();
        let (a11, a12, a22) = (
            k(x1, x1) + 1e-3 + 1e-8,
            k(x1, x2),
            k(x2, x2) + 1e-3 + 1e-8,
        );
        let det = a11 * a22 - a12 * a12;
        let (i11, i12, i22) = (a22 / det, -a12 / det, a11 / det);
        let (k1, k2) = (k(q, x1), k(q, x2));
        let a1 = i11 * y1 + i12 * y2;
        let a2 = i12 * y1 + i22 * y2;
        let mean = k1 * a1 + k2 * a2;
        let var = k(q, q)
            - (k1 * (i11 * k1 + i12 * k2) + k2 * (i12 * k1 + i22 * k2));

        let (m, v) = gp.posterior(&[q]);
        assert!((m - mean).abs() < 1e-10, "mean {m} vs oracle {mean}");
        assert!((v - var).abs() < 1e-10, "var {v} vs oracle {var}");
    }

    #[test]
    fn duplicate_points_survive_via_jitter() {
        let cfg = cfg_1d(0.5, 1.0, 0.0);
        let gp = gp_fit(&[(vec![0.3], 0.7), (vec![0.3], 0.7)], &cfg).unwrap();
        let (m, _) = gp.posterior(&[0.3]);
        assert!((m - 0.7).abs() < 1e-4);
    }

    #[test]
    fn best_observed_is_the_minimum() {
        let cfg = cfg_1d(0.5, 1.0, 1e-4);
        let gp = gp_fit(
            &[(vec![0.1], 0.5), (vec![0.5], 0.2), (vec![0.9], 0.8)],
            &cfg,
        )
        .unwrap();
        let (x, y) = gp.best_observed();
        assert_eq!(x, &[0.5]);
        assert_eq!(y, 0.2);
    }
}
