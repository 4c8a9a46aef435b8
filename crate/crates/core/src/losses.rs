//! Reconstruction-quality measures: the entry-wise γ-margin loss, squared
//! error, the mean L2 error μ̂ and membership in the set G_ε of inputs whose
//! L2 error exceeds the reference mean by less than ε.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{check_len, Error, Result};
use crate::nn::NetworkParams;

/// Margin pair `0 < gamma1 < gamma2 < 1/2` used by the generalization bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MarginConfig {
    pub gamma1: f64,
    pub gamma2: f64,
}

impl Default for MarginConfig {
    fn default() -> Self {
        Self {
            gamma1: 0.45,
            gamma2: 0.49,
        }
    }
}

impl MarginConfig {
    pub fn new(gamma1: f64, gamma2: f64) -> Result<Self> {
        let c = Self { gamma1, gamma2 };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        validate_gamma(self.gamma1)?;
        validate_gamma(self.gamma2)?;
        if self.gamma2 <= self.gamma1 {
            return Err(Error::invalid(format!(
                "gamma2 ({}) must exceed gamma1 ({})",
                self.gamma2, self.gamma1
            )));
        }
        Ok(())
    }
}

pub(crate) fn validate_gamma(gamma: f64) -> Result<()> {
    if !(gamma > 0.0 && gamma < 0.5) {
        return Err(Error::invalid(format!(
            "gamma must lie in (0, 1/2), got {gamma}"
        )));
    }
    Ok(())
}

/// Fraction of entries with `|x[j] - xhat[j]| > 1/2 - gamma`. Deviations equal
/// to the threshold count as reconstructed.
pub fn margin_loss(x: &[f64], xhat: &[f64], gamma: f64) -> Result<f64> {
    validate_gamma(gamma)?;
    check_len("margin_loss reconstruction", x.len(), xhat.len())?;
    if x.is_empty() {
        return Err(Error::invalid("margin_loss of an empty vector"));
    }
    if x.iter().any(|&v| v != 0.0 && v != 1.0) {
        return Err(Error::invalid("margin_loss requires binary inputs"));
    }
    Ok(margin_loss_unchecked(x, xhat, gamma))
}

fn margin_loss_unchecked(x: &[f64], xhat: &[f64], gamma: f64) -> f64 {
    let threshold = 0.5 - gamma;
    let missed = x
        .iter()
        .zip(xhat)
        .filter(|(a, b)| (*a - *b).abs() > threshold)
        .count();
    missed as f64 / x.len() as f64
}

/// `‖x - xhat‖²`.
pub fn se_loss(x: &[f64], xhat: &[f64]) -> Result<f64> {
    check_len("se_loss reconstruction", x.len(), xhat.len())?;
    Ok(x.iter().zip(xhat).map(|(a, b)| (a - b) * (a - b)).sum())
}

/// `‖x - xhat‖`.
pub fn l2_error(x: &[f64], xhat: &[f64]) -> Result<f64> {
    se_loss(x, xhat).map(f64::sqrt)
}

/// Reconstructions `f(x_i)` for every sample, in sample order.
pub fn reconstruct(f: &NetworkParams, data: &Dataset) -> Result<Vec<Vec<f64>>> {
    check_len("dataset dimension", f.input_dim(), data.dim())?;
    check_len("reconstruction output", f.input_dim(), f.output_dim())?;
    data.samples().par_iter().map(|x| f.forward(x)).collect()
}

pub fn empirical_margin_loss(f: &NetworkParams, data: &Dataset, gamma: f64) -> Result<f64> {
    validate_gamma(gamma)?;
    if data.is_empty() {
        return Err(Error::invalid("empirical margin loss of an empty dataset"));
    }
    let recon = reconstruct(f, data)?;
    Ok(mean_margin_loss(data.samples(), &recon, gamma))
}

fn mean_margin_loss(xs: &[Vec<f64>], recon: &[Vec<f64>], gamma: f64) -> f64 {
    let total: f64 = xs
        .iter()
        .zip(recon)
        .map(|(x, r)| margin_loss_unchecked(x, r, gamma))
        .sum();
    total / xs.len() as f64
}

/// Per-sample `‖f(x_i) - x_i‖`.
pub fn per_sample_l2(f: &NetworkParams, data: &Dataset) -> Result<Vec<f64>> {
    let recon = reconstruct(f, data)?;
    Ok(data
        .samples()
        .iter()
        .zip(&recon)
        .map(|(x, r)| crate::matrix::dist2(x, r))
        .collect())
}

/// Empirical mean L2 reconstruction error.
pub fn mu_hat(f: &NetworkParams, data: &Dataset) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::invalid("mu_hat of an empty dataset"));
    }
    let l2 = per_sample_l2(f, data)?;
    Ok(l2.iter().sum::<f64>() / l2.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReconMetrics {
    pub gamma: f64,
    pub margin_loss_hat: f64,
    pub se_loss_mean: f64,
    pub mu_hat: f64,
    pub per_sample_l2: Vec<f64>,
    pub per_sample_margin_loss: Vec<f64>,
}

pub fn recon_metrics(f: &NetworkParams, data: &Dataset, gamma: f64) -> Result<ReconMetrics> {
    validate_gamma(gamma)?;
    if data.is_empty() {
        return Err(Error::invalid("metrics of an empty dataset"));
    }
    let recon = reconstruct(f, data)?;
    let n = data.len() as f64;
    let mut per_sample_l2 = Vec::with_capacity(data.len());
    let mut per_sample_margin_loss = Vec::with_capacity(data.len());
    let mut se_total = 0.0;
    for (x, r) in data.samples().iter().zip(&recon) {
        let se: f64 = x.iter().zip(r).map(|(a, b)| (a - b) * (a - b)).sum();
        se_total += se;
        per_sample_l2.push(se.sqrt());
        per_sample_margin_loss.push(margin_loss_unchecked(x, r, gamma));
    }
    Ok(ReconMetrics {
        gamma,
        margin_loss_hat: per_sample_margin_loss.iter().sum::<f64>() / n,
        se_loss_mean: se_total / n,
        mu_hat: per_sample_l2.iter().sum::<f64>() / n,
        per_sample_l2,
        per_sample_margin_loss,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GEpsilon {
    pub mask: Vec<bool>,
    pub fraction_in: f64,
}

/// Membership in G_ε given precomputed per-sample L2 errors.
pub fn g_epsilon_from_l2(per_sample_l2: &[f64], epsilon: f64, mu_ref: f64) -> Result<GEpsilon> {
    if !(epsilon > 0.0) {
        return Err(Error::invalid(format!(
            "epsilon must be positive, got {epsilon}"
        )));
    }
    if !(mu_ref >= 0.0) || !mu_ref.is_finite() {
        return Err(Error::invalid(format!(
            "mu_ref must be finite and >= 0, got {mu_ref}"
        )));
    }
    if per_sample_l2.is_empty() {
        return Err(Error::invalid("G_epsilon of an empty sample"));
    }
    let mask: Vec<bool> = per_sample_l2
        .iter()
        .map(|&e| e - mu_ref < epsilon)
        .collect();
    let fraction_in = mask.iter().filter(|&&b| b).count() as f64 / mask.len() as f64;
    Ok(GEpsilon { mask, fraction_in })
}

pub fn g_epsilon(f: &NetworkParams, data: &Dataset, epsilon: f64, mu_ref: f64) -> Result<GEpsilon> {
    let l2 = per_sample_l2(f, data)?;
    g_epsilon_from_l2(&l2, epsilon, mu_ref)
}
