//! Closed-form bounds: matrix norms, the spectral-norm PAC-Bayes complexity
//! term and margin generalization gap, the margin-to-squared-error conversion
//! `R(r, γ)` with the μ bounds built on it, the Markov bound on G_ε, the
//! encoded cluster-margin η′ and the semi-supervised rate term
//! `((ln m)² / m)^{1/N}`.
//!
//! The big-O constant of the generalization gap is taken to be 1.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::{validate_gamma, MarginConfig};
use crate::matrix::{norm2, Matrix};
use crate::nn::NetworkParams;

pub const SPECTRAL_TOL: f64 = 1e-9;
pub const SPECTRAL_MAX_ITER: usize = 10_000;
const SPECTRAL_SEED: u64 = 0x005e_ed0f_5eed;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpectralNorm {
    pub value: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Largest singular value by power iteration on `WᵀW` (or `WWᵀ`, whichever is
/// smaller) from a seeded uniform start. Stops when successive Rayleigh
/// quotients differ by at most `tol` relative; otherwise returns the last
/// estimate with `converged = false`.
pub fn spectral_norm(w: &Matrix, tol: f64, max_iter: usize) -> SpectralNorm {
    assert!(tol > 0.0, "tol must be positive");
    let wide = w.rows() < w.cols();
    let n = if wide { w.rows() } else { w.cols() };
    let mut rng = ChaCha8Rng::seed_from_u64(SPECTRAL_SEED);
    let mut v: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let nv = norm2(&v);
    v.iter_mut().for_each(|x| *x /= nv);

    // gram(v) = AᵀA v with A = W (tall) or Wᵀ (wide)
    let gram = |v: &[f64]| -> (f64, Vec<f64>) {
        let u = if wide {
            w.matvec_transposed_unchecked(v)
        } else {
            w.matvec_unchecked(v)
        };
        let rq: f64 = u.iter().map(|x| x * x).sum();
        let g = if wide {
            w.matvec_unchecked(&u)
        } else {
            w.matvec_transposed_unchecked(&u)
        };
        (rq, g)
    };

    let mut prev = f64::NAN;
    for it in 1..=max_iter {
        let (rq, g) = gram(&v);
        let ng = norm2(&g);
        if ng == 0.0 {
            return SpectralNorm {
                value: 0.0,
                iterations: it,
                converged: true,
            };
        }
        if (rq - prev).abs() <= tol * rq {
            return SpectralNorm {
                value: rq.sqrt(),
                iterations: it,
                converged: true,
            };
        }
        prev = rq;
        v = g.into_iter().map(|x| x / ng).collect();
    }
    let (rq, _) = gram(&v);
    SpectralNorm {
        value: rq.sqrt(),
        iterations: max_iter,
        converged: false,
    }
}

pub fn spectral_norm_default(w: &Matrix) -> SpectralNorm {
    spectral_norm(w, SPECTRAL_TOL, SPECTRAL_MAX_ITER)
}

pub fn frobenius_norm(w: &Matrix) -> f64 {
    norm2(w.values())
}

/// Per-layer spectral and Frobenius norms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerNorms {
    pub spectral: Vec<f64>,
    pub frobenius: Vec<f64>,
    pub all_converged: bool,
}

impl LayerNorms {
    pub fn of(params: &NetworkParams) -> Self {
        let mut spectral = Vec::with_capacity(params.depth());
        let mut frobenius = Vec::with_capacity(params.depth());
        let mut all_converged = true;
        for w in params.weights() {
            let s = spectral_norm_default(w);
            all_converged &= s.converged;
            spectral.push(s.value);
            frobenius.push(frobenius_norm(w));
        }
        Self {
            spectral,
            frobenius,
            all_converged,
        }
    }
}

/// `B² d² h ln(dh) Π‖W_i‖₂² Σ ‖W_i‖_F² / ‖W_i‖₂²` from precomputed norms.
pub fn complexity_from_norms(b: f64, h: usize, norms: &LayerNorms) -> Result<f64> {
    let d = norms.spectral.len();
    if d == 0 || d != norms.frobenius.len() {
        return Err(Error::invalid(
            "norm lists must be non-empty and of equal length",
        ));
    }
    if !(b > 0.0) {
        return Err(Error::invalid(format!(
            "input norm bound B must be positive, got {b}"
        )));
    }
    let dh = (d * h) as f64;
    if dh <= 1.0 {
        return Err(Error::invalid(
            "complexity term needs d*h > 1 so that ln(dh) > 0",
        ));
    }
    if let Some(i) = norms.spectral.iter().position(|&s| !(s > 0.0)) {
        return Err(Error::Degenerate(format!(
            "layer {i} has zero spectral norm"
        )));
    }
    let d = d as f64;
    let prod_sq: f64 = norms.spectral.iter().map(|s| s * s).product();
    let ratio_sum: f64 = norms
        .spectral
        .iter()
        .zip(&norms.frobenius)
        .map(|(s, f)| (f * f) / (s * s))
        .sum();
    let c = b * b * d * d * h as f64 * dh.ln() * prod_sq * ratio_sum;
    if !c.is_finite() {
        return Err(Error::Numeric("complexity term overflowed".into()));
    }
    Ok(c)
}

pub fn complexity_term(params: &NetworkParams, b: f64) -> Result<f64> {
    complexity_from_norms(b, params.max_width(), &LayerNorms::of(params))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundInputs {
    /// Largest input L2 norm.
    pub b: f64,
    /// Training-set size.
    pub m: usize,
    pub delta: f64,
    pub margins: MarginConfig,
    pub depth: usize,
    pub max_width: usize,
    pub input_dim: usize,
}

impl BoundInputs {
    pub fn for_network(
        params: &NetworkParams,
        b: f64,
        m: usize,
        delta: f64,
        margins: MarginConfig,
    ) -> Self {
        Self {
            b,
            m,
            delta,
            margins,
            depth: params.depth(),
            max_width: params.max_width(),
            input_dim: params.input_dim(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.margins.validate()?;
        if self.m < 2 {
            return Err(Error::invalid(format!(
                "sample size m must be >= 2, got {}",
                self.m
            )));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::invalid(format!(
                "delta must lie in (0,1), got {}",
                self.delta
            )));
        }
        if !(self.b > 0.0) || !self.b.is_finite() {
            return Err(Error::invalid(format!(
                "B must be positive, got {}",
                self.b
            )));
        }
        if self.depth == 0 || self.max_width == 0 {
            return Err(Error::invalid("depth and width must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeneralizationBound {
    pub complexity: f64,
    /// `√((C + ln(dm/δ)) / ((γ₂-γ₁)² m))`.
    pub delta_term: f64,
    /// `delta_term / √C`, the complexity-normalized gap.
    pub delta_term_normalized: f64,
    pub margin_loss_hat_g2: f64,
    /// Upper bound on the expected γ₁-margin loss.
    pub margin_bound_g1: f64,
}

/// Gap term from a known complexity value.
pub fn delta_term(complexity: f64, inputs: &BoundInputs) -> Result<f64> {
    inputs.validate()?;
    let gap = inputs.margins.gamma2 - inputs.margins.gamma1;
    let m = inputs.m as f64;
    let log_term = (inputs.depth as f64 * m / inputs.delta).ln();
    Ok(((complexity + log_term) / (gap * gap * m)).sqrt())
}

pub fn generalization_bound(
    params: &NetworkParams,
    inputs: &BoundInputs,
    margin_loss_hat_g2: f64,
) -> Result<GeneralizationBound> {
    generalization_bound_from_norms(&LayerNorms::of(params), inputs, margin_loss_hat_g2)
}

pub fn generalization_bound_from_norms(
    norms: &LayerNorms,
    inputs: &BoundInputs,
    margin_loss_hat_g2: f64,
) -> Result<GeneralizationBound> {
    inputs.validate()?;
    if !(0.0..=1.0).contains(&margin_loss_hat_g2) {
        return Err(Error::invalid(format!(
            "empirical margin loss must lie in [0,1], got {margin_loss_hat_g2}"
        )));
    }
    if norms.spectral.len() != inputs.depth {
        return Err(Error::Dimension {
            context: "bound depth",
            expected: inputs.depth,
            got: norms.spectral.len(),
        });
    }
    let complexity = complexity_from_norms(inputs.b, inputs.max_width, norms)?;
    let delta_term = delta_term(complexity, inputs)?;
    Ok(GeneralizationBound {
        complexity,
        delta_term,
        delta_term_normalized: delta_term / complexity.sqrt(),
        margin_loss_hat_g2,
        margin_bound_g1: margin_loss_hat_g2 + delta_term,
    })
}

fn validate_r(r: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&r) {
        return Err(Error::invalid(format!(
            "margin loss r must lie in [0,1], got {r}"
        )));
    }
    Ok(())
}

/// `R(r, γ) = rM + (1/2 - γ)² (1 - r) M`: worst-case squared error given a
/// γ-margin loss of at most `r`.
pub fn r_to_se_bound(r: f64, gamma: f64, input_dim: usize) -> Result<f64> {
    validate_r(r)?;
    validate_gamma(gamma)?;
    let m = input_dim as f64;
    let a = 0.5 - gamma;
    Ok(r * m + a * a * (1.0 - r) * m)
}

/// `√R(r, γ)`.
pub fn mu_bound_worst(r: f64, gamma: f64, input_dim: usize) -> Result<f64> {
    r_to_se_bound(r, gamma, input_dim).map(f64::sqrt)
}

/// μ bound assuming entry errors sit, on average, halfway through their
/// admissible ranges.
pub fn mu_bound_symmetric(r: f64, gamma: f64, input_dim: usize) -> Result<f64> {
    validate_r(r)?;
    validate_gamma(gamma)?;
    let m = input_dim as f64;
    let a2 = (0.5 - gamma) * (0.5 - gamma);
    Ok(((a2 + 1.0) / 2.0 * r * m + a2 / 2.0 * (1.0 - r) * m).sqrt())
}

/// Markov bound on the mass outside G_ε: `min(1, μ/ε)`.
pub fn markov_geps_bound(mu: f64, epsilon: f64) -> Result<f64> {
    if !(mu >= 0.0) {
        return Err(Error::invalid(format!("mu must be >= 0, got {mu}")));
    }
    if !(epsilon > 0.0) {
        return Err(Error::invalid(format!(
            "epsilon must be positive, got {epsilon}"
        )));
    }
    Ok((mu / epsilon).min(1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EtaPrime {
    pub value: f64,
    /// Set when the guaranteed encoded margin is not positive.
    pub vacuous: bool,
}

/// `η′ = (η - 2(μ + ε)) / C`.
pub fn eta_prime_theoretical(eta: f64, mu: f64, epsilon: f64, lipschitz: f64) -> Result<EtaPrime> {
    if !(lipschitz > 0.0) {
        return Err(Error::invalid(format!(
            "decoder Lipschitz constant must be positive, got {lipschitz}"
        )));
    }
    let value = (eta - 2.0 * (mu + epsilon)) / lipschitz;
    Ok(EtaPrime {
        value,
        vacuous: value <= 0.0,
    })
}

/// `((ln m)² / m)^{1/N}`.
pub fn ssl_term(m: usize, n: usize) -> Result<f64> {
    if m < 3 {
        return Err(Error::invalid(format!("ssl term needs m >= 3, got {m}")));
    }
    if n == 0 {
        return Err(Error::invalid("dimension N must be positive"));
    }
    let base = (m as f64).ln().powi(2) / m as f64;
    if base >= 1.0 {
        return Err(Error::invalid(format!(
            "(ln m)^2/m = {base:.4} >= 1 for m = {m}; outside the bound's regime"
        )));
    }
    Ok(base.powf(1.0 / n as f64))
}

/// Multiplicative improvement of the rate term when the learner works in
/// `n_b` instead of `n` dimensions.
pub fn improvement_factor(m: usize, n: usize, n_b: usize) -> Result<f64> {
    if n_b == 0 || n_b > n {
        return Err(Error::invalid(format!(
            "need 0 < N_b <= N, got N_b = {n_b}, N = {n}"
        )));
    }
    Ok(ssl_term(m, n)? / ssl_term(m, n_b)?)
}

/// Every bound quantity for one trained model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub m: usize,
    pub input_dim: usize,
    pub code_dim: usize,
    pub depth: usize,
    pub max_width: usize,
    pub b: f64,
    pub delta: f64,
    pub gamma1: f64,
    pub gamma2: f64,
    pub spectral_norms: Vec<f64>,
    pub frobenius_norms: Vec<f64>,
    pub spectral_norms_converged: bool,
    pub complexity: f64,
    pub delta_term: f64,
    pub delta_term_normalized: f64,
    pub margin_loss_hat_g2: f64,
    pub margin_bound_g1: f64,
    pub test_margin_loss_g1: f64,
    pub r_worst: f64,
    pub mu_hat: f64,
    pub mu_bound_worst: f64,
    pub mu_bound_symmetric: f64,
    /// Ratios `mu_bound_* / mu_hat`, logged for comparison only.
    pub looseness_worst: f64,
    pub looseness_symmetric: f64,
    pub epsilon: f64,
    /// Cluster-margin quantities need labels; `None` for unlabelled data.
    pub eta: Option<f64>,
    pub eta_prime_empirical: Option<f64>,
    pub eta_prime_theoretical: Option<f64>,
    pub eta_prime_vacuous: Option<bool>,
    pub lipschitz_upper: f64,
    pub lipschitz_empirical: f64,
    pub improvement_factor: f64,
    /// `((ln m)²/m)^{1/N_b}` with the unknown constant set to 1.
    pub ssl_condition_rhs_c0_1: f64,
    /// True for networks with biases, which the bound does not cover.
    pub outside_theorem_assumptions: bool,
}
