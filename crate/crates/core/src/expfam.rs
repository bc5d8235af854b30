//! Normal-Inverse-Wishart, Dirichlet and fixed-covariance Normal algebra.
//!
//! The spatial posterior of each component is a Normal-Inverse-Wishart over
//! (μ, Σ), kept in natural-parameter form so that Bayesian updates are plain
//! additions of sufficient statistics:
//!
//! ```text
//! eta1 = κ·m          nu1 = κ
//! eta2 = V + κ·m·mᵀ   nu2 = n + D + 1
//! ```
//!
//! `V` is the Inverse-Wishart scale matrix, so E[Σ] = V / (n − D − 1) and
//! E[Σ⁻¹] = n·V⁻¹.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{cholesky_jittered, is_spd, log_det, symmetrize};
use crate::special::{digamma, ln_gamma, ln_multigamma, multidigamma};

/// Canonical NIW parameters (m, κ, V, n).
#[derive(Clone, Debug, PartialEq)]
pub struct CanonicalNiw {
    pub mean: DVector<f64>,
    pub kappa: f64,
    pub scale: DMatrix<f64>,
    pub dof: f64,
}

impl CanonicalNiw {
    /// Isotropic parameters: m = mean·1, V = scale·I.
    pub fn isotropic(dim: usize, mean: f64, kappa: f64, scale: f64, dof: f64) -> Self {
        Self {
            mean: DVector::from_element(dim, mean),
            kappa,
            scale: DMatrix::identity(dim, dim) * scale,
            dof,
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.dim();
        if self.scale.nrows() != d || self.scale.ncols() != d {
            return Err(Error::Dimension {
                expected: d,
                found: self.scale.nrows(),
            });
        }
        if !(self.kappa > 0.0) || !self.kappa.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "kappa must be positive, got {}",
                self.kappa
            )));
        }
        if !(self.dof > d as f64 - 1.0) {
            return Err(Error::InvalidParameter(format!(
                "degrees of freedom {} must exceed D - 1 = {}",
                self.dof,
                d - 1
            )));
        }
        if self.mean.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("mean is not finite".into()));
        }
        if !is_spd(&self.scale) {
            return Err(Error::InvalidParameter(
                "scale matrix is not symmetric positive definite".into(),
            ));
        }
        Ok(())
    }
}

/// Natural parameters of an NIW distribution.
#[derive(Clone, Debug, PartialEq)]
pub struct NiwNatural {
    pub eta1: DVector<f64>,
    pub eta2: DMatrix<f64>,
    pub nu1: f64,
    pub nu2: f64,
}

impl NiwNatural {
    pub fn from_canonical(c: &CanonicalNiw) -> Result<Self> {
        c.validate()?;
        let d = c.dim() as f64;
        Ok(Self {
            eta1: &c.mean * c.kappa,
            eta2: &c.scale + (&c.mean * c.mean.transpose()) * c.kappa,
            nu1: c.kappa,
            nu2: c.dof + d + 1.0,
        })
    }

    pub fn to_canonical(&self) -> Result<CanonicalNiw> {
        if !(self.nu1 > 0.0) || !self.nu1.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "nu1 must be positive, got {}",
                self.nu1
            )));
        }
        let d = self.dim() as f64;
        let mean = &self.eta1 / self.nu1;
        let mut scale = &self.eta2 - (&self.eta1 * self.eta1.transpose()) / self.nu1;
        symmetrize(&mut scale);
        let c = CanonicalNiw {
            mean,
            kappa: self.nu1,
            scale,
            dof: self.nu2 - d - 1.0,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn dim(&self) -> usize {
        self.eta1.len()
    }

    pub fn kappa(&self) -> f64 {
        self.nu1
    }

    pub fn dof(&self) -> f64 {
        self.nu2 - self.dim() as f64 - 1.0
    }

    pub fn mean(&self) -> DVector<f64> {
        &self.eta1 / self.nu1
    }

    /// V recovered from the natural parameters, without validation.
    pub fn scale(&self) -> DMatrix<f64> {
        let mut v = &self.eta2 - (&self.eta1 * self.eta1.transpose()) / self.nu1;
        symmetrize(&mut v);
        v
    }

    /// Adds weighted sufficient statistics: mass = Σγ, sum = Σγx, outer = Σγxxᵀ
    /// (row-major D×D).
    pub fn absorb(&mut self, mass: f64, sum: &[f64], outer: &[f64]) {
        let d = self.dim();
        for i in 0..d {
            self.eta1[i] += sum[i];
            for j in 0..d {
                self.eta2[(i, j)] += outer[i * d + j];
            }
        }
        self.nu1 += mass;
        self.nu2 += mass;
    }

    /// Inverse-Wishart mean V / (n − D − 1).
    pub fn expected_covariance(&self) -> Result<DMatrix<f64>> {
        let d = self.dim() as f64;
        let dof = self.dof();
        if !(dof > d + 1.0) {
            return Err(Error::UndefinedMoment(format!(
                "Inverse-Wishart mean needs n > D + 1, got n = {dof}"
            )));
        }
        Ok(self.scale() / (dof - d - 1.0))
    }

    /// Precomputes the terms of E_q[log N(x | μ, Σ)].
    pub fn log_likelihood_terms(&self) -> Result<NiwLogLikelihood> {
        NiwLogLikelihood::new(self)
    }

    /// E_q[log N(x | μ, Σ)] under q = NIW(m, κ, V, n).
    pub fn expected_log_likelihood(&self, x: &[f64]) -> Result<f64> {
        Ok(self.log_likelihood_terms()?.eval(x))
    }

    /// KL(self ‖ other).
    pub fn kl_divergence(&self, other: &NiwNatural) -> Result<f64> {
        let d = self.dim();
        let df = d as f64;
        let (kq, kp) = (self.nu1, other.nu1);
        let (nq, np) = (self.dof(), other.dof());
        let vq = self.scale();
        let vp = other.scale();
        let ch_q = cholesky_jittered(&vq)?;
        let ch_p = cholesky_jittered(&vp)?;
        let vq_inv = ch_q.inverse();
        let delta = self.mean() - other.mean();

        let trace = (&vp * &vq_inv).trace();
        let kl_iw = 0.5 * np * (log_det(&ch_q) - log_det(&ch_p))
            + 0.5 * nq * (trace - df)
            + ln_multigamma(0.5 * np, d)
            - ln_multigamma(0.5 * nq, d)
            + 0.5 * (nq - np) * multidigamma(0.5 * nq, d);
        let mahal = (delta.transpose() * &vq_inv * &delta)[(0, 0)];
        let kl_mean = 0.5 * (df * kp / kq + kp * nq * mahal - df + df * (kq / kp).ln());
        Ok(kl_iw + kl_mean)
    }
}

/// Sufficient statistics T(x) = (x, x·xᵀ) together with the count 1.
pub fn suffstats(x: &DVector<f64>) -> (DVector<f64>, DMatrix<f64>, f64) {
    (x.clone(), x * x.transpose(), 1.0)
}

/// E_q[log N(x | μ, Σ)] for a fixed NIW posterior, in a form cheap to evaluate
/// at many points:
///
/// ½·E[log|Λ|] − D/(2κ) − (D/2)·log 2π − ½·(x − m)ᵀ (n·V⁻¹) (x − m)
#[derive(Clone, Debug)]
pub struct NiwLogLikelihood {
    pub dim: usize,
    pub mean: Vec<f64>,
    /// n·V⁻¹, row-major.
    pub precision: Vec<f64>,
    pub constant: f64,
}

impl NiwLogLikelihood {
    pub fn new(p: &NiwNatural) -> Result<Self> {
        let d = p.dim();
        let df = d as f64;
        let dof = p.dof();
        let kappa = p.nu1;
        if !(kappa > 0.0) || !(dof > df - 1.0) {
            return Err(Error::InvalidParameter(format!(
                "invalid NIW posterior (kappa = {kappa}, n = {dof})"
            )));
        }
        let ch = cholesky_jittered(&p.scale())?;
        let elog_det_precision = multidigamma(0.5 * dof, d) + df * 2f64.ln() - log_det(&ch);
        let precision = ch.inverse() * dof;
        Ok(Self {
            dim: d,
            mean: p.mean().iter().copied().collect(),
            precision: precision.transpose().iter().copied().collect(),
            constant: 0.5 * elog_det_precision - 0.5 * df / kappa - 0.5 * df * (2.0 * PI).ln(),
        })
    }

    #[inline]
    pub fn eval(&self, x: &[f64]) -> f64 {
        self.constant - 0.5 * self.mahalanobis_sq(x)
    }

    #[inline]
    pub fn mahalanobis_sq(&self, x: &[f64]) -> f64 {
        let d = self.dim;
        let mut diff = [0.0f64; 8];
        for i in 0..d {
            diff[i] = x[i] - self.mean[i];
        }
        let mut q = 0.0;
        for i in 0..d {
            let row = &self.precision[i * d..(i + 1) * d];
            let mut acc = 0.0;
            for j in 0..d {
                acc += row[j] * diff[j];
            }
            q += diff[i] * acc;
        }
        q
    }
}

/// Posterior over a color mean with covariance fixed at ε·I:
/// q(μ_c) = N(m, (ε/κ)·I), q(Σ_c) = δ(εI).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ColorPosterior {
    pub mean: Vector3<f64>,
    pub kappa: f64,
    pub epsilon: f64,
}

impl ColorPosterior {
    pub fn new(mean: Vector3<f64>, kappa: f64, epsilon: f64) -> Result<Self> {
        if !(kappa > 0.0) || !(epsilon > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "color posterior needs kappa > 0 and epsilon > 0 (kappa = {kappa}, epsilon = {epsilon})"
            )));
        }
        Ok(Self {
            mean,
            kappa,
            epsilon,
        })
    }

    /// E_q[log N(c | μ_c, εI)] = −(3/2)·log(2πε) − (‖c − m‖² + 3ε/κ) / (2ε)
    #[inline]
    pub fn expected_log_likelihood(&self, c: &[f64]) -> f64 {
        let dist2 = (c[0] - self.mean[0]).powi(2)
            + (c[1] - self.mean[1]).powi(2)
            + (c[2] - self.mean[2]).powi(2);
        -1.5 * (2.0 * PI * self.epsilon).ln()
            - (dist2 + 3.0 * self.epsilon / self.kappa) / (2.0 * self.epsilon)
    }

    /// Conjugate update with weighted count `mass` and weighted color sum.
    pub fn absorb(&mut self, mass: f64, sum: &[f64]) {
        let kappa = self.kappa + mass;
        for i in 0..3 {
            self.mean[i] = (self.kappa * self.mean[i] + sum[i]) / kappa;
        }
        self.kappa = kappa;
    }

    /// KL(self ‖ other); both share the same ε.
    pub fn kl_divergence(&self, other: &ColorPosterior) -> f64 {
        let (kq, kp) = (self.kappa, other.kappa);
        let dist2 = (self.mean - other.mean).norm_squared();
        0.5 * (3.0 * kp / kq + kp * dist2 / self.epsilon - 3.0 + 3.0 * (kq / kp).ln())
    }
}

/// Dirichlet concentrations over the mixture weights.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dirichlet {
    pub alpha: Vec<f64>,
}

impl Dirichlet {
    pub fn new(alpha: Vec<f64>) -> Result<Self> {
        if alpha.is_empty() || alpha.iter().any(|a| !(*a > 0.0) || !a.is_finite()) {
            return Err(Error::InvalidParameter(
                "Dirichlet concentrations must be positive".into(),
            ));
        }
        Ok(Self { alpha })
    }

    pub fn symmetric(k: usize, alpha: f64) -> Result<Self> {
        Self::new(vec![alpha; k])
    }

    pub fn len(&self) -> usize {
        self.alpha.len()
    }

    pub fn is_empty(&self) -> bool {
        self.alpha.is_empty()
    }

    /// E[log π_k] = ψ(α_k) − ψ(Σα).
    pub fn expected_log(&self) -> Vec<f64> {
        let total = digamma(self.alpha.iter().sum());
        self.alpha.iter().map(|&a| digamma(a) - total).collect()
    }

    /// E[π_k] = α_k / Σα.
    pub fn expected_weights(&self) -> Vec<f64> {
        let total: f64 = self.alpha.iter().sum();
        self.alpha.iter().map(|a| a / total).collect()
    }

    pub fn kl_divergence(&self, other: &Dirichlet) -> f64 {
        let a0: f64 = self.alpha.iter().sum();
        let b0: f64 = other.alpha.iter().sum();
        let psi_a0 = digamma(a0);
        let mut kl = ln_gamma(a0) - ln_gamma(b0);
        for (&a, &b) in self.alpha.iter().zip(&other.alpha) {
            kl += ln_gamma(b) - ln_gamma(a) + (a - b) * (digamma(a) - psi_a0);
        }
        kl
    }
}
