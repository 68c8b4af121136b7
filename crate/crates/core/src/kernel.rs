//! Gaussian kernel and exact RKHS algebra on finite expansions.
//!
//! An element `f = sum_i c_i k(u_i, .)` is stored as its points and
//! coefficients. Inner products follow from the reproducing property,
//! `<k(u, .), k(v, .)>_H = k(u, v)`, so every quantity here is a finite
//! double sum evaluated in double precision.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Squared norms in `[-NEGATIVE_NORM_TOLERANCE, 0)` are rounding noise.
pub const NEGATIVE_NORM_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelKind {
    Gaussian,
}

/// A positive definite kernel with its length-scale.
///
/// For the Gaussian kernel `k(u, v) = exp(-|u - v|^2 / (2 sigma^2))`, the
/// trainable form is `tau = 1 / sigma^2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "KernelRepr", into = "KernelRepr")]
pub struct KernelSpec {
    kind: KernelKind,
    sigma: f64,
}

#[derive(Serialize, Deserialize)]
struct KernelRepr {
    kind: KernelKind,
    sigma: f64,
}

impl TryFrom<KernelRepr> for KernelSpec {
    type Error = Error;

    fn try_from(r: KernelRepr) -> Result<Self> {
        match r.kind {
            KernelKind::Gaussian => KernelSpec::gaussian(r.sigma),
        }
    }
}

impl From<KernelSpec> for KernelRepr {
    fn from(k: KernelSpec) -> Self {
        KernelRepr {
            kind: k.kind,
            sigma: k.sigma,
        }
    }
}

impl KernelSpec {
    pub fn gaussian(sigma: f64) -> Result<Self> {
        if !(sigma.is_finite() && sigma > 0.0) {
            return Err(Error::invalid(format!(
                "kernel length-scale must be positive and finite, got {sigma}"
            )));
        }
        Ok(Self {
            kind: KernelKind::Gaussian,
            sigma,
        })
    }

    /// Gaussian kernel from the inverse squared length-scale `tau = 1/sigma^2`.
    pub fn from_tau(tau: f64) -> Result<Self> {
        if !(tau.is_finite() && tau > 0.0) {
            return Err(Error::invalid(format!(
                "kernel tau must be positive and finite, got {tau}"
            )));
        }
        Self::gaussian(tau.recip().sqrt())
    }

    pub fn kind(&self) -> KernelKind {
        self.kind
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn tau(&self) -> f64 {
        (self.sigma * self.sigma).recip()
    }

    /// `K = sup_u k(u, u)`.
    pub fn bound_constant(&self) -> f64 {
        match self.kind {
            KernelKind::Gaussian => 1.0,
        }
    }

    /// `log k(u, v)` from a precomputed squared distance.
    #[inline]
    pub fn log_from_sq_dist(&self, sq_dist: f64) -> f64 {
        match self.kind {
            KernelKind::Gaussian => -sq_dist / (2.0 * self.sigma * self.sigma),
        }
    }

    #[inline]
    pub fn from_sq_dist(&self, sq_dist: f64) -> f64 {
        self.log_from_sq_dist(sq_dist).exp()
    }

    /// Kernel value without the dimension check.
    #[inline]
    pub fn eval_unchecked(&self, u: &[f64], v: &[f64]) -> f64 {
        self.from_sq_dist(squared_distance(u, v))
    }

    pub fn eval(&self, u: &[f64], v: &[f64]) -> Result<f64> {
        check_same_dim(u, v)?;
        Ok(self.eval_unchecked(u, v))
    }
}

pub(crate) fn check_same_dim(u: &[f64], v: &[f64]) -> Result<()> {
    if u.is_empty() {
        return Err(Error::invalid("vectors must have dimension at least 1"));
    }
    if u.len() != v.len() {
        return Err(Error::DimensionMismatch {
            expected: u.len(),
            actual: v.len(),
        });
    }
    Ok(())
}

#[inline]
pub fn squared_distance(u: &[f64], v: &[f64]) -> f64 {
    u.iter().zip(v).map(|(a, b)| (a - b) * (a - b)).sum()
}

#[inline]
pub fn dot(u: &[f64], v: &[f64]) -> f64 {
    u.iter().zip(v).map(|(a, b)| a * b).sum()
}

pub fn norm(u: &[f64]) -> f64 {
    dot(u, u).sqrt()
}

pub fn kernel_eval(kernel: &KernelSpec, u: &[f64], v: &[f64]) -> Result<f64> {
    kernel.eval(u, v)
}

/// `f = sum_i c_i k(u_i, .)` in the RKHS of `kernel`.
#[derive(Debug, Clone, PartialEq)]
pub struct RkhsExpansion {
    kernel: KernelSpec,
    dim: usize,
    points: Vec<Vec<f64>>,
    coefficients: Vec<f64>,
}

impl RkhsExpansion {
    pub fn new(kernel: KernelSpec, points: Vec<Vec<f64>>, coefficients: Vec<f64>) -> Result<Self> {
        if points.len() != coefficients.len() {
            return Err(Error::invalid(format!(
                "{} points but {} coefficients",
                points.len(),
                coefficients.len()
            )));
        }
        let Some(first) = points.first() else {
            return Err(Error::invalid(
                "use RkhsExpansion::zero for an empty expansion (dimension unknown)",
            ));
        };
        let dim = first.len();
        if dim == 0 {
            return Err(Error::invalid("points must have dimension at least 1"));
        }
        if let Some(bad) = points.iter().find(|p| p.len() != dim) {
            return Err(Error::DimensionMismatch {
                expected: dim,
                actual: bad.len(),
            });
        }
        if let Some(c) = coefficients.iter().find(|c| !c.is_finite()) {
            return Err(Error::invalid(format!("non-finite coefficient {c}")));
        }
        Ok(Self {
            kernel,
            dim,
            points,
            coefficients,
        })
    }

    /// The zero element, with no points.
    pub fn zero(kernel: KernelSpec, dim: usize) -> Self {
        Self {
            kernel,
            dim,
            points: Vec::new(),
            coefficients: Vec::new(),
        }
    }

    pub fn kernel(&self) -> &KernelSpec {
        &self.kernel
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Vec<f64>] {
        &self.points
    }

    pub fn coefficients(&self) -> &[f64] {
        &self.coefficients
    }

    pub fn scaled(&self, alpha: f64) -> Self {
        Self {
            coefficients: self.coefficients.iter().map(|c| alpha * c).collect(),
            ..self.clone()
        }
    }

    /// `self + other`, by concatenating point lists.
    pub fn plus(&self, other: &Self) -> Result<Self> {
        self.check_compatible(other)?;
        let mut out = self.clone();
        out.points.extend(other.points.iter().cloned());
        out.coefficients.extend_from_slice(&other.coefficients);
        Ok(out)
    }

    /// Pointwise evaluation `f(v) = sum_i c_i k(u_i, v)`.
    pub fn evaluate(&self, v: &[f64]) -> Result<f64> {
        if v.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                actual: v.len(),
            });
        }
        Ok(self
            .points
            .iter()
            .zip(&self.coefficients)
            .map(|(u, c)| c * self.kernel.eval_unchecked(u, v))
            .sum())
    }

    fn check_compatible(&self, other: &Self) -> Result<()> {
        if self.kernel != other.kernel {
            return Err(Error::KernelMismatch(format!(
                "{:?} vs {:?}",
                self.kernel, other.kernel
            )));
        }
        if self.dim != other.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                actual: other.dim,
            });
        }
        Ok(())
    }

    pub fn inner(&self, other: &Self) -> Result<f64> {
        self.check_compatible(other)?;
        let mut total = 0.0;
        for (u, cu) in self.points.iter().zip(&self.coefficients) {
            let mut row = 0.0;
            for (v, cv) in other.points.iter().zip(&other.coefficients) {
                row += cv * self.kernel.eval_unchecked(u, v);
            }
            total += cu * row;
        }
        Ok(total)
    }

    pub fn norm_sq(&self) -> Result<f64> {
        let value = self.inner(self)?;
        if value >= 0.0 {
            Ok(value)
        } else if value >= -NEGATIVE_NORM_TOLERANCE {
            Ok(0.0)
        } else {
            Err(Error::NumericalFailure(format!(
                "squared RKHS norm {value:e} is negative beyond tolerance; Gram matrix is inconsistent"
            )))
        }
    }
}

pub fn rkhs_inner(f: &RkhsExpansion, g: &RkhsExpansion) -> Result<f64> {
    f.inner(g)
}

pub fn rkhs_norm_sq(f: &RkhsExpansion) -> Result<f64> {
    f.norm_sq()
}
