//! Point-set and vector embeddings and the three similarity functions.
//!
//! A point-set embedding `{(w_i, f_i)}` represents the RKHS element
//! `h = sum_i w_i k(f_i, .)`. The KME similarity is `log <h_a, h_b>_H`;
//! WPSE uses the inner product itself; CLIP uses `g_a·g_b / tau`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::{self, KernelSpec, RkhsExpansion};

pub const UNIT_NORM_TOLERANCE: f64 = 1e-10;

/// Positively weighted point set. Points are unit-norm unless built with
/// [`PointSetEmbedding::off_sphere`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PointSetRepr", into = "PointSetRepr")]
pub struct PointSetEmbedding {
    points: Vec<Vec<f64>>,
    weights: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PointSetRepr {
    points: Vec<Vec<f64>>,
    weights: Vec<f64>,
}

impl TryFrom<PointSetRepr> for PointSetEmbedding {
    type Error = Error;

    fn try_from(r: PointSetRepr) -> Result<Self> {
        PointSetEmbedding::new(r.points, r.weights)
    }
}

impl From<PointSetEmbedding> for PointSetRepr {
    fn from(e: PointSetEmbedding) -> Self {
        PointSetRepr {
            points: e.points,
            weights: e.weights,
        }
    }
}

impl PointSetEmbedding {
    pub fn new(points: Vec<Vec<f64>>, weights: Vec<f64>) -> Result<Self> {
        let emb = Self::off_sphere(points, weights)?;
        for (i, p) in emb.points.iter().enumerate() {
            let n = kernel::norm(p);
            if (n - 1.0).abs() > UNIT_NORM_TOLERANCE {
                return Err(Error::invalid(format!("point {i} has norm {n}, expected 1")));
            }
        }
        Ok(emb)
    }

    /// Skips the unit-norm check. Weights must still be positive.
    pub fn off_sphere(points: Vec<Vec<f64>>, weights: Vec<f64>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::invalid("a point set needs at least one point"));
        }
        if points.len() != weights.len() {
            return Err(Error::invalid(format!(
                "{} points but {} weights",
                points.len(),
                weights.len()
            )));
        }
        let d = points[0].len();
        if d == 0 {
            return Err(Error::invalid("points must have dimension at least 1"));
        }
        if let Some(p) = points.iter().find(|p| p.len() != d) {
            return Err(Error::DimensionMismatch {
                expected: d,
                actual: p.len(),
            });
        }
        if let Some(p) = points.iter().flatten().find(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("non-finite coordinate {p}")));
        }
        if let Some(w) = weights.iter().find(|w| !(w.is_finite() && **w > 0.0)) {
            return Err(Error::invalid(format!("weights must be positive, got {w}")));
        }
        Ok(Self { points, weights })
    }

    /// Single unit point with weight one.
    pub fn single(point: Vec<f64>) -> Result<Self> {
        Self::new(vec![point], vec![1.0])
    }

    pub fn points(&self) -> &[Vec<f64>] {
        &self.points
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn dim(&self) -> usize {
        self.points[0].len()
    }

    pub fn with_scaled_weights(&self, c: f64) -> Result<Self> {
        Self::off_sphere(self.points.clone(), self.weights.iter().map(|w| w * c).collect())
    }

    pub fn to_expansion(&self, kernel: KernelSpec) -> RkhsExpansion {
        RkhsExpansion::new(kernel, self.points.clone(), self.weights.clone())
            .expect("validated point set is a valid expansion")
    }
}

/// Unit vector with the shared CLIP temperature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipEmbedding {
    vector: Vec<f64>,
    tau: f64,
}

impl ClipEmbedding {
    pub fn new(vector: Vec<f64>, tau: f64) -> Result<Self> {
        if vector.is_empty() {
            return Err(Error::invalid("vector must have dimension at least 1"));
        }
        let n = kernel::norm(&vector);
        if (n - 1.0).abs() > UNIT_NORM_TOLERANCE {
            return Err(Error::invalid(format!("vector has norm {n}, expected 1")));
        }
        if !(tau.is_finite() && tau > 0.0) {
            return Err(Error::invalid(format!("temperature must be positive, got {tau}")));
        }
        Ok(Self { vector, tau })
    }

    pub fn vector(&self) -> &[f64] {
        &self.vector
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }
}

fn check_pair(a: &PointSetEmbedding, b: &PointSetEmbedding) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch {
            expected: a.dim(),
            actual: b.dim(),
        });
    }
    Ok(())
}

/// `log sum_ij w_i^a w_j^b k(f_i^a, f_j^b)`, evaluated as a max-shifted
/// log-sum-exp so that small length-scales do not underflow.
pub fn kme_similarity(a: &PointSetEmbedding, b: &PointSetEmbedding, kernel: &KernelSpec) -> Result<f64> {
    check_pair(a, b)?;
    let mut terms = Vec::with_capacity(a.len() * b.len());
    for (u, wu) in a.points.iter().zip(&a.weights) {
        for (v, wv) in b.points.iter().zip(&b.weights) {
            terms.push(wu.ln() + wv.ln() + kernel.log_from_sq_dist(kernel::squared_distance(u, v)));
        }
    }
    let s = log_sum_exp(&terms);
    if !s.is_finite() {
        return Err(Error::NumericalFailure(format!(
            "KME inner product is not positive (log = {s})"
        )));
    }
    Ok(s)
}

/// Weighted kernel double sum, no logarithm.
pub fn wpse_similarity(a: &PointSetEmbedding, b: &PointSetEmbedding, kernel: &KernelSpec) -> Result<f64> {
    check_pair(a, b)?;
    let mut total = 0.0;
    for (u, wu) in a.points.iter().zip(&a.weights) {
        for (v, wv) in b.points.iter().zip(&b.weights) {
            total += wu * wv * kernel.eval_unchecked(u, v);
        }
    }
    Ok(total)
}

pub fn clip_similarity(a: &ClipEmbedding, b: &ClipEmbedding) -> Result<f64> {
    if a.vector.len() != b.vector.len() {
        return Err(Error::DimensionMismatch {
            expected: a.vector.len(),
            actual: b.vector.len(),
        });
    }
    if a.tau != b.tau {
        return Err(Error::invalid(format!(
            "embeddings use different temperatures ({} vs {})",
            a.tau, b.tau
        )));
    }
    Ok(kernel::dot(&a.vector, &b.vector) / a.tau)
}

/// Additive gap between single-point KME (unit weights, `sigma^2 = tau`)
/// and CLIP similarities: `-1/sigma^2`.
pub fn prop2_constant(kernel: &KernelSpec) -> f64 {
    -1.0 / (kernel.sigma() * kernel.sigma())
}

pub(crate) fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}
