//! Finite conditional-independence models with exact oracles.
//!
//! A [`FiniteLatentModel`] draws a latent `z ~ rho`, then `x ~ p(x|z)` and
//! `y ~ p(y|z)` independently. Lowering it gives the [`DiscreteJoint`]
//! `p(x, y) = sum_z rho(z) p(x|z) p(y|z)`, from which exp-PMI and mutual
//! information are computed in closed form.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;

pub const NORMALIZATION_TOLERANCE: f64 = 1e-12;

fn check_probability_vector(name: &str, v: &[f64]) -> Result<()> {
    if v.is_empty() {
        return Err(Error::invalid(format!("{name} is empty")));
    }
    if let Some(p) = v.iter().find(|p| !(p.is_finite() && **p >= 0.0)) {
        return Err(Error::invalid(format!("{name} has invalid entry {p}")));
    }
    let total: f64 = v.iter().sum();
    if (total - 1.0).abs() > NORMALIZATION_TOLERANCE {
        return Err(Error::invalid(format!("{name} sums to {total}, expected 1")));
    }
    Ok(())
}

/// Conditional tables are stored with one row per observed state and one
/// column per latent state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "LatentRepr", into = "LatentRepr")]
pub struct FiniteLatentModel {
    latent_probs: Vec<f64>,
    cond_x: Matrix,
    cond_y: Matrix,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LatentRepr {
    latent_probs: Vec<f64>,
    cond_x: Matrix,
    cond_y: Matrix,
}

impl TryFrom<LatentRepr> for FiniteLatentModel {
    type Error = Error;

    fn try_from(r: LatentRepr) -> Result<Self> {
        FiniteLatentModel::new(r.latent_probs, r.cond_x, r.cond_y)
    }
}

impl From<FiniteLatentModel> for LatentRepr {
    fn from(m: FiniteLatentModel) -> Self {
        LatentRepr {
            latent_probs: m.latent_probs,
            cond_x: m.cond_x,
            cond_y: m.cond_y,
        }
    }
}

impl FiniteLatentModel {
    pub fn new(latent_probs: Vec<f64>, cond_x: Matrix, cond_y: Matrix) -> Result<Self> {
        check_probability_vector("latent_probs", &latent_probs)?;
        let n_z = latent_probs.len();
        for (name, cond) in [("cond_x", &cond_x), ("cond_y", &cond_y)] {
            if cond.cols() != n_z {
                return Err(Error::DimensionMismatch {
                    expected: n_z,
                    actual: cond.cols(),
                });
            }
            if cond.rows() == 0 {
                return Err(Error::invalid(format!("{name} has no rows")));
            }
            for z in 0..n_z {
                let column: Vec<f64> = (0..cond.rows()).map(|r| cond[(r, z)]).collect();
                check_probability_vector(&format!("{name} column {z}"), &column)?;
            }
        }
        Ok(Self {
            latent_probs,
            cond_x,
            cond_y,
        })
    }

    pub fn latent_probs(&self) -> &[f64] {
        &self.latent_probs
    }

    /// `p(x|z)` as an `|X| x |Z|` table.
    pub fn cond_x(&self) -> &Matrix {
        &self.cond_x
    }

    pub fn cond_y(&self) -> &Matrix {
        &self.cond_y
    }

    pub fn n_latent(&self) -> usize {
        self.latent_probs.len()
    }

    pub fn n_x(&self) -> usize {
        self.cond_x.rows()
    }

    pub fn n_y(&self) -> usize {
        self.cond_y.rows()
    }

    pub fn marginal_x(&self) -> Vec<f64> {
        marginal(&self.cond_x, &self.latent_probs)
    }

    pub fn marginal_y(&self) -> Vec<f64> {
        marginal(&self.cond_y, &self.latent_probs)
    }
}

fn marginal(cond: &Matrix, rho: &[f64]) -> Vec<f64> {
    (0..cond.rows())
        .map(|r| cond.row(r).iter().zip(rho).map(|(p, q)| p * q).sum())
        .collect()
}

/// Explicit joint table over `X x Y` with cached marginals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "JointRepr", into = "JointRepr")]
pub struct DiscreteJoint {
    joint: Matrix,
    marginal_x: Vec<f64>,
    marginal_y: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct JointRepr {
    joint: Matrix,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    marginal_x: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    marginal_y: Option<Vec<f64>>,
}

impl TryFrom<JointRepr> for DiscreteJoint {
    type Error = Error;

    fn try_from(r: JointRepr) -> Result<Self> {
        let joint = DiscreteJoint::new(r.joint)?;
        for (name, given, derived) in [
            ("marginal_x", r.marginal_x, &joint.marginal_x),
            ("marginal_y", r.marginal_y, &joint.marginal_y),
        ] {
            if let Some(given) = given {
                let consistent = given.len() == derived.len()
                    && given
                        .iter()
                        .zip(derived)
                        .all(|(a, b)| (a - b).abs() <= NORMALIZATION_TOLERANCE);
                if !consistent {
                    return Err(Error::invalid(format!("{name} disagrees with the joint table")));
                }
            }
        }
        Ok(joint)
    }
}

impl From<DiscreteJoint> for JointRepr {
    fn from(j: DiscreteJoint) -> Self {
        JointRepr {
            joint: j.joint,
            marginal_x: Some(j.marginal_x),
            marginal_y: Some(j.marginal_y),
        }
    }
}

impl DiscreteJoint {
    pub fn new(joint: Matrix) -> Result<Self> {
        if joint.rows() == 0 || joint.cols() == 0 {
            return Err(Error::invalid("joint table is empty"));
        }
        check_probability_vector("joint", joint.as_slice())?;
        let marginal_x = (0..joint.rows()).map(|r| joint.row(r).iter().sum()).collect();
        let marginal_y = (0..joint.cols())
            .map(|c| (0..joint.rows()).map(|r| joint[(r, c)]).sum())
            .collect();
        Ok(Self {
            joint,
            marginal_x,
            marginal_y,
        })
    }

    /// Outer product of two marginals.
    pub fn independent(px: &[f64], py: &[f64]) -> Result<Self> {
        check_probability_vector("px", px)?;
        check_probability_vector("py", py)?;
        Self::new(Matrix::from_fn(px.len(), py.len(), |r, c| px[r] * py[c]))
    }

    /// Uniform distribution over the matched pairs `(i, i)`.
    pub fn identity_coupling(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::invalid("identity coupling needs n >= 1"));
        }
        let p = 1.0 / n as f64;
        Self::new(Matrix::from_fn(n, n, |r, c| if r == c { p } else { 0.0 }))
    }

    pub fn table(&self) -> &Matrix {
        &self.joint
    }

    pub fn p(&self, x: usize, y: usize) -> f64 {
        self.joint[(x, y)]
    }

    pub fn marginal_x(&self) -> &[f64] {
        &self.marginal_x
    }

    pub fn marginal_y(&self) -> &[f64] {
        &self.marginal_y
    }

    pub fn n_x(&self) -> usize {
        self.joint.rows()
    }

    pub fn n_y(&self) -> usize {
        self.joint.cols()
    }

    pub fn check_positive_marginals(&self) -> Result<()> {
        if let Some(i) = self.marginal_x.iter().position(|&p| p <= 0.0) {
            return Err(Error::ZeroMarginal { axis: "x", index: i });
        }
        if let Some(i) = self.marginal_y.iter().position(|&p| p <= 0.0) {
            return Err(Error::ZeroMarginal { axis: "y", index: i });
        }
        Ok(())
    }
}

pub fn latent_to_joint(model: &FiniteLatentModel) -> DiscreteJoint {
    let rho = model.latent_probs();
    let joint = Matrix::from_fn(model.n_x(), model.n_y(), |x, y| {
        rho.iter()
            .enumerate()
            .map(|(z, r)| r * model.cond_x()[(x, z)] * model.cond_y()[(y, z)])
            .sum()
    });
    // Normalization holds up to rounding of the sum above.
    DiscreteJoint::new(joint).expect("a valid latent model lowers to a valid joint")
}

/// `p(x, y) / (p(x) p(y))`. Zero when `p(x, y) = 0`.
pub fn exp_pmi(joint: &DiscreteJoint, x: usize, y: usize) -> Result<f64> {
    if x >= joint.n_x() {
        return Err(Error::IndexOutOfRange { index: x, size: joint.n_x() });
    }
    if y >= joint.n_y() {
        return Err(Error::IndexOutOfRange { index: y, size: joint.n_y() });
    }
    let px = joint.marginal_x()[x];
    let py = joint.marginal_y()[y];
    if px <= 0.0 {
        return Err(Error::ZeroMarginal { axis: "x", index: x });
    }
    if py <= 0.0 {
        return Err(Error::ZeroMarginal { axis: "y", index: y });
    }
    Ok(joint.p(x, y) / (px * py))
}

pub fn exp_pmi_table(joint: &DiscreteJoint) -> Result<Matrix> {
    joint.check_positive_marginals()?;
    Ok(Matrix::from_fn(joint.n_x(), joint.n_y(), |x, y| {
        joint.p(x, y) / (joint.marginal_x()[x] * joint.marginal_y()[y])
    }))
}

/// PMI table, `-inf` where `p(x, y) = 0`.
pub fn pmi_table(joint: &DiscreteJoint) -> Result<Matrix> {
    Ok(exp_pmi_table(joint)?.map(f64::ln))
}

/// `I(X; Y)` in nats.
pub fn mutual_information(joint: &DiscreteJoint) -> f64 {
    let mut total = 0.0;
    for x in 0..joint.n_x() {
        for y in 0..joint.n_y() {
            let p = joint.p(x, y);
            if p > 0.0 {
                total += p * (p / (joint.marginal_x()[x] * joint.marginal_y()[y])).ln();
            }
        }
    }
    total
}

/// `C' = max p(x|z)/p(x)` and `max p(y|z)/p(y)` over all states.
pub fn model_ratio_bound(model: &FiniteLatentModel) -> Result<f64> {
    let mut best = 0.0f64;
    for (axis, cond, marg) in [
        ("x", model.cond_x(), model.marginal_x()),
        ("y", model.cond_y(), model.marginal_y()),
    ] {
        for (r, &p) in marg.iter().enumerate() {
            if p <= 0.0 {
                return Err(Error::ZeroMarginal { axis, index: r });
            }
            for &c in cond.row(r) {
                best = best.max(c / p);
            }
        }
    }
    Ok(best)
}

/// An unordered pair of classes, stored as `(min, max)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct UnorderedPair {
    lo: usize,
    hi: usize,
}

impl UnorderedPair {
    pub fn new(i: usize, j: usize) -> Self {
        Self { lo: i.min(j), hi: i.max(j) }
    }

    pub fn lo(&self) -> usize {
        self.lo
    }

    pub fn hi(&self) -> usize {
        self.hi
    }

    pub fn is_pure(&self) -> bool {
        self.lo == self.hi
    }
}

/// The two-mixture model over `N` classes. States are unordered class pairs;
/// `(i, i)` is a pure class, `(i, j)` an even mixture. Classes are 0-based.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TwoMixtureModel {
    n: usize,
}

impl TwoMixtureModel {
    pub fn new(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::invalid("two-mixture model needs N >= 1"));
        }
        Ok(Self { n })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn n_states(&self) -> usize {
        self.n * (self.n + 1) / 2
    }

    /// States in lexicographic order of `(lo, hi)`.
    pub fn states(&self) -> Vec<UnorderedPair> {
        let mut out = Vec::with_capacity(self.n_states());
        for i in 0..self.n {
            for j in i..self.n {
                out.push(UnorderedPair::new(i, j));
            }
        }
        out
    }

    pub fn index_of(&self, pair: UnorderedPair) -> Result<usize> {
        if pair.hi >= self.n {
            return Err(Error::IndexOutOfRange { index: pair.hi, size: self.n });
        }
        let (i, j) = (pair.lo, pair.hi);
        // rows before class i: sum_{a<i} (N - a)
        let offset = i * self.n - i * i.saturating_sub(1) / 2;
        Ok(offset + (j - i))
    }

    pub fn pure_state(&self, i: usize) -> Result<usize> {
        self.index_of(UnorderedPair::new(i, i))
    }

    /// `p(state | l) = (delta_il + delta_jl) / (N + 1)`.
    pub fn conditional(&self, pair: UnorderedPair, latent: usize) -> f64 {
        let hits = usize::from(pair.lo == latent) + usize::from(pair.hi == latent);
        hits as f64 / (self.n as f64 + 1.0)
    }

    pub fn to_latent_model(&self) -> FiniteLatentModel {
        let states = self.states();
        let cond = Matrix::from_fn(states.len(), self.n, |r, l| self.conditional(states[r], l));
        let rho = vec![1.0 / self.n as f64; self.n];
        FiniteLatentModel::new(rho, cond.clone(), cond).expect("two-mixture tables are normalized")
    }

    pub fn joint(&self) -> DiscreteJoint {
        latent_to_joint(&self.to_latent_model())
    }
}

/// Closed form `N/4 (d_is + d_it + d_js + d_jt)` for `x = (i, j)`,
/// `y = (s, t)`.
pub fn exp_pmi_two_mixture(n: usize, x: UnorderedPair, y: UnorderedPair) -> Result<f64> {
    for idx in [x.lo, x.hi, y.lo, y.hi] {
        if idx >= n {
            return Err(Error::IndexOutOfRange { index: idx, size: n });
        }
    }
    let hits = [(x.lo, y.lo), (x.lo, y.hi), (x.hi, y.lo), (x.hi, y.hi)]
        .iter()
        .filter(|(a, b)| a == b)
        .count();
    Ok(n as f64 / 4.0 * hits as f64)
}
