//! Log-ratio integral estimate and the loss gap of `S = log h`.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::loss::{optimal_population_loss, population_loss, SimilarityMatrix};
use crate::matrix::Matrix;
use crate::synthetic::{exp_pmi_table, DiscreteJoint};

const DENSITY_TOLERANCE: f64 = 1e-9;
const BOUND_SLACK: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LogRatioCheck {
    pub lhs: f64,
    pub rhs: f64,
    pub total_mass: f64,
    pub holds: bool,
}

fn check_eps_delta(eps: f64, delta: f64) -> Result<()> {
    let cap = (-2.0f64).exp();
    if !(eps > 0.0 && eps <= cap) {
        return Err(Error::precondition(format!("eps must lie in (0, e^-2], got {eps}")));
    }
    if !(delta > 0.0 && delta <= eps) {
        return Err(Error::precondition(format!("delta must lie in (0, eps], got {delta}")));
    }
    Ok(())
}

/// `|sum_z mu(z) f(z) log(f(z)/g(z))|` against
/// `2 sqrt(eps) + mu(S) sqrt(eps) log(1/eps + 1/delta)` on a finite measure.
///
/// Requires `f` to be a probability density for `mu`, `g >= delta` and
/// `|f - g| <= eps` pointwise, with `0 < delta <= eps <= e^-2`.
pub fn lemma8_check(measure: &[f64], f: &[f64], g: &[f64], eps: f64, delta: f64) -> Result<LogRatioCheck> {
    check_eps_delta(eps, delta)?;
    let n = measure.len();
    for (len, name) in [(f.len(), "f"), (g.len(), "g")] {
        if len != n {
            return Err(Error::invalid(format!("{name} has {len} entries, measure has {n}")));
        }
    }
    if measure.iter().any(|&m| !(m >= 0.0 && m.is_finite())) {
        return Err(Error::invalid("measure must be finite and nonnegative"));
    }
    if f.iter().any(|&v| !(v >= 0.0 && v.is_finite())) {
        return Err(Error::precondition("f must be finite and nonnegative"));
    }
    let mass: f64 = measure.iter().zip(f).map(|(m, v)| m * v).sum();
    if (mass - 1.0).abs() > DENSITY_TOLERANCE {
        return Err(Error::precondition(format!("f integrates to {mass}, not 1")));
    }
    for (i, (&fv, &gv)) in f.iter().zip(g).enumerate() {
        if !(gv >= delta) {
            return Err(Error::precondition(format!("g[{i}] = {gv} is below delta = {delta}")));
        }
        if (fv - gv).abs() > eps * (1.0 + 1e-12) {
            return Err(Error::precondition(format!("|f - g| at {i} is {} > eps", (fv - gv).abs())));
        }
    }

    let integral: f64 = measure
        .iter()
        .zip(f.iter().zip(g))
        .filter(|(&m, (&fv, _))| m > 0.0 && fv > 0.0)
        .map(|(m, (fv, gv))| m * fv * (fv / gv).ln())
        .sum();
    let total_mass: f64 = measure.iter().sum();
    let se = eps.sqrt();
    let rhs = 2.0 * se + total_mass * se * (1.0 / eps + 1.0 / delta).ln();
    let lhs = integral.abs();
    Ok(LogRatioCheck {
        lhs,
        rhs,
        total_mass,
        holds: lhs <= rhs + BOUND_SLACK,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LossGapCheck {
    pub loss: f64,
    pub optimal_loss: f64,
    pub loss_gap: f64,
    pub bound: f64,
    pub holds: bool,
}

/// Loss gap `L(log h) - inf L` of a positive table `h` with
/// `|h - exp PMI| <= eps` and `h >= delta`, against
/// `3 sqrt(eps) + sqrt(eps) log(1/eps + 1/delta)`.
pub fn thm3_check(joint: &DiscreteJoint, h: &Matrix, eps: f64, delta: f64) -> Result<LossGapCheck> {
    check_eps_delta(eps, delta)?;
    joint.check_positive_marginals()?;
    let target = exp_pmi_table(joint)?;
    if h.rows() != target.rows() || h.cols() != target.cols() {
        return Err(Error::invalid(format!(
            "h is {}x{}, joint is {}x{}",
            h.rows(),
            h.cols(),
            target.rows(),
            target.cols()
        )));
    }
    for r in 0..h.rows() {
        for c in 0..h.cols() {
            let v = h[(r, c)];
            if !(v >= delta && v.is_finite()) {
                return Err(Error::precondition(format!("h({r}, {c}) = {v} is below delta = {delta}")));
            }
            if (v - target[(r, c)]).abs() > eps * (1.0 + 1e-12) {
                return Err(Error::precondition(format!("|h - exp PMI| at ({r}, {c}) exceeds eps")));
            }
        }
    }
    let loss = population_loss(joint, &SimilarityMatrix::exp(h.clone())?)?;
    let optimal_loss = optimal_population_loss(joint);
    let loss_gap = loss - optimal_loss;
    let se = eps.sqrt();
    let bound = 3.0 * se + se * (1.0 / eps + 1.0 / delta).ln();
    Ok(LossGapCheck {
        loss,
        optimal_loss,
        loss_gap,
        bound,
        holds: loss_gap >= -BOUND_SLACK && loss_gap <= bound + BOUND_SLACK,
    })
}

/// `max(delta, target + eps * U(-1, 1))` entrywise; stays within `eps` of
/// any nonnegative target when `delta <= eps`.
pub fn perturbed_positive_table<R: rand::Rng + ?Sized>(target: &Matrix, eps: f64, delta: f64, rng: &mut R) -> Matrix {
    target.map(|t| (t + eps * rng.random_range(-1.0..=1.0)).max(delta))
}
