//! Kernel mean embeddings reproducing exp-PMI of a finite latent model.
//!
//! Latent state `z_i` sits at anchor `u_i` on the sphere. The embedding of
//! `x` is `sum_i a_i(x) sqrt(rho_i) k(u_i, .)` with
//! `a_i(x) = p(x|z_i)/p(x)`. The diagonal of the resulting inner product is
//! exactly exp-PMI; the remainder is cross-anchor kernel leakage, bounded by
//! `C'^2 ((sum sqrt rho)^2 - sum rho) exp(-(2/m)^2 / (2 sigma^2))`.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::kernel::{KernelSpec, RkhsExpansion};
use crate::matrix::Matrix;
use crate::synthetic::{exp_pmi_table, latent_to_joint, model_ratio_bound, FiniteLatentModel};
use crate::theory::anchors::{min_separation, place_anchors};

const EXACTNESS_SLACK: f64 = 1e-10;

#[derive(Debug, Clone, Serialize)]
pub struct FiniteZConstruction {
    pub sigma: f64,
    pub dim: usize,
    pub anchors: Vec<Vec<f64>>,
    pub anchor_separation: f64,
    #[serde(skip)]
    pub x_embeddings: Vec<RkhsExpansion>,
    #[serde(skip)]
    pub y_embeddings: Vec<RkhsExpansion>,
    pub inner: Matrix,
    pub target: Matrix,
    pub max_error: f64,
    pub ratio_bound: f64,
    /// The bound this construction provably satisfies.
    pub bound: f64,
    /// `C'^2 / m * exp(-(2/m)^2 / (2 sigma^2))`, reported for comparison.
    pub stated_bound: f64,
    pub holds: bool,
}

/// Leakage prefactor `C'^2 ((sum sqrt rho)^2 - sum rho)`.
fn leakage_prefactor(model: &FiniteLatentModel) -> Result<f64> {
    let c = model_ratio_bound(model)?;
    let rho = model.latent_probs();
    let sum_sqrt: f64 = rho.iter().map(|r| r.sqrt()).sum();
    let sum: f64 = rho.iter().sum();
    Ok(c * c * (sum_sqrt * sum_sqrt - sum).max(0.0))
}

fn separation(m: usize) -> f64 {
    2.0 / m as f64
}

/// A bandwidth at which the provable bound falls below `target_error`.
pub fn thm4_sigma_for(model: &FiniteLatentModel, target_error: f64) -> Result<f64> {
    if !(target_error > 0.0) {
        return Err(Error::invalid(format!("target error must be positive, got {target_error}")));
    }
    let prefactor = leakage_prefactor(model)?;
    if prefactor <= target_error {
        return Ok(1.0);
    }
    let sep = separation(model.n_latent());
    Ok(0.9 * sep / (2.0 * (prefactor / target_error).ln()).sqrt())
}

pub fn thm4_construct(model: &FiniteLatentModel, sigma: f64, dim: usize) -> Result<FiniteZConstruction> {
    let kernel = KernelSpec::gaussian(sigma)?;
    let m = model.n_latent();
    let sep = separation(m);
    let anchors = place_anchors(m, dim, sep)?;
    let rho = model.latent_probs();
    let ratio_bound = model_ratio_bound(model)?;

    let build = |cond: &Matrix, marg: &[f64]| -> Result<Vec<RkhsExpansion>> {
        (0..cond.rows())
            .map(|r| {
                let (points, coefficients): (Vec<_>, Vec<_>) = (0..m)
                    .filter_map(|i| {
                        let c = cond[(r, i)] / marg[r] * rho[i].sqrt();
                        (c != 0.0).then(|| (anchors[i].clone(), c))
                    })
                    .unzip();
                if points.is_empty() {
                    Ok(RkhsExpansion::zero(kernel, dim))
                } else {
                    RkhsExpansion::new(kernel, points, coefficients)
                }
            })
            .collect()
    };
    let x_embeddings = build(model.cond_x(), &model.marginal_x())?;
    let y_embeddings = build(model.cond_y(), &model.marginal_y())?;

    let target = exp_pmi_table(&latent_to_joint(model))?;
    let mut inner = Matrix::zeros(target.rows(), target.cols());
    let mut max_error = 0.0f64;
    for (r, fx) in x_embeddings.iter().enumerate() {
        for (c, fy) in y_embeddings.iter().enumerate() {
            let v = fx.inner(fy)?;
            inner[(r, c)] = v;
            max_error = max_error.max((v - target[(r, c)]).abs());
        }
    }

    let decay = (-sep * sep / (2.0 * sigma * sigma)).exp();
    let bound = leakage_prefactor(model)? * decay;
    let stated_bound = ratio_bound * ratio_bound / m as f64 * decay;
    Ok(FiniteZConstruction {
        sigma,
        dim,
        anchor_separation: min_separation(&anchors),
        anchors,
        x_embeddings,
        y_embeddings,
        inner,
        target,
        max_error,
        ratio_bound,
        bound,
        stated_bound,
        holds: max_error <= bound + EXACTNESS_SLACK,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic::TwoMixtureModel;

    fn three_state_model() -> FiniteLatentModel {
        let cond_x = Matrix::from_rows(vec![
            vec![0.7, 0.1, 0.2],
            vec![0.2, 0.6, 0.1],
            vec![0.1, 0.3, 0.7],
        ])
        .unwrap();
        let cond_y = Matrix::from_rows(vec![vec![0.5, 0.0, 0.3], vec![0.5, 1.0, 0.7]]).unwrap();
        FiniteLatentModel::new(vec![0.2, 0.3, 0.5], cond_x, cond_y).unwrap()
    }

    #[test]
    fn single_latent_state_is_exact() {
        let model = FiniteLatentModel::new(
            vec![1.0],
            Matrix::from_rows(vec![vec![0.4], vec![0.6]]).unwrap(),
            Matrix::from_rows(vec![vec![1.0]]).unwrap(),
        )
        .unwrap();
        let c = thm4_construct(&model, 0.3, 2).unwrap();
        assert_eq!(c.bound, 0.0);
        assert!(c.max_error < 1e-14);
        assert!(c.holds);
    }

    #[test]
    fn tiny_bandwidth_reproduces_exp_pmi() {
        let model = three_state_model();
        let c = thm4_construct(&model, 0.01, 3).unwrap();
        assert!(c.max_error < 1e-12, "{}", c.max_error);
        assert!(c.holds);
    }

    #[test]
    fn error_within_bound_across_bandwidths() {
        let model = TwoMixtureModel::new(5).unwrap().to_latent_model();
        for &sigma in &[0.05, 0.1, 0.2, 0.4, 1.0, 3.0] {
            for dim in 2..=4 {
                let c = thm4_construct(&model, sigma, dim).unwrap();
                assert!(c.holds, "sigma {sigma} dim {dim}: {} > {}", c.max_error, c.bound);
            }
        }
    }

    #[test]
    fn sigma_choice_meets_target() {
        let model = three_state_model();
        for &target in &[1e-1, 1e-3, 1e-6] {
            let sigma = thm4_sigma_for(&model, target).unwrap();
            let c = thm4_construct(&model, sigma, 2).unwrap();
            assert!(c.bound <= target);
            assert!(c.max_error <= target);
        }
    }
}
