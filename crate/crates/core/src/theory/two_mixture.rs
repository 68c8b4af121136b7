//! Two-point kernel mean embeddings for the two-mixture model.
//!
//! Class `i` gets anchor `u_i`; state `(i, j)` is embedded as
//! `sqrt(N)/2 (k(u_i, .) + k(u_j, .))`, counting `(i, i)` twice. Inner
//! products are `N/4` times a sum of four kernel values, so matching classes
//! contribute exactly `N/4` each and the rest is leakage.

use serde::Serialize;

use crate::embedding::PointSetEmbedding;
use crate::error::{Error, Result};
use crate::kernel::{KernelSpec, RkhsExpansion};
use crate::synthetic::{exp_pmi_two_mixture, TwoMixtureModel, UnorderedPair};
use crate::theory::anchors::{min_separation, place_anchors};

/// `(2 N^2 log(N / eps))^(-1/2)`; any smaller bandwidth keeps every entry
/// within `eps` of exp-PMI.
pub fn thm7_sigma_limit(n: usize, eps: f64) -> Result<f64> {
    if n < 2 {
        return Err(Error::precondition(format!("need N >= 2, got {n}")));
    }
    let nf = n as f64;
    if !(eps > 0.0 && eps < nf) {
        return Err(Error::precondition(format!("eps must lie in (0, N), got {eps}")));
    }
    Ok((2.0 * nf * nf * (nf / eps).ln()).powf(-0.5))
}

#[derive(Debug, Clone, Serialize)]
pub struct Thm7Construction {
    pub n: usize,
    pub dim: usize,
    pub epsilon: f64,
    pub sigma: f64,
    pub anchor_separation: f64,
    pub anchors: Vec<Vec<f64>>,
    #[serde(skip)]
    pub embeddings: Vec<PointSetEmbedding>,
    #[serde(skip)]
    pub states: Vec<UnorderedPair>,
    /// `max |<f_x, f_y> - exp PMI(x, y)|` over all state pairs.
    pub max_error: f64,
    /// Largest `|<f_x, f_x> - N|` over pure states.
    pub pure_diagonal_deviation: f64,
    /// Largest gap between the kernel-sum inner product and the generic
    /// RKHS inner product, relative to `max(1, |value|)`.
    pub generic_route_deviation: f64,
    pub holds: bool,
}

impl Thm7Construction {
    fn kernel(&self) -> KernelSpec {
        KernelSpec::gaussian(self.sigma).expect("sigma validated at construction")
    }

    /// `N/4 (k(u_i,u_s) + k(u_i,u_t) + k(u_j,u_s) + k(u_j,u_t))`.
    pub fn inner(&self, x: UnorderedPair, y: UnorderedPair) -> f64 {
        let k = self.kernel();
        let a = &self.anchors;
        let sum = k.eval_unchecked(&a[x.lo()], &a[y.lo()])
            + k.eval_unchecked(&a[x.lo()], &a[y.hi()])
            + k.eval_unchecked(&a[x.hi()], &a[y.lo()])
            + k.eval_unchecked(&a[x.hi()], &a[y.hi()]);
        self.n as f64 / 4.0 * sum
    }

    pub fn expansion(&self, state: usize) -> RkhsExpansion {
        self.embeddings[state].to_expansion(self.kernel())
    }
}

/// Builds the construction at `sigma = 0.9 * thm7_sigma_limit(n, eps)`.
pub fn thm7_construct(n: usize, dim: usize, eps: f64) -> Result<Thm7Construction> {
    let sigma = 0.9 * thm7_sigma_limit(n, eps)?;
    let model = TwoMixtureModel::new(n)?;
    let anchors = place_anchors(n, dim, 1.0 / n as f64)?;
    let states = model.states();
    let w = (n as f64).sqrt() / 2.0;
    let embeddings = states
        .iter()
        .map(|s| PointSetEmbedding::new(vec![anchors[s.lo()].clone(), anchors[s.hi()].clone()], vec![w, w]))
        .collect::<Result<Vec<_>>>()?;

    let mut c = Thm7Construction {
        n,
        dim,
        epsilon: eps,
        sigma,
        anchor_separation: min_separation(&anchors),
        anchors,
        embeddings,
        states,
        max_error: 0.0,
        pure_diagonal_deviation: 0.0,
        generic_route_deviation: 0.0,
        holds: false,
    };
    let expansions: Vec<RkhsExpansion> = (0..c.states.len()).map(|i| c.expansion(i)).collect();
    for (a, &x) in c.states.iter().enumerate() {
        for (b, &y) in c.states.iter().enumerate() {
            let v = c.inner(x, y);
            let target = exp_pmi_two_mixture(n, x, y)?;
            c.max_error = c.max_error.max((v - target).abs());
            let generic = expansions[a].inner(&expansions[b])?;
            c.generic_route_deviation = c
                .generic_route_deviation
                .max((generic - v).abs() / v.abs().max(1.0));
        }
        if x.is_pure() {
            c.pure_diagonal_deviation = c.pure_diagonal_deviation.max((c.inner(x, x) - n as f64).abs());
        }
    }
    c.holds = c.max_error <= eps;
    Ok(c)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sigma_limit_formula() {
        let s = thm7_sigma_limit(4, 0.1).unwrap();
        assert!((s - 1.0 / (32.0 * 40f64.ln()).sqrt()).abs() < 1e-15);
        assert!(thm7_sigma_limit(1, 0.1).is_err());
        assert!(thm7_sigma_limit(4, 4.0).is_err());
    }

    #[test]
    fn pure_diagonal_is_exactly_n() {
        let c = thm7_construct(6, 2, 0.05).unwrap();
        assert_eq!(c.pure_diagonal_deviation, 0.0);
        assert!(c.holds, "{}", c.max_error);
        assert!(c.generic_route_deviation < 1e-12);
    }

    #[test]
    fn disjoint_pairs_decay() {
        let n = 5;
        let c = thm7_construct(n, 3, 0.01).unwrap();
        let cap = n as f64 * (-1.0 / (2.0 * (n * n) as f64 * c.sigma * c.sigma)).exp();
        for &x in &c.states {
            for &y in &c.states {
                let shared = [x.lo(), x.hi()].iter().any(|i| *i == y.lo() || *i == y.hi());
                if !shared {
                    assert!(c.inner(x, y) <= cap);
                }
            }
        }
    }
}
