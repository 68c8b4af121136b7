//! Monte-Carlo discretization of a kernel mean embedding.
//!
//! For a discrete measure `mu` on the sphere and a weight function `g`, the
//! target is `f = sum_z mu(z) g(z) k(u_z, .)` and the estimate from `m`
//! samples is `(1/m) sum_i g(u_i) k(u_i, .)`. Samples that hit the same atom
//! are merged, so the residual has one coefficient per atom:
//! `(mu(z) - count(z)/m) g(z)`.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::kernel::{KernelSpec, RkhsExpansion};
use crate::par;
use crate::rng::{self, Rng};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiscreteMeasure {
    atoms: Vec<Vec<f64>>,
    probs: Vec<f64>,
}

impl DiscreteMeasure {
    pub fn new(atoms: Vec<Vec<f64>>, probs: Vec<f64>) -> Result<Self> {
        if atoms.is_empty() || atoms.len() != probs.len() {
            return Err(Error::invalid(format!(
                "{} atoms and {} probabilities",
                atoms.len(),
                probs.len()
            )));
        }
        let d = atoms[0].len();
        if atoms.iter().any(|a| a.len() != d) {
            return Err(Error::invalid("atoms have different dimensions"));
        }
        if probs.iter().any(|&p| !(p >= 0.0)) {
            return Err(Error::invalid("probabilities must be nonnegative"));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::invalid(format!("probabilities sum to {total}")));
        }
        Ok(Self { atoms, probs })
    }

    /// Uniform measure on `n` seeded random points of the unit sphere in `R^d`.
    pub fn random_sphere(n: usize, d: usize, seed: u64) -> Result<Self> {
        if n == 0 || d == 0 {
            return Err(Error::invalid("need at least one atom in at least one dimension"));
        }
        let mut rng = rng::stream(seed, "sphere-measure", 0);
        let atoms = (0..n).map(|_| rng::unit_vector(&mut rng, d)).collect();
        Self::new(atoms, vec![1.0 / n as f64; n])
    }

    pub fn atoms(&self) -> &[Vec<f64>] {
        &self.atoms
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    fn check_weights(&self, g: &[f64]) -> Result<()> {
        if g.len() != self.len() {
            return Err(Error::DimensionMismatch {
                expected: self.len(),
                actual: g.len(),
            });
        }
        Ok(())
    }

    /// `||g||^2_{L2(mu)}`.
    pub fn l2_norm_sq(&self, g: &[f64]) -> Result<f64> {
        self.check_weights(g)?;
        Ok(self.probs.iter().zip(g).map(|(p, v)| p * v * v).sum())
    }

    /// `(1/m) (sum mu k(u,u) g^2 - sum sum mu mu' k(u,u') g g')`.
    pub fn expected_sq_error(&self, g: &[f64], kernel: &KernelSpec, m: usize) -> Result<f64> {
        self.check_weights(g)?;
        if m == 0 {
            return Err(Error::invalid("sample count must be positive"));
        }
        let n = self.len();
        let mut diag = 0.0;
        let mut cross = 0.0;
        for a in 0..n {
            let ua = &self.atoms[a];
            diag += self.probs[a] * kernel.eval_unchecked(ua, ua) * g[a] * g[a];
            for b in 0..n {
                cross += self.probs[a] * self.probs[b] * kernel.eval_unchecked(ua, &self.atoms[b]) * g[a] * g[b];
            }
        }
        Ok((diag - cross) / m as f64)
    }

    /// Exact RKHS distance between the target and the empirical expansion
    /// given per-atom sample counts.
    pub fn residual_norm(&self, g: &[f64], kernel: &KernelSpec, counts: &[usize]) -> Result<f64> {
        self.check_weights(g)?;
        let m: usize = counts.iter().sum();
        if counts.len() != self.len() || m == 0 {
            return Err(Error::invalid("counts must cover every atom and be nonzero in total"));
        }
        let coefficients = self
            .probs
            .iter()
            .zip(counts)
            .zip(g)
            .map(|((p, &c), v)| (p - c as f64 / m as f64) * v)
            .collect();
        let residual = RkhsExpansion::new(*kernel, self.atoms.clone(), coefficients)?;
        Ok(residual.norm_sq()?.sqrt())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiscretizationTrial {
    pub m: usize,
    pub error: f64,
    pub bound: f64,
    pub within_bound: bool,
}

/// One draw of `m` samples from `mu` and the exact residual norm, against
/// `sqrt(K) ||g||_{L2(mu)} / sqrt(m)`.
pub fn thm5_trial(
    measure: &DiscreteMeasure,
    g: &[f64],
    kernel: &KernelSpec,
    m: usize,
    rng: &mut Rng,
) -> Result<DiscretizationTrial> {
    if m == 0 {
        return Err(Error::invalid("sample count must be positive"));
    }
    let sampler = WeightedIndex::new(measure.probs()).map_err(|e| Error::invalid(e.to_string()))?;
    let mut counts = vec![0usize; measure.len()];
    for _ in 0..m {
        counts[sampler.sample(rng)] += 1;
    }
    let error = measure.residual_norm(g, kernel, &counts)?;
    let bound = (kernel.bound_constant() * measure.l2_norm_sq(g)? / m as f64).sqrt();
    Ok(DiscretizationTrial {
        m,
        error,
        bound,
        within_bound: error <= bound,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepPoint {
    pub m: usize,
    pub trials: usize,
    pub mean_error: f64,
    pub se_error: f64,
    pub median_error: f64,
    pub mean_sq_error: f64,
    pub se_sq_error: f64,
    pub expected_sq_error: f64,
    pub bound: f64,
    pub sq_bound: f64,
    pub some_trial_within_bound: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QuadratureSweep {
    pub points: Vec<SweepPoint>,
    /// Least-squares slope of `log mean_error` on `log m`.
    pub slope: f64,
}

fn mean_and_se(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

pub fn loglog_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = lx.iter().map(|x| (x - mx).powi(2)).sum();
    sxy / sxx
}

/// Runs `trials` independent draws for each `m`. Trial `t` at sweep index
/// `i` uses its own stream, so results do not depend on thread count.
pub fn thm5_sweep(
    measure: &DiscreteMeasure,
    g: &[f64],
    kernel: &KernelSpec,
    ms: &[usize],
    trials: usize,
    seed: u64,
) -> Result<QuadratureSweep> {
    if ms.is_empty() || trials == 0 {
        return Err(Error::invalid("sweep needs at least one m and one trial"));
    }
    let mut points = Vec::with_capacity(ms.len());
    for (i, &m) in ms.iter().enumerate() {
        let outcomes: Vec<Result<DiscretizationTrial>> = par::map_range(trials, |t| {
            let mut rng = rng::stream(seed, "thm5", ((i as u64) << 32) | t as u64);
            thm5_trial(measure, g, kernel, m, &mut rng)
        });
        let outcomes = outcomes.into_iter().collect::<Result<Vec<_>>>()?;
        let errors: Vec<f64> = outcomes.iter().map(|o| o.error).collect();
        let squares: Vec<f64> = errors.iter().map(|e| e * e).collect();
        let (mean_error, se_error) = mean_and_se(&errors);
        let (mean_sq_error, se_sq_error) = mean_and_se(&squares);
        let mut sorted = errors.clone();
        sorted.sort_by(f64::total_cmp);
        let median_error = if sorted.len() % 2 == 1 {
            sorted[sorted.len() / 2]
        } else {
            0.5 * (sorted[sorted.len() / 2 - 1] + sorted[sorted.len() / 2])
        };
        let bound = outcomes[0].bound;
        points.push(SweepPoint {
            m,
            trials,
            mean_error,
            se_error,
            median_error,
            mean_sq_error,
            se_sq_error,
            expected_sq_error: measure.expected_sq_error(g, kernel, m)?,
            bound,
            sq_bound: bound * bound,
            some_trial_within_bound: outcomes.iter().any(|o| o.within_bound),
        });
    }
    let slope = if ms.len() >= 2 {
        let xs: Vec<f64> = points.iter().map(|p| p.m as f64).collect();
        let ys: Vec<f64> = points.iter().map(|p| p.mean_error).collect();
        loglog_slope(&xs, &ys)
    } else {
        f64::NAN
    };
    Ok(QuadratureSweep { points, slope })
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Expected squared residual by enumerating every ordered m-tuple of atoms.
    fn enumerate_expected_sq(measure: &DiscreteMeasure, g: &[f64], kernel: &KernelSpec, m: usize) -> f64 {
        let n = measure.len();
        let mut total = 0.0;
        let mut tuple = vec![0usize; m];
        loop {
            let prob: f64 = tuple.iter().map(|&a| measure.probs()[a]).product();
            let mut counts = vec![0; n];
            for &a in &tuple {
                counts[a] += 1;
            }
            let e = measure.residual_norm(g, kernel, &counts).unwrap();
            total += prob * e * e;
            let mut k = 0;
            loop {
                if k == m {
                    return total;
                }
                tuple[k] += 1;
                if tuple[k] < n {
                    break;
                }
                tuple[k] = 0;
                k += 1;
            }
        }
    }

    #[test]
    fn closed_form_matches_enumeration() {
        let measure = DiscreteMeasure::new(
            vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![-0.6, 0.8]],
            vec![0.5, 0.3, 0.2],
        )
        .unwrap();
        let g = [1.0, -2.0, 0.5];
        let kernel = KernelSpec::gaussian(0.7).unwrap();
        for m in 1..=5 {
            let exact = enumerate_expected_sq(&measure, &g, &kernel, m);
            let closed = measure.expected_sq_error(&g, &kernel, m).unwrap();
            assert!((exact - closed).abs() < 1e-12 * exact.max(1.0), "m={m}: {exact} vs {closed}");
        }
    }

    #[test]
    fn expected_error_below_bound() {
        let measure = DiscreteMeasure::random_sphere(10, 3, 1).unwrap();
        let g: Vec<f64> = (0..10).map(|i| 1.0 + i as f64 / 10.0).collect();
        let kernel = KernelSpec::gaussian(0.5).unwrap();
        for m in [1, 10, 100] {
            let e = measure.expected_sq_error(&g, &kernel, m).unwrap();
            assert!(e <= measure.l2_norm_sq(&g).unwrap() / m as f64);
        }
    }

    #[test]
    fn point_mass_has_zero_error() {
        let measure = DiscreteMeasure::new(vec![vec![0.0, 1.0]], vec![1.0]).unwrap();
        let kernel = KernelSpec::gaussian(0.3).unwrap();
        let mut rng = rng::stream(0, "t", 0);
        let trial = thm5_trial(&measure, &[2.0], &kernel, 7, &mut rng).unwrap();
        assert_eq!(trial.error, 0.0);
    }

    #[test]
    fn slope_of_exact_power_law() {
        let xs = [1.0, 4.0, 16.0];
        let ys: Vec<f64> = xs.iter().map(|x: &f64| 3.0 * x.powf(-0.5)).collect();
        assert!((loglog_slope(&xs, &ys) + 0.5).abs() < 1e-12);
    }

    #[test]
    fn sweep_is_deterministic() {
        let measure = DiscreteMeasure::random_sphere(6, 2, 4).unwrap();
        let g = vec![1.0; 6];
        let kernel = KernelSpec::gaussian(0.4).unwrap();
        let a = thm5_sweep(&measure, &g, &kernel, &[4, 16], 20, 9).unwrap();
        let b = thm5_sweep(&measure, &g, &kernel, &[4, 16], 20, 9).unwrap();
        assert_eq!(a, b);
    }
}
