//! Adversarial search for CLIP embeddings on the two-mixture model.
//!
//! The search minimizes `max_{x,y} |alpha exp(g_x . g_y / tau) - exp PMI|`
//! over unit-norm tables `g^X`, `g^Y` and `tau`. For fixed embeddings and
//! `tau` the optimal `alpha` is found exactly: exp-PMI takes four values,
//! so the objective is a maximum of eight lines in `alpha`.
//!
//! Between exact evaluations the tables follow projected Adam on a soft
//! maximum of squared errors over sampled pairs. The residual's slope in
//! the score is taken as `max(alpha e^S, target)` so that cells far below
//! their target still pull. Batches mix the worst
//! pairs from the last exact evaluation, pairs sharing a class, and uniform
//! pairs.

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::par;
use crate::rng::{self, Rng};
use crate::synthetic::{TwoMixtureModel, UnorderedPair};

const GROUPS: usize = 4;
const WORST_PER_ROW: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClipLimitConfig {
    pub n: usize,
    pub d: usize,
    pub restarts: usize,
    pub steps: usize,
    pub batch_size: usize,
    pub eval_every: usize,
    pub learning_rate: f64,
    /// Soft-max sharpness on `(error / N)^2`.
    pub sharpness: f64,
    /// Initial temperatures; restart `r` starts from `tau_grid[r % len]`.
    pub tau_grid: Vec<f64>,
    pub seed: u64,
}

impl ClipLimitConfig {
    pub fn new(n: usize, d: usize) -> Self {
        Self {
            n,
            d,
            restarts: 20,
            steps: 5000,
            batch_size: 2048,
            eval_every: 250,
            learning_rate: 0.02,
            sharpness: 400.0,
            tau_grid: vec![0.3, 1.0, 0.1, 3.0, 0.03],
            seed: 0,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.n < 2 || self.d < 1 {
            return Err(Error::precondition(format!("need N >= 2 and d >= 1, got N={} d={}", self.n, self.d)));
        }
        if self.restarts == 0 || self.batch_size == 0 || self.eval_every == 0 {
            return Err(Error::invalid("restarts, batch size and eval interval must be positive"));
        }
        if self.tau_grid.is_empty() || self.tau_grid.iter().any(|&t| !(t > 0.0 && t.is_finite())) {
            return Err(Error::invalid("tau grid must be nonempty and positive"));
        }
        if !(self.learning_rate > 0.0) || !(self.sharpness > 0.0) {
            return Err(Error::invalid("learning rate and sharpness must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RestartOutcome {
    pub restart: usize,
    pub init: &'static str,
    pub initial_max_error: f64,
    pub max_error: f64,
    pub alpha: f64,
    pub tau: f64,
    pub evaluations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClipLimitReport {
    pub n: usize,
    pub d: usize,
    pub threshold: f64,
    pub guarantee_applies: bool,
    pub best_max_error: f64,
    /// `best_max_error >= N/4`, reported only when the guarantee applies.
    pub consistent: Option<bool>,
    pub restarts: Vec<RestartOutcome>,
}

/// Exact evaluation of one CLIP configuration with optimal `alpha`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClipEvaluation {
    pub max_error: f64,
    pub alpha: f64,
    pub log_alpha: f64,
    pub argmax: (usize, usize),
}

struct Problem {
    n: usize,
    d: usize,
    model: TwoMixtureModel,
    states: Vec<UnorderedPair>,
}

impl Problem {
    fn new(n: usize, d: usize) -> Result<Self> {
        let model = TwoMixtureModel::new(n)?;
        Ok(Self {
            n,
            d,
            states: model.states(),
            model,
        })
    }

    fn len(&self) -> usize {
        self.states.len()
    }

    fn group(&self, x: usize, y: usize) -> usize {
        let (a, b) = (self.states[x], self.states[y]);
        let hits = usize::from(a.lo() == b.lo())
            + usize::from(a.lo() == b.hi())
            + usize::from(a.hi() == b.lo())
            + usize::from(a.hi() == b.hi());
        if hits == 4 {
            3
        } else {
            hits
        }
    }

    fn target(&self, group: usize) -> f64 {
        let n = self.n as f64;
        [0.0, n / 4.0, n / 2.0, n][group]
    }

    fn score(&self, gx: &[f64], gy: &[f64], x: usize, y: usize, tau: f64) -> f64 {
        let d = self.d;
        let (a, b) = (&gx[x * d..(x + 1) * d], &gy[y * d..(y + 1) * d]);
        a.iter().zip(b).map(|(p, q)| p * q).sum::<f64>() / tau
    }
}

#[derive(Clone, Copy)]
struct GroupRange {
    min: f64,
    max: f64,
    arg_min: (usize, usize),
    arg_max: (usize, usize),
}

impl GroupRange {
    fn empty() -> Self {
        Self {
            min: f64::INFINITY,
            max: f64::NEG_INFINITY,
            arg_min: (0, 0),
            arg_max: (0, 0),
        }
    }

    fn push(&mut self, s: f64, at: (usize, usize)) {
        if s < self.min {
            self.min = s;
            self.arg_min = at;
        }
        if s > self.max {
            self.max = s;
            self.arg_max = at;
        }
    }

    fn merge(&mut self, other: &Self) {
        if other.min < self.min {
            self.min = other.min;
            self.arg_min = other.arg_min;
        }
        if other.max > self.max {
            self.max = other.max;
            self.arg_max = other.arg_max;
        }
    }

    fn is_empty(&self) -> bool {
        self.min > self.max
    }
}

/// Minimizes `max_g max(a u_g - t_g, t_g - a l_g)` over `a >= 0`.
fn optimal_scale(upper: &[f64], lower: &[f64], targets: &[f64]) -> (f64, f64) {
    let objective = |a: f64| {
        upper
            .iter()
            .zip(lower)
            .zip(targets)
            .map(|((u, l), t)| (a * u - t).max(t - a * l))
            .fold(f64::NEG_INFINITY, f64::max)
    };
    let mut best = (0.0, objective(0.0));
    for (u, _) in upper.iter().zip(targets) {
        for (l, t2) in lower.iter().zip(targets) {
            for t1 in targets {
                let denom = u + l;
                if denom > 0.0 {
                    let a = (t1 + t2) / denom;
                    let v = objective(a);
                    if v < best.1 {
                        best = (a, v);
                    }
                }
            }
        }
    }
    best
}

fn evaluate(problem: &Problem, gx: &[f64], gy: &[f64], tau: f64) -> (ClipEvaluation, [GroupRange; GROUPS]) {
    let rows: Vec<[GroupRange; GROUPS]> = par::map_range(problem.len(), |x| {
        let mut ranges = [GroupRange::empty(); GROUPS];
        for y in 0..problem.len() {
            ranges[problem.group(x, y)].push(problem.score(gx, gy, x, y, tau), (x, y));
        }
        ranges
    });
    let mut ranges = [GroupRange::empty(); GROUPS];
    for row in &rows {
        for (acc, r) in ranges.iter_mut().zip(row) {
            acc.merge(r);
        }
    }
    let present: Vec<usize> = (0..GROUPS).filter(|&g| !ranges[g].is_empty()).collect();
    let reference = present.iter().map(|&g| ranges[g].max).fold(f64::NEG_INFINITY, f64::max);
    let upper: Vec<f64> = present.iter().map(|&g| (ranges[g].max - reference).exp()).collect();
    let lower: Vec<f64> = present.iter().map(|&g| (ranges[g].min - reference).exp()).collect();
    let targets: Vec<f64> = present.iter().map(|&g| problem.target(g)).collect();
    let (scale, max_error) = optimal_scale(&upper, &lower, &targets);

    let mut argmax = (0, 0);
    let mut worst = f64::NEG_INFINITY;
    for (k, &g) in present.iter().enumerate() {
        let over = scale * upper[k] - targets[k];
        let under = targets[k] - scale * lower[k];
        if over > worst {
            worst = over;
            argmax = ranges[g].arg_max;
        }
        if under > worst {
            worst = under;
            argmax = ranges[g].arg_min;
        }
    }
    let log_alpha = scale.ln() - reference;
    (
        ClipEvaluation {
            max_error,
            alpha: log_alpha.exp(),
            log_alpha,
            argmax,
        },
        ranges,
    )
}

/// Exact `max |alpha exp(g_x . g_y / tau) - exp PMI|` over all state pairs,
/// minimized over `alpha`. Tables are row-major `states x d`.
pub fn clip_max_error(n: usize, d: usize, gx: &[f64], gy: &[f64], tau: f64) -> Result<ClipEvaluation> {
    let problem = Problem::new(n, d)?;
    let expected = problem.len() * d;
    for table in [gx, gy] {
        if table.len() != expected {
            return Err(Error::DimensionMismatch {
                expected,
                actual: table.len(),
            });
        }
    }
    if !(tau > 0.0) {
        return Err(Error::invalid(format!("tau must be positive, got {tau}")));
    }
    Ok(evaluate(&problem, gx, gy, tau).0)
}

fn worst_pairs(problem: &Problem, gx: &[f64], gy: &[f64], tau: f64, eval: &ClipEvaluation) -> Vec<(usize, usize)> {
    let cutoff = 0.9 * eval.max_error;
    let rows: Vec<Vec<(usize, usize)>> = par::map_range(problem.len(), |x| {
        let mut row: Vec<(f64, usize)> = (0..problem.len())
            .filter_map(|y| {
                let s = problem.score(gx, gy, x, y, tau);
                let err = ((eval.log_alpha + s).exp() - problem.target(problem.group(x, y))).abs();
                (err >= cutoff).then_some((err, y))
            })
            .collect();
        row.sort_by(|a, b| b.0.total_cmp(&a.0));
        row.truncate(WORST_PER_ROW);
        row.into_iter().map(|(_, y)| (x, y)).collect()
    });
    let mut out: Vec<(usize, usize)> = rows.into_iter().flatten().collect();
    if out.is_empty() {
        out.push(eval.argmax);
    }
    out
}

fn normalize_rows(table: &mut [f64], d: usize) {
    for row in table.chunks_mut(d) {
        let len = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        if len > 0.0 {
            row.iter_mut().for_each(|v| *v /= len);
        } else {
            row[0] = 1.0;
        }
    }
}

fn random_table(rng: &mut Rng, rows: usize, d: usize) -> Vec<f64> {
    let mut t: Vec<f64> = (0..rows * d).map(|_| StandardNormal.sample(rng)).collect();
    normalize_rows(&mut t, d);
    t
}

/// Pure state `(i, i)` at angle `2 pi i / N` in the first two coordinates,
/// mixed states at the normalized midpoint of their two classes.
fn structured_table(problem: &Problem) -> Vec<f64> {
    let d = problem.d;
    let class = |i: usize| {
        let angle = 2.0 * std::f64::consts::PI * i as f64 / problem.n as f64;
        (angle.cos(), angle.sin())
    };
    let mut t = vec![0.0; problem.len() * d];
    for (k, s) in problem.states.iter().enumerate() {
        let (a, b) = (class(s.lo()), class(s.hi()));
        let row = &mut t[k * d..(k + 1) * d];
        if d == 1 {
            row[0] = a.0 + b.0;
        } else {
            row[0] = a.0 + b.0;
            row[1] = a.1 + b.1;
            if row[0].abs() + row[1].abs() < 1e-9 {
                let mid = std::f64::consts::PI * (s.lo() + s.hi()) as f64 / problem.n as f64;
                row[0] = mid.cos();
                row[1] = mid.sin();
            }
        }
    }
    normalize_rows(&mut t, d);
    t
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    fn new(len: usize) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        }
    }

    fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        const B1: f64 = 0.9;
        const B2: f64 = 0.999;
        self.t += 1;
        let c1 = 1.0 - B1.powi(self.t);
        let c2 = 1.0 - B2.powi(self.t);
        for ((p, g), (m, v)) in params.iter_mut().zip(grad).zip(self.m.iter_mut().zip(self.v.iter_mut())) {
            *m = B1 * *m + (1.0 - B1) * g;
            *v = B2 * *v + (1.0 - B2) * g * g;
            *p -= lr * (*m / c1) / ((*v / c2).sqrt() + 1e-8);
        }
    }
}

fn project_to_tangent(grad: &mut [f64], table: &[f64], d: usize) {
    for (g, p) in grad.chunks_mut(d).zip(table.chunks(d)) {
        let radial: f64 = g.iter().zip(p).map(|(a, b)| a * b).sum();
        g.iter_mut().zip(p).for_each(|(a, b)| *a -= radial * b);
    }
}

fn sample_batch(problem: &Problem, worst: &[(usize, usize)], size: usize, rng: &mut Rng) -> Vec<(usize, usize)> {
    let n_states = problem.len();
    let n = problem.n;
    (0..size)
        .map(|k| match k % 4 {
            0 | 1 => worst[rng.random_range(0..worst.len())],
            2 => {
                let x = rng.random_range(0..n_states);
                let s = problem.states[x];
                let class = if rng.random_bool(0.5) { s.lo() } else { s.hi() };
                let other = rng.random_range(0..n);
                let y = problem
                    .model
                    .index_of(UnorderedPair::new(class, other))
                    .expect("classes are in range");
                if rng.random_bool(0.5) {
                    (x, y)
                } else {
                    (y, x)
                }
            }
            _ => (rng.random_range(0..n_states), rng.random_range(0..n_states)),
        })
        .collect()
}

fn run_restart(problem: &Problem, config: &ClipLimitConfig, restart: usize) -> RestartOutcome {
    let d = problem.d;
    let rows = problem.len();
    let mut rng = rng::stream(config.seed, "thm6-restart", restart as u64);
    let (init, mut gx, mut gy) = match restart {
        0 => {
            let t = structured_table(problem);
            ("structured", t.clone(), t)
        }
        r if r % 2 == 1 => {
            let t = random_table(&mut rng, rows, d);
            ("random-shared", t.clone(), t)
        }
        _ => {
            let x = random_table(&mut rng, rows, d);
            let y = random_table(&mut rng, rows, d);
            ("random", x, y)
        }
    };
    let mut log_tau = config.tau_grid[restart % config.tau_grid.len()].ln();

    let (mut eval, _) = evaluate(problem, &gx, &gy, log_tau.exp());
    let initial_max_error = eval.max_error;
    let mut best = (eval.max_error, eval.alpha, log_tau.exp());
    let mut worst = worst_pairs(problem, &gx, &gy, log_tau.exp(), &eval);
    let mut log_alpha = eval.log_alpha;
    let mut evaluations = 1;

    let mut adam_x = Adam::new(gx.len());
    let mut adam_y = Adam::new(gy.len());
    let mut adam_s = Adam::new(2);
    let nf = problem.n as f64;
    let beta = config.sharpness;
    let mut grad_x = vec![0.0; gx.len()];
    let mut grad_y = vec![0.0; gy.len()];

    for step in 0..config.steps {
        let tau = log_tau.exp();
        let batch = sample_batch(problem, &worst, config.batch_size, &mut rng);
        let mut terms = Vec::with_capacity(batch.len());
        for &(x, y) in &batch {
            let s = problem.score(&gx, &gy, x, y, tau);
            let v = (log_alpha + s).exp();
            let t = problem.target(problem.group(x, y));
            terms.push((s, v.max(t), v - t));
        }
        if terms.iter().any(|t| !t.2.is_finite()) {
            break;
        }
        let peak = terms.iter().map(|t| beta * (t.2 / nf).powi(2)).fold(f64::NEG_INFINITY, f64::max);
        let weights: Vec<f64> = terms.iter().map(|t| (beta * (t.2 / nf).powi(2) - peak).exp()).collect();
        let total: f64 = weights.iter().sum();

        grad_x.iter_mut().for_each(|g| *g = 0.0);
        grad_y.iter_mut().for_each(|g| *g = 0.0);
        let mut grad_scalars = [0.0; 2];
        for (&(x, y), (&(s, slope, r), w)) in batch.iter().zip(terms.iter().zip(&weights)) {
            let dr = w / total * 2.0 * r / (nf * nf);
            let ds = dr * slope;
            grad_scalars[0] += ds;
            grad_scalars[1] -= ds * s;
            for k in 0..d {
                grad_x[x * d + k] += ds * gy[y * d + k] / tau;
                grad_y[y * d + k] += ds * gx[x * d + k] / tau;
            }
        }
        project_to_tangent(&mut grad_x, &gx, d);
        project_to_tangent(&mut grad_y, &gy, d);

        let progress = step as f64 / config.steps.max(1) as f64;
        let lr = config.learning_rate * (0.1 + 0.9 * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos()));
        adam_x.step(&mut gx, &grad_x, lr);
        adam_y.step(&mut gy, &grad_y, lr);
        let mut scalars = [log_alpha, log_tau];
        adam_s.step(&mut scalars, &grad_scalars, lr);
        log_alpha = scalars[0];
        log_tau = scalars[1].clamp((1e-3f64).ln(), (1e3f64).ln());
        normalize_rows(&mut gx, d);
        normalize_rows(&mut gy, d);

        if (step + 1) % config.eval_every == 0 || step + 1 == config.steps {
            let tau = log_tau.exp();
            eval = evaluate(problem, &gx, &gy, tau).0;
            evaluations += 1;
            log_alpha = eval.log_alpha;
            if eval.max_error < best.0 {
                best = (eval.max_error, eval.alpha, tau);
            }
            worst = worst_pairs(problem, &gx, &gy, tau, &eval);
        }
    }

    RestartOutcome {
        restart,
        init,
        initial_max_error,
        max_error: best.0,
        alpha: best.1,
        tau: best.2,
        evaluations,
    }
}

pub fn thm6_adversarial_check(config: &ClipLimitConfig) -> Result<ClipLimitReport> {
    config.validate()?;
    let problem = Problem::new(config.n, config.d)?;
    let restarts: Vec<RestartOutcome> = par::map_range(config.restarts, |r| run_restart(&problem, config, r));
    let best_max_error = restarts.iter().map(|r| r.max_error).fold(f64::INFINITY, f64::min);
    let threshold = config.n as f64 / 4.0;
    let guarantee_applies = (config.n as f64) > 9f64.powi(config.d as i32);
    Ok(ClipLimitReport {
        n: config.n,
        d: config.d,
        threshold,
        guarantee_applies,
        best_max_error,
        consistent: guarantee_applies.then_some(best_max_error >= threshold),
        restarts,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn optimal_scale_matches_grid_search() {
        let upper = [1.0, 0.6, 0.3];
        let lower = [0.8, 0.2, 0.1];
        let targets = [4.0, 2.0, 0.0];
        let (a, v) = optimal_scale(&upper, &lower, &targets);
        let f = |a: f64| {
            (0..3)
                .map(|g| (a * upper[g] - targets[g]).max(targets[g] - a * lower[g]))
                .fold(f64::NEG_INFINITY, f64::max)
        };
        assert!((f(a) - v).abs() < 1e-12);
        for k in 0..20000 {
            assert!(f(k as f64 * 1e-3) >= v - 1e-12);
        }
    }

    #[test]
    fn identical_embeddings_cannot_beat_half_n() {
        for n in [3, 6, 10] {
            let problem = Problem::new(n, 2).unwrap();
            let t: Vec<f64> = (0..problem.len()).flat_map(|_| [0.6, 0.8]).collect();
            let eval = clip_max_error(n, 2, &t, &t, 0.3).unwrap();
            assert!((eval.max_error - n as f64 / 2.0).abs() < 1e-9, "{}", eval.max_error);
        }
    }

    #[test]
    fn evaluation_matches_brute_force() {
        let n = 5;
        let problem = Problem::new(n, 3).unwrap();
        let mut rng = rng::stream(1, "t", 0);
        let gx = random_table(&mut rng, problem.len(), 3);
        let gy = random_table(&mut rng, problem.len(), 3);
        let tau = 0.4;
        let eval = clip_max_error(n, 3, &gx, &gy, tau).unwrap();
        let brute = |alpha: f64| {
            let mut worst = 0.0f64;
            for x in 0..problem.len() {
                for y in 0..problem.len() {
                    let s = problem.score(&gx, &gy, x, y, tau);
                    let t = crate::synthetic::exp_pmi_two_mixture(n, problem.states[x], problem.states[y]).unwrap();
                    worst = worst.max((alpha * s.exp() - t).abs());
                }
            }
            worst
        };
        assert!((brute(eval.alpha) - eval.max_error).abs() < 1e-9);
        for k in 1..200 {
            assert!(brute(eval.alpha * (0.5 + k as f64 / 200.0)) >= eval.max_error - 1e-9);
        }
    }

    #[test]
    fn small_search_runs_and_improves() {
        let mut config = ClipLimitConfig::new(4, 2);
        config.restarts = 3;
        config.steps = 300;
        config.eval_every = 100;
        config.batch_size = 256;
        let report = thm6_adversarial_check(&config).unwrap();
        assert_eq!(report.consistent, None);
        for r in &report.restarts {
            assert!(r.max_error <= r.initial_max_error);
        }
        assert!(report.best_max_error < 2.0);
    }
}
