//! Free embedding tables trained against the contrastive losses.
//!
//! Every table stores raw parameters in one flat vector laid out as
//! `[x points | y points | x weight pre-activations | y weight
//! pre-activations | log tau]`. Points are normalized inside the loss and
//! renormalized after every update; weights are `exp(pre-activation)`.
//!
//! In `Clip` mode `log tau` is the log temperature and `S = g.g / tau`. In
//! `Kme` and `Wpse` modes it is the log of `tau = 1/sigma^2`; `Kme` uses
//! the log-sum similarity and `Wpse` the raw weighted sum as logits.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::embedding::log_sum_exp;
use crate::error::{Error, Result};
use crate::loss::{minibatch_loss_and_grad, optimal_population_loss, population_loss_and_grad};
use crate::matrix::Matrix;
use crate::par;
use crate::rng::{self, Rng};
use crate::synthetic::{exp_pmi_table, DiscreteJoint};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Clip,
    Kme,
    Wpse,
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "clip" => Ok(Mode::Clip),
            "kme" => Ok(Mode::Kme),
            "wpse" => Ok(Mode::Wpse),
            other => Err(Error::invalid(format!("unknown mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

impl std::str::FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sgd" => Ok(OptimizerKind::Sgd),
            "adam" => Ok(OptimizerKind::Adam),
            other => Err(Error::invalid(format!("unknown optimizer {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EmbeddingTable {
    mode: Mode,
    dim: usize,
    m: usize,
    n_x: usize,
    n_y: usize,
    params: Vec<f64>,
}

struct Layout {
    x_points: std::ops::Range<usize>,
    y_points: std::ops::Range<usize>,
    x_pre: std::ops::Range<usize>,
    y_pre: std::ops::Range<usize>,
    log_tau: usize,
}

impl EmbeddingTable {
    fn layout_for(mode: Mode, n_x: usize, n_y: usize, dim: usize, m: usize) -> Layout {
        let xp = n_x * m * dim;
        let yp = n_y * m * dim;
        let (xw, yw) = match mode {
            Mode::Clip => (0, 0),
            Mode::Kme | Mode::Wpse => (n_x * m, n_y * m),
        };
        Layout {
            x_points: 0..xp,
            y_points: xp..xp + yp,
            x_pre: xp + yp..xp + yp + xw,
            y_pre: xp + yp + xw..xp + yp + xw + yw,
            log_tau: xp + yp + xw + yw,
        }
    }

    fn layout(&self) -> Layout {
        Self::layout_for(self.mode, self.n_x, self.n_y, self.dim, self.m)
    }

    /// Gaussian-initialized points (normalized), unit weights.
    pub fn random(mode: Mode, n_x: usize, n_y: usize, dim: usize, m: usize, log_tau: f64, rng: &mut Rng) -> Result<Self> {
        if n_x == 0 || n_y == 0 || dim == 0 || m == 0 {
            return Err(Error::invalid("table sizes, dimension and point-set size must be positive"));
        }
        if mode == Mode::Clip && m != 1 {
            return Err(Error::invalid("clip tables hold one vector per item"));
        }
        if !log_tau.is_finite() {
            return Err(Error::invalid("log tau must be finite"));
        }
        let layout = Self::layout_for(mode, n_x, n_y, dim, m);
        let mut params = vec![0.0; layout.log_tau + 1];
        for v in &mut params[..layout.y_points.end] {
            *v = StandardNormal.sample(rng);
        }
        params[layout.log_tau] = log_tau;
        let mut table = Self {
            mode,
            dim,
            m,
            n_x,
            n_y,
            params,
        };
        table.project();
        Ok(table)
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn point_set_size(&self) -> usize {
        self.m
    }

    pub fn n_x(&self) -> usize {
        self.n_x
    }

    pub fn n_y(&self) -> usize {
        self.n_y
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    /// Raw parameter access; callers that move points off the sphere should
    /// call [`EmbeddingTable::project`] afterwards.
    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    /// Weight pre-activations, x items first; empty in `Clip` mode.
    pub fn pre_activations_mut(&mut self) -> &mut [f64] {
        let layout = self.layout();
        &mut self.params[layout.x_pre.start..layout.y_pre.end]
    }

    pub fn log_tau(&self) -> f64 {
        self.params[self.layout().log_tau]
    }

    pub fn tau(&self) -> f64 {
        self.log_tau().exp()
    }

    pub fn x_point(&self, x: usize, a: usize) -> &[f64] {
        let start = (x * self.m + a) * self.dim;
        &self.params[start..start + self.dim]
    }

    pub fn y_point(&self, y: usize, b: usize) -> &[f64] {
        let start = self.layout().y_points.start + (y * self.m + b) * self.dim;
        &self.params[start..start + self.dim]
    }

    /// `exp(pre-activation)`; 1 in `Clip` mode.
    pub fn x_weight(&self, x: usize, a: usize) -> f64 {
        match self.mode {
            Mode::Clip => 1.0,
            _ => self.params[self.layout().x_pre.start + x * self.m + a].exp(),
        }
    }

    pub fn y_weight(&self, y: usize, b: usize) -> f64 {
        match self.mode {
            Mode::Clip => 1.0,
            _ => self.params[self.layout().y_pre.start + y * self.m + b].exp(),
        }
    }

    /// Renormalizes every point to unit length.
    pub fn project(&mut self) {
        let end = self.layout().y_points.end;
        for row in self.params[..end].chunks_mut(self.dim) {
            let len = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            if len > 0.0 {
                row.iter_mut().for_each(|v| *v /= len);
            } else {
                row[0] = 1.0;
            }
        }
    }

    fn check_item(&self, x: usize, y: usize) -> Result<()> {
        if x >= self.n_x {
            return Err(Error::IndexOutOfRange { index: x, size: self.n_x });
        }
        if y >= self.n_y {
            return Err(Error::IndexOutOfRange { index: y, size: self.n_y });
        }
        Ok(())
    }

    pub fn similarity(&self, x: usize, y: usize) -> Result<f64> {
        self.check_item(x, y)?;
        Ok(Normalized::new(self).similarity(x, y))
    }

    pub fn similarity_table(&self) -> Matrix {
        let norm = Normalized::new(self);
        Matrix::from_fn(self.n_x, self.n_y, |x, y| norm.similarity(x, y))
    }
}

/// Unit copies of the raw points, shared by loss and gradient passes.
struct Normalized<'a> {
    table: &'a EmbeddingTable,
    ux: Vec<f64>,
    uy: Vec<f64>,
    nx: Vec<f64>,
    ny: Vec<f64>,
    tau: f64,
}

impl<'a> Normalized<'a> {
    fn new(table: &'a EmbeddingTable) -> Self {
        let layout = table.layout();
        let split = |raw: &[f64]| {
            let mut unit = raw.to_vec();
            let mut norms = Vec::with_capacity(raw.len() / table.dim);
            for row in unit.chunks_mut(table.dim) {
                let len = row.iter().map(|v| v * v).sum::<f64>().sqrt();
                row.iter_mut().for_each(|v| *v /= len);
                norms.push(len);
            }
            (unit, norms)
        };
        let (ux, nx) = split(&table.params[layout.x_points]);
        let (uy, ny) = split(&table.params[layout.y_points]);
        Self {
            table,
            ux,
            uy,
            nx,
            ny,
            tau: table.tau(),
        }
    }

    fn ux(&self, x: usize, a: usize) -> &[f64] {
        let d = self.table.dim;
        let start = (x * self.table.m + a) * d;
        &self.ux[start..start + d]
    }

    fn uy(&self, y: usize, b: usize) -> &[f64] {
        let d = self.table.dim;
        let start = (y * self.table.m + b) * d;
        &self.uy[start..start + d]
    }

    /// Logits `log w_a + log w_b - tau |u_a - v_b|^2 / 2` of the point pairs.
    fn pair_logits(&self, x: usize, y: usize) -> Vec<(usize, usize, f64, f64)> {
        let t = self.table;
        let layout = t.layout();
        let mut out = Vec::with_capacity(t.m * t.m);
        for a in 0..t.m {
            let pa = t.params[layout.x_pre.start + x * t.m + a];
            for b in 0..t.m {
                let pb = t.params[layout.y_pre.start + y * t.m + b];
                let d2: f64 = self.ux(x, a).iter().zip(self.uy(y, b)).map(|(p, q)| (p - q) * (p - q)).sum();
                out.push((a, b, d2, pa + pb - self.tau * d2 / 2.0));
            }
        }
        out
    }

    fn similarity(&self, x: usize, y: usize) -> f64 {
        match self.table.mode {
            Mode::Clip => dot(self.ux(x, 0), self.uy(y, 0)) / self.tau,
            Mode::Kme => log_sum_exp(&self.pair_logits(x, y).iter().map(|p| p.3).collect::<Vec<_>>()),
            Mode::Wpse => log_sum_exp(&self.pair_logits(x, y).iter().map(|p| p.3).collect::<Vec<_>>()).exp(),
        }
    }

    /// Adds `upstream * dS(x, y)/dparams` into `grad`, with point gradients
    /// taken with respect to the unit vectors.
    fn accumulate(&self, x: usize, y: usize, upstream: f64, grad: &mut [f64]) {
        let t = self.table;
        let layout = t.layout();
        let d = t.dim;
        match t.mode {
            Mode::Clip => {
                let (u, v) = (self.ux(x, 0), self.uy(y, 0));
                let s = dot(u, v) / self.tau;
                let gx = x * d;
                let gy = layout.y_points.start + y * d;
                for k in 0..d {
                    grad[gx + k] += upstream * v[k] / self.tau;
                    grad[gy + k] += upstream * u[k] / self.tau;
                }
                grad[layout.log_tau] -= upstream * s;
            }
            Mode::Kme | Mode::Wpse => {
                let logits = self.pair_logits(x, y);
                let lse = log_sum_exp(&logits.iter().map(|p| p.3).collect::<Vec<_>>());
                let scale = if t.mode == Mode::Wpse { upstream * lse.exp() } else { upstream };
                for &(a, b, d2, l) in &logits {
                    let pi = scale * (l - lse).exp();
                    grad[layout.x_pre.start + x * t.m + a] += pi;
                    grad[layout.y_pre.start + y * t.m + b] += pi;
                    grad[layout.log_tau] -= pi * self.tau * d2 / 2.0;
                    let gx = (x * t.m + a) * d;
                    let gy = layout.y_points.start + (y * t.m + b) * d;
                    let (u, v) = (self.ux(x, a), self.uy(y, b));
                    for k in 0..d {
                        let diff = u[k] - v[k];
                        grad[gx + k] -= pi * self.tau * diff;
                        grad[gy + k] += pi * self.tau * diff;
                    }
                }
            }
        }
    }

    /// Maps unit-vector gradients to raw-vector gradients through `r/|r|`.
    fn chain_normalization(&self, grad: &mut [f64]) {
        let layout = self.table.layout();
        let d = self.table.dim;
        let parts = [
            (layout.x_points.clone(), &self.ux, &self.nx),
            (layout.y_points.clone(), &self.uy, &self.ny),
        ];
        for (range, unit, norms) in parts {
            for (i, (g, u)) in grad[range].chunks_mut(d).zip(unit.chunks(d)).enumerate() {
                let radial = dot(g, u);
                for k in 0..d {
                    g[k] = (g[k] - radial * u[k]) / norms[i];
                }
            }
        }
    }
}

fn dot(u: &[f64], v: &[f64]) -> f64 {
    u.iter().zip(v).map(|(a, b)| a * b).sum()
}

/// Minibatch loss of matched pairs and its gradient with respect to every
/// raw parameter.
pub fn loss_and_grad(table: &EmbeddingTable, batch: &[(usize, usize)]) -> Result<(f64, Vec<f64>)> {
    if batch.is_empty() {
        return Err(Error::invalid("batch must not be empty"));
    }
    for &(x, y) in batch {
        table.check_item(x, y)?;
    }
    let norm = Normalized::new(table);
    let n = batch.len();
    let s = Matrix::from_fn(n, n, |i, j| norm.similarity(batch[i].0, batch[j].1));
    let (loss, upstream) = minibatch_loss_and_grad(&s)?;
    let mut grad = vec![0.0; table.params.len()];
    for i in 0..n {
        for j in 0..n {
            norm.accumulate(batch[i].0, batch[j].1, upstream[(i, j)], &mut grad);
        }
    }
    norm.chain_normalization(&mut grad);
    Ok((loss, grad))
}

/// Exact population loss over the joint and its gradient.
pub fn population_loss_and_grad_table(table: &EmbeddingTable, joint: &DiscreteJoint) -> Result<(f64, Vec<f64>)> {
    check_joint(table, joint)?;
    let norm = Normalized::new(table);
    let s = Matrix::from_fn(table.n_x, table.n_y, |x, y| norm.similarity(x, y));
    let (loss, upstream) = population_loss_and_grad(joint, &s)?;
    let mut grad = vec![0.0; table.params.len()];
    for x in 0..table.n_x {
        for y in 0..table.n_y {
            let u = upstream[(x, y)];
            if u != 0.0 {
                norm.accumulate(x, y, u, &mut grad);
            }
        }
    }
    norm.chain_normalization(&mut grad);
    Ok((loss, grad))
}

fn check_joint(table: &EmbeddingTable, joint: &DiscreteJoint) -> Result<()> {
    if joint.n_x() != table.n_x || joint.n_y() != table.n_y {
        return Err(Error::invalid(format!(
            "table is {}x{}, joint is {}x{}",
            table.n_x,
            table.n_y,
            joint.n_x(),
            joint.n_y()
        )));
    }
    Ok(())
}

/// `max |exp(S) - exp PMI|` over pairs with positive mass. `Clip` tables get
/// the best scalar `alpha` in front of `exp(S)`, found by golden-section
/// search on the convex objective.
pub fn pmi_fit(table: &EmbeddingTable, joint: &DiscreteJoint) -> Result<f64> {
    check_joint(table, joint)?;
    let target = exp_pmi_table(joint)?;
    let s = table.similarity_table();
    let support: Vec<(f64, f64)> = (0..joint.n_x())
        .flat_map(|x| (0..joint.n_y()).map(move |y| (x, y)))
        .filter(|&(x, y)| joint.p(x, y) > 0.0)
        .map(|(x, y)| (s[(x, y)], target[(x, y)]))
        .collect();
    if support.is_empty() {
        return Err(Error::invalid("joint has empty support"));
    }
    match table.mode {
        Mode::Kme | Mode::Wpse => Ok(support.iter().map(|(s, t)| (s.exp() - t).abs()).fold(0.0, f64::max)),
        Mode::Clip => {
            let top = support.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max);
            let scaled: Vec<(f64, f64)> = support.iter().map(|&(s, t)| ((s - top).exp(), t)).collect();
            let objective = |a: f64| scaled.iter().map(|(e, t)| (a * e - t).abs()).fold(0.0, f64::max);
            let t_max = scaled.iter().map(|p| p.1).fold(0.0, f64::max);
            let e_min = scaled.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
            let hi = if e_min > 0.0 { 2.0 * t_max / e_min } else { 2.0 * t_max };
            Ok(objective(golden_section_min(objective, 0.0, hi.max(1e-12), 200)))
        }
    }
}

fn golden_section_min(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64, iters: usize) -> f64 {
    let ratio = (5f64.sqrt() - 1.0) / 2.0;
    let mut a = hi - ratio * (hi - lo);
    let mut b = lo + ratio * (hi - lo);
    let (mut fa, mut fb) = (f(a), f(b));
    for _ in 0..iters {
        if fa <= fb {
            hi = b;
            b = a;
            fb = fa;
            a = hi - ratio * (hi - lo);
            fa = f(a);
        } else {
            lo = a;
            a = b;
            fa = fb;
            b = lo + ratio * (hi - lo);
            fb = f(b);
        }
    }
    0.5 * (lo + hi)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub mode: Mode,
    pub dim: usize,
    pub m: usize,
    pub steps: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    /// Optimize the exact population loss instead of sampled minibatches.
    pub full_batch: bool,
    pub optimizer: OptimizerKind,
    pub log_every: usize,
    pub init_log_tau: f64,
    pub train_weights: bool,
    pub seed: u64,
}

impl TrainConfig {
    pub fn new(mode: Mode) -> Self {
        Self {
            mode,
            dim: 3,
            m: 1,
            steps: 1000,
            learning_rate: 0.05,
            batch_size: 32,
            full_batch: false,
            optimizer: OptimizerKind::Adam,
            log_every: 50,
            init_log_tau: 0.0,
            train_weights: true,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 || self.dim == 0 || self.m == 0 || self.log_every == 0 {
            return Err(Error::invalid("steps, dim, m and log_every must be positive"));
        }
        if !self.full_batch && self.batch_size == 0 {
            return Err(Error::invalid("batch size must be positive"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid(format!("learning rate must be positive, got {}", self.learning_rate)));
        }
        if self.mode == Mode::Clip && self.m != 1 {
            return Err(Error::invalid("clip mode uses m = 1"));
        }
        Ok(())
    }
}

/// CSV row: `step, minibatch_loss, population_loss, pmi_fit, tau`.
/// In full-batch runs `minibatch_loss` is the training objective, i.e. the
/// population loss.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CurveRow {
    pub step: usize,
    pub minibatch_loss: f64,
    pub population_loss: f64,
    pub pmi_fit: f64,
    pub tau: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainOutcome {
    pub table: EmbeddingTable,
    pub curve: Vec<CurveRow>,
    pub final_population_loss: f64,
    pub optimal_loss: f64,
}

enum Optimizer {
    Sgd,
    Adam { m: Vec<f64>, v: Vec<f64>, t: i32 },
}

impl Optimizer {
    fn new(kind: OptimizerKind, len: usize) -> Self {
        match kind {
            OptimizerKind::Sgd => Optimizer::Sgd,
            OptimizerKind::Adam => Optimizer::Adam {
                m: vec![0.0; len],
                v: vec![0.0; len],
                t: 0,
            },
        }
    }

    fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        match self {
            Optimizer::Sgd => params.iter_mut().zip(grad).for_each(|(p, g)| *p -= lr * g),
            Optimizer::Adam { m, v, t } => {
                const B1: f64 = 0.9;
                const B2: f64 = 0.999;
                *t += 1;
                let c1 = 1.0 - B1.powi(*t);
                let c2 = 1.0 - B2.powi(*t);
                for (i, (p, g)) in params.iter_mut().zip(grad).enumerate() {
                    m[i] = B1 * m[i] + (1.0 - B1) * g;
                    v[i] = B2 * v[i] + (1.0 - B2) * g * g;
                    *p -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + 1e-8);
                }
            }
        }
    }
}

pub fn train(joint: &DiscreteJoint, config: &TrainConfig) -> Result<TrainOutcome> {
    config.validate()?;
    joint.check_positive_marginals()?;
    let mut init_rng = rng::stream(config.seed, "train-init", 0);
    let mut table = EmbeddingTable::random(
        config.mode,
        joint.n_x(),
        joint.n_y(),
        config.dim,
        config.m,
        config.init_log_tau,
        &mut init_rng,
    )?;
    train_from(joint, config, &mut table).map(|curve| {
        let final_population_loss = curve.last().map(|r| r.population_loss).unwrap_or(f64::NAN);
        TrainOutcome {
            table,
            curve,
            final_population_loss,
            optimal_loss: optimal_population_loss(joint),
        }
    })
}

/// Continues training an existing table in place and returns the curve.
pub fn train_from(joint: &DiscreteJoint, config: &TrainConfig, table: &mut EmbeddingTable) -> Result<Vec<CurveRow>> {
    config.validate()?;
    check_joint(table, joint)?;
    let cells: Vec<(usize, usize)> = (0..joint.n_x())
        .flat_map(|x| (0..joint.n_y()).map(move |y| (x, y)))
        .collect();
    let sampler = WeightedIndex::new(cells.iter().map(|&(x, y)| joint.p(x, y)))
        .map_err(|e| Error::invalid(e.to_string()))?;
    let mut batch_rng = rng::stream(config.seed, "train-batch", 0);
    let mut optimizer = Optimizer::new(config.optimizer, table.params.len());
    let layout = table.layout();
    let mut curve = Vec::new();

    for step in 0..=config.steps {
        let (objective, mut grad) = if config.full_batch {
            population_loss_and_grad_table(table, joint)?
        } else {
            let batch: Vec<(usize, usize)> = (0..config.batch_size)
                .map(|_| cells[sampler.sample(&mut batch_rng)])
                .collect();
            loss_and_grad(table, &batch)?
        };
        if !objective.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::Divergence { step, loss: objective });
        }
        if step % config.log_every == 0 || step == config.steps {
            let population_loss = if config.full_batch {
                objective
            } else {
                population_loss_and_grad_table(table, joint)?.0
            };
            curve.push(CurveRow {
                step,
                minibatch_loss: objective,
                population_loss,
                pmi_fit: pmi_fit(table, joint)?,
                tau: table.tau(),
            });
        }
        if step == config.steps {
            break;
        }
        if !config.train_weights {
            grad[layout.x_pre.start..layout.y_pre.end].iter_mut().for_each(|g| *g = 0.0);
        }
        optimizer.step(&mut table.params, &grad, config.learning_rate);
        table.project();
    }
    Ok(curve)
}

/// Trains one run per point-set size in parallel, each from the same seed.
pub fn point_set_sweep(joint: &DiscreteJoint, base: &TrainConfig, sizes: &[usize]) -> Result<Vec<(usize, TrainOutcome)>> {
    let outcomes = par::map_range(sizes.len(), |i| {
        let config = TrainConfig { m: sizes[i], ..base.clone() };
        train(joint, &config).map(|o| (sizes[i], o))
    });
    outcomes.into_iter().collect()
}

/// Largest analytic vs central-difference discrepancy over all raw
/// parameters. Coordinates where both values are below `1e-8` are compared
/// absolutely, the rest relatively.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GradientCheck {
    pub max_relative_error: f64,
    pub max_absolute_error_small: f64,
    pub coordinates: usize,
}

pub fn gradient_check(
    table: &EmbeddingTable,
    objective: impl Fn(&EmbeddingTable) -> Result<(f64, Vec<f64>)>,
    step: f64,
) -> Result<GradientCheck> {
    let (_, analytic) = objective(table)?;
    let mut probe = table.clone();
    let mut max_relative_error = 0.0f64;
    let mut max_absolute_error_small = 0.0f64;
    for i in 0..table.params.len() {
        let base = table.params[i];
        probe.params[i] = base + step;
        let up = objective(&probe)?.0;
        probe.params[i] = base - step;
        let down = objective(&probe)?.0;
        probe.params[i] = base;
        let numeric = (up - down) / (2.0 * step);
        let scale = numeric.abs().max(analytic[i].abs());
        let diff = (numeric - analytic[i]).abs();
        if scale < 1e-8 {
            max_absolute_error_small = max_absolute_error_small.max(diff);
        } else {
            max_relative_error = max_relative_error.max(diff / scale);
        }
    }
    Ok(GradientCheck {
        max_relative_error,
        max_absolute_error_small,
        coordinates: table.params.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::{kme_similarity, PointSetEmbedding};
    use crate::kernel::KernelSpec;
    use crate::synthetic::TwoMixtureModel;

    fn table(mode: Mode, m: usize, seed: u64) -> EmbeddingTable {
        let mut rng = rng::stream(seed, "test-table", 0);
        let mut t = EmbeddingTable::random(mode, 5, 4, 3, m, 0.3, &mut rng).unwrap();
        if mode != Mode::Clip {
            let layout = t.layout();
            for (k, v) in t.params[layout.x_pre.start..layout.y_pre.end].iter_mut().enumerate() {
                *v = 0.1 * (k as f64).sin();
            }
        }
        t
    }

    #[test]
    fn kme_similarity_matches_embedding_module() {
        let t = table(Mode::Kme, 3, 1);
        let kernel = KernelSpec::from_tau(t.tau()).unwrap();
        let embed_x = PointSetEmbedding::new(
            (0..3).map(|a| t.x_point(2, a).to_vec()).collect(),
            (0..3).map(|a| t.x_weight(2, a)).collect(),
        )
        .unwrap();
        let embed_y = PointSetEmbedding::new(
            (0..3).map(|b| t.y_point(1, b).to_vec()).collect(),
            (0..3).map(|b| t.y_weight(1, b)).collect(),
        )
        .unwrap();
        let expected = kme_similarity(&embed_x, &embed_y, &kernel).unwrap();
        assert!((t.similarity(2, 1).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn single_pair_batch_has_zero_loss_and_gradient() {
        for mode in [Mode::Clip, Mode::Kme, Mode::Wpse] {
            let m = if mode == Mode::Clip { 1 } else { 2 };
            let (loss, grad) = loss_and_grad(&table(mode, m, 2), &[(1, 3)]).unwrap();
            assert!(loss.abs() < 1e-15);
            assert!(grad.iter().all(|g| g.abs() < 1e-15));
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let batch = [(0, 1), (3, 2), (4, 0), (1, 1)];
        for mode in [Mode::Clip, Mode::Kme, Mode::Wpse] {
            let m = if mode == Mode::Clip { 1 } else { 3 };
            let t = table(mode, m, 5);
            let check = gradient_check(&t, |t| loss_and_grad(t, &batch), 1e-5).unwrap();
            assert!(check.max_relative_error < 1e-5, "{mode:?}: {check:?}");
            assert!(check.max_absolute_error_small < 1e-8, "{mode:?}: {check:?}");
        }
    }

    #[test]
    fn population_gradients_match_finite_differences() {
        let joint = TwoMixtureModel::new(3).unwrap().joint();
        for mode in [Mode::Clip, Mode::Kme] {
            let m = if mode == Mode::Clip { 1 } else { 2 };
            let mut rng = rng::stream(8, "test-table", 0);
            let t = EmbeddingTable::random(mode, 6, 6, 2, m, 0.2, &mut rng).unwrap();
            let check = gradient_check(&t, |t| population_loss_and_grad_table(t, &joint), 1e-5).unwrap();
            assert!(check.max_relative_error < 1e-5, "{mode:?}: {check:?}");
        }
    }

    #[test]
    fn out_of_range_batch_is_error() {
        assert!(loss_and_grad(&table(Mode::Clip, 1, 0), &[(5, 0)]).is_err());
        assert!(loss_and_grad(&table(Mode::Clip, 1, 0), &[(0, 4)]).is_err());
    }

    #[test]
    fn points_stay_on_sphere_and_weights_positive() {
        let joint = TwoMixtureModel::new(3).unwrap().joint();
        let mut config = TrainConfig::new(Mode::Kme);
        config.m = 2;
        config.steps = 40;
        config.learning_rate = 0.2;
        let out = train(&joint, &config).unwrap();
        for x in 0..6 {
            for a in 0..2 {
                let p = out.table.x_point(x, a);
                assert!((dot(p, p).sqrt() - 1.0).abs() < 1e-10);
                assert!(out.table.x_weight(x, a) > 0.0);
            }
        }
        for row in &out.curve {
            assert!(row.population_loss >= out.optimal_loss - 1e-8);
        }
    }

    #[test]
    fn training_is_deterministic() {
        let joint = TwoMixtureModel::new(3).unwrap().joint();
        let mut config = TrainConfig::new(Mode::Wpse);
        config.m = 2;
        config.steps = 30;
        config.log_every = 5;
        let a = train(&joint, &config).unwrap();
        let b = train(&joint, &config).unwrap();
        assert_eq!(a.curve, b.curve);
    }

    #[test]
    fn clip_and_single_point_kme_follow_the_same_trajectory() {
        let joint = TwoMixtureModel::new(4).unwrap().joint();
        let mut clip = TrainConfig::new(Mode::Clip);
        clip.steps = 200;
        clip.log_every = 10;
        clip.init_log_tau = 0.4;
        let mut kme = clip.clone();
        kme.mode = Mode::Kme;
        kme.init_log_tau = -0.4;
        kme.train_weights = false;
        let a = train(&joint, &clip).unwrap();
        let b = train(&joint, &kme).unwrap();
        for (r, s) in a.curve.iter().zip(&b.curve) {
            assert!((r.minibatch_loss - s.minibatch_loss).abs() < 1e-8, "{r:?} {s:?}");
            assert!((r.population_loss - s.population_loss).abs() < 1e-8);
            assert!((r.tau * s.tau - 1.0).abs() < 1e-8);
        }
    }

    #[test]
    fn golden_section_finds_minimum() {
        let x = golden_section_min(|a| (a - 1.3).abs() + 0.5, 0.0, 10.0, 200);
        assert!((x - 1.3).abs() < 1e-9);
    }
}
