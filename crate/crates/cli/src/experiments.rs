//! One entry point per experiment.

use rand::Rng as _;
use serde_json::json;

use kme_core::embedding::{clip_similarity, kme_similarity, prop2_constant, ClipEmbedding, PointSetEmbedding};
use kme_core::eval::{topk_retrieval, Direction};
use kme_core::kernel::KernelSpec;
use kme_core::loss::SimilarityMatrix;
use kme_core::report::VerifierRecord;
use kme_core::rng;
use kme_core::synthetic::{exp_pmi_table, TwoMixtureModel};
use kme_core::theory::{
    lemma8_check, perturbed_positive_table, thm3_check, thm4_construct, thm4_sigma_for, thm5_sweep, thm6_adversarial_check,
    thm7_construct, ClipLimitConfig, DiscreteMeasure,
};
use kme_core::train::{point_set_sweep, train, Mode, OptimizerKind, TrainConfig, TrainOutcome};

use crate::error::CliError;
use crate::output::Csv;
use crate::params::*;
use crate::row;

pub struct Outcome {
    pub results: serde_json::Value,
    /// Named invariants and whether they held.
    pub checks: Vec<(String, bool)>,
    pub tables: Vec<(String, Csv)>,
}

impl Outcome {
    fn new(results: serde_json::Value) -> Self {
        Self {
            results,
            checks: Vec::new(),
            tables: Vec::new(),
        }
    }

    fn check(mut self, name: &str, holds: bool) -> Self {
        self.checks.push((name.to_owned(), holds));
        self
    }

    fn table(mut self, name: &str, csv: Csv) -> Self {
        self.tables.push((name.to_owned(), csv));
        self
    }
}

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

fn or_default(value: f64, fallback: f64) -> f64 {
    if value.is_nan() {
        fallback
    } else {
        value
    }
}

pub fn prop2(p: &Prop2Params, seed: u64) -> Result<Outcome, CliError> {
    let sigma = p.sigma();
    let kernel = KernelSpec::gaussian(sigma)?;
    let constant = prop2_constant(&kernel);
    let mut rng = rng::stream(seed, "prop2", 0);
    let mut csv = Csv::new(&["trial", "kme", "clip", "deviation"]);
    let mut max_deviation = 0.0f64;
    for t in 0..p.trials() {
        let u = rng::unit_vector(&mut rng, p.dim());
        let v = rng::unit_vector(&mut rng, p.dim());
        let kme = kme_similarity(&PointSetEmbedding::single(u.clone())?, &PointSetEmbedding::single(v.clone())?, &kernel)?;
        let clip = clip_similarity(&ClipEmbedding::new(u, sigma * sigma)?, &ClipEmbedding::new(v, sigma * sigma)?)?;
        let deviation = (kme - (clip + constant)).abs();
        max_deviation = max_deviation.max(deviation);
        csv.push(row![t, kme, clip, deviation]);
    }
    let holds = max_deviation < 1e-12;
    let record = VerifierRecord::new("prop2", max_deviation, 1e-12, holds)
        .param("sigma", sigma)
        .param("trials", p.trials() as f64)
        .seed(seed);
    Ok(Outcome::new(json!({ "record": record, "constant": constant }))
        .check("prop2 identity: |kme - (clip + constant)| < 1e-12", holds)
        .table("pairs", csv))
}

fn random_density(rng: &mut rng::Rng, atoms: usize) -> (Vec<f64>, Vec<f64>) {
    let raw: Vec<f64> = (0..atoms).map(|_| rng.random_range(0.1..1.0)).collect();
    let mass: f64 = rng.random_range(0.5..2.0);
    let total: f64 = raw.iter().sum();
    let measure: Vec<f64> = raw.iter().map(|r| mass * r / total).collect();
    let f_raw: Vec<f64> = (0..atoms).map(|_| rng.random_range(0.2..2.0)).collect();
    let norm: f64 = measure.iter().zip(&f_raw).map(|(m, f)| m * f).sum();
    (measure, f_raw.iter().map(|f| f / norm).collect())
}

pub fn lemma8(p: &Lemma8Params, seed: u64) -> Result<Outcome, CliError> {
    let eps = p.eps();
    let delta = or_default(p.delta(), eps / 10.0);
    let mut csv = Csv::new(&["trial", "lhs", "rhs", "holds"]);
    let mut all = true;
    let mut worst_ratio = 0.0f64;
    for t in 0..p.trials() {
        let mut rng = rng::stream(seed, "lemma8", t as u64);
        let (measure, f) = random_density(&mut rng, p.atoms());
        let g: Vec<f64> = f.iter().map(|v| (v + eps * rng.random_range(-1.0..=1.0)).max(delta)).collect();
        let check = lemma8_check(&measure, &f, &g, eps, delta)?;
        all &= check.holds;
        worst_ratio = worst_ratio.max(check.lhs / check.rhs);
        csv.push(row![t, check.lhs, check.rhs, check.holds]);
    }
    let record = VerifierRecord::new("lemma8", worst_ratio, 1.0, all)
        .param("eps", eps)
        .param("delta", delta)
        .param("trials", p.trials() as f64)
        .seed(seed);
    Ok(Outcome::new(json!({ "record": record, "max_lhs_over_rhs": worst_ratio }))
        .check("lemma8: lhs <= rhs in every trial", all)
        .table("trials", csv))
}

pub fn thm3(p: &Thm3Params, seed: u64) -> Result<Outcome, CliError> {
    let eps = p.eps();
    let delta = or_default(p.delta(), eps / 10.0);
    let joint = TwoMixtureModel::new(p.n())?.joint();
    let target = exp_pmi_table(&joint)?;
    let mut csv = Csv::new(&["trial", "loss_gap", "bound", "holds"]);
    let mut all = true;
    let mut worst_gap = f64::NEG_INFINITY;
    let mut bound = f64::NAN;
    for t in 0..p.trials() {
        let mut rng = rng::stream(seed, "thm3", t as u64);
        let h = perturbed_positive_table(&target, eps, delta, &mut rng);
        let check = thm3_check(&joint, &h, eps, delta)?;
        all &= check.holds;
        worst_gap = worst_gap.max(check.loss_gap);
        bound = check.bound;
        csv.push(row![t, check.loss_gap, check.bound, check.holds]);
    }
    let record = VerifierRecord::new("thm3", worst_gap, bound, all)
        .param("n", p.n() as f64)
        .param("eps", eps)
        .param("delta", delta)
        .seed(seed);
    Ok(Outcome::new(json!({ "record": record }))
        .check("thm3: 0 <= loss_gap <= bound in every trial", all)
        .table("trials", csv))
}

pub fn thm4(p: &Thm4Params, seed: u64) -> Result<Outcome, CliError> {
    let model = TwoMixtureModel::new(p.n())?.to_latent_model();
    let sigma = or_default(p.sigma(), thm4_sigma_for(&model, p.target())?);
    let c = thm4_construct(&model, sigma, p.d())?;
    let mut csv = Csv::new(&["x", "y", "inner", "target", "abs_error"]);
    for x in 0..c.inner.rows() {
        for y in 0..c.inner.cols() {
            let (v, t) = (c.inner[(x, y)], c.target[(x, y)]);
            csv.push(row![x, y, v, t, (v - t).abs()]);
        }
    }
    let record = VerifierRecord::new("thm4", c.max_error, c.bound, c.holds)
        .param("n", p.n() as f64)
        .param("d", p.d() as f64)
        .param("sigma", sigma)
        .seed(seed);
    let mut outcome = Outcome::new(json!({
        "record": record,
        "stated_bound": c.stated_bound,
        "ratio_bound": c.ratio_bound,
        "anchor_separation": c.anchor_separation,
    }))
    .check("thm4: max_error <= bound", c.holds);
    if p.sigma.is_none() {
        outcome = outcome.check("thm4: max_error < target at the chosen sigma", c.max_error < p.target());
    }
    Ok(outcome.table("pairs", csv))
}

pub fn thm5(p: &Thm5Params, seed: u64) -> Result<Outcome, CliError> {
    let ms = p.m_sweep();
    if ms.len() < 2 {
        return Err(usage("m-sweep needs at least two values"));
    }
    let measure = DiscreteMeasure::random_sphere(p.atoms(), p.d(), seed)?;
    let mut rng = rng::stream(seed, "thm5-g", 0);
    let g: Vec<f64> = (0..p.atoms()).map(|_| rng.random_range(-2.0..2.0)).collect();
    let kernel = KernelSpec::gaussian(p.sigma())?;
    let sweep = thm5_sweep(&measure, &g, &kernel, &ms, p.trials(), seed)?;

    let mut csv = Csv::new(&[
        "m",
        "mean_error",
        "se_error",
        "median_error",
        "mean_sq_error",
        "se_sq_error",
        "expected_sq_error",
        "bound",
        "some_trial_within_bound",
    ]);
    for q in &sweep.points {
        csv.push(row![
            q.m,
            q.mean_error,
            q.se_error,
            q.median_error,
            q.mean_sq_error,
            q.se_sq_error,
            q.expected_sq_error,
            q.bound,
            q.some_trial_within_bound
        ]);
    }
    let mean_ok = sweep.points.iter().all(|q| q.mean_error <= q.bound + 3.0 * q.se_error);
    let sq_ok = sweep.points.iter().all(|q| q.mean_sq_error <= q.sq_bound + 3.0 * q.se_sq_error);
    let median_ok = sweep.points.windows(2).all(|w| w[1].median_error <= w[0].median_error);
    let slope_ok = (-0.65..=-0.35).contains(&sweep.slope);
    let worst = sweep
        .points
        .iter()
        .map(|q| q.mean_error / q.bound)
        .fold(0.0f64, f64::max);
    let record = VerifierRecord::new("thm5", worst, 1.0, mean_ok && sq_ok)
        .param("atoms", p.atoms() as f64)
        .param("d", p.d() as f64)
        .param("sigma", p.sigma())
        .param("trials", p.trials() as f64)
        .seed(seed);
    Ok(Outcome::new(json!({ "record": record, "slope": sweep.slope, "points": sweep.points }))
        .check("thm5: mean error <= bound + 3 se at every m", mean_ok)
        .check("thm5: mean squared error <= K |g|^2 / m + 3 se at every m", sq_ok)
        .check("thm5: median error non-increasing in m", median_ok)
        .check("thm5: log-log slope in [-0.65, -0.35]", slope_ok)
        .table("sweep", csv))
}

pub fn thm6(p: &Thm6Params, seed: u64) -> Result<Outcome, CliError> {
    let config = ClipLimitConfig {
        n: p.n(),
        d: p.d(),
        restarts: p.restarts(),
        steps: p.steps(),
        batch_size: p.batch_size(),
        eval_every: p.eval_every(),
        learning_rate: p.learning_rate(),
        sharpness: p.sharpness(),
        tau_grid: p.tau_grid(),
        seed,
    };
    let report = thm6_adversarial_check(&config)?;
    let mut csv = Csv::new(&["restart", "init", "initial_max_error", "max_error", "alpha", "tau", "evaluations"]);
    for r in &report.restarts {
        csv.push(row![r.restart, r.init, r.initial_max_error, r.max_error, r.alpha, r.tau, r.evaluations]);
    }
    let record = VerifierRecord::new("thm6", report.best_max_error, report.threshold, report.consistent.unwrap_or(true))
        .param("n", p.n() as f64)
        .param("d", p.d() as f64)
        .param("restarts", p.restarts() as f64)
        .param("steps", p.steps() as f64)
        .seed(seed);
    let mut outcome = Outcome::new(json!({
        "record": record,
        "best_max_error": report.best_max_error,
        "threshold": report.threshold,
        "guarantee_applies": report.guarantee_applies,
        "consistent": report.consistent,
    }));
    if let Some(consistent) = report.consistent {
        outcome = outcome.check("thm6: best achieved max error >= N/4", consistent);
    }
    Ok(outcome.table("restarts", csv))
}

pub fn thm7(p: &Thm7Params, seed: u64) -> Result<Outcome, CliError> {
    let c = thm7_construct(p.n(), p.d(), p.eps())?;
    let mut csv = Csv::new(&["x_lo", "x_hi", "y_lo", "y_hi", "inner", "target", "abs_error"]);
    for &x in &c.states {
        for &y in &c.states {
            let v = c.inner(x, y);
            let t = kme_core::synthetic::exp_pmi_two_mixture(p.n(), x, y)?;
            csv.push(row![x.lo(), x.hi(), y.lo(), y.hi(), v, t, (v - t).abs()]);
        }
    }
    let record = VerifierRecord::new("thm7", c.max_error, p.eps(), c.holds)
        .param("n", p.n() as f64)
        .param("d", p.d() as f64)
        .param("sigma", c.sigma)
        .seed(seed);
    Ok(Outcome::new(json!({
        "record": record,
        "pure_diagonal_deviation": c.pure_diagonal_deviation,
        "generic_route_deviation": c.generic_route_deviation,
        "anchor_separation": c.anchor_separation,
    }))
    .check("thm7: max error < eps", c.holds)
    .check("thm7: pure diagonal equals N exactly", c.pure_diagonal_deviation == 0.0)
    .table("pairs", csv))
}

#[allow(clippy::too_many_arguments)]
fn train_config(
    mode: &str,
    dim: usize,
    m: usize,
    steps: usize,
    learning_rate: f64,
    batch_size: usize,
    full_batch: bool,
    optimizer: &str,
    log_every: usize,
    init_log_tau: f64,
    seed: u64,
) -> Result<TrainConfig, CliError> {
    let mode: Mode = mode.parse()?;
    let optimizer: OptimizerKind = optimizer.parse()?;
    let config = TrainConfig {
        mode,
        dim,
        m: if mode == Mode::Clip { 1 } else { m },
        steps,
        learning_rate,
        batch_size,
        full_batch,
        optimizer,
        log_every,
        init_log_tau,
        train_weights: true,
        seed,
    };
    config.validate()?;
    Ok(config)
}

fn curve_csv(rows: impl Iterator<Item = (Option<usize>, kme_core::train::CurveRow)>, with_m: bool) -> Csv {
    let mut csv = if with_m {
        Csv::new(&["m", "step", "minibatch_loss", "population_loss", "pmi_fit", "tau"])
    } else {
        Csv::new(&["step", "minibatch_loss", "population_loss", "pmi_fit", "tau"])
    };
    for (m, r) in rows {
        let mut cells = row![r.step, r.minibatch_loss, r.population_loss, r.pmi_fit, r.tau];
        if let Some(m) = m {
            cells.insert(0, m.to_string());
        }
        csv.push(cells);
    }
    csv
}

fn lower_bound_holds(outcome: &TrainOutcome) -> bool {
    outcome.curve.iter().all(|r| r.population_loss >= outcome.optimal_loss - 1e-8)
}

pub fn run_train(p: &TrainParams, seed: u64) -> Result<Outcome, CliError> {
    let joint = TwoMixtureModel::new(p.n())?.joint();
    let config = train_config(
        &p.mode(),
        p.dim(),
        p.m(),
        p.steps(),
        p.learning_rate(),
        p.batch_size(),
        p.full_batch(),
        &p.optimizer(),
        p.log_every(),
        p.init_log_tau(),
        seed,
    )?;
    let outcome = train(&joint, &config)?;
    let last = *outcome.curve.last().expect("curve has a final row");
    Ok(Outcome::new(json!({
        "final_population_loss": outcome.final_population_loss,
        "optimal_loss": outcome.optimal_loss,
        "gap": outcome.final_population_loss - outcome.optimal_loss,
        "final_pmi_fit": last.pmi_fit,
        "final_tau": last.tau,
    }))
    .check("train: population loss >= optimum - 1e-8 at every logged step", lower_bound_holds(&outcome))
    .table("curve", curve_csv(outcome.curve.iter().map(|r| (None, *r)), false)))
}

pub fn ablation(p: &AblationParams, seed: u64) -> Result<Outcome, CliError> {
    let joint = TwoMixtureModel::new(p.n())?.joint();
    let base = train_config(
        &p.mode(),
        p.dim(),
        1,
        p.steps(),
        p.learning_rate(),
        p.batch_size(),
        p.full_batch(),
        &p.optimizer(),
        p.log_every(),
        p.init_log_tau(),
        seed,
    )?;
    if base.mode == Mode::Clip {
        return Err(usage("the point-set ablation needs mode kme or wpse"));
    }
    let mut sizes = p.m_sweep();
    sizes.sort_unstable();
    let runs = point_set_sweep(&joint, &base, &sizes)?;
    let mut summary = Csv::new(&["m", "final_population_loss", "gap", "final_pmi_fit"]);
    for (m, o) in &runs {
        let fit = o.curve.last().map(|r| r.pmi_fit).unwrap_or(f64::NAN);
        summary.push(row![*m, o.final_population_loss, o.final_population_loss - o.optimal_loss, fit]);
    }
    let tolerance = p.tolerance();
    let monotone = runs
        .windows(2)
        .all(|w| w[1].1.final_population_loss <= w[0].1.final_population_loss + tolerance);
    let curves = curve_csv(runs.iter().flat_map(|(m, o)| o.curve.iter().map(move |r| (Some(*m), *r))), true);
    Ok(Outcome::new(json!({
        "optimal_loss": runs[0].1.optimal_loss,
        "final_population_loss": runs.iter().map(|(m, o)| json!({ "m": m, "loss": o.final_population_loss })).collect::<Vec<_>>(),
    }))
    .check("ablation: final loss non-increasing in m within tolerance", monotone)
    .check("ablation: population loss >= optimum - 1e-8", runs.iter().all(|(_, o)| lower_bound_holds(o)))
    .table("summary", summary)
    .table("curves", curves))
}

pub fn retrieval(p: &RetrievalParams, seed: u64) -> Result<Outcome, CliError> {
    let joint = TwoMixtureModel::new(p.n())?.joint();
    let config = train_config(
        &p.mode(),
        p.dim(),
        p.m(),
        p.steps(),
        p.learning_rate(),
        p.batch_size(),
        p.full_batch(),
        &p.optimizer(),
        p.steps(),
        p.init_log_tau(),
        seed,
    )?;
    let trained = train(&joint, &config)?;
    let learned = SimilarityMatrix::log(trained.table.similarity_table())?;
    let reference = SimilarityMatrix::exp(exp_pmi_table(&joint)?)?;
    let ks = p.ks();
    let mut csv = Csv::new(&["scores", "direction", "k", "accuracy", "n_ties"]);
    let mut reports = Vec::new();
    let mut bound_ok = true;
    for direction in [Direction::XtoY, Direction::YtoX] {
        let ours = topk_retrieval(&joint, &learned, &ks, direction)?;
        let best = topk_retrieval(&joint, &reference, &ks, direction)?;
        for (name, r) in [("learned", &ours), ("exp_pmi", &best)] {
            for i in 0..ks.len() {
                csv.push(row![name, direction.label(), ks[i], r.top_k_accuracy[i], r.n_ties[i]]);
            }
        }
        if let Some(i) = ks.iter().position(|&k| k == 1) {
            bound_ok &= best.top_k_accuracy[i] >= ours.top_k_accuracy[i];
        }
        reports.push(json!({ "learned": ours, "exp_pmi": best }));
    }
    Ok(Outcome::new(json!({
        "final_population_loss": trained.final_population_loss,
        "optimal_loss": trained.optimal_loss,
        "reports": reports,
    }))
    .check("retrieval: exp-PMI top-1 >= learned top-1", bound_ok)
    .table("report", csv))
}
