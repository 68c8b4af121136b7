//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Tolerances and runtime budgets are pinned below. Expected values come
//! from oracles in this file (brute-force enumeration, direct double sums)
//! rather than from the library code under test.

use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::Rng as _;

use kme_core::embedding::{clip_similarity, kme_similarity, prop2_constant, ClipEmbedding, PointSetEmbedding};
use kme_core::kernel::KernelSpec;
use kme_core::loss::{population_loss, SimilarityMatrix};
use kme_core::matrix::Matrix;
use kme_core::rng::{self, Rng};
use kme_core::synthetic::{
    exp_pmi_table, exp_pmi_two_mixture, latent_to_joint, mutual_information, DiscreteJoint, TwoMixtureModel, UnorderedPair,
};
use kme_core::theory::{
    lemma8_check, perturbed_positive_table, thm3_check, thm4_construct, thm4_sigma_for, thm5_sweep, thm6_adversarial_check,
    thm7_construct, ClipLimitConfig, DiscreteMeasure,
};
use kme_core::train::{
    gradient_check, loss_and_grad, point_set_sweep, train, EmbeddingTable, Mode, TrainConfig,
};

const PROP2_TOL: f64 = 1e-12;
const PMI_TOL: f64 = 1e-12;
const OPTIMUM_TOL: f64 = 1e-10;
const EXPECTATION_TOL: f64 = 1e-10;
const THM4_TARGET: f64 = 1e-3;
const SLOPE_RANGE: (f64, f64) = (-0.65, -0.35);
const GRAD_REL_TOL: f64 = 1e-5;
const GRAD_ABS_TOL: f64 = 1e-8;
const TRAIN_GAP: f64 = 0.05;
const ABLATION_TOL: f64 = 0.02;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: String) -> Verdict {
    Verdict { pass, detail }
}

fn random_joint(rng: &mut Rng) -> DiscreteJoint {
    let (nx, ny) = (rng.random_range(2..=6), rng.random_range(2..=6));
    let raw = Matrix::from_fn(nx, ny, |_, _| rng.random_range(0.05..1.0));
    let total = raw.sum();
    DiscreteJoint::new(raw.map(|v| v / total)).unwrap()
}

/// Brute-force MI straight from the table.
fn mi_oracle(joint: &DiscreteJoint) -> f64 {
    let t = joint.table();
    let px: Vec<f64> = (0..t.rows()).map(|r| (0..t.cols()).map(|c| t[(r, c)]).sum()).collect();
    let py: Vec<f64> = (0..t.cols()).map(|c| (0..t.rows()).map(|r| t[(r, c)]).sum()).collect();
    let mut mi = 0.0;
    for r in 0..t.rows() {
        for c in 0..t.cols() {
            if t[(r, c)] > 0.0 {
                mi += t[(r, c)] * (t[(r, c)] / (px[r] * py[c])).ln();
            }
        }
    }
    mi
}

fn criterion_1() -> Verdict {
    let mut worst = 0.0f64;
    for (i, &sigma) in [0.1, 1.0, 3.0].iter().enumerate() {
        let kernel = KernelSpec::gaussian(sigma).unwrap();
        let c = prop2_constant(&kernel);
        let mut rng = rng::stream(1, "acceptance-prop2", i as u64);
        for _ in 0..1000 {
            let u = rng::unit_vector(&mut rng, 4);
            let v = rng::unit_vector(&mut rng, 4);
            let kme = kme_similarity(&PointSetEmbedding::single(u.clone()).unwrap(), &PointSetEmbedding::single(v.clone()).unwrap(), &kernel).unwrap();
            let clip = clip_similarity(&ClipEmbedding::new(u, sigma * sigma).unwrap(), &ClipEmbedding::new(v, sigma * sigma).unwrap()).unwrap();
            worst = worst.max((kme - (clip + c)).abs());
        }
    }
    verdict(worst < PROP2_TOL, format!("max |kme - (clip + c)| = {worst:.3e} < {PROP2_TOL:e}"))
}

fn criterion_2() -> Verdict {
    let mut worst = 0.0f64;
    let mut spots = true;
    for n in 2..=12 {
        let model = TwoMixtureModel::new(n).unwrap();
        let lowered = exp_pmi_table(&latent_to_joint(&model.to_latent_model())).unwrap();
        let states = model.states();
        for (a, &x) in states.iter().enumerate() {
            for (b, &y) in states.iter().enumerate() {
                worst = worst.max((exp_pmi_two_mixture(n, x, y).unwrap() - lowered[(a, b)]).abs());
            }
        }
        let nf = n as f64;
        let ii = UnorderedPair::new(0, 0);
        spots &= exp_pmi_two_mixture(n, ii, ii).unwrap() == nf;
        spots &= exp_pmi_two_mixture(n, ii, UnorderedPair::new(0, 1)).unwrap() == nf / 2.0;
        spots &= exp_pmi_two_mixture(n, ii, UnorderedPair::new(1, 1)).unwrap() == 0.0;
    }
    verdict(
        worst < PMI_TOL && spots,
        format!("max deviation {worst:.3e} < {PMI_TOL:e}, spot values exact: {spots}"),
    )
}

fn criterion_3() -> Verdict {
    let mut worst_opt = 0.0f64;
    let mut worst_below = f64::INFINITY;
    let mut joints: Vec<DiscreteJoint> = (2..=8).map(|n| TwoMixtureModel::new(n).unwrap().joint()).collect();
    let mut rng = rng::stream(3, "acceptance-joints", 0);
    joints.extend((0..50).map(|_| random_joint(&mut rng)));
    for (j, joint) in joints.iter().enumerate() {
        let target = exp_pmi_table(joint).unwrap();
        let mi = mi_oracle(joint);
        let at_pmi = population_loss(joint, &SimilarityMatrix::exp(target.clone()).unwrap()).unwrap();
        worst_opt = worst_opt.max((at_pmi + mi).abs());
        let mut prng = rng::stream(3, "acceptance-perturb", j as u64);
        for _ in 0..20 {
            let scale = prng.random_range(0.01..1.0);
            let h = target.map(|t| (t + 1e-3) * (scale * prng.random_range(-1.0..1.0f64)).exp());
            let loss = population_loss(joint, &SimilarityMatrix::exp(h).unwrap()).unwrap();
            worst_below = worst_below.min(loss + mi);
        }
    }
    let golden = (mutual_information(&TwoMixtureModel::new(4).unwrap().joint()) - 0.6376954061151495).abs();
    verdict(
        worst_opt < OPTIMUM_TOL && worst_below >= -OPTIMUM_TOL && golden < 1e-14,
        format!(
            "|L(PMI) - (-I)| max {worst_opt:.3e}; min over perturbations of L + I = {worst_below:.3e} >= -{OPTIMUM_TOL:e}; I(two_mixture(4)) golden dev {golden:.1e}"
        ),
    )
}

fn criterion_4() -> Verdict {
    let mut lemma_ok = 0;
    let mut thm_ok = 0;
    let mut total = 0;
    let mut rng = rng::stream(4, "acceptance-joints", 0);
    let mut joints = vec![TwoMixtureModel::new(4).unwrap().joint()];
    joints.extend((0..4).map(|_| random_joint(&mut rng)));
    for (i, &eps) in [1e-4, 1e-3, 1e-2].iter().enumerate() {
        let delta = eps / 10.0;
        for trial in 0..100 {
            let joint = &joints[trial % joints.len()];
            let target = exp_pmi_table(joint).unwrap();
            let mut prng = rng::stream(4, "acceptance-thm3", (i * 1000 + trial) as u64);
            let h = perturbed_positive_table(&target, eps, delta, &mut prng);
            let measure: Vec<f64> = (0..joint.n_x())
                .flat_map(|x| (0..joint.n_y()).map(move |y| (x, y)))
                .map(|(x, y)| joint.marginal_x()[x] * joint.marginal_y()[y])
                .collect();
            let lemma = lemma8_check(&measure, target.as_slice(), h.as_slice(), eps, delta).unwrap();
            let thm = thm3_check(joint, &h, eps, delta).unwrap();
            lemma_ok += usize::from(lemma.holds);
            thm_ok += usize::from(thm.holds);
            total += 1;
        }
    }
    verdict(
        lemma_ok == total && thm_ok == total,
        format!("lemma8 holds {lemma_ok}/{total}, thm3 holds {thm_ok}/{total}"),
    )
}

fn criterion_5() -> Verdict {
    let mut fixed_ok = true;
    let mut chosen_worst = 0.0f64;
    for n in 2..=6 {
        let model = TwoMixtureModel::new(n).unwrap().to_latent_model();
        let c = thm4_construct(&model, 0.01, 2).unwrap();
        fixed_ok &= c.max_error <= c.bound + 1e-10;
        let sigma = thm4_sigma_for(&model, THM4_TARGET).unwrap();
        chosen_worst = chosen_worst.max(thm4_construct(&model, sigma, 2).unwrap().max_error);
    }
    verdict(
        fixed_ok && chosen_worst < THM4_TARGET,
        format!("sigma=0.01 within bound: {fixed_ok}; chosen-sigma max error {chosen_worst:.3e} < {THM4_TARGET:e}"),
    )
}

/// `E ||f - f_m||^2` by enumerating every ordered m-tuple and summing
/// kernel values directly.
fn enumerated_sq_error(atoms: &[Vec<f64>], probs: &[f64], g: &[f64], kernel: &KernelSpec, m: usize) -> f64 {
    let n = atoms.len();
    let k: Vec<Vec<f64>> = atoms.iter().map(|a| atoms.iter().map(|b| kernel.eval(a, b).unwrap()).collect()).collect();
    let mut tuple = vec![0usize; m];
    let mut total = 0.0;
    loop {
        let prob: f64 = tuple.iter().map(|&a| probs[a]).product();
        let mut coef: Vec<f64> = (0..n).map(|z| probs[z] * g[z]).collect();
        for &a in &tuple {
            coef[a] -= g[a] / m as f64;
        }
        let sq: f64 = (0..n).map(|a| (0..n).map(|b| coef[a] * coef[b] * k[a][b]).sum::<f64>()).sum();
        total += prob * sq;
        let mut pos = 0;
        loop {
            if pos == m {
                return total;
            }
            tuple[pos] += 1;
            if tuple[pos] < n {
                break;
            }
            tuple[pos] = 0;
            pos += 1;
        }
    }
}

fn criterion_6() -> Verdict {
    let mut worst_identity = 0.0f64;
    let mut within_bound = true;
    for i in 0..10u64 {
        let mut rng = rng::stream(6, "acceptance-measure", i);
        let n = rng.random_range(2..=4);
        let d = rng.random_range(2..=3);
        let atoms: Vec<Vec<f64>> = (0..n).map(|_| rng::unit_vector(&mut rng, d)).collect();
        let raw: Vec<f64> = (0..n).map(|_| rng.random_range(0.1..1.0)).collect();
        let total: f64 = raw.iter().sum();
        let probs: Vec<f64> = raw.iter().map(|r| r / total).collect();
        let g: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
        let kernel = KernelSpec::gaussian(rng.random_range(0.2..2.0)).unwrap();
        let measure = DiscreteMeasure::new(atoms.clone(), probs.clone()).unwrap();
        let norm_sq: f64 = probs.iter().zip(&g).map(|(p, v)| p * v * v).sum();
        for m in 1..=4 {
            let exact = enumerated_sq_error(&atoms, &probs, &g, &kernel, m);
            let closed = measure.expected_sq_error(&g, &kernel, m).unwrap();
            worst_identity = worst_identity.max((exact - closed).abs());
            within_bound &= closed <= norm_sq / m as f64 + EXPECTATION_TOL;
        }
    }

    let measure = DiscreteMeasure::random_sphere(16, 2, 7).unwrap();
    let mut rng = rng::stream(7, "thm5-g", 0);
    let g: Vec<f64> = (0..16).map(|_| rng.random_range(-2.0..2.0)).collect();
    let kernel = KernelSpec::gaussian(0.5).unwrap();
    let sweep = thm5_sweep(&measure, &g, &kernel, &[4, 16, 64, 256, 1024], 200, 7).unwrap();
    let mean_ok = sweep.points.iter().all(|q| q.mean_error <= q.bound + 3.0 * q.se_error);
    let sq_ok = sweep.points.iter().all(|q| q.mean_sq_error <= q.sq_bound + 3.0 * q.se_sq_error);
    let slope_ok = sweep.slope >= SLOPE_RANGE.0 && sweep.slope <= SLOPE_RANGE.1;
    verdict(
        worst_identity < EXPECTATION_TOL && within_bound && mean_ok && sq_ok && slope_ok,
        format!(
            "expectation identity max dev {worst_identity:.3e} < {EXPECTATION_TOL:e}; E err^2 <= K|g|^2/m: {within_bound}; mean err <= bound + 3se: {mean_ok}; mean sq err <= K|g|^2/m + 3se: {sq_ok}; slope {:.4} in [{}, {}]",
            sweep.slope, SLOPE_RANGE.0, SLOPE_RANGE.1
        ),
    )
}

fn criterion_7() -> Verdict {
    let mut ok = true;
    let mut parts = Vec::new();
    for &(n, d, eps) in &[(2, 2, 0.5), (8, 2, 0.1), (12, 3, 0.05)] {
        let c = thm7_construct(n, d, eps).unwrap();
        let kernel = KernelSpec::gaussian(c.sigma).unwrap();
        let mut worst = 0.0f64;
        for (a, &x) in c.states.iter().enumerate() {
            for (b, &y) in c.states.iter().enumerate() {
                let (ex, ey) = (&c.embeddings[a], &c.embeddings[b]);
                let mut inner = 0.0;
                for (u, wu) in ex.points().iter().zip(ex.weights()) {
                    for (v, wv) in ey.points().iter().zip(ey.weights()) {
                        inner += wu * wv * kernel.eval(u, v).unwrap();
                    }
                }
                worst = worst.max((inner - exp_pmi_two_mixture(n, x, y).unwrap()).abs());
            }
        }
        let diagonal = (0..n).all(|i| {
            let ii = UnorderedPair::new(i, i);
            c.inner(ii, ii) == n as f64
        });
        ok &= worst < eps && diagonal;
        parts.push(format!("(N={n}, d={d}, eps={eps}): max error {worst:.3e}, diagonal exact {diagonal}"));
    }
    verdict(ok, parts.join("; "))
}

fn criterion_8() -> Verdict {
    let config = ClipLimitConfig::new(82, 2);
    let report = thm6_adversarial_check(&config).unwrap();
    verdict(
        report.guarantee_applies && report.best_max_error >= report.threshold,
        format!(
            "best max error over {} restarts x {} steps = {:.4} >= N/4 = {}",
            config.restarts, config.steps, report.best_max_error, report.threshold
        ),
    )
}

fn criterion_9() -> Verdict {
    let mut worst_rel = 0.0f64;
    let mut worst_abs = 0.0f64;
    let modes = [Mode::Clip, Mode::Kme, Mode::Wpse];
    for i in 0..20u64 {
        let mut rng = rng::stream(9, "acceptance-grad", i);
        let mode = modes[i as usize % 3];
        let dim = rng.random_range(2..=5);
        let m = if mode == Mode::Clip { 1 } else { rng.random_range(1..=4) };
        let batch_size = rng.random_range(2..=6);
        let log_tau = rng.random_range(-0.5..1.0);
        let mut table = EmbeddingTable::random(mode, 6, 6, dim, m, log_tau, &mut rng).unwrap();
        for p in table.pre_activations_mut() {
            *p = rng.random_range(-0.5..0.5);
        }
        let batch: Vec<(usize, usize)> = (0..batch_size).map(|_| (rng.random_range(0..6), rng.random_range(0..6))).collect();
        let check = gradient_check(&table, |t| loss_and_grad(t, &batch), 1e-5).unwrap();
        worst_rel = worst_rel.max(check.max_relative_error);
        worst_abs = worst_abs.max(check.max_absolute_error_small);
    }
    verdict(
        worst_rel < GRAD_REL_TOL && worst_abs < GRAD_ABS_TOL,
        format!("max relative error {worst_rel:.3e} < {GRAD_REL_TOL:e}; small-coordinate abs error {worst_abs:.3e} < {GRAD_ABS_TOL:e}"),
    )
}

fn criterion_10() -> Verdict {
    let joint = TwoMixtureModel::new(4).unwrap().joint();
    let config = TrainConfig {
        m: 2,
        dim: 3,
        full_batch: true,
        steps: 5000,
        learning_rate: 0.03,
        log_every: 500,
        seed: 10,
        ..TrainConfig::new(Mode::Kme)
    };
    let run = train(&joint, &config).unwrap();
    let optimum = -mi_oracle(&joint);
    let gap = run.final_population_loss - optimum;
    let floor_ok = run.curve.iter().all(|r| r.population_loss >= optimum - 1e-8);

    let joint6 = TwoMixtureModel::new(6).unwrap().joint();
    let base = TrainConfig {
        dim: 2,
        full_batch: true,
        steps: 3000,
        learning_rate: 0.03,
        log_every: 500,
        seed: 10,
        ..TrainConfig::new(Mode::Kme)
    };
    let sweep = point_set_sweep(&joint6, &base, &[1, 2, 4, 8]).unwrap();
    let losses: Vec<f64> = sweep.iter().map(|(_, o)| o.final_population_loss).collect();
    let monotone = losses.windows(2).all(|w| w[1] <= w[0] + ABLATION_TOL);
    verdict(
        gap <= TRAIN_GAP && floor_ok && monotone,
        format!(
            "two_mixture(4) gap to optimum {gap:.3e} <= {TRAIN_GAP}; never below optimum: {floor_ok}; m sweep losses {:?} non-increasing within {ABLATION_TOL}",
            losses.iter().map(|l| format!("{l:.5}")).collect::<Vec<_>>()
        ),
    )
}

fn csv_of(rows: &[Vec<f64>]) -> String {
    rows.iter()
        .map(|r| r.iter().map(|v| format!("{v}")).collect::<Vec<_>>().join(","))
        .collect::<Vec<_>>()
        .join("\n")
}

fn criterion_11() -> Verdict {
    let sweep_csv = || {
        let measure = DiscreteMeasure::random_sphere(16, 2, 11).unwrap();
        let g = vec![1.0; 16];
        let kernel = KernelSpec::gaussian(0.5).unwrap();
        let sweep = thm5_sweep(&measure, &g, &kernel, &[4, 64], 50, 11).unwrap();
        csv_of(&sweep.points.iter().map(|q| vec![q.m as f64, q.mean_error, q.se_error, q.median_error]).collect::<Vec<_>>())
    };
    let train_csv = || {
        let joint = TwoMixtureModel::new(3).unwrap().joint();
        let config = TrainConfig {
            mode: Mode::Wpse,
            m: 2,
            steps: 100,
            log_every: 10,
            seed: 11,
            ..TrainConfig::new(Mode::Wpse)
        };
        let run = train(&joint, &config).unwrap();
        csv_of(&run.curve.iter().map(|r| vec![r.step as f64, r.minibatch_loss, r.population_loss, r.pmi_fit, r.tau]).collect::<Vec<_>>())
    };
    let clip_csv = || {
        let config = ClipLimitConfig {
            restarts: 3,
            steps: 100,
            eval_every: 50,
            seed: 11,
            ..ClipLimitConfig::new(6, 2)
        };
        let report = thm6_adversarial_check(&config).unwrap();
        csv_of(&report.restarts.iter().map(|r| vec![r.max_error, r.alpha, r.tau]).collect::<Vec<_>>())
    };
    let same = [sweep_csv() == sweep_csv(), train_csv() == train_csv(), clip_csv() == clip_csv()];
    verdict(
        same.iter().all(|&s| s),
        format!("identical CSV on rerun: sweep {}, training {}, clip search {}", same[0], same[1], same[2]),
    )
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Verdict, Duration); 11] = [
        ("kme/clip similarity identity", criterion_1, Duration::from_secs(1)),
        ("two-mixture exp-PMI closed form", criterion_2, Duration::from_secs(5)),
        ("population loss optimum at PMI", criterion_3, Duration::from_secs(10)),
        ("log-ratio and loss-gap bounds", criterion_4, Duration::from_secs(30)),
        ("finite-latent KME construction", criterion_5, Duration::from_secs(30)),
        ("discretization rate", criterion_6, Duration::from_secs(120)),
        ("two-mixture KME construction", criterion_7, Duration::from_secs(30)),
        ("CLIP lower bound consistency", criterion_8, Duration::from_secs(600)),
        ("gradient correctness", criterion_9, Duration::from_secs(30)),
        ("desk-scale training and point-set sweep", criterion_10, Duration::from_secs(300)),
        ("seed determinism", criterion_11, Duration::from_secs(600)),
    ];
    let mut failures = 0;
    for (i, (name, run, budget)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let v = run();
        let elapsed = start.elapsed();
        let in_time = elapsed <= *budget;
        let pass = v.pass && in_time;
        failures += usize::from(!pass);
        println!(
            "{} criterion {:>2} {name}: {} [{:.2}s, budget {}s{}]",
            if pass { "PASS" } else { "FAIL" },
            i + 1,
            v.detail,
            elapsed.as_secs_f64(),
            budget.as_secs(),
            if in_time { "" } else { ", over budget" }
        );
    }
    println!("acceptance: {} of {} criteria passed", criteria.len() - failures, criteria.len());
    if failures == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
