//! Symmetric contrastive loss, minibatch and population forms.
//!
//! Both halves of the loss are softmax cross-entropies at the matched pair:
//! one normalizes over candidates `x'` for a fixed `y`, the other over `y'`
//! for a fixed `x`. Every softmax is max-shifted.

use crate::embedding::{self, ClipEmbedding, PointSetEmbedding};
use crate::error::{Error, Result};
use crate::kernel::KernelSpec;
use crate::matrix::Matrix;
use crate::synthetic::{mutual_information, DiscreteJoint};

/// Whether a similarity table holds `S` or `exp(S)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Domain {
    Log,
    /// `exp(S)`; zero entries encode `S = -inf`.
    Exp,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix {
    values: Matrix,
    domain: Domain,
}

impl SimilarityMatrix {
    /// Finite log-domain similarities.
    pub fn log(values: Matrix) -> Result<Self> {
        if let Some(v) = values.as_slice().iter().find(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("similarity entry {v} is not finite")));
        }
        Ok(Self { values, domain: Domain::Log })
    }

    /// Nonnegative finite exp-domain similarities.
    pub fn exp(values: Matrix) -> Result<Self> {
        if let Some(v) = values.as_slice().iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(Error::invalid(format!("exp-similarity entry {v} must be finite and >= 0")));
        }
        Ok(Self { values, domain: Domain::Exp })
    }

    pub fn values(&self) -> &Matrix {
        &self.values
    }

    pub fn domain(&self) -> Domain {
        self.domain
    }

    pub fn rows(&self) -> usize {
        self.values.rows()
    }

    pub fn cols(&self) -> usize {
        self.values.cols()
    }

    /// Log-domain value, `-inf` for exp-domain zeros.
    pub fn log_value(&self, r: usize, c: usize) -> f64 {
        match self.domain {
            Domain::Log => self.values[(r, c)],
            Domain::Exp => self.values[(r, c)].ln(),
        }
    }
}

fn softmax_in_place(v: &mut [f64]) {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for x in v.iter_mut() {
        *x = (*x - max).exp();
        total += *x;
    }
    for x in v.iter_mut() {
        *x /= total;
    }
}

fn log_sum_exp(v: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = v.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + v.map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// Minibatch loss of an `n x n` similarity matrix whose diagonal holds the
/// matched pairs; `s[(a, b)] = S(x_a, y_b)`.
pub fn minibatch_loss(s: &Matrix) -> Result<f64> {
    Ok(minibatch_loss_and_grad(s)?.0)
}

/// Loss and `dL/dS`.
pub fn minibatch_loss_and_grad(s: &Matrix) -> Result<(f64, Matrix)> {
    if !s.is_square() {
        return Err(Error::invalid(format!(
            "minibatch similarity must be square, got {}x{}",
            s.rows(),
            s.cols()
        )));
    }
    let n = s.rows();
    if n == 0 {
        return Err(Error::invalid("empty minibatch"));
    }
    let inv_n = 1.0 / n as f64;
    let mut grad = Matrix::zeros(n, n);
    let mut loss = 0.0;

    // x -> y: softmax over the row of x_i
    let mut buf = vec![0.0; n];
    for i in 0..n {
        buf.copy_from_slice(s.row(i));
        let lse = log_sum_exp(buf.iter().copied());
        loss += 0.5 * inv_n * (lse - s[(i, i)]);
        softmax_in_place(&mut buf);
        for j in 0..n {
            grad[(i, j)] += 0.5 * inv_n * buf[j];
        }
        grad[(i, i)] -= 0.5 * inv_n;
    }
    // y -> x: softmax over the column of y_i
    for i in 0..n {
        for (j, b) in buf.iter_mut().enumerate() {
            *b = s[(j, i)];
        }
        let lse = log_sum_exp(buf.iter().copied());
        loss += 0.5 * inv_n * (lse - s[(i, i)]);
        softmax_in_place(&mut buf);
        for j in 0..n {
            grad[(j, i)] += 0.5 * inv_n * buf[j];
        }
        grad[(i, i)] -= 0.5 * inv_n;
    }
    Ok((loss, grad))
}

fn check_shape(joint: &DiscreteJoint, rows: usize, cols: usize) -> Result<()> {
    if rows != joint.n_x() {
        return Err(Error::DimensionMismatch { expected: joint.n_x(), actual: rows });
    }
    if cols != joint.n_y() {
        return Err(Error::DimensionMismatch { expected: joint.n_y(), actual: cols });
    }
    Ok(())
}

/// Exact population loss
/// `1/2 E[-log e^S(x,y) / E_x'[e^S(x',y)]] + 1/2 E[-log e^S(x,y) / E_y'[e^S(x,y')]]`.
///
/// Cells with `p(x, y) = 0` contribute nothing. An exp-domain zero on a
/// cell with positive mass makes the loss `+inf`.
pub fn population_loss(joint: &DiscreteJoint, s: &SimilarityMatrix) -> Result<f64> {
    check_shape(joint, s.rows(), s.cols())?;
    let (nx, ny) = (joint.n_x(), joint.n_y());
    let px = joint.marginal_x();
    let py = joint.marginal_y();

    let log_px: Vec<f64> = px.iter().map(|p| p.ln()).collect();
    let log_py: Vec<f64> = py.iter().map(|p| p.ln()).collect();
    // log E_{p(x')}[e^S(x', y)] per column, log E_{p(y')}[e^S(x, y')] per row
    let col_norm: Vec<f64> = (0..ny)
        .map(|y| {
            log_sum_exp(
                (0..nx)
                    .filter(|&x| px[x] > 0.0)
                    .map(|x| log_px[x] + s.log_value(x, y)),
            )
        })
        .collect();
    let row_norm: Vec<f64> = (0..nx)
        .map(|x| {
            log_sum_exp(
                (0..ny)
                    .filter(|&y| py[y] > 0.0)
                    .map(|y| log_py[y] + s.log_value(x, y)),
            )
        })
        .collect();

    let mut loss = 0.0;
    for x in 0..nx {
        for y in 0..ny {
            let p = joint.p(x, y);
            if p > 0.0 {
                let sxy = s.log_value(x, y);
                loss += 0.5 * p * ((col_norm[y] - sxy) + (row_norm[x] - sxy));
            }
        }
    }
    Ok(loss)
}

/// `inf_S L_S`, attained at `S = PMI + c`. The inner expectations equal one
/// there, leaving `E[-PMI] = -I(X; Y)`.
pub fn optimal_population_loss(joint: &DiscreteJoint) -> f64 {
    -mutual_information(joint)
}

/// Population loss of a finite log-domain table and its gradient `dL/dS`.
pub fn population_loss_and_grad(joint: &DiscreteJoint, s: &Matrix) -> Result<(f64, Matrix)> {
    let sm = SimilarityMatrix::log(s.clone())?;
    let loss = population_loss(joint, &sm)?;
    let (nx, ny) = (joint.n_x(), joint.n_y());
    let px = joint.marginal_x();
    let py = joint.marginal_y();
    let mut grad = Matrix::zeros(nx, ny);
    let mut buf = Vec::new();
    // column softmax weighted by p(x')
    for y in 0..ny {
        buf.clear();
        buf.extend((0..nx).map(|x| if px[x] > 0.0 { px[x].ln() + s[(x, y)] } else { f64::NEG_INFINITY }));
        softmax_in_place(&mut buf);
        for x in 0..nx {
            grad[(x, y)] += 0.5 * (py[y] * buf[x] - joint.p(x, y));
        }
    }
    for x in 0..nx {
        buf.clear();
        buf.extend((0..ny).map(|y| if py[y] > 0.0 { py[y].ln() + s[(x, y)] } else { f64::NEG_INFINITY }));
        softmax_in_place(&mut buf);
        for y in 0..ny {
            grad[(x, y)] += 0.5 * (px[x] * buf[y] - joint.p(x, y));
        }
    }
    Ok((loss, grad))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SimilarityKind {
    Kme,
    Clip,
    Wpse,
}

/// Per-state embeddings for both modalities.
#[derive(Debug, Clone)]
pub enum EmbeddingSet {
    Clip { x: Vec<ClipEmbedding>, y: Vec<ClipEmbedding> },
    PointSet { x: Vec<PointSetEmbedding>, y: Vec<PointSetEmbedding> },
}

impl EmbeddingSet {
    fn sizes(&self) -> (usize, usize) {
        match self {
            EmbeddingSet::Clip { x, y } => (x.len(), y.len()),
            EmbeddingSet::PointSet { x, y } => (x.len(), y.len()),
        }
    }
}

/// Builds the similarity table for every `(x, y)` state pair.
pub fn similarity_table(kind: SimilarityKind, embeddings: &EmbeddingSet, kernel: &KernelSpec) -> Result<SimilarityMatrix> {
    match (kind, embeddings) {
        (SimilarityKind::Clip, EmbeddingSet::Clip { x, y }) => {
            let mut m = Matrix::zeros(x.len(), y.len());
            for (a, ex) in x.iter().enumerate() {
                for (b, ey) in y.iter().enumerate() {
                    m[(a, b)] = embedding::clip_similarity(ex, ey)?;
                }
            }
            SimilarityMatrix::log(m)
        }
        (SimilarityKind::Kme, EmbeddingSet::PointSet { x, y }) => {
            let mut m = Matrix::zeros(x.len(), y.len());
            for (a, ex) in x.iter().enumerate() {
                for (b, ey) in y.iter().enumerate() {
                    m[(a, b)] = embedding::kme_similarity(ex, ey, kernel)?;
                }
            }
            SimilarityMatrix::log(m)
        }
        (SimilarityKind::Wpse, EmbeddingSet::PointSet { x, y }) => {
            let mut m = Matrix::zeros(x.len(), y.len());
            for (a, ex) in x.iter().enumerate() {
                for (b, ey) in y.iter().enumerate() {
                    m[(a, b)] = embedding::wpse_similarity(ex, ey, kernel)?;
                }
            }
            SimilarityMatrix::log(m)
        }
        (kind, _) => Err(Error::invalid(format!(
            "{kind:?} similarity does not accept these embeddings"
        ))),
    }
}

pub fn loss_from_similarity(
    joint: &DiscreteJoint,
    kind: SimilarityKind,
    embeddings: &EmbeddingSet,
    kernel: &KernelSpec,
) -> Result<f64> {
    let (nx, ny) = embeddings.sizes();
    if nx < joint.n_x() || ny < joint.n_y() {
        return Err(Error::invalid(format!(
            "embeddings cover {nx}x{ny} states but the joint has {}x{}",
            joint.n_x(),
            joint.n_y()
        )));
    }
    if nx > joint.n_x() || ny > joint.n_y() {
        return Err(Error::invalid("more embeddings than joint states"));
    }
    let s = similarity_table(kind, embeddings, kernel)?;
    population_loss(joint, &s)
}
