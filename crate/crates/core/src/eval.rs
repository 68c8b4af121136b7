//! Top-k retrieval on synthetic joints.
//!
//! A query `x` ranks every `y` by `S(x, .)`, breaking ties by index. It hits
//! at `k` when some maximizer of `p(y|x)` is among the first `k`. Accuracy
//! is weighted by `p(x)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::loss::SimilarityMatrix;
use crate::par;
use crate::synthetic::DiscreteJoint;

/// Relative slack when collecting the maximizers of `p(y|x)`.
const MODE_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Direction {
    XtoY,
    YtoX,
}

impl Direction {
    pub fn label(self) -> &'static str {
        match self {
            Direction::XtoY => "x_to_y",
            Direction::YtoX => "y_to_x",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RetrievalReport {
    pub direction: Direction,
    pub ks: Vec<usize>,
    pub top_k_accuracy: Vec<f64>,
    /// Queries whose `k`-th and `(k+1)`-th scores are equal, per `k`.
    pub n_ties: Vec<usize>,
    pub n_queries: usize,
}

struct QueryOutcome {
    weight: f64,
    hits: Vec<bool>,
    ties: Vec<bool>,
}

pub fn topk_retrieval(
    joint: &DiscreteJoint,
    s: &SimilarityMatrix,
    ks: &[usize],
    direction: Direction,
) -> Result<RetrievalReport> {
    if s.rows() != joint.n_x() || s.cols() != joint.n_y() {
        return Err(Error::invalid(format!(
            "similarity is {}x{}, joint is {}x{}",
            s.rows(),
            s.cols(),
            joint.n_x(),
            joint.n_y()
        )));
    }
    let (n_queries_total, n_candidates) = match direction {
        Direction::XtoY => (joint.n_x(), joint.n_y()),
        Direction::YtoX => (joint.n_y(), joint.n_x()),
    };
    if ks.is_empty() || ks.iter().any(|&k| k == 0 || k > n_candidates) {
        return Err(Error::invalid(format!("every k must lie in 1..={n_candidates}")));
    }
    let cell = |q: usize, c: usize| match direction {
        Direction::XtoY => (q, c),
        Direction::YtoX => (c, q),
    };
    let marginal = match direction {
        Direction::XtoY => joint.marginal_x(),
        Direction::YtoX => joint.marginal_y(),
    };

    let outcomes: Vec<Option<QueryOutcome>> = par::map_range(n_queries_total, |q| {
        if marginal[q] <= 0.0 {
            return None;
        }
        let mass: Vec<f64> = (0..n_candidates).map(|c| {
            let (x, y) = cell(q, c);
            joint.p(x, y)
        }).collect();
        let best = mass.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let is_mode = |c: usize| mass[c] >= best * (1.0 - MODE_TOLERANCE);

        let scores: Vec<f64> = (0..n_candidates).map(|c| {
            let (x, y) = cell(q, c);
            s.log_value(x, y)
        }).collect();
        let mut order: Vec<usize> = (0..n_candidates).collect();
        order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
        let first_hit = order.iter().position(|&c| is_mode(c)).expect("some candidate has maximal mass");
        Some(QueryOutcome {
            weight: marginal[q],
            hits: ks.iter().map(|&k| first_hit < k).collect(),
            ties: ks
                .iter()
                .map(|&k| k < n_candidates && scores[order[k - 1]] == scores[order[k]])
                .collect(),
        })
    });

    let answered: Vec<QueryOutcome> = outcomes.into_iter().flatten().collect();
    if answered.is_empty() {
        return Err(Error::invalid("joint has empty support"));
    }
    let total_weight: f64 = answered.iter().map(|o| o.weight).sum();
    let top_k_accuracy = (0..ks.len())
        .map(|i| answered.iter().filter(|o| o.hits[i]).map(|o| o.weight).sum::<f64>() / total_weight)
        .collect();
    let n_ties = (0..ks.len()).map(|i| answered.iter().filter(|o| o.ties[i]).count()).collect();
    Ok(RetrievalReport {
        direction,
        ks: ks.to_vec(),
        top_k_accuracy,
        n_ties,
        n_queries: answered.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix::Matrix;
    use crate::synthetic::{exp_pmi_table, TwoMixtureModel};

    #[test]
    fn constant_scores_under_identity_coupling() {
        let n = 8;
        let joint = DiscreteJoint::identity_coupling(n).unwrap();
        let s = SimilarityMatrix::log(Matrix::filled(n, n, 0.5)).unwrap();
        let ks = [1, 2, 5, 8];
        for dir in [Direction::XtoY, Direction::YtoX] {
            let report = topk_retrieval(&joint, &s, &ks, dir).unwrap();
            for (i, &k) in ks.iter().enumerate() {
                assert!((report.top_k_accuracy[i] - k as f64 / n as f64).abs() < 1e-15);
            }
            assert_eq!(report.n_ties, vec![n, n, n, 0]);
        }
    }

    #[test]
    fn exact_pmi_retrieves_pure_state_partner() {
        let model = TwoMixtureModel::new(4).unwrap();
        let joint = model.joint();
        let s = SimilarityMatrix::exp(exp_pmi_table(&joint).unwrap()).unwrap();
        let report = topk_retrieval(&joint, &s, &[1], Direction::XtoY).unwrap();
        assert!((report.top_k_accuracy[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn bad_k_is_error() {
        let joint = DiscreteJoint::identity_coupling(3).unwrap();
        let s = SimilarityMatrix::log(Matrix::zeros(3, 3)).unwrap();
        assert!(topk_retrieval(&joint, &s, &[0], Direction::XtoY).is_err());
        assert!(topk_retrieval(&joint, &s, &[4], Direction::XtoY).is_err());
    }
}
