//! Separated anchor points on the unit sphere.

use crate::error::{Error, Result};
use crate::kernel;
use crate::rng;

/// Smallest pairwise Euclidean distance, `inf` for fewer than two points.
pub fn min_separation(points: &[Vec<f64>]) -> f64 {
    let mut best = f64::INFINITY;
    for i in 0..points.len() {
        for j in i + 1..points.len() {
            best = best.min(kernel::squared_distance(&points[i], &points[j]).sqrt());
        }
    }
    best
}

/// Places `count` unit vectors in `R^d` with pairwise distance at least
/// `min_sep`.
///
/// For `d = 2` the points are equispaced on the circle. For `d >= 3` they
/// are chosen greedily by farthest-point selection from a seeded candidate
/// pool. The separation is checked afterwards in both cases.
pub fn place_anchors(count: usize, d: usize, min_sep: f64) -> Result<Vec<Vec<f64>>> {
    if d < 2 {
        return Err(Error::precondition(format!("anchor placement needs d >= 2, got {d}")));
    }
    if count == 0 {
        return Ok(Vec::new());
    }
    let points = if d == 2 {
        (0..count)
            .map(|i| {
                let angle = 2.0 * std::f64::consts::PI * i as f64 / count as f64;
                vec![angle.cos(), angle.sin()]
            })
            .collect()
    } else {
        farthest_points(count, d)
    };
    let sep = min_separation(&points);
    if sep < min_sep {
        return Err(Error::NumericalFailure(format!(
            "could not place {count} points in d={d} with separation {min_sep} (got {sep})"
        )));
    }
    Ok(points)
}

fn farthest_points(count: usize, d: usize) -> Vec<Vec<f64>> {
    let mut rng = rng::stream(0, "anchors", (count as u64) << 16 | d as u64);
    let pool_size = 64 * count + 256;
    let pool: Vec<Vec<f64>> = (0..pool_size).map(|_| rng::unit_vector(&mut rng, d)).collect();

    let mut first = vec![0.0; d];
    first[0] = 1.0;
    let mut chosen = vec![first];
    let mut nearest: Vec<f64> = pool
        .iter()
        .map(|p| kernel::squared_distance(p, &chosen[0]))
        .collect();
    while chosen.len() < count {
        let (best, _) = nearest
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |acc, (i, &v)| if v > acc.1 { (i, v) } else { acc });
        let next = pool[best].clone();
        for (slot, p) in nearest.iter_mut().zip(&pool) {
            *slot = slot.min(kernel::squared_distance(p, &next));
        }
        chosen.push(next);
    }
    chosen
}
