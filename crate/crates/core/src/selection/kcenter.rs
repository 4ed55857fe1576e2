use ndarray::Array2;

use crate::error::{Error, Result};
use crate::features::FeatureSet;
use crate::kernels::pcc_kernel;

/// Pairwise distances between the columns of a descriptor set: Euclidean
/// distance of the stacked standardized vectors scaled by `1/sqrt(J)`, so
/// `d^2 = 2 (1 - s/J)` for non-degenerate columns with multi-scale
/// similarity `s`.
pub fn descriptor_distances(set: &FeatureSet) -> Result<(Array2<f64>, Array2<f64>)> {
    let sim = pcc_kernel(set, set)?.values;
    let j = set.num_scales() as f64;
    let n = set.len();
    let dist = Array2::from_shape_fn((n, n), |(a, b)| {
        if a == b {
            0.0
        } else {
            ((sim[[a, a]] + sim[[b, b]] - 2.0 * sim[[a, b]]) / j).max(0.0).sqrt()
        }
    });
    Ok((sim, dist))
}

/// Largest distance from any point to its nearest center.
pub fn covering_radius(dist: &Array2<f64>, centers: &[usize]) -> f64 {
    (0..dist.nrows())
        .map(|p| centers.iter().map(|&c| dist[[p, c]]).fold(f64::INFINITY, f64::min))
        .fold(0.0, f64::max)
}

/// Greedy farthest-point k-center over the columns of `set`. The first
/// center is the column with the largest summed similarity to all others;
/// each further center maximizes the distance to its nearest chosen center.
/// Ties go to the lowest position. Returns column positions.
pub fn k_center_greedy(set: &FeatureSet, k: usize) -> Result<Vec<usize>> {
    let n = set.len();
    if n == 0 {
        return Err(Error::Empty("k-center input"));
    }
    if k == 0 || k > n {
        return Err(Error::invalid(format!("k = {k} for {n} points")));
    }
    let (sim, dist) = descriptor_distances(set)?;
    Ok(k_center_from(&sim, &dist, k))
}

pub(crate) fn k_center_from(sim: &Array2<f64>, dist: &Array2<f64>, k: usize) -> Vec<usize> {
    let n = dist.nrows();
    let mut first = 0;
    let mut best = f64::NEG_INFINITY;
    for a in 0..n {
        let total: f64 = (0..n).filter(|&b| b != a).map(|b| sim[[a, b]]).sum();
        if total > best {
            best = total;
            first = a;
        }
    }
    let mut centers = vec![first];
    let mut nearest: Vec<f64> = (0..n).map(|p| dist[[p, first]]).collect();
    while centers.len() < k {
        let mut next = None;
        let mut far = f64::NEG_INFINITY;
        for (p, &d) in nearest.iter().enumerate() {
            if !centers.contains(&p) && d > far {
                far = d;
                next = Some(p);
            }
        }
        let c = next.expect("k <= n");
        centers.push(c);
        for (p, d) in nearest.iter_mut().enumerate() {
            *d = d.min(dist[[p, c]]);
        }
    }
    centers
}
