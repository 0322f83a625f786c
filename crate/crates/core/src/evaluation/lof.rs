//! Local Outlier Factor on a brute-force distance matrix.

use serde::{Deserialize, Serialize};

use super::EvaluationError;
use crate::data::Matrix;
use crate::stats;

pub const DEFAULT_LOF_K: usize = 15;
pub const DEFAULT_CONTAMINATION: f64 = 0.05;

/// Outliers are the highest-LOF points; central inliers the lowest-LOF points
/// among the rest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutlierPartition {
    pub outlier_indices: Vec<usize>,
    pub central_inlier_indices: Vec<usize>,
    pub lof_scores: Vec<f64>,
    pub contamination: f64,
    pub inlier_fraction: f64,
}

impl OutlierPartition {
    pub fn is_outlier(&self, i: usize) -> bool {
        self.outlier_indices.contains(&i)
    }
}

fn distance_matrix(features: &Matrix) -> Vec<Vec<f64>> {
    let n = features.n_rows();
    let mut d = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in (i + 1)..n {
            let v = features
                .row(i)
                .iter()
                .zip(features.row(j))
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            d[i][j] = v;
            d[j][i] = v;
        }
    }
    d
}

/// Classic LOF with all points tied at the `k`-distance kept as neighbours.
///
/// A point with zero mean reachability (infinite density) scores 1; a finite
/// density point next to such a cluster scores `+inf`.
pub fn lof_scores(features: &Matrix, k: usize) -> Result<Vec<f64>, EvaluationError> {
    let n = features.n_rows();
    if k == 0 || n <= k {
        return Err(EvaluationError::TooFewPoints { n, k });
    }
    let dist = distance_matrix(features);
    let mut k_distance = vec![0.0; n];
    let mut neighbours: Vec<Vec<usize>> = Vec::with_capacity(n);
    for i in 0..n {
        let mut others: Vec<f64> = (0..n).filter(|&j| j != i).map(|j| dist[i][j]).collect();
        let (_, kth, _) = others.select_nth_unstable_by(k - 1, f64::total_cmp);
        let kd = *kth;
        k_distance[i] = kd;
        neighbours.push((0..n).filter(|&j| j != i && dist[i][j] <= kd).collect());
    }
    let lrd: Vec<f64> = (0..n)
        .map(|i| {
            let reach: f64 = neighbours[i]
                .iter()
                .map(|&o| k_distance[o].max(dist[i][o]))
                .sum();
            neighbours[i].len() as f64 / reach
        })
        .collect();
    Ok((0..n)
        .map(|i| {
            if lrd[i].is_infinite() {
                return 1.0;
            }
            let ratios: Vec<f64> = neighbours[i].iter().map(|&o| lrd[o] / lrd[i]).collect();
            stats::mean(&ratios)
        })
        .collect())
}

/// Rank-based split: `ceil(contamination * n)` outliers, then
/// `floor(inlier_fraction * (n - outliers))` central inliers. Ties in LOF
/// resolve by index.
pub fn partition_outliers(
    lof_scores: &[f64],
    contamination: f64,
    inlier_fraction: f64,
) -> Result<OutlierPartition, EvaluationError> {
    let n = lof_scores.len();
    for f in [contamination, inlier_fraction] {
        if !(f > 0.0 && f < 1.0) {
            return Err(EvaluationError::InvalidFraction(f));
        }
    }
    let n_out = stats::robust_ceil(contamination * n as f64) as usize;
    let n_in = stats::robust_floor(inlier_fraction * n.saturating_sub(n_out) as f64) as usize;
    if n_out == 0 || n_in == 0 || n_out >= n {
        return Err(EvaluationError::EmptyPartition { n });
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| lof_scores[a].total_cmp(&lof_scores[b]).then(a.cmp(&b)));
    let mut outlier_indices: Vec<usize> = order[n - n_out..].to_vec();
    let mut central_inlier_indices: Vec<usize> = order[..n_in].to_vec();
    outlier_indices.sort_unstable();
    central_inlier_indices.sort_unstable();
    Ok(OutlierPartition {
        outlier_indices,
        central_inlier_indices,
        lof_scores: lof_scores.to_vec(),
        contamination,
        inlier_fraction,
    })
}
