//! Fixed feature expansions for the linear-in-parameters backends.

use serde::{Deserialize, Serialize};

use crate::data::Matrix;

/// How to expand covariates before the linear model is fitted.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum BasisSpec {
    /// Raw covariates.
    #[default]
    Linear,
    /// Raw covariates plus Gaussian bumps at `centers` training rows chosen by
    /// farthest-point sampling; bandwidth is `bandwidth_scale` times the median
    /// nearest-center distance.
    Rbf { centers: usize, bandwidth_scale: f64 },
}

/// A fitted expansion. `expand` prepends the intercept column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum FeatureMap {
    Linear {
        dim: usize,
    },
    Rbf {
        dim: usize,
        centers: Vec<f64>,
        bandwidth: f64,
    },
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

impl FeatureMap {
    pub fn fit(spec: BasisSpec, features: &Matrix) -> FeatureMap {
        let dim = features.n_cols();
        match spec {
            BasisSpec::Linear => FeatureMap::Linear { dim },
            BasisSpec::Rbf {
                centers,
                bandwidth_scale,
            } => {
                let chosen = farthest_point_sample(features, centers.min(features.n_rows()));
                let mut flat = Vec::with_capacity(chosen.len() * dim);
                for &i in &chosen {
                    flat.extend_from_slice(features.row(i));
                }
                let mut nearest: Vec<f64> = (0..chosen.len())
                    .filter_map(|a| {
                        (0..chosen.len())
                            .filter(|&b| b != a)
                            .map(|b| sq_dist(features.row(chosen[a]), features.row(chosen[b])))
                            .filter(|d| *d > 0.0)
                            .min_by(f64::total_cmp)
                    })
                    .map(f64::sqrt)
                    .collect();
                nearest.sort_by(f64::total_cmp);
                let spacing = crate::stats::quantile_sorted(&nearest, 0.5);
                let spacing = if spacing.is_finite() && spacing > 0.0 {
                    spacing
                } else {
                    1.0
                };
                FeatureMap::Rbf {
                    dim,
                    centers: flat,
                    bandwidth: bandwidth_scale * spacing,
                }
            }
        }
    }

    pub fn input_dim(&self) -> usize {
        match self {
            FeatureMap::Linear { dim } | FeatureMap::Rbf { dim, .. } => *dim,
        }
    }

    /// Number of expanded columns including the intercept.
    pub fn output_dim(&self) -> usize {
        match self {
            FeatureMap::Linear { dim } => dim + 1,
            FeatureMap::Rbf { dim, centers, .. } => dim + 1 + centers.len() / dim,
        }
    }

    /// Number of expanded columns excluding the intercept.
    pub fn n_covariates(&self) -> usize {
        self.output_dim() - 1
    }

    pub fn expand(&self, x: &[f64]) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.output_dim());
        out.push(1.0);
        out.extend_from_slice(x);
        if let FeatureMap::Rbf {
            dim,
            centers,
            bandwidth,
        } = self
        {
            let denom = 2.0 * bandwidth * bandwidth;
            out.extend(
                centers
                    .chunks_exact(*dim)
                    .map(|c| (-sq_dist(x, c) / denom).exp()),
            );
        }
        out
    }
}

/// Deterministic farthest-point sampling starting from the row closest to the
/// column means. Ties resolve to the lowest row index.
fn farthest_point_sample(features: &Matrix, count: usize) -> Vec<usize> {
    let n = features.n_rows();
    if count == 0 || n == 0 {
        return Vec::new();
    }
    let d = features.n_cols();
    let centroid: Vec<f64> = (0..d)
        .map(|j| features.column(j).sum::<f64>() / n as f64)
        .collect();
    let first = (0..n)
        .min_by(|&a, &b| {
            sq_dist(features.row(a), &centroid).total_cmp(&sq_dist(features.row(b), &centroid))
        })
        .unwrap();
    let mut chosen = vec![first];
    let mut nearest: Vec<f64> = (0..n)
        .map(|i| sq_dist(features.row(i), features.row(first)))
        .collect();
    while chosen.len() < count {
        let (next, dist) = nearest
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |best, (i, &d)| if d > best.1 { (i, d) } else { best });
        if dist <= 0.0 {
            break;
        }
        chosen.push(next);
        for (i, slot) in nearest.iter_mut().enumerate() {
            let d = sq_dist(features.row(i), features.row(next));
            if d < *slot {
                *slot = d;
            }
        }
    }
    chosen
}
