//! Trimmed credal envelopes and the covariate-driven trimming level.
//!
//! Given `B` paired endpoint draws at `x`, the envelope keeps the
//! `gamma/2`-quantile of the lower draws and the `1 - gamma/2`-quantile of the
//! upper draws. The adaptive level `gamma(x)` shrinks where training data are
//! scarce, measured by the distance to the `k`-th nearest training row.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::Matrix;
use crate::posterior::EndpointDraws;
use crate::stats;

const KNN_BASE: f64 = 6.672;

#[derive(Debug, Error, PartialEq)]
pub enum EnvelopeError {
    #[error("need at least 2 endpoint draws, got {0}")]
    TooFewDraws(usize),
    #[error("trimming level {0} must lie in (0, 1)")]
    InvalidGamma(f64),
    #[error("invalid gamma parameters: {0}")]
    InvalidParams(String),
    #[error("neighbour count k = {k} must lie in [1, {}]", .n_train.saturating_sub(1))]
    InvalidK { k: usize, n_train: usize },
    #[error("expected a covariate of dimension {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
}

/// `[lower, upper]` with the trimming level that produced it. `swapped` marks
/// an over-trimmed envelope whose endpoints had to be exchanged.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Envelope {
    pub lower: f64,
    pub upper: f64,
    pub gamma_used: f64,
    pub swapped: bool,
}

impl Envelope {
    pub fn width(&self) -> f64 {
        self.upper - self.lower
    }
}

/// Sigmoid schedule mapping a scarcity score to a trimming level.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GammaParams {
    pub gamma_min: f64,
    pub gamma_max: f64,
    pub m_gamma: f64,
    pub tau_gamma: f64,
    pub epsilon: f64,
}

impl Default for GammaParams {
    fn default() -> Self {
        Self {
            gamma_min: 0.1,
            gamma_max: 0.75,
            m_gamma: 0.0,
            tau_gamma: 1.0,
            epsilon: 1e-6,
        }
    }
}

impl GammaParams {
    pub fn validate(&self) -> Result<(), EnvelopeError> {
        let ok = self.gamma_min > 0.0
            && self.gamma_min < self.gamma_max
            && self.gamma_max < 1.0
            && self.m_gamma.is_finite()
            && self.tau_gamma > 0.0
            && self.tau_gamma.is_finite()
            && self.epsilon > 0.0
            && self.epsilon.is_finite();
        if ok {
            Ok(())
        } else {
            Err(EnvelopeError::InvalidParams(format!("{self:?}")))
        }
    }
}

/// Reference distribution of training `k`-NN radii.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScarcityRefs {
    pub k: usize,
    pub q_lo: f64,
    pub q_hi: f64,
    features: Matrix,
}

impl ScarcityRefs {
    pub fn features(&self) -> &Matrix {
        &self.features
    }

    /// Distance from `x` to its `k`-th nearest training row.
    pub fn radius(&self, x: &[f64]) -> Result<f64, EnvelopeError> {
        if x.len() != self.features.n_cols() {
            return Err(EnvelopeError::DimensionMismatch {
                expected: self.features.n_cols(),
                got: x.len(),
            });
        }
        Ok(kth_distance(&self.features, x, self.k, None))
    }
}

fn kth_distance(features: &Matrix, x: &[f64], k: usize, skip: Option<usize>) -> f64 {
    let mut d: Vec<f64> = features
        .rows()
        .enumerate()
        .filter(|(i, _)| Some(*i) != skip)
        .map(|(_, r)| r.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum::<f64>())
        .collect();
    let (_, kth, _) = d.select_nth_unstable_by(k - 1, f64::total_cmp);
    kth.sqrt()
}

/// `ceil(6.672 n^(4/(4+d)))` clamped to `[1, n - 1]`.
pub fn knn_heuristic_k(n: usize, d: usize) -> usize {
    let raw = KNN_BASE * (n as f64).powf(4.0 / (4.0 + d as f64));
    let k = stats::robust_ceil(raw).max(1.0) as usize;
    k.clamp(1, n.saturating_sub(1).max(1))
}

/// Training `k`-NN radii (each row excluded from its own neighbours), their
/// median and 0.95-quantile.
pub fn fit_scarcity_refs(train_features: &Matrix, k: usize) -> Result<ScarcityRefs, EnvelopeError> {
    let n = train_features.n_rows();
    if k == 0 || k >= n {
        return Err(EnvelopeError::InvalidK { k, n_train: n });
    }
    let mut radii: Vec<f64> = (0..n)
        .map(|i| kth_distance(train_features, train_features.row(i), k, Some(i)))
        .collect();
    radii.sort_by(f64::total_cmp);
    Ok(ScarcityRefs {
        k,
        q_lo: stats::quantile_sorted(&radii, 0.5),
        q_hi: stats::quantile_sorted(&radii, 0.95),
        features: train_features.clone(),
    })
}

/// `(r_k(x) - q_lo) / (q_hi - q_lo + epsilon)`.
pub fn scarcity_score(x: &[f64], refs: &ScarcityRefs, epsilon: f64) -> Result<f64, EnvelopeError> {
    Ok((refs.radius(x)? - refs.q_lo) / (refs.q_hi - refs.q_lo + epsilon))
}

/// `gamma_max - (gamma_max - gamma_min) * sigmoid((sc - m_gamma) / tau_gamma)`.
///
/// For positive arguments the equivalent form `gamma_min + (gamma_max -
/// gamma_min) * sigmoid(-z)` keeps precision near `gamma_min`.
pub fn adaptive_gamma(sc: f64, p: &GammaParams) -> f64 {
    let z = (sc - p.m_gamma) / p.tau_gamma;
    let span = p.gamma_max - p.gamma_min;
    let g = if z > 0.0 {
        p.gamma_min + span * stats::sigmoid(-z)
    } else {
        p.gamma_max - span * stats::sigmoid(z)
    };
    g.clamp(p.gamma_min, p.gamma_max)
}

/// Lower `gamma/2`-quantile of lower draws and upper `1 - gamma/2`-quantile of
/// upper draws.
pub fn trimmed_envelope(draws: &EndpointDraws, gamma: f64) -> Result<Envelope, EnvelopeError> {
    if draws.len() < 2 {
        return Err(EnvelopeError::TooFewDraws(draws.len()));
    }
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(EnvelopeError::InvalidGamma(gamma));
    }
    let lower = stats::quantile(&draws.q_lower, gamma / 2.0);
    let upper = stats::quantile(&draws.q_upper, 1.0 - gamma / 2.0);
    let swapped = lower > upper;
    let (lower, upper) = if swapped { (upper, lower) } else { (lower, upper) };
    Ok(Envelope {
        lower,
        upper,
        gamma_used: gamma,
        swapped,
    })
}
