//! Split-conformal calibration of envelope intervals.
//!
//! The score of `(x, y)` is its signed distance outside `[l(x), u(x)]`. The
//! calibration quantile `tau_hat` is the `ceil((m + 1)(1 - alpha))`-th smallest
//! of `m` calibration scores, or `+inf` when that index exceeds `m`. The final
//! interval is `[l(x) - tau_hat, u(x) + tau_hat]`.

use rayon::prelude::*;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::data::Dataset;
use crate::decomposition::{decompose, Decomposition};
use crate::envelope::{
    adaptive_gamma, scarcity_score, trimmed_envelope, Envelope, EnvelopeError, GammaParams,
    ScarcityRefs,
};
use crate::posterior::{EndpointDraws, Levels, PosteriorError, PosteriorModel};
use crate::stats;

#[derive(Debug, Error)]
pub enum ConformalError {
    #[error("no calibration scores")]
    EmptyScores,
    #[error("miscoverage level {0} must lie in (0, 1)")]
    InvalidAlpha(f64),
    #[error("calibration score {index} is not finite")]
    NonFiniteScore { index: usize },
    #[error(transparent)]
    Posterior(#[from] PosteriorError),
    #[error(transparent)]
    Envelope(#[from] EnvelopeError),
}

/// Closed interval; may be the whole line.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lower: f64,
    pub upper: f64,
}

impl Interval {
    pub fn contains(&self, y: f64) -> bool {
        self.lower <= y && y <= self.upper
    }

    pub fn width(&self) -> f64 {
        self.upper - self.lower
    }
}

mod tau_serde {
    use super::*;

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_some(v)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
    }
}

/// `tau_hat` is stored as `null` in JSON when infinite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationResult {
    #[serde(with = "tau_serde")]
    pub tau_hat: f64,
    pub scores: Vec<f64>,
    pub alpha: f64,
    pub k_index: usize,
}

impl CalibrationResult {
    pub fn m(&self) -> usize {
        self.scores.len()
    }

    pub fn is_infinite(&self) -> bool {
        !self.tau_hat.is_finite()
    }
}

/// `max(l - y, y - u)`.
pub fn envelope_score(y: f64, lower: f64, upper: f64) -> f64 {
    (lower - y).max(y - upper)
}

/// Order-statistic index `ceil((m + 1)(1 - alpha))`.
pub fn conformal_index(m: usize, alpha: f64) -> usize {
    stats::robust_ceil((m as f64 + 1.0) * (1.0 - alpha)) as usize
}

pub fn calibrate(scores: &[f64], alpha: f64) -> Result<CalibrationResult, ConformalError> {
    if scores.is_empty() {
        return Err(ConformalError::EmptyScores);
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(ConformalError::InvalidAlpha(alpha));
    }
    if let Some(index) = scores.iter().position(|s| !s.is_finite()) {
        return Err(ConformalError::NonFiniteScore { index });
    }
    let k_index = conformal_index(scores.len(), alpha);
    let tau_hat = if k_index > scores.len() {
        f64::INFINITY
    } else {
        let mut sorted = scores.to_vec();
        sorted.sort_by(f64::total_cmp);
        sorted[k_index.max(1) - 1]
    };
    Ok(CalibrationResult {
        tau_hat,
        scores: scores.to_vec(),
        alpha,
        k_index,
    })
}

/// Where the trimming level comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case")]
pub enum GammaSource {
    Fixed { gamma: f64 },
    Adaptive { params: GammaParams, refs: ScarcityRefs },
}

impl GammaSource {
    /// Trimming level at `x` and, when adaptive, the scarcity score.
    pub fn gamma_at(&self, x: &[f64]) -> Result<(f64, Option<f64>), EnvelopeError> {
        match self {
            GammaSource::Fixed { gamma } => {
                if !(*gamma > 0.0 && *gamma < 1.0) {
                    return Err(EnvelopeError::InvalidGamma(*gamma));
                }
                Ok((*gamma, None))
            }
            GammaSource::Adaptive { params, refs } => {
                let sc = scarcity_score(x, refs, params.epsilon)?;
                Ok((adaptive_gamma(sc, params), Some(sc)))
            }
        }
    }

    pub fn validate(&self) -> Result<(), EnvelopeError> {
        match self {
            GammaSource::Fixed { gamma } if !(*gamma > 0.0 && *gamma < 1.0) => {
                Err(EnvelopeError::InvalidGamma(*gamma))
            }
            GammaSource::Fixed { .. } => Ok(()),
            GammaSource::Adaptive { params, .. } => params.validate(),
        }
    }
}

/// A calibrated interval at one covariate.
///
/// `base` is the uncalibrated pair (the envelope for CREDO, the mean quantile
/// pair for CQR). `decomposition` is present for CREDO when `tau_hat` is finite.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionInterval {
    pub lower: f64,
    pub upper: f64,
    pub base: Interval,
    pub envelope: Option<Envelope>,
    pub scarcity: Option<f64>,
    pub decomposition: Option<Decomposition>,
}

impl PredictionInterval {
    pub fn interval(&self) -> Interval {
        Interval {
            lower: self.lower,
            upper: self.upper,
        }
    }

    pub fn width(&self) -> f64 {
        self.upper - self.lower
    }
}

fn widen(base: Interval, tau_hat: f64) -> (f64, f64) {
    if tau_hat.is_finite() {
        (base.lower - tau_hat, base.upper + tau_hat)
    } else {
        (f64::NEG_INFINITY, f64::INFINITY)
    }
}

/// Envelope of `model` at `x` under `gamma_source`, with its draws.
pub fn envelope_at(
    model: &PosteriorModel,
    x: &[f64],
    levels: &Levels,
    gamma_source: &GammaSource,
) -> Result<(Envelope, EndpointDraws, Option<f64>), ConformalError> {
    let draws = model.endpoint_draws(x, levels)?;
    let (gamma, sc) = gamma_source.gamma_at(x)?;
    Ok((trimmed_envelope(&draws, gamma)?, draws, sc))
}

fn scores_in_parallel<F>(cal: &Dataset, score: F) -> Result<Vec<f64>, ConformalError>
where
    F: Fn(&[f64], f64) -> Result<f64, ConformalError> + Sync,
{
    (0..cal.len())
        .into_par_iter()
        .map(|i| score(cal.row(i), cal.targets()[i]))
        .collect()
}

#[derive(Debug, Clone)]
pub struct CredoPredictor<'m> {
    model: &'m PosteriorModel,
    levels: Levels,
    gamma_source: GammaSource,
    calibration: CalibrationResult,
}

impl<'m> CredoPredictor<'m> {
    /// Rebuilds a predictor from a stored calibration.
    pub fn new(
        model: &'m PosteriorModel,
        levels: Levels,
        gamma_source: GammaSource,
        calibration: CalibrationResult,
    ) -> Self {
        Self {
            model,
            levels,
            gamma_source,
            calibration,
        }
    }

    pub fn calibration(&self) -> &CalibrationResult {
        &self.calibration
    }

    pub fn gamma_source(&self) -> &GammaSource {
        &self.gamma_source
    }

    pub fn levels(&self) -> Levels {
        self.levels
    }

    pub fn predict(&self, x: &[f64]) -> Result<PredictionInterval, ConformalError> {
        let (env, draws, scarcity) = envelope_at(self.model, x, &self.levels, &self.gamma_source)?;
        let tau = self.calibration.tau_hat;
        let base = Interval {
            lower: env.lower,
            upper: env.upper,
        };
        let (lower, upper) = widen(base, tau);
        Ok(PredictionInterval {
            lower,
            upper,
            base,
            envelope: Some(env),
            scarcity,
            decomposition: decompose(&env, &draws, tau).ok(),
        })
    }
}

/// Scores each calibration row against its envelope and calibrates.
pub fn credo_pipeline<'m>(
    model: &'m PosteriorModel,
    cal: &Dataset,
    levels: &Levels,
    gamma_source: GammaSource,
) -> Result<(CalibrationResult, CredoPredictor<'m>), ConformalError> {
    levels.validate()?;
    gamma_source.validate()?;
    let scores = scores_in_parallel(cal, |x, y| {
        let (env, _, _) = envelope_at(model, x, levels, &gamma_source)?;
        Ok(envelope_score(y, env.lower, env.upper))
    })?;
    let calibration = calibrate(&scores, levels.alpha)?;
    let predictor = CredoPredictor::new(model, *levels, gamma_source, calibration.clone());
    Ok((calibration, predictor))
}

/// Conformalized quantile regression on the posterior-mean endpoints.
#[derive(Debug, Clone)]
pub struct CqrPredictor<'m> {
    model: &'m PosteriorModel,
    levels: Levels,
    calibration: CalibrationResult,
}

impl<'m> CqrPredictor<'m> {
    pub fn new(model: &'m PosteriorModel, levels: Levels, calibration: CalibrationResult) -> Self {
        Self {
            model,
            levels,
            calibration,
        }
    }

    pub fn calibration(&self) -> &CalibrationResult {
        &self.calibration
    }

    pub fn predict(&self, x: &[f64]) -> Result<PredictionInterval, ConformalError> {
        let base = mean_pair(self.model, x, &self.levels)?;
        let (lower, upper) = widen(base, self.calibration.tau_hat);
        Ok(PredictionInterval {
            lower,
            upper,
            base,
            envelope: None,
            scarcity: None,
            decomposition: None,
        })
    }
}

fn mean_pair(model: &PosteriorModel, x: &[f64], levels: &Levels) -> Result<Interval, ConformalError> {
    let (lower, upper) = model.endpoint_draws(x, levels)?.mean_endpoints();
    Ok(Interval { lower, upper })
}

pub fn cqr_baseline<'m>(
    model: &'m PosteriorModel,
    cal: &Dataset,
    levels: &Levels,
) -> Result<(CalibrationResult, CqrPredictor<'m>), ConformalError> {
    levels.validate()?;
    let scores = scores_in_parallel(cal, |x, y| {
        let q = mean_pair(model, x, levels)?;
        Ok(envelope_score(y, q.lower, q.upper))
    })?;
    let calibration = calibrate(&scores, levels.alpha)?;
    let predictor = CqrPredictor::new(model, *levels, calibration.clone());
    Ok((calibration, predictor))
}
