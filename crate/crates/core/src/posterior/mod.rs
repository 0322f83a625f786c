//! Posterior predictive backends.
//!
//! A fitted [`PosteriorModel`] holds `B` parameter draws. For a query `x` and
//! credal level `alpha0` it returns the paired endpoint draws
//! `(q_lower[b], q_upper[b])`: the `alpha0/2` and `1 - alpha0/2` conditional
//! quantiles under draw `b`. Two backends are provided:
//!
//! - [`ConjugateBlr`]: exact Normal-Inverse-Gamma posterior of a Gaussian
//!   linear model, so predictive masses can be checked exactly.
//! - [`QuantileEnsemble`]: bootstrap ensemble of linear pinball-loss
//!   regressors, free of any Gaussian likelihood assumption.

mod basis;
mod conjugate;
mod ensemble;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use basis::{BasisSpec, FeatureMap};
pub use conjugate::{fit_conjugate_blr, ConjugateBlr, NigPrior, ParameterDraw};
pub use ensemble::{
    bootstrap_resamples, fit_bootstrap_quantile_ensemble, fit_ensemble_with_resamples,
    EnsembleConfig, EnsembleMember, QuantileEnsemble,
};

pub const DEFAULT_DRAWS: usize = 1000;

#[derive(Debug, Error)]
pub enum PosteriorError {
    #[error("insufficient rows: {rows} training rows for {covariates} covariates")]
    InsufficientRows { rows: usize, covariates: usize },
    #[error("invalid prior: {0}")]
    InvalidPrior(String),
    #[error("need at least 2 posterior draws, got {0}")]
    TooFewDraws(usize),
    #[error("expected a covariate of dimension {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("non-finite covariate")]
    NonFiniteInput,
    #[error("pinball loss became non-finite while fitting member {member}")]
    NanLoss { member: usize },
    #[error("model was fitted at alpha0 = {fitted}, queried at {requested}")]
    LevelMismatch { fitted: f64, requested: f64 },
    #[error("invalid fit configuration: {0}")]
    InvalidConfig(String),
    #[error("posterior precision is not positive definite")]
    NotPositiveDefinite,
}

/// Conformal miscoverage `alpha` and credal nominal level `alpha0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Levels {
    pub alpha: f64,
    pub alpha0: f64,
}

impl Default for Levels {
    fn default() -> Self {
        Self {
            alpha: 0.1,
            alpha0: 0.1,
        }
    }
}

impl Levels {
    pub fn new(alpha: f64, alpha0: f64) -> Result<Self, PosteriorError> {
        let levels = Self { alpha, alpha0 };
        levels.validate()?;
        Ok(levels)
    }

    pub fn validate(&self) -> Result<(), PosteriorError> {
        for (name, v) in [("alpha", self.alpha), ("alpha0", self.alpha0)] {
            if !(v > 0.0 && v < 1.0) {
                return Err(PosteriorError::InvalidConfig(format!(
                    "{name} = {v} must lie in (0, 1)"
                )));
            }
        }
        Ok(())
    }

    /// Probability levels of the lower and upper endpoints.
    pub fn endpoint_probabilities(&self) -> (f64, f64) {
        (self.alpha0 / 2.0, 1.0 - self.alpha0 / 2.0)
    }
}

/// The `B` paired endpoint draws at one covariate.
#[derive(Debug, Clone, PartialEq)]
pub struct EndpointDraws {
    pub x: Vec<f64>,
    pub q_lower: Vec<f64>,
    pub q_upper: Vec<f64>,
}

impl EndpointDraws {
    /// Checks pairing, ordering and finiteness.
    pub fn new(x: Vec<f64>, q_lower: Vec<f64>, q_upper: Vec<f64>) -> Result<Self, PosteriorError> {
        if q_lower.len() != q_upper.len() {
            return Err(PosteriorError::DimensionMismatch {
                expected: q_lower.len(),
                got: q_upper.len(),
            });
        }
        if q_lower
            .iter()
            .zip(&q_upper)
            .any(|(l, u)| !(l.is_finite() && u.is_finite()) || l > u)
        {
            return Err(PosteriorError::NonFiniteInput);
        }
        Ok(Self { x, q_lower, q_upper })
    }

    pub fn len(&self) -> usize {
        self.q_lower.len()
    }

    pub fn is_empty(&self) -> bool {
        self.q_lower.is_empty()
    }

    /// Mean lower and upper endpoints across draws.
    pub fn mean_endpoints(&self) -> (f64, f64) {
        (
            crate::stats::mean(&self.q_lower),
            crate::stats::mean(&self.q_upper),
        )
    }
}

/// A fitted posterior sampler.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "backend", rename_all = "kebab-case")]
pub enum PosteriorModel {
    ConjugateBlr(ConjugateBlr),
    BootstrapEnsemble(QuantileEnsemble),
}

impl PosteriorModel {
    pub fn backend_name(&self) -> &'static str {
        match self {
            PosteriorModel::ConjugateBlr(_) => "conjugate-blr",
            PosteriorModel::BootstrapEnsemble(_) => "bootstrap-ensemble",
        }
    }

    pub fn n_draws(&self) -> usize {
        match self {
            PosteriorModel::ConjugateBlr(m) => m.n_draws(),
            PosteriorModel::BootstrapEnsemble(m) => m.members.len(),
        }
    }

    pub fn input_dim(&self) -> usize {
        match self {
            PosteriorModel::ConjugateBlr(m) => m.basis.input_dim(),
            PosteriorModel::BootstrapEnsemble(m) => m.basis.input_dim(),
        }
    }

    pub fn endpoint_draws(&self, x: &[f64], levels: &Levels) -> Result<EndpointDraws, PosteriorError> {
        if x.len() != self.input_dim() {
            return Err(PosteriorError::DimensionMismatch {
                expected: self.input_dim(),
                got: x.len(),
            });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(PosteriorError::NonFiniteInput);
        }
        match self {
            PosteriorModel::ConjugateBlr(m) => m.endpoint_draws(x, levels),
            PosteriorModel::BootstrapEnsemble(m) => m.endpoint_draws(x, levels),
        }
    }
}

/// Endpoint draws of `model` at `x`.
pub fn endpoint_draws(
    model: &PosteriorModel,
    x: &[f64],
    levels: &Levels,
) -> Result<EndpointDraws, PosteriorError> {
    model.endpoint_draws(x, levels)
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn levels_validate_open_interval() {
        assert!(Levels::new(0.1, 0.1).is_ok());
        assert!(Levels::new(0.0, 0.1).is_err());
        assert!(Levels::new(0.1, 1.0).is_err());
        assert!(Levels::new(f64::NAN, 0.5).is_err());
        assert_eq!(Levels::default().endpoint_probabilities(), (0.05, 0.95));
    }

    #[test]
    fn endpoint_draws_reject_crossing() {
        assert!(EndpointDraws::new(vec![0.0], vec![0.0, 1.0], vec![1.0, 2.0]).is_ok());
        assert!(EndpointDraws::new(vec![0.0], vec![2.0], vec![1.0]).is_err());
        assert!(EndpointDraws::new(vec![0.0], vec![f64::NAN], vec![1.0]).is_err());
        assert!(EndpointDraws::new(vec![0.0], vec![0.0], vec![1.0, 2.0]).is_err());
    }
}
