//! Conformalized regression intervals from endpoint-trimmed credal envelopes.
//!
//! A posterior backend yields paired endpoint draws `(q_lower[b], q_upper[b])`
//! at a covariate. Trimming the extreme draws gives an envelope `[l(x), u(x)]`,
//! split-conformal calibration widens or shrinks it by `tau_hat`, and the
//! resulting width splits into aleatoric, epistemic and slack parts.

pub mod conformal;
pub mod data;
pub mod decomposition;
pub mod envelope;
pub mod evaluation;
pub mod harness;
pub mod posterior;
pub mod stats;

use thiserror::Error;

pub use conformal::{
    calibrate, cqr_baseline, credo_pipeline, envelope_score, CalibrationResult, ConformalError,
    CqrPredictor, CredoPredictor, GammaSource, Interval, PredictionInterval,
};
pub use data::{DataError, Dataset, Matrix};
pub use decomposition::{aleatoric_width, decompose, Decomposition, DecompositionError};
pub use envelope::{
    adaptive_gamma, fit_scarcity_refs, knn_heuristic_k, scarcity_score, trimmed_envelope, Envelope,
    EnvelopeError, GammaParams, ScarcityRefs,
};
pub use evaluation::{EvaluationError, MetricValues, MetricsReport, OutlierPartition};
pub use harness::{run_experiment, ExperimentConfig, HarnessError, Method, RunReport};
pub use posterior::{EndpointDraws, Levels, PosteriorError, PosteriorModel};

/// Any error raised by this crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Posterior(#[from] PosteriorError),
    #[error(transparent)]
    Envelope(#[from] EnvelopeError),
    #[error(transparent)]
    Conformal(#[from] ConformalError),
    #[error(transparent)]
    Decomposition(#[from] DecompositionError),
    #[error(transparent)]
    Evaluation(#[from] EvaluationError),
    #[error(transparent)]
    Harness(#[from] HarnessError),
}
