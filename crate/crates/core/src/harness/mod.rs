//! Repeated-split experiment protocol.
//!
//! Repetition `r` shuffles the data with seed `base_seed + r`, splits it
//! 56/24/20 into train, calibration and test, standardizes covariates with
//! training statistics, fits the posterior backend on train, calibrates every
//! requested method on the calibration split and scores it on test.
//! Repetitions run in parallel; results are merged in repetition order so every
//! output byte depends only on the configuration.

mod bundle;
mod report;

use std::path::PathBuf;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::conformal::{
    cqr_baseline, credo_pipeline, CalibrationResult, ConformalError, CqrPredictor, CredoPredictor,
    GammaSource, PredictionInterval,
};
use crate::data::{self, DataError, Dataset, SplitRatios, Standardizer, TargetColumn};
use crate::envelope::{fit_scarcity_refs, knn_heuristic_k, EnvelopeError, GammaParams, ScarcityRefs};
use crate::evaluation::{
    self, lof_scores, partition_outliers, EvaluationError, MetricValues, MetricsReport,
    DECOMPOSITION_INLIER_FRACTION, DEFAULT_CONTAMINATION, DEFAULT_LOF_K, ILR_INLIER_FRACTION,
};
use crate::posterior::{
    fit_bootstrap_quantile_ensemble, fit_conjugate_blr, BasisSpec, EnsembleConfig, Levels,
    NigPrior, PosteriorError, PosteriorModel, DEFAULT_DRAWS,
};

pub use bundle::{calibrate_bundle, fit_bundle, predict_rows, CalibrationFile, ModelBundle, PredictionRow};
pub use report::{emit_plot_data, load_points, write_report, PlotKind, OUTPUT_DIR_ENV};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Posterior(#[from] PosteriorError),
    #[error(transparent)]
    Envelope(#[from] EnvelopeError),
    #[error(transparent)]
    Conformal(#[from] ConformalError),
    #[error(transparent)]
    Evaluation(#[from] EvaluationError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("unknown plot kind {0:?}")]
    UnknownPlotKind(String),
    #[error("report has no per-point rows")]
    NoPoints,
    #[error("method {0} is missing from the calibration file")]
    MissingGammaSource(String),
}

/// Where the rows come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum DataSource {
    /// Synthetic scenario, generated once with the base seed.
    Scenario { id: u8, n: usize },
    Csv { path: PathBuf, target: TargetColumn },
}

impl Default for DataSource {
    fn default() -> Self {
        DataSource::Scenario { id: 1, n: 2000 }
    }
}

impl DataSource {
    pub fn load(&self, seed: u64) -> Result<Dataset, DataError> {
        match self {
            DataSource::Scenario { id, n } => data::generate_scenario(*id, *n, seed),
            DataSource::Csv { path, target } => data::load_csv(path, target),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum BackendConfig {
    ConjugateBlr {
        #[serde(default)]
        prior: NigPrior,
        #[serde(default = "default_draws")]
        n_draws: usize,
        #[serde(default)]
        basis: BasisSpec,
    },
    BootstrapEnsemble {
        #[serde(default = "default_members")]
        n_members: usize,
        #[serde(default)]
        basis: BasisSpec,
        #[serde(default = "default_learning_rate")]
        learning_rate: f64,
        #[serde(default = "default_epochs")]
        epochs: usize,
    },
}

fn default_draws() -> usize {
    DEFAULT_DRAWS
}

fn default_members() -> usize {
    50
}

fn default_learning_rate() -> f64 {
    EnsembleConfig::default().learning_rate
}

fn default_epochs() -> usize {
    EnsembleConfig::default().epochs
}

impl Default for BackendConfig {
    fn default() -> Self {
        BackendConfig::ConjugateBlr {
            prior: NigPrior::default(),
            n_draws: DEFAULT_DRAWS,
            basis: BasisSpec::Linear,
        }
    }
}

impl BackendConfig {
    /// Fits the backend on (standardized) training rows.
    pub fn fit(&self, train: &Dataset, levels: &Levels, seed: u64) -> Result<PosteriorModel, PosteriorError> {
        match self {
            BackendConfig::ConjugateBlr { prior, n_draws, basis } => {
                fit_conjugate_blr(train, prior, *basis, *n_draws, seed)
            }
            BackendConfig::BootstrapEnsemble {
                n_members,
                basis,
                learning_rate,
                epochs,
            } => fit_bootstrap_quantile_ensemble(
                train,
                *n_members,
                levels,
                *basis,
                &EnsembleConfig {
                    learning_rate: *learning_rate,
                    epochs: *epochs,
                    seed,
                },
            ),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    /// Envelope at the fixed trimming level.
    Credo,
    /// Envelope at the scarcity-driven trimming level.
    CredoAdaptive,
    /// Conformalized quantile regression on the posterior-mean endpoints.
    Cqr,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Credo, Method::CredoAdaptive, Method::Cqr];

    pub fn name(self) -> &'static str {
        match self {
            Method::Credo => "credo",
            Method::CredoAdaptive => "credo-adaptive",
            Method::Cqr => "cqr",
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Method {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| HarnessError::InvalidConfig(format!("unknown method {s:?}")))
    }
}

/// Trimming configuration shared by the CREDO methods.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GammaConfig {
    /// Level used by [`Method::Credo`].
    pub fixed: f64,
    /// Schedule used by [`Method::CredoAdaptive`].
    pub adaptive: GammaParams,
    /// Neighbour count for scarcity; `None` uses the power-law heuristic.
    pub knn_k: Option<usize>,
}

impl Default for GammaConfig {
    fn default() -> Self {
        Self {
            fixed: 0.425,
            adaptive: GammaParams::default(),
            knn_k: None,
        }
    }
}

/// One experiment, serialized as a single JSON document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub data: DataSource,
    pub levels: Levels,
    pub backend: BackendConfig,
    pub gamma: GammaConfig,
    pub repetitions: usize,
    pub base_seed: u64,
    pub methods: Vec<Method>,
    pub ratios: SplitRatios,
    pub output_dir: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            data: DataSource::default(),
            levels: Levels::default(),
            backend: BackendConfig::default(),
            gamma: GammaConfig::default(),
            repetitions: 30,
            base_seed: 0,
            methods: Method::ALL.to_vec(),
            ratios: SplitRatios::default(),
            output_dir: None,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.repetitions == 0 {
            return Err(HarnessError::InvalidConfig("repetitions must be at least 1".into()));
        }
        if self.methods.is_empty() {
            return Err(HarnessError::InvalidConfig("no methods selected".into()));
        }
        let mut methods = self.methods.clone();
        methods.sort();
        methods.dedup();
        if methods.len() != self.methods.len() {
            return Err(HarnessError::InvalidConfig("methods listed twice".into()));
        }
        self.levels.validate()?;
        self.ratios.validate()?;
        GammaSource::Fixed { gamma: self.gamma.fixed }.validate()?;
        self.gamma.adaptive.validate()?;
        match &self.backend {
            BackendConfig::ConjugateBlr { n_draws, .. } if *n_draws < 2 => {
                Err(PosteriorError::TooFewDraws(*n_draws).into())
            }
            BackendConfig::BootstrapEnsemble { n_members, .. } if *n_members < 2 => {
                Err(PosteriorError::TooFewDraws(*n_members).into())
            }
            _ => Ok(()),
        }
    }

    pub fn from_json(text: &str) -> Result<Self, HarnessError> {
        Ok(serde_json::from_str(text)?)
    }

    /// Seed of repetition `r`.
    pub fn repetition_seed(&self, r: usize) -> u64 {
        self.base_seed.wrapping_add(r as u64)
    }
}

/// Independent stream derived from a repetition seed.
pub(crate) fn stream_seed(seed: u64, stream: u64) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(stream)
}

const MODEL_STREAM: u64 = 1;

/// Calibrated predictor of any method.
#[derive(Debug, Clone)]
pub enum MethodPredictor<'m> {
    Credo(CredoPredictor<'m>),
    Cqr(CqrPredictor<'m>),
}

impl MethodPredictor<'_> {
    pub fn predict(&self, x: &[f64]) -> Result<PredictionInterval, ConformalError> {
        match self {
            MethodPredictor::Credo(p) => p.predict(x),
            MethodPredictor::Cqr(p) => p.predict(x),
        }
    }

    pub fn calibration(&self) -> &CalibrationResult {
        match self {
            MethodPredictor::Credo(p) => p.calibration(),
            MethodPredictor::Cqr(p) => p.calibration(),
        }
    }
}

/// Gamma source of a CREDO method; `None` for CQR.
pub fn gamma_source_for(method: Method, gamma: &GammaConfig, refs: &ScarcityRefs) -> Option<GammaSource> {
    match method {
        Method::Credo => Some(GammaSource::Fixed { gamma: gamma.fixed }),
        Method::CredoAdaptive => Some(GammaSource::Adaptive {
            params: gamma.adaptive,
            refs: refs.clone(),
        }),
        Method::Cqr => None,
    }
}

/// Calibrates `method` on standardized calibration rows.
pub fn calibrate_method<'m>(
    method: Method,
    model: &'m PosteriorModel,
    cal: &Dataset,
    levels: &Levels,
    gamma_source: Option<GammaSource>,
) -> Result<MethodPredictor<'m>, HarnessError> {
    Ok(match (method, gamma_source) {
        (Method::Cqr, _) => MethodPredictor::Cqr(cqr_baseline(model, cal, levels)?.1),
        (_, Some(source)) => MethodPredictor::Credo(credo_pipeline(model, cal, levels, source)?.1),
        (m, None) => return Err(HarnessError::MissingGammaSource(m.to_string())),
    })
}

/// Scarcity references on standardized training features.
pub fn scarcity_refs_for(train_features: &data::Matrix, knn_k: Option<usize>) -> Result<ScarcityRefs, EnvelopeError> {
    let n = train_features.n_rows();
    let k = knn_k.unwrap_or_else(|| knn_heuristic_k(n, train_features.n_cols()));
    fit_scarcity_refs(train_features, k)
}

/// One test point under one method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointRecord {
    pub repetition: usize,
    pub method: Method,
    /// Row index in the full dataset.
    pub row: usize,
    /// First covariate on the original scale.
    pub x: f64,
    pub y: f64,
    pub base_lower: f64,
    pub base_upper: f64,
    pub lower: f64,
    pub upper: f64,
    pub covered: bool,
    pub gamma: Option<f64>,
    pub scarcity: Option<f64>,
    pub aleatoric: Option<f64>,
    pub epistemic: Option<f64>,
    pub slack: Option<f64>,
    pub lof: f64,
    pub outlier: bool,
    /// Among the most central inliers used for the decomposition summary.
    pub central_inlier: bool,
}

impl PointRecord {
    pub fn epistemic_fraction(&self) -> Option<f64> {
        match (self.aleatoric, self.epistemic) {
            (Some(a), Some(e)) => Some(e / (a + e)),
            _ => None,
        }
    }

    pub fn width(&self) -> f64 {
        self.upper - self.lower
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodOutcome {
    pub method: Method,
    pub metrics: MetricValues,
    pub calibration: CalibrationResult,
    pub points: Vec<PointRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepetitionOutcome {
    pub repetition: usize,
    pub seed: u64,
    pub n_train: usize,
    pub methods: Vec<MethodOutcome>,
}

/// One full repetition of the protocol on `dataset`.
pub fn run_repetition(
    config: &ExperimentConfig,
    dataset: &Dataset,
    repetition: usize,
) -> Result<RepetitionOutcome, HarnessError> {
    let seed = config.repetition_seed(repetition);
    let parts = data::split(dataset, config.ratios, seed)?;
    let standardizer = Standardizer::fit(parts.train.features())?;
    let train = standardizer.apply_dataset(&parts.train)?;
    let cal = standardizer.apply_dataset(&parts.calibration)?;
    let test = standardizer.apply_dataset(&parts.test)?;

    let model = config
        .backend
        .fit(&train, &config.levels, stream_seed(seed, MODEL_STREAM))?;
    let refs = if config.methods.contains(&Method::CredoAdaptive) {
        Some(scarcity_refs_for(train.features(), config.gamma.knn_k)?)
    } else {
        None
    };

    let lof = lof_scores(test.features(), DEFAULT_LOF_K)?;
    let ilr_partition = partition_outliers(&lof, DEFAULT_CONTAMINATION, ILR_INLIER_FRACTION)?;
    let central = partition_outliers(&lof, DEFAULT_CONTAMINATION, DECOMPOSITION_INLIER_FRACTION)?;

    let mut methods = Vec::with_capacity(config.methods.len());
    for &method in &config.methods {
        let source = match (method, &refs) {
            (Method::CredoAdaptive, Some(r)) => gamma_source_for(method, &config.gamma, r),
            (Method::Credo, _) => Some(GammaSource::Fixed {
                gamma: config.gamma.fixed,
            }),
            _ => None,
        };
        let predictor = calibrate_method(method, &model, &cal, &config.levels, source)?;
        let predictions: Vec<PredictionInterval> = (0..test.len())
            .into_par_iter()
            .map(|i| predictor.predict(test.row(i)))
            .collect::<Result<_, _>>()?;
        let intervals: Vec<_> = predictions.iter().map(PredictionInterval::interval).collect();
        let metrics = evaluation::evaluate(&intervals, test.targets(), &ilr_partition, config.levels.alpha)?;
        let points = predictions
            .iter()
            .enumerate()
            .map(|(i, p)| {
                let y = test.targets()[i];
                PointRecord {
                    repetition,
                    method,
                    row: parts.indices.test[i],
                    x: parts.test.row(i)[0],
                    y,
                    base_lower: p.base.lower,
                    base_upper: p.base.upper,
                    lower: p.lower,
                    upper: p.upper,
                    covered: p.interval().contains(y),
                    gamma: p.envelope.map(|e| e.gamma_used),
                    scarcity: p.scarcity,
                    aleatoric: p.decomposition.map(|d| d.aleatoric),
                    epistemic: p.decomposition.map(|d| d.epistemic),
                    slack: p.decomposition.map(|d| d.slack),
                    lof: lof[i],
                    outlier: ilr_partition.outlier_indices.binary_search(&i).is_ok(),
                    central_inlier: central.central_inlier_indices.binary_search(&i).is_ok(),
                }
            })
            .collect();
        methods.push(MethodOutcome {
            method,
            metrics,
            calibration: predictor.calibration().clone(),
            points,
        });
    }
    Ok(RepetitionOutcome {
        repetition,
        seed,
        n_train: train.len(),
        methods,
    })
}

/// Metrics of one method in one repetition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub repetition: usize,
    pub seed: u64,
    pub method: Method,
    pub amc: f64,
    pub aco: f64,
    pub smis: f64,
    pub ilr: f64,
    pub tau_hat: Option<f64>,
    pub m: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepetitionFailure {
    pub repetition: usize,
    pub seed: u64,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodAggregate {
    pub method: Method,
    pub report: MetricsReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub config: ExperimentConfig,
    pub rows: Vec<MetricsRow>,
    pub failures: Vec<RepetitionFailure>,
    pub aggregates: Vec<MethodAggregate>,
    /// Per-point table of the last successful repetition.
    pub points: Vec<PointRecord>,
}

impl RunReport {
    pub fn aggregate(&self, method: Method) -> Option<&MetricsReport> {
        self.aggregates
            .iter()
            .find(|a| a.method == method)
            .map(|a| &a.report)
    }
}

/// Runs every repetition (in parallel) and merges them in order. A failing
/// repetition is recorded and skipped.
pub fn run_experiment(config: &ExperimentConfig) -> Result<RunReport, HarnessError> {
    config.validate()?;
    let dataset = config.data.load(config.base_seed)?;
    let outcomes: Vec<Result<RepetitionOutcome, HarnessError>> = (0..config.repetitions)
        .into_par_iter()
        .map(|r| run_repetition(config, &dataset, r))
        .collect();

    let mut rows = Vec::new();
    let mut failures = Vec::new();
    let mut points = Vec::new();
    for (r, outcome) in outcomes.into_iter().enumerate() {
        match outcome {
            Ok(o) => {
                for mo in &o.methods {
                    rows.push(MetricsRow {
                        repetition: o.repetition,
                        seed: o.seed,
                        method: mo.method,
                        amc: mo.metrics.amc,
                        aco: mo.metrics.aco,
                        smis: mo.metrics.smis,
                        ilr: mo.metrics.ilr,
                        tau_hat: Some(mo.calibration.tau_hat).filter(|t| t.is_finite()),
                        m: mo.calibration.m(),
                    });
                }
                points = o.methods.into_iter().flat_map(|m| m.points).collect();
            }
            Err(e) => failures.push(RepetitionFailure {
                repetition: r,
                seed: config.repetition_seed(r),
                message: e.to_string(),
            }),
        }
    }
    let aggregates = config
        .methods
        .iter()
        .map(|&method| MethodAggregate {
            method,
            report: MetricsReport::from_rows(
                rows.iter()
                    .filter(|row| row.method == method)
                    .map(|row| MetricValues {
                        amc: row.amc,
                        aco: row.aco,
                        smis: row.smis,
                        ilr: row.ilr,
                    })
                    .collect(),
            ),
        })
        .collect();
    Ok(RunReport {
        config: config.clone(),
        rows,
        failures,
        aggregates,
        points,
    })
}
