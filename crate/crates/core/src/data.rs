//! Datasets, CSV ingestion, feature standardization, seeded splitting and the
//! synthetic scenario generators used by the experiment harness.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::stats;

/// The crate-wide seedable generator. ChaCha8 is portable across platforms,
/// so a seed fully determines every stochastic output.
pub type SeededRng = ChaCha8Rng;

pub fn seeded_rng(seed: u64) -> SeededRng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[derive(Debug, Error)]
pub enum DataError {
    #[error("failed to parse csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("target column {0} not found")]
    MissingTarget(String),
    #[error("non-numeric value {value:?} at row {row}, column {column}")]
    NonNumeric {
        row: usize,
        column: String,
        value: String,
    },
    #[error("non-finite value at row {row}, column {column}")]
    NonFinite { row: usize, column: String },
    #[error("empty dataset")]
    Empty,
    #[error("dataset has no feature columns")]
    NoFeatures,
    #[error("row {row} has {got} values, expected {expected}")]
    Ragged {
        row: usize,
        got: usize,
        expected: usize,
    },
    #[error("{targets} targets for {rows} feature rows")]
    LengthMismatch { rows: usize, targets: usize },
    #[error("insufficient rows to split: {0}")]
    InsufficientRows(usize),
    #[error("invalid split ratios: {0}")]
    InvalidRatios(String),
    #[error("unknown scenario id {0}")]
    UnknownScenario(u8),
    #[error("scenario needs at least 50 rows, got {0}")]
    ScenarioTooSmall(usize),
    #[error("standardizer needs at least 2 rows, got {0}")]
    StandardizerTooSmall(usize),
    #[error("expected {expected} features, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
}

/// Dense row-major matrix of finite reals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    data: Vec<f64>,
    n_cols: usize,
}

impl Matrix {
    pub fn from_flat(data: Vec<f64>, n_cols: usize) -> Result<Self, DataError> {
        if n_cols == 0 {
            return Err(DataError::NoFeatures);
        }
        if data.len() % n_cols != 0 {
            return Err(DataError::Ragged {
                row: data.len() / n_cols,
                got: data.len() % n_cols,
                expected: n_cols,
            });
        }
        for (i, v) in data.iter().enumerate() {
            if !v.is_finite() {
                return Err(DataError::NonFinite {
                    row: i / n_cols + 1,
                    column: format!("{}", i % n_cols + 1),
                });
            }
        }
        Ok(Self { data, n_cols })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, DataError> {
        let n_cols = rows.first().map(Vec::len).ok_or(DataError::Empty)?;
        let mut data = Vec::with_capacity(rows.len() * n_cols);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != n_cols {
                return Err(DataError::Ragged {
                    row: i + 1,
                    got: row.len(),
                    expected: n_cols,
                });
            }
            data.extend_from_slice(row);
        }
        Self::from_flat(data, n_cols)
    }

    pub fn n_rows(&self) -> usize {
        self.data.len() / self.n_cols
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n_cols..(i + 1) * self.n_cols]
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        self.data.chunks_exact(self.n_cols)
    }

    pub fn column(&self, j: usize) -> impl Iterator<Item = f64> + '_ {
        self.rows().map(move |r| r[j])
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.data
    }

    pub fn select_rows(&self, indices: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(indices.len() * self.n_cols);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        Matrix {
            data,
            n_cols: self.n_cols,
        }
    }
}

/// Covariates plus a real-valued response.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    features: Matrix,
    targets: Vec<f64>,
    feature_names: Option<Vec<String>>,
}

impl Dataset {
    pub fn new(features: Matrix, targets: Vec<f64>) -> Result<Self, DataError> {
        if features.n_rows() == 0 {
            return Err(DataError::Empty);
        }
        if features.n_rows() != targets.len() {
            return Err(DataError::LengthMismatch {
                rows: features.n_rows(),
                targets: targets.len(),
            });
        }
        if let Some(i) = targets.iter().position(|t| !t.is_finite()) {
            return Err(DataError::NonFinite {
                row: i + 1,
                column: "target".into(),
            });
        }
        Ok(Self {
            features,
            targets,
            feature_names: None,
        })
    }

    pub fn from_rows(rows: &[Vec<f64>], targets: Vec<f64>) -> Result<Self, DataError> {
        Self::new(Matrix::from_rows(rows)?, targets)
    }

    pub fn with_feature_names(mut self, names: Vec<String>) -> Self {
        debug_assert_eq!(names.len(), self.n_features());
        self.feature_names = Some(names);
        self
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn n_features(&self) -> usize {
        self.features.n_cols()
    }

    pub fn features(&self) -> &Matrix {
        &self.features
    }

    pub fn targets(&self) -> &[f64] {
        &self.targets
    }

    pub fn row(&self, i: usize) -> &[f64] {
        self.features.row(i)
    }

    pub fn feature_names(&self) -> Option<&[String]> {
        self.feature_names.as_deref()
    }

    /// Feature names, falling back to `x` (one column) or `x1..xd`.
    pub fn feature_labels(&self) -> Vec<String> {
        match &self.feature_names {
            Some(names) => names.clone(),
            None if self.n_features() == 1 => vec!["x".to_string()],
            None => (1..=self.n_features()).map(|j| format!("x{j}")).collect(),
        }
    }

    pub fn select(&self, indices: &[usize]) -> Dataset {
        Dataset {
            features: self.features.select_rows(indices),
            targets: indices.iter().map(|&i| self.targets[i]).collect(),
            feature_names: self.feature_names.clone(),
        }
    }

    /// Same targets and names with a replacement feature matrix.
    pub fn with_features(&self, features: Matrix) -> Result<Dataset, DataError> {
        let mut ds = Dataset::new(features, self.targets.clone())?;
        ds.feature_names = self.feature_names.clone();
        Ok(ds)
    }

    pub fn with_targets(&self, targets: Vec<f64>) -> Result<Dataset, DataError> {
        let mut ds = Dataset::new(self.features.clone(), targets)?;
        ds.feature_names = self.feature_names.clone();
        Ok(ds)
    }
}

/// Which column of a CSV file holds the response.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TargetColumn {
    Index(usize),
    Name(String),
}

impl FromStr for TargetColumn {
    type Err = std::convert::Infallible;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s.parse::<usize>() {
            Ok(i) => TargetColumn::Index(i),
            Err(_) => TargetColumn::Name(s.to_string()),
        })
    }
}

impl fmt::Display for TargetColumn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TargetColumn::Index(i) => write!(f, "#{i}"),
            TargetColumn::Name(n) => write!(f, "{n:?}"),
        }
    }
}

struct RawTable {
    header: Vec<String>,
    rows: Vec<Vec<f64>>,
}

fn read_table(path: &Path) -> Result<RawTable, DataError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_path(path)?;
    let header: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    if header.is_empty() || header.iter().all(String::is_empty) {
        return Err(DataError::Empty);
    }
    let mut rows = Vec::new();
    for (r, record) in reader.records().enumerate() {
        let record = record?;
        let mut row = Vec::with_capacity(header.len());
        for (c, cell) in record.iter().enumerate() {
            let value: f64 = cell.parse().map_err(|_| DataError::NonNumeric {
                row: r + 1,
                column: header[c].clone(),
                value: cell.to_string(),
            })?;
            if !value.is_finite() {
                return Err(DataError::NonFinite {
                    row: r + 1,
                    column: header[c].clone(),
                });
            }
            row.push(value);
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(DataError::Empty);
    }
    Ok(RawTable { header, rows })
}

fn resolve_column(header: &[String], target: &TargetColumn) -> Result<usize, DataError> {
    match target {
        TargetColumn::Index(i) if *i < header.len() => Ok(*i),
        TargetColumn::Name(name) => header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| DataError::MissingTarget(target.to_string())),
        _ => Err(DataError::MissingTarget(target.to_string())),
    }
}

/// Loads a comma-separated numeric table with a header row. The target
/// column is removed from the features.
pub fn load_csv(path: impl AsRef<Path>, target: &TargetColumn) -> Result<Dataset, DataError> {
    let table = read_table(path.as_ref())?;
    let t = resolve_column(&table.header, target)?;
    if table.header.len() < 2 {
        return Err(DataError::NoFeatures);
    }
    let names: Vec<String> = table
        .header
        .iter()
        .enumerate()
        .filter(|(j, _)| *j != t)
        .map(|(_, h)| h.clone())
        .collect();
    let mut flat = Vec::with_capacity(table.rows.len() * names.len());
    let mut targets = Vec::with_capacity(table.rows.len());
    for row in &table.rows {
        targets.push(row[t]);
        flat.extend(row.iter().enumerate().filter(|(j, _)| *j != t).map(|(_, v)| *v));
    }
    let features = Matrix::from_flat(flat, names.len())?;
    Ok(Dataset::new(features, targets)?.with_feature_names(names))
}

/// Loads a feature-only table, dropping `exclude` when it names an existing
/// column. Returns the matrix, its column names and the dropped column if
/// one was found.
pub fn load_feature_csv(
    path: impl AsRef<Path>,
    exclude: Option<&TargetColumn>,
) -> Result<(Matrix, Vec<String>, Option<Vec<f64>>), DataError> {
    let table = read_table(path.as_ref())?;
    let dropped = exclude.and_then(|t| resolve_column(&table.header, t).ok());
    let names: Vec<String> = table
        .header
        .iter()
        .enumerate()
        .filter(|(j, _)| Some(*j) != dropped)
        .map(|(_, h)| h.clone())
        .collect();
    let mut flat = Vec::new();
    let mut excluded = dropped.map(|_| Vec::with_capacity(table.rows.len()));
    for row in &table.rows {
        for (j, v) in row.iter().enumerate() {
            if Some(j) == dropped {
                if let Some(col) = excluded.as_mut() {
                    col.push(*v);
                }
            } else {
                flat.push(*v);
            }
        }
    }
    Ok((Matrix::from_flat(flat, names.len())?, names, excluded))
}

/// Writes `ds` as a CSV table with its feature labels and a final target
/// column named `target_name`.
pub fn write_csv(ds: &Dataset, path: impl AsRef<Path>, target_name: &str) -> Result<(), DataError> {
    let mut writer = csv::Writer::from_path(path)?;
    let mut header = ds.feature_labels();
    header.push(target_name.to_string());
    writer.write_record(&header)?;
    for i in 0..ds.len() {
        let mut record: Vec<String> = ds.row(i).iter().map(|v| v.to_string()).collect();
        record.push(ds.targets()[i].to_string());
        writer.write_record(&record)?;
    }
    writer.flush()?;
    Ok(())
}

/// Train / calibration / test proportions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitRatios {
    pub train: f64,
    pub calibration: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        Self {
            train: 0.56,
            calibration: 0.24,
            test: 0.20,
        }
    }
}

impl SplitRatios {
    pub fn validate(&self) -> Result<(), DataError> {
        let parts = [self.train, self.calibration, self.test];
        if parts.iter().any(|r| !(r.is_finite() && *r > 0.0)) {
            return Err(DataError::InvalidRatios(format!("{parts:?} must be positive")));
        }
        let sum: f64 = parts.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(DataError::InvalidRatios(format!("{parts:?} sum to {sum}, not 1")));
        }
        Ok(())
    }

    /// Partition sizes for `n` rows: calibration and test get
    /// `round(ratio * n)`, train takes the remainder.
    pub fn sizes(&self, n: usize) -> (usize, usize, usize) {
        let cal = (self.calibration * n as f64).round() as usize;
        let test = (self.test * n as f64).round() as usize;
        let train = n.saturating_sub(cal + test);
        (train, cal, test)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub calibration: Vec<usize>,
    pub test: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct DataSplit {
    pub train: Dataset,
    pub calibration: Dataset,
    pub test: Dataset,
    pub indices: SplitIndices,
    pub seed: u64,
}

/// Shuffles the rows with `seed`, then cuts train, calibration and test in
/// that order.
pub fn split(ds: &Dataset, ratios: SplitRatios, seed: u64) -> Result<DataSplit, DataError> {
    ratios.validate()?;
    let n = ds.len();
    if n < 3 {
        return Err(DataError::InsufficientRows(n));
    }
    let (n_train, n_cal, n_test) = ratios.sizes(n);
    if n_train == 0 || n_cal == 0 || n_test == 0 || n_train + n_cal + n_test != n {
        return Err(DataError::InsufficientRows(n));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut seeded_rng(seed));
    let indices = SplitIndices {
        train: order[..n_train].to_vec(),
        calibration: order[n_train..n_train + n_cal].to_vec(),
        test: order[n_train + n_cal..].to_vec(),
    };
    Ok(DataSplit {
        train: ds.select(&indices.train),
        calibration: ds.select(&indices.calibration),
        test: ds.select(&indices.test),
        indices,
        seed,
    })
}

/// Per-column affine map to zero mean and unit sample standard deviation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub means: Vec<f64>,
    pub scales: Vec<f64>,
}

impl Standardizer {
    /// Fits column means and sample (n - 1) standard deviations; zero-variance
    /// columns get scale 1.
    pub fn fit(features: &Matrix) -> Result<Self, DataError> {
        let n = features.n_rows();
        if n < 2 {
            return Err(DataError::StandardizerTooSmall(n));
        }
        let (means, scales) = (0..features.n_cols())
            .map(|j| {
                let col: Vec<f64> = features.column(j).collect();
                let sd = stats::sample_sd(&col);
                let scale = if sd > 0.0 && sd.is_finite() { sd } else { 1.0 };
                (stats::mean(&col), scale)
            })
            .unzip();
        Ok(Self { means, scales })
    }

    pub fn dim(&self) -> usize {
        self.means.len()
    }

    pub fn apply_row(&self, row: &[f64]) -> Result<Vec<f64>, DataError> {
        self.check_dim(row.len())?;
        Ok(row
            .iter()
            .zip(self.means.iter().zip(&self.scales))
            .map(|(v, (m, s))| (v - m) / s)
            .collect())
    }

    pub fn invert_row(&self, row: &[f64]) -> Result<Vec<f64>, DataError> {
        self.check_dim(row.len())?;
        Ok(row
            .iter()
            .zip(self.means.iter().zip(&self.scales))
            .map(|(v, (m, s))| v * s + m)
            .collect())
    }

    pub fn apply(&self, features: &Matrix) -> Result<Matrix, DataError> {
        self.check_dim(features.n_cols())?;
        let mut flat = Vec::with_capacity(features.as_flat().len());
        for row in features.rows() {
            flat.extend(self.apply_row(row)?);
        }
        Matrix::from_flat(flat, features.n_cols())
    }

    pub fn invert(&self, features: &Matrix) -> Result<Matrix, DataError> {
        self.check_dim(features.n_cols())?;
        let mut flat = Vec::with_capacity(features.as_flat().len());
        for row in features.rows() {
            flat.extend(self.invert_row(row)?);
        }
        Matrix::from_flat(flat, features.n_cols())
    }

    pub fn apply_dataset(&self, ds: &Dataset) -> Result<Dataset, DataError> {
        ds.with_features(self.apply(ds.features())?)
    }

    fn check_dim(&self, got: usize) -> Result<(), DataError> {
        if got != self.dim() {
            return Err(DataError::DimensionMismatch {
                expected: self.dim(),
                got,
            });
        }
        Ok(())
    }
}

pub fn fit_standardizer(ds: &Dataset) -> Result<Standardizer, DataError> {
    Standardizer::fit(ds.features())
}

/// The three one-dimensional synthetic benchmarks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Scenario {
    /// Jump in the mean at 0, an almost empty gap on [-0.2, 0.2], constant noise.
    EpistemicGap,
    /// Scarce region [0, 0.4] with four heteroscedastic noise regimes.
    HeteroscedasticScarcity,
    /// Two dense Gaussian clusters, a sparse middle band, tails and shock noise.
    MixtureGaps,
}

impl TryFrom<u8> for Scenario {
    type Error = DataError;

    fn try_from(id: u8) -> Result<Self, Self::Error> {
        match id {
            1 => Ok(Scenario::EpistemicGap),
            2 => Ok(Scenario::HeteroscedasticScarcity),
            3 => Ok(Scenario::MixtureGaps),
            other => Err(DataError::UnknownScenario(other)),
        }
    }
}

impl Scenario {
    pub fn id(self) -> u8 {
        match self {
            Scenario::EpistemicGap => 1,
            Scenario::HeteroscedasticScarcity => 2,
            Scenario::MixtureGaps => 3,
        }
    }

    /// Conditional mean of the response.
    pub fn mean(self, x: f64) -> f64 {
        match self {
            Scenario::EpistemicGap => {
                if x < 0.0 {
                    (3.0 * x).sin()
                } else {
                    (3.0 * x).sin() + 1.5
                }
            }
            Scenario::HeteroscedasticScarcity => (2.0 * x).sin() + 0.5 * x,
            Scenario::MixtureGaps => x.sin() + 0.3 * x,
        }
    }

    /// Standard deviation of the (non-shock) noise at `x`.
    pub fn noise_sd(self, x: f64) -> f64 {
        match self {
            Scenario::EpistemicGap => 0.1,
            Scenario::HeteroscedasticScarcity => {
                if x <= -0.3 {
                    0.1
                } else if x < 0.0 {
                    0.2 + 0.15 * (10.0 * x).sin().abs()
                } else if x <= 0.4 {
                    0.7 + 0.3 * (12.0 * x).sin().abs()
                } else {
                    0.2 + 0.15 * (10.0 * x).sin().abs()
                }
            }
            Scenario::MixtureGaps => SCENARIO3_BASE_SD,
        }
    }
}

const SCENARIO1_GAP_WEIGHT: f64 = 0.01;
const SCENARIO2_SCARCE_WEIGHT: f64 = 0.02;
const SCENARIO3_BASE_SD: f64 = 0.2;
const SCENARIO3_SHOCK_SHIFT: f64 = 1.0;
const SCENARIO3_SHOCK_SD: f64 = 0.8;

/// Probability of the shock noise component in scenario 3.
pub fn shock_probability(x: f64) -> f64 {
    let tail = if x.abs() > 3.2 { 0.15 } else { 0.0 };
    0.05 + 0.35 / (1.0 + (-(x - 1.3)).exp()) + tail
}

fn sample_scenario1_x(rng: &mut SeededRng) -> f64 {
    if rng.random::<f64>() < SCENARIO1_GAP_WEIGHT {
        return rng.random_range(-0.2..=0.2);
    }
    loop {
        let x: f64 = rng.sample(StandardNormal);
        if x.abs() > 0.2 {
            return x;
        }
    }
}

fn sample_scenario2_x(rng: &mut SeededRng) -> f64 {
    if rng.random::<f64>() < SCENARIO2_SCARCE_WEIGHT {
        return rng.random_range(0.0..=0.4);
    }
    // Uniform on [-1.5, 0) U (0.4, 1.5], proportional to length.
    let u = rng.random_range(0.0..2.6);
    if u < 1.5 {
        -1.5 + u
    } else {
        0.4 + (u - 1.5)
    }
}

fn sample_scenario3_x(rng: &mut SeededRng) -> f64 {
    let u: f64 = rng.random();
    if u < 0.45 {
        Normal::new(-1.8, 0.35).unwrap().sample(rng)
    } else if u < 0.90 {
        Normal::new(1.6, 0.45).unwrap().sample(rng)
    } else if u < 0.94 {
        rng.random_range(-0.4..=0.4)
    } else {
        let magnitude = rng.random_range(3.2..4.5);
        if rng.random::<bool>() {
            magnitude
        } else {
            -magnitude
        }
    }
}

/// Draws `n` rows of scenario `id` (1, 2 or 3) with a one-dimensional
/// covariate named `x`.
pub fn generate_scenario(id: u8, n: usize, seed: u64) -> Result<Dataset, DataError> {
    let scenario = Scenario::try_from(id)?;
    if n < 50 {
        return Err(DataError::ScenarioTooSmall(n));
    }
    let mut rng = seeded_rng(seed);
    let mut xs = Vec::with_capacity(n);
    let mut ys = Vec::with_capacity(n);
    for _ in 0..n {
        let x = match scenario {
            Scenario::EpistemicGap => sample_scenario1_x(&mut rng),
            Scenario::HeteroscedasticScarcity => sample_scenario2_x(&mut rng),
            Scenario::MixtureGaps => sample_scenario3_x(&mut rng),
        };
        let z: f64 = rng.sample(StandardNormal);
        let noise = match scenario {
            Scenario::MixtureGaps => {
                let shock = rng.random::<f64>() < shock_probability(x);
                if shock {
                    SCENARIO3_SHOCK_SHIFT + SCENARIO3_SHOCK_SD * z
                } else {
                    SCENARIO3_BASE_SD * z
                }
            }
            _ => scenario.noise_sd(x) * z,
        };
        xs.push(x);
        ys.push(scenario.mean(x) + noise);
    }
    let features = Matrix::from_flat(xs, 1)?;
    Ok(Dataset::new(features, ys)?.with_feature_names(vec!["x".into()]))
}
