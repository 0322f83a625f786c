//! Interval metrics and density-based outlier partitioning.
//!
//! - AMC: marginal coverage on the test set.
//! - ACO: coverage on LOF outliers.
//! - SMIS: width plus `2/alpha`-weighted one-sided misses.
//! - ILR: mean width on outliers over mean width on central inliers.

mod lof;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::conformal::Interval;
use crate::data::Matrix;
use crate::stats;

pub use lof::{lof_scores, partition_outliers, OutlierPartition, DEFAULT_CONTAMINATION, DEFAULT_LOF_K};

pub const ILR_INLIER_FRACTION: f64 = 0.20;
pub const DECOMPOSITION_INLIER_FRACTION: f64 = 0.10;

#[derive(Debug, Error, PartialEq)]
pub enum EvaluationError {
    #[error("{intervals} intervals but {targets} targets")]
    LengthMismatch { intervals: usize, targets: usize },
    #[error("nothing to evaluate")]
    Empty,
    #[error("LOF needs more than k = {k} points, got {n}")]
    TooFewPoints { n: usize, k: usize },
    #[error("fraction {0} must lie in (0, 1)")]
    InvalidFraction(f64),
    #[error("{n} points leave an empty outlier or inlier set")]
    EmptyPartition { n: usize },
    #[error("miscoverage level {0} must lie in (0, 1)")]
    InvalidAlpha(f64),
    #[error("interval widths must be finite")]
    NonFiniteWidth,
}

fn check(intervals: &[Interval], targets: &[f64]) -> Result<(), EvaluationError> {
    if intervals.len() != targets.len() {
        return Err(EvaluationError::LengthMismatch {
            intervals: intervals.len(),
            targets: targets.len(),
        });
    }
    if intervals.is_empty() {
        return Err(EvaluationError::Empty);
    }
    Ok(())
}

fn coverage_on(intervals: &[Interval], targets: &[f64], idx: &[usize]) -> f64 {
    idx.iter()
        .filter(|&&i| intervals[i].contains(targets[i]))
        .count() as f64
        / idx.len() as f64
}

pub fn marginal_coverage(intervals: &[Interval], targets: &[f64]) -> Result<f64, EvaluationError> {
    check(intervals, targets)?;
    let all: Vec<usize> = (0..targets.len()).collect();
    Ok(coverage_on(intervals, targets, &all))
}

pub fn outlier_coverage(
    intervals: &[Interval],
    targets: &[f64],
    partition: &OutlierPartition,
) -> Result<f64, EvaluationError> {
    check(intervals, targets)?;
    if partition.outlier_indices.is_empty() {
        return Err(EvaluationError::Empty);
    }
    Ok(coverage_on(intervals, targets, &partition.outlier_indices))
}

/// Interval score of one point.
pub fn interval_score(iv: &Interval, y: f64, alpha: f64) -> f64 {
    let penalty = 2.0 / alpha;
    let mut s = iv.upper - iv.lower;
    if y < iv.lower {
        s += penalty * (iv.lower - y);
    }
    if y > iv.upper {
        s += penalty * (y - iv.upper);
    }
    s
}

pub fn smis(intervals: &[Interval], targets: &[f64], alpha: f64) -> Result<f64, EvaluationError> {
    check(intervals, targets)?;
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(EvaluationError::InvalidAlpha(alpha));
    }
    let total: f64 = intervals
        .iter()
        .zip(targets)
        .map(|(iv, y)| interval_score(iv, *y, alpha))
        .sum();
    Ok(total / targets.len() as f64)
}

pub fn ilr(intervals: &[Interval], partition: &OutlierPartition) -> Result<f64, EvaluationError> {
    if partition.outlier_indices.is_empty() || partition.central_inlier_indices.is_empty() {
        return Err(EvaluationError::Empty);
    }
    let mean_width = |idx: &[usize]| {
        let w: Vec<f64> = idx.iter().map(|&i| intervals[i].width()).collect();
        stats::mean(&w)
    };
    let (out, inl) = (
        mean_width(&partition.outlier_indices),
        mean_width(&partition.central_inlier_indices),
    );
    if !(out.is_finite() && inl.is_finite()) {
        return Err(EvaluationError::NonFiniteWidth);
    }
    Ok(out / inl)
}

/// The four headline metrics of one method on one test split.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricValues {
    pub amc: f64,
    pub aco: f64,
    pub smis: f64,
    pub ilr: f64,
}

/// Metrics of intervals on a test split. `partition` comes from
/// [`lof_scores`] and [`partition_outliers`] at the ILR inlier fraction.
pub fn evaluate(
    intervals: &[Interval],
    targets: &[f64],
    partition: &OutlierPartition,
    alpha: f64,
) -> Result<MetricValues, EvaluationError> {
    Ok(MetricValues {
        amc: marginal_coverage(intervals, targets)?,
        aco: outlier_coverage(intervals, targets, partition)?,
        smis: smis(intervals, targets, alpha)?,
        ilr: ilr(intervals, partition)?,
    })
}

/// LOF with the default `k` and an outlier partition at `inlier_fraction`.
pub fn default_partition(
    features: &Matrix,
    inlier_fraction: f64,
) -> Result<OutlierPartition, EvaluationError> {
    partition_outliers(
        &lof_scores(features, DEFAULT_LOF_K)?,
        DEFAULT_CONTAMINATION,
        inlier_fraction,
    )
}

/// Mean and twice the sample standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub two_sd: f64,
}

impl Summary {
    pub fn of(values: &[f64]) -> Summary {
        Summary {
            mean: stats::mean(values),
            two_sd: 2.0 * stats::sample_sd(values),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub per_repetition: Vec<MetricValues>,
    pub amc: Summary,
    pub aco: Summary,
    pub smis: Summary,
    pub ilr: Summary,
}

impl MetricsReport {
    pub fn from_rows(rows: Vec<MetricValues>) -> MetricsReport {
        let col = |f: fn(&MetricValues) -> f64| Summary::of(&rows.iter().map(f).collect::<Vec<_>>());
        MetricsReport {
            amc: col(|m| m.amc),
            aco: col(|m| m.aco),
            smis: col(|m| m.smis),
            ilr: col(|m| m.ilr),
            per_repetition: rows,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn iv(lower: f64, upper: f64) -> Interval {
        Interval { lower, upper }
    }

    #[test]
    fn coverage_counts() {
        let ivs = vec![iv(0.0, 1.0); 10];
        let mut ys = vec![0.5; 10];
        assert_eq!(marginal_coverage(&ivs, &ys).unwrap(), 1.0);
        ys[3] = 2.0;
        assert_eq!(marginal_coverage(&ivs, &ys).unwrap(), 0.9);
        assert_eq!(marginal_coverage(&ivs, &[5.0; 10]).unwrap(), 0.0);
        assert!(marginal_coverage(&ivs, &ys[..3]).is_err());
    }

    #[test]
    fn smis_hand_values() {
        assert_eq!(smis(&[iv(0.0, 1.0)], &[0.5], 0.1).unwrap(), 1.0);
        assert!((smis(&[iv(0.0, 1.0)], &[1.2], 0.1).unwrap() - 5.0).abs() < 1e-12);
        assert_eq!(smis(&[iv(2.0, 2.0)], &[2.0], 0.1).unwrap(), 0.0);
        assert!((smis(&[iv(0.0, 1.0)], &[-0.5], 0.5).unwrap() - 3.0).abs() < 1e-12);
    }

    #[test]
    fn ilr_ratios() {
        let partition = partition_outliers(&[0.0, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0], 0.1, 0.2)
            .unwrap();
        let mut ivs = vec![iv(0.0, 1.0); 10];
        assert_eq!(ilr(&ivs, &partition).unwrap(), 1.0);
        ivs[9] = iv(0.0, 2.0);
        assert_eq!(ilr(&ivs, &partition).unwrap(), 2.0);
        ivs[0] = iv(f64::NEG_INFINITY, f64::INFINITY);
        assert_eq!(ilr(&ivs, &partition), Err(EvaluationError::NonFiniteWidth));
    }

    #[test]
    fn report_summaries() {
        let rows = vec![
            MetricValues { amc: 0.8, aco: 0.5, smis: 1.0, ilr: 1.0 },
            MetricValues { amc: 1.0, aco: 0.7, smis: 3.0, ilr: 2.0 },
        ];
        let r = MetricsReport::from_rows(rows);
        assert!((r.amc.mean - 0.9).abs() < 1e-12);
        assert!((r.smis.two_sd - 2.0 * 2f64.sqrt()).abs() < 1e-12);
    }
}
