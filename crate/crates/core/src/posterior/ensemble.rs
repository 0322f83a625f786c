//! Bootstrap ensemble of linear quantile regressors.
//!
//! Each member is fitted on a bootstrap resample of the training rows: one
//! regressor at level `alpha0/2`, one at `1 - alpha0/2`, both by full-batch
//! subgradient descent on the pinball loss. Members play the role of posterior
//! draws.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::basis::{BasisSpec, FeatureMap};
use super::{dot, EndpointDraws, Levels, PosteriorError, PosteriorModel};
use crate::data::{seeded_rng, Dataset};
use crate::stats;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnsembleConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for EnsembleConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.05,
            epochs: 200,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleMember {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantileEnsemble {
    pub(crate) basis: FeatureMap,
    pub alpha0: f64,
    pub seed: u64,
    pub members: Vec<EnsembleMember>,
}

impl QuantileEnsemble {
    pub(crate) fn endpoint_draws(
        &self,
        x: &[f64],
        levels: &Levels,
    ) -> Result<EndpointDraws, PosteriorError> {
        if (levels.alpha0 - self.alpha0).abs() > 1e-12 {
            return Err(PosteriorError::LevelMismatch {
                fitted: self.alpha0,
                requested: levels.alpha0,
            });
        }
        let phi = self.basis.expand(x);
        let (q_lower, q_upper) = self
            .members
            .iter()
            .map(|m| {
                let (lo, hi) = (dot(&phi, &m.lower), dot(&phi, &m.upper));
                // crossing repair
                if lo <= hi {
                    (lo, hi)
                } else {
                    (hi, lo)
                }
            })
            .unzip();
        Ok(EndpointDraws {
            x: x.to_vec(),
            q_lower,
            q_upper,
        })
    }

    pub fn basis(&self) -> &FeatureMap {
        &self.basis
    }
}

fn pinball_loss(residual: f64, tau: f64) -> f64 {
    if residual >= 0.0 {
        tau * residual
    } else {
        (tau - 1.0) * residual
    }
}

/// Full-batch subgradient descent on the mean pinball loss at level `tau`,
/// started from the empirical `tau`-quantile intercept with zero slopes.
/// Step size decays as `lr / sqrt(t + 1)`.
fn fit_quantile_regressor(
    design: &[Vec<f64>],
    targets: &[f64],
    tau: f64,
    config: &EnsembleConfig,
    member: usize,
) -> Result<Vec<f64>, PosteriorError> {
    let p = design[0].len();
    let n = design.len() as f64;
    let mut w = vec![0.0; p];
    w[0] = stats::quantile(targets, tau);
    let mut grad = vec![0.0; p];
    for t in 0..config.epochs {
        grad.iter_mut().for_each(|g| *g = 0.0);
        for (row, y) in design.iter().zip(targets) {
            // d/dw of pinball(y - row.w)
            let g = if *y < dot(row, &w) { 1.0 - tau } else { -tau };
            for (gj, xj) in grad.iter_mut().zip(row) {
                *gj += g * xj;
            }
        }
        let step = config.learning_rate / ((t + 1) as f64).sqrt();
        for (wj, gj) in w.iter_mut().zip(&grad) {
            *wj -= step * gj / n;
        }
    }
    let loss: f64 = design
        .iter()
        .zip(targets)
        .map(|(row, y)| pinball_loss(y - dot(row, &w), tau))
        .sum();
    if !loss.is_finite() || w.iter().any(|v| !v.is_finite()) {
        return Err(PosteriorError::NanLoss { member });
    }
    Ok(w)
}

/// Seeded bootstrap resamples (indices with replacement) of `n` rows.
pub fn bootstrap_resamples(n: usize, count: usize, seed: u64) -> Vec<Vec<usize>> {
    let mut rng = seeded_rng(seed);
    (0..count)
        .map(|_| (0..n).map(|_| rng.random_range(0..n)).collect())
        .collect()
}

/// Fits one member per explicit resample.
pub fn fit_ensemble_with_resamples(
    train: &Dataset,
    resamples: &[Vec<usize>],
    levels: &Levels,
    basis: BasisSpec,
    config: &EnsembleConfig,
) -> Result<PosteriorModel, PosteriorError> {
    levels.validate()?;
    if resamples.len() < 2 {
        return Err(PosteriorError::TooFewDraws(resamples.len()));
    }
    if !(config.learning_rate > 0.0 && config.learning_rate.is_finite()) {
        return Err(PosteriorError::InvalidConfig(format!(
            "learning rate {} must be positive",
            config.learning_rate
        )));
    }
    let map = FeatureMap::fit(basis, train.features());
    if train.len() <= map.n_covariates() {
        return Err(PosteriorError::InsufficientRows {
            rows: train.len(),
            covariates: map.n_covariates(),
        });
    }
    let expanded: Vec<Vec<f64>> = (0..train.len()).map(|i| map.expand(train.row(i))).collect();
    let (tau_lo, tau_hi) = levels.endpoint_probabilities();
    let mut members = Vec::with_capacity(resamples.len());
    for (b, idx) in resamples.iter().enumerate() {
        if idx.is_empty() || idx.iter().any(|&i| i >= train.len()) {
            return Err(PosteriorError::InvalidConfig(format!(
                "resample {b} is empty or out of range"
            )));
        }
        let design: Vec<Vec<f64>> = idx.iter().map(|&i| expanded[i].clone()).collect();
        let targets: Vec<f64> = idx.iter().map(|&i| train.targets()[i]).collect();
        members.push(EnsembleMember {
            lower: fit_quantile_regressor(&design, &targets, tau_lo, config, b)?,
            upper: fit_quantile_regressor(&design, &targets, tau_hi, config, b)?,
        });
    }
    Ok(PosteriorModel::BootstrapEnsemble(QuantileEnsemble {
        basis: map,
        alpha0: levels.alpha0,
        seed: config.seed,
        members,
    }))
}

/// `n_members` bootstrap resamples drawn from `config.seed`, one member each.
pub fn fit_bootstrap_quantile_ensemble(
    train: &Dataset,
    n_members: usize,
    levels: &Levels,
    basis: BasisSpec,
    config: &EnsembleConfig,
) -> Result<PosteriorModel, PosteriorError> {
    if n_members < 2 {
        return Err(PosteriorError::TooFewDraws(n_members));
    }
    let resamples = bootstrap_resamples(train.len(), n_members, config.seed);
    fit_ensemble_with_resamples(train, &resamples, levels, basis, config)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Matrix;
    use rand_distr::StandardNormal;

    fn noise_data(n: usize, seed: u64) -> Dataset {
        let mut rng = seeded_rng(seed);
        let xs: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let ys: Vec<f64> = (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        Dataset::new(Matrix::from_flat(xs, 1).unwrap(), ys).unwrap()
    }

    fn quick() -> EnsembleConfig {
        EnsembleConfig {
            learning_rate: 0.05,
            epochs: 100,
            seed: 3,
        }
    }

    #[test]
    fn identical_resamples_give_zero_spread() {
        let ds = noise_data(100, 1);
        let idx: Vec<usize> = (0..100).collect();
        let model = fit_ensemble_with_resamples(
            &ds,
            &[idx.clone(), idx],
            &Levels::default(),
            BasisSpec::Linear,
            &quick(),
        )
        .unwrap();
        let d = model.endpoint_draws(&[0.3], &Levels::default()).unwrap();
        assert_eq!(d.q_lower[0], d.q_lower[1]);
        assert_eq!(d.q_upper[0], d.q_upper[1]);
    }

    #[test]
    fn symmetric_noise_brackets_zero() {
        let ds = noise_data(500, 2);
        let model =
            fit_bootstrap_quantile_ensemble(&ds, 20, &Levels::default(), BasisSpec::Linear, &quick())
                .unwrap();
        let d = model.endpoint_draws(&[0.0], &Levels::default()).unwrap();
        assert!(stats::median(&d.q_lower) < 0.0);
        assert!(stats::median(&d.q_upper) > 0.0);
        assert!(d.q_lower.iter().zip(&d.q_upper).all(|(l, u)| l <= u));
    }

    #[test]
    fn upper_draws_track_the_empirical_quantile() {
        let ds = noise_data(2000, 3);
        let oracle = stats::quantile(ds.targets(), 0.95);
        let model =
            fit_bootstrap_quantile_ensemble(&ds, 20, &Levels::default(), BasisSpec::Linear, &quick())
                .unwrap();
        let d = model.endpoint_draws(&[0.0], &Levels::default()).unwrap();
        let upper = stats::mean(&d.q_upper);
        assert!((upper - oracle).abs() < 0.15, "{upper} vs {oracle}");
        assert!((upper - 1.6449).abs() < 0.15, "{upper}");
    }

    #[test]
    fn level_mismatch_and_bad_config_are_errors() {
        let ds = noise_data(50, 4);
        let model =
            fit_bootstrap_quantile_ensemble(&ds, 2, &Levels::default(), BasisSpec::Linear, &quick())
                .unwrap();
        assert!(matches!(
            model.endpoint_draws(&[0.0], &Levels::new(0.1, 0.2).unwrap()),
            Err(PosteriorError::LevelMismatch { .. })
        ));
        assert!(fit_bootstrap_quantile_ensemble(&ds, 1, &Levels::default(), BasisSpec::Linear, &quick()).is_err());
        let bad = EnsembleConfig {
            learning_rate: -1.0,
            ..quick()
        };
        assert!(fit_bootstrap_quantile_ensemble(&ds, 2, &Levels::default(), BasisSpec::Linear, &bad).is_err());
    }

    #[test]
    fn exploding_steps_surface_as_nan_loss() {
        let ds = noise_data(50, 5);
        let bad = EnsembleConfig {
            learning_rate: f64::MAX,
            epochs: 50,
            seed: 0,
        };
        let err = fit_bootstrap_quantile_ensemble(&ds, 2, &Levels::default(), BasisSpec::Linear, &bad)
            .unwrap_err();
        assert!(matches!(err, PosteriorError::NanLoss { .. }), "{err}");
    }

    #[test]
    fn members_are_invariant_to_row_order_within_a_resample() {
        let ds = noise_data(200, 6);
        let resamples = bootstrap_resamples(ds.len(), 3, 11);
        let model =
            fit_ensemble_with_resamples(&ds, &resamples, &Levels::default(), BasisSpec::Linear, &quick())
                .unwrap();

        // Reverse the training rows and remap each resample accordingly.
        let n = ds.len();
        let reversed = ds.select(&(0..n).rev().collect::<Vec<_>>());
        let remapped: Vec<Vec<usize>> = resamples
            .iter()
            .map(|r| r.iter().rev().map(|&i| n - 1 - i).collect())
            .collect();
        let other =
            fit_ensemble_with_resamples(&reversed, &remapped, &Levels::default(), BasisSpec::Linear, &quick())
                .unwrap();
        let a = model.endpoint_draws(&[0.4], &Levels::default()).unwrap();
        let b = other.endpoint_draws(&[0.4], &Levels::default()).unwrap();
        for (x, y) in a.q_lower.iter().chain(&a.q_upper).zip(b.q_lower.iter().chain(&b.q_upper)) {
            assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn serializes_with_backend_tag() {
        let ds = noise_data(50, 7);
        let model =
            fit_bootstrap_quantile_ensemble(&ds, 3, &Levels::default(), BasisSpec::Linear, &quick())
                .unwrap();
        let json = serde_json::to_string(&model).unwrap();
        assert!(json.contains("\"backend\":\"bootstrap-ensemble\""));
        let back: PosteriorModel = serde_json::from_str(&json).unwrap();
        assert_eq!(back, model);
    }
}
