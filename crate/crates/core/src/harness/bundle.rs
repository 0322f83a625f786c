//! Persisted model and calibration files for separate fit, calibrate and
//! predict steps.

use serde::{Deserialize, Serialize};

use super::{calibrate_method, gamma_source_for, scarcity_refs_for, BackendConfig, GammaConfig, HarnessError, Method, MethodPredictor};
use crate::conformal::{CalibrationResult, CqrPredictor, CredoPredictor, GammaSource};
use crate::data::{Dataset, Matrix, Standardizer};
use crate::envelope::ScarcityRefs;
use crate::posterior::{Levels, PosteriorModel};

/// A fitted backend with everything needed to score new covariates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelBundle {
    pub feature_names: Vec<String>,
    pub levels: Levels,
    pub gamma: GammaConfig,
    pub standardizer: Standardizer,
    pub model: PosteriorModel,
    pub scarcity_refs: ScarcityRefs,
}

impl ModelBundle {
    pub fn gamma_source(&self, method: Method) -> Option<GammaSource> {
        gamma_source_for(method, &self.gamma, &self.scarcity_refs)
    }

    fn check_features(&self, features: &Matrix) -> Result<(), HarnessError> {
        if features.n_cols() != self.feature_names.len() {
            return Err(HarnessError::InvalidConfig(format!(
                "bundle expects {} covariates, got {}",
                self.feature_names.len(),
                features.n_cols()
            )));
        }
        Ok(())
    }
}

/// Standardizes `train`, fits the backend and the scarcity references.
pub fn fit_bundle(
    train: &Dataset,
    backend: &BackendConfig,
    levels: Levels,
    gamma: GammaConfig,
    seed: u64,
) -> Result<ModelBundle, HarnessError> {
    levels.validate()?;
    gamma.adaptive.validate()?;
    let standardizer = Standardizer::fit(train.features())?;
    let std_train = standardizer.apply_dataset(train)?;
    let model = backend.fit(&std_train, &levels, seed)?;
    let scarcity_refs = scarcity_refs_for(std_train.features(), gamma.knn_k)?;
    Ok(ModelBundle {
        feature_names: train.feature_labels(),
        levels,
        gamma,
        standardizer,
        model,
        scarcity_refs,
    })
}

/// Calibration of one method against one bundle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationFile {
    pub method: Method,
    pub levels: Levels,
    pub calibration: CalibrationResult,
}

pub fn calibrate_bundle(bundle: &ModelBundle, cal: &Dataset, method: Method) -> Result<CalibrationFile, HarnessError> {
    bundle.check_features(cal.features())?;
    let std_cal = bundle.standardizer.apply_dataset(cal)?;
    let predictor = calibrate_method(method, &bundle.model, &std_cal, &bundle.levels, bundle.gamma_source(method))?;
    Ok(CalibrationFile {
        method,
        levels: bundle.levels,
        calibration: predictor.calibration().clone(),
    })
}

/// One predicted interval on the original scale of the response.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRow {
    pub lower: f64,
    pub upper: f64,
    pub base_lower: f64,
    pub base_upper: f64,
    pub gamma: Option<f64>,
    pub scarcity: Option<f64>,
    pub aleatoric: Option<f64>,
    pub epistemic: Option<f64>,
    pub slack: Option<f64>,
    pub y: Option<f64>,
    pub covered: Option<bool>,
}

/// Intervals for raw covariate rows, with coverage when targets are given.
pub fn predict_rows(
    bundle: &ModelBundle,
    calibration: &CalibrationFile,
    features: &Matrix,
    targets: Option<&[f64]>,
) -> Result<Vec<PredictionRow>, HarnessError> {
    bundle.check_features(features)?;
    let predictor = match calibration.method {
        Method::Cqr => MethodPredictor::Cqr(CqrPredictor::new(
            &bundle.model,
            calibration.levels,
            calibration.calibration.clone(),
        )),
        m => MethodPredictor::Credo(CredoPredictor::new(
            &bundle.model,
            calibration.levels,
            bundle
                .gamma_source(m)
                .ok_or_else(|| HarnessError::MissingGammaSource(m.to_string()))?,
            calibration.calibration.clone(),
        )),
    };
    let std = bundle.standardizer.apply(features)?;
    (0..std.n_rows())
        .map(|i| {
            let p = predictor.predict(std.row(i))?;
            let y = targets.map(|t| t[i]);
            Ok(PredictionRow {
                lower: p.lower,
                upper: p.upper,
                base_lower: p.base.lower,
                base_upper: p.base.upper,
                gamma: p.envelope.map(|e| e.gamma_used),
                scarcity: p.scarcity,
                aleatoric: p.decomposition.map(|d| d.aleatoric),
                epistemic: p.decomposition.map(|d| d.epistemic),
                slack: p.decomposition.map(|d| d.slack),
                y,
                covered: y.map(|y| p.interval().contains(y)),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::generate_scenario;

    #[test]
    fn bundle_pipeline_matches_direct_calibration() {
        let train = generate_scenario(2, 400, 1).unwrap();
        let cal = generate_scenario(2, 150, 2).unwrap();
        let test = generate_scenario(2, 100, 3).unwrap();
        let bundle = fit_bundle(&train, &BackendConfig::default(), Levels::default(), GammaConfig::default(), 7).unwrap();
        let json = serde_json::to_string(&bundle).unwrap();
        let bundle: ModelBundle = serde_json::from_str(&json).unwrap();
        for method in Method::ALL {
            let file = calibrate_bundle(&bundle, &cal, method).unwrap();
            let file: CalibrationFile = serde_json::from_str(&serde_json::to_string(&file).unwrap()).unwrap();
            let rows = predict_rows(&bundle, &file, test.features(), Some(test.targets())).unwrap();
            assert_eq!(rows.len(), 100);
            let tau = file.calibration.tau_hat;
            for r in &rows {
                assert!((r.lower - (r.base_lower - tau)).abs() < 1e-12);
                assert_eq!(r.covered, Some(r.lower <= r.y.unwrap() && r.y.unwrap() <= r.upper));
                assert_eq!(r.gamma.is_some(), method != Method::Cqr);
            }
        }
    }

    #[test]
    fn wrong_dimension_is_rejected() {
        let train = generate_scenario(1, 100, 1).unwrap();
        let bundle = fit_bundle(&train, &BackendConfig::default(), Levels::default(), GammaConfig::default(), 7).unwrap();
        let bad = Dataset::from_rows(&vec![vec![0.0, 1.0]; 10], vec![0.0; 10]).unwrap();
        assert!(calibrate_bundle(&bundle, &bad, Method::Credo).is_err());
    }
}
