//! Additive split of interval width into aleatoric, epistemic and slack parts.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::envelope::Envelope;
use crate::posterior::EndpointDraws;

#[derive(Debug, Error, PartialEq)]
pub enum DecompositionError {
    #[error("calibration quantile is infinite; the interval is the whole line")]
    InfiniteTau,
    #[error("no endpoint draws")]
    NoDraws,
}

/// `total = aleatoric + epistemic + slack`. `negative_epistemic` marks an
/// envelope narrower than the mean draw interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Decomposition {
    pub aleatoric: f64,
    pub epistemic: f64,
    pub slack: f64,
    pub total: f64,
    pub negative_epistemic: bool,
}

impl Decomposition {
    /// Epistemic share of the uncalibrated width, `U_E / (U_A + U_E)`.
    pub fn epistemic_fraction(&self) -> f64 {
        self.epistemic / (self.aleatoric + self.epistemic)
    }

    pub fn residual(&self) -> f64 {
        self.total - (self.aleatoric + self.epistemic + self.slack)
    }
}

/// Mean per-draw interval length.
pub fn aleatoric_width(draws: &EndpointDraws) -> f64 {
    let n = draws.len() as f64;
    draws
        .q_lower
        .iter()
        .zip(&draws.q_upper)
        .map(|(l, u)| u - l)
        .sum::<f64>()
        / n
}

pub fn decompose(
    env: &Envelope,
    draws: &EndpointDraws,
    tau_hat: f64,
) -> Result<Decomposition, DecompositionError> {
    if !tau_hat.is_finite() {
        return Err(DecompositionError::InfiniteTau);
    }
    if draws.is_empty() {
        return Err(DecompositionError::NoDraws);
    }
    let aleatoric = aleatoric_width(draws);
    let epistemic = env.width() - aleatoric;
    Ok(Decomposition {
        aleatoric,
        epistemic,
        slack: 2.0 * tau_hat,
        total: (env.upper + tau_hat) - (env.lower - tau_hat),
        negative_epistemic: epistemic < 0.0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envelope::trimmed_envelope;

    fn two_draws() -> EndpointDraws {
        EndpointDraws::new(vec![0.0], vec![0.0, 0.0], vec![1.0, 3.0]).unwrap()
    }

    #[test]
    fn hand_decomposition() {
        let d = two_draws();
        assert_eq!(aleatoric_width(&d), 2.0);
        let env = trimmed_envelope(&d, 1e-9).unwrap();
        assert!((env.upper - 3.0).abs() < 1e-6 && env.lower == 0.0);
        let dec = decompose(&env, &d, 0.5).unwrap();
        assert!((dec.epistemic - 1.0).abs() < 1e-6);
        assert_eq!(dec.slack, 1.0);
        assert!((dec.total - 4.0).abs() < 1e-6);
        assert!(dec.residual().abs() < 1e-12);
        assert!((dec.epistemic_fraction() - 1.0 / 3.0).abs() < 1e-6);
    }

    #[test]
    fn zero_spread_has_no_epistemic_part() {
        let d = EndpointDraws::new(vec![0.0], vec![-1.0; 5], vec![2.0; 5]).unwrap();
        let env = trimmed_envelope(&d, 0.3).unwrap();
        let dec = decompose(&env, &d, 0.0).unwrap();
        assert_eq!(dec.epistemic, 0.0);
        assert!(!dec.negative_epistemic);
    }

    #[test]
    fn heavy_trim_can_flag_negative_epistemic() {
        let d = EndpointDraws::new(vec![0.0], vec![0.0, 0.0, 0.0], vec![1.0, 1.0, 10.0]).unwrap();
        let env = trimmed_envelope(&d, 0.95).unwrap();
        let dec = decompose(&env, &d, 0.0).unwrap();
        assert!(dec.negative_epistemic && dec.epistemic < 0.0);
        assert!(dec.residual().abs() < 1e-12);
    }

    #[test]
    fn infinite_tau_is_an_error() {
        let d = two_draws();
        let env = trimmed_envelope(&d, 0.1).unwrap();
        assert_eq!(decompose(&env, &d, f64::INFINITY), Err(DecompositionError::InfiniteTau));
    }
}
