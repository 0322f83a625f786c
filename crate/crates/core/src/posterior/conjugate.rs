//! Gaussian linear model with a conjugate Normal-Inverse-Gamma prior.
//!
//! Model: `y = phi(x)' beta + eps`, `eps ~ N(0, sigma^2)`, with
//! `beta | sigma^2 ~ N(m0, sigma^2 / lambda I)` and `sigma^2 ~ IG(a0, b0)`.
//! `phi` prepends an intercept. The posterior is available in closed form:
//!
//! ```text
//! Lambda_n = X'X + lambda I
//! m_n      = Lambda_n^{-1} (X'y + lambda m0)
//! a_n      = a0 + n / 2
//! b_n      = b0 + (|y - X m_n|^2 + lambda |m_n - m0|^2) / 2
//! ```

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};

use super::basis::{BasisSpec, FeatureMap};
use super::{dot, EndpointDraws, Levels, PosteriorError, PosteriorModel};
use crate::data::{seeded_rng, Dataset, SeededRng};
use crate::stats::normal_quantile;

/// Normal-Inverse-Gamma prior hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NigPrior {
    /// Prior mean of the coefficients, intercept first. Empty means zeros.
    #[serde(default)]
    pub mean: Vec<f64>,
    /// Scalar prior precision `lambda` (relative to `sigma^2`).
    pub precision: f64,
    pub shape: f64,
    pub scale: f64,
}

impl Default for NigPrior {
    fn default() -> Self {
        Self {
            mean: Vec::new(),
            precision: 1e-3,
            shape: 1e-2,
            scale: 1e-2,
        }
    }
}

/// One posterior draw `(beta, sigma)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterDraw {
    pub coefficients: Vec<f64>,
    pub sigma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ConjugateBlrRepr {
    basis: FeatureMap,
    posterior_mean: Vec<f64>,
    posterior_precision: Vec<f64>,
    shape: f64,
    scale: f64,
    seed: u64,
    n_draws: usize,
}

/// Fitted conjugate posterior plus `B` stored parameter draws.
///
/// Serialized form keeps the closed-form posterior and the seed; the draws are
/// regenerated on load and are bit-identical to the originals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ConjugateBlrRepr", into = "ConjugateBlrRepr")]
pub struct ConjugateBlr {
    pub(crate) basis: FeatureMap,
    posterior_mean: Vec<f64>,
    posterior_precision: Vec<f64>,
    shape: f64,
    scale: f64,
    seed: u64,
    /// Upper Cholesky factor `L'` of the posterior precision, row-major.
    chol_upper: DMatrix<f64>,
    coefficients: Vec<f64>,
    sigmas: Vec<f64>,
}

impl From<ConjugateBlr> for ConjugateBlrRepr {
    fn from(m: ConjugateBlr) -> Self {
        ConjugateBlrRepr {
            n_draws: m.sigmas.len(),
            basis: m.basis,
            posterior_mean: m.posterior_mean,
            posterior_precision: m.posterior_precision,
            shape: m.shape,
            scale: m.scale,
            seed: m.seed,
        }
    }
}

impl TryFrom<ConjugateBlrRepr> for ConjugateBlr {
    type Error = PosteriorError;

    fn try_from(r: ConjugateBlrRepr) -> Result<Self, Self::Error> {
        let p = r.posterior_mean.len();
        if r.posterior_precision.len() != p * p || p != r.basis.output_dim() {
            return Err(PosteriorError::DimensionMismatch {
                expected: r.basis.output_dim(),
                got: p,
            });
        }
        ConjugateBlr::from_posterior(
            r.basis,
            r.posterior_mean,
            DMatrix::from_row_slice(p, p, &r.posterior_precision),
            r.shape,
            r.scale,
            r.n_draws,
            r.seed,
        )
    }
}

impl ConjugateBlr {
    fn from_posterior(
        basis: FeatureMap,
        posterior_mean: Vec<f64>,
        precision: DMatrix<f64>,
        shape: f64,
        scale: f64,
        n_draws: usize,
        seed: u64,
    ) -> Result<Self, PosteriorError> {
        if n_draws < 2 {
            return Err(PosteriorError::TooFewDraws(n_draws));
        }
        if !(shape > 0.0 && scale > 0.0) {
            return Err(PosteriorError::InvalidPrior(format!(
                "inverse-gamma shape {shape} and scale {scale} must be positive"
            )));
        }
        let p = posterior_mean.len();
        let chol = precision
            .clone()
            .cholesky()
            .ok_or(PosteriorError::NotPositiveDefinite)?;
        let chol_upper = chol.l().transpose();
        let mut model = ConjugateBlr {
            basis,
            posterior_mean,
            posterior_precision: (0..p)
                .flat_map(|i| (0..p).map(move |j| (i, j)))
                .map(|(i, j)| precision[(i, j)])
                .collect(),
            shape,
            scale,
            seed,
            chol_upper,
            coefficients: Vec::with_capacity(n_draws * p),
            sigmas: Vec::with_capacity(n_draws),
        };
        let mut rng = seeded_rng(seed);
        for _ in 0..n_draws {
            let draw = model.sample_parameters(&mut rng);
            model.coefficients.extend_from_slice(&draw.coefficients);
            model.sigmas.push(draw.sigma);
        }
        Ok(model)
    }

    /// Posterior mean of the coefficients, intercept first.
    pub fn posterior_mean(&self) -> &[f64] {
        &self.posterior_mean
    }

    /// Posterior inverse-gamma parameters `(a_n, b_n)` of `sigma^2`.
    pub fn noise_posterior(&self) -> (f64, f64) {
        (self.shape, self.scale)
    }

    pub fn basis(&self) -> &FeatureMap {
        &self.basis
    }

    pub fn n_draws(&self) -> usize {
        self.sigmas.len()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn draw(&self, b: usize) -> ParameterDraw {
        let p = self.posterior_mean.len();
        ParameterDraw {
            coefficients: self.coefficients[b * p..(b + 1) * p].to_vec(),
            sigma: self.sigmas[b],
        }
    }

    /// A fresh draw `(beta, sigma)` from the posterior.
    pub fn sample_parameters(&self, rng: &mut SeededRng) -> ParameterDraw {
        let p = self.posterior_mean.len();
        // Gamma(a_n, rate b_n) for the noise precision.
        let gamma = Gamma::new(self.shape, 1.0 / self.scale).expect("validated shape/scale");
        let noise_precision: f64 = gamma.sample(rng);
        let sigma = noise_precision.sqrt().recip();
        let z = DVector::from_fn(p, |_, _| rng.sample::<f64, _>(StandardNormal));
        let v = self
            .chol_upper
            .solve_upper_triangular(&z)
            .expect("cholesky factor has a positive diagonal");
        let coefficients = self
            .posterior_mean
            .iter()
            .zip(v.iter())
            .map(|(m, v)| m + sigma * v)
            .collect();
        ParameterDraw {
            coefficients,
            sigma,
        }
    }

    /// `count` draws of `Y` from the posterior predictive at `x`, each from a
    /// fresh parameter draw.
    pub fn predictive_samples(&self, x: &[f64], count: usize, seed: u64) -> Vec<f64> {
        let phi = self.basis.expand(x);
        let mut rng = seeded_rng(seed);
        (0..count)
            .map(|_| {
                let draw = self.sample_parameters(&mut rng);
                let eps: f64 = rng.sample(StandardNormal);
                dot(&phi, &draw.coefficients) + draw.sigma * eps
            })
            .collect()
    }

    pub(crate) fn endpoint_draws(
        &self,
        x: &[f64],
        levels: &Levels,
    ) -> Result<EndpointDraws, PosteriorError> {
        let (p_lo, p_hi) = levels.endpoint_probabilities();
        let (z_lo, z_hi) = (normal_quantile(p_lo), normal_quantile(p_hi));
        let phi = self.basis.expand(x);
        let p = phi.len();
        let mut q_lower = Vec::with_capacity(self.n_draws());
        let mut q_upper = Vec::with_capacity(self.n_draws());
        for (coefs, sigma) in self.coefficients.chunks_exact(p).zip(&self.sigmas) {
            let center = dot(&phi, coefs);
            q_lower.push(center + sigma * z_lo);
            q_upper.push(center + sigma * z_hi);
        }
        Ok(EndpointDraws {
            x: x.to_vec(),
            q_lower,
            q_upper,
        })
    }
}

/// Closed-form Normal-Inverse-Gamma posterior on `train`, followed by
/// `n_draws` seeded parameter draws.
pub fn fit_conjugate_blr(
    train: &Dataset,
    prior: &NigPrior,
    basis: BasisSpec,
    n_draws: usize,
    seed: u64,
) -> Result<PosteriorModel, PosteriorError> {
    if !(prior.precision > 0.0 && prior.shape > 0.0 && prior.scale > 0.0) {
        return Err(PosteriorError::InvalidPrior(format!(
            "precision {}, shape {} and scale {} must be positive",
            prior.precision, prior.shape, prior.scale
        )));
    }
    let map = FeatureMap::fit(basis, train.features());
    let p = map.output_dim();
    let n = train.len();
    if n <= map.n_covariates() {
        return Err(PosteriorError::InsufficientRows {
            rows: n,
            covariates: map.n_covariates(),
        });
    }
    let prior_mean = if prior.mean.is_empty() {
        vec![0.0; p]
    } else if prior.mean.len() == p {
        prior.mean.clone()
    } else {
        return Err(PosteriorError::InvalidPrior(format!(
            "prior mean has length {}, expected {p}",
            prior.mean.len()
        )));
    };

    let mut design = DMatrix::zeros(n, p);
    for i in 0..n {
        for (j, v) in map.expand(train.row(i)).into_iter().enumerate() {
            design[(i, j)] = v;
        }
    }
    let y = DVector::from_column_slice(train.targets());
    let m0 = DVector::from_column_slice(&prior_mean);
    let lambda = prior.precision;

    let precision = design.tr_mul(&design) + DMatrix::identity(p, p) * lambda;
    let rhs = design.tr_mul(&y) + &m0 * lambda;
    let chol = precision
        .clone()
        .cholesky()
        .ok_or(PosteriorError::NotPositiveDefinite)?;
    let mean = chol.solve(&rhs);

    let residual = &y - &design * &mean;
    let shift = &mean - &m0;
    let shape = prior.shape + n as f64 / 2.0;
    let scale = prior.scale + 0.5 * (residual.norm_squared() + lambda * shift.norm_squared());

    let model = ConjugateBlr::from_posterior(
        map,
        mean.iter().copied().collect(),
        precision,
        shape,
        scale,
        n_draws,
        seed,
    )?;
    Ok(PosteriorModel::ConjugateBlr(model))
}
