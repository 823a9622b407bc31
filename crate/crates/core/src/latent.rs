//! Latent codes, priors and posterior sampling.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::config::{PosteriorKind, PriorKind};

/// Encoder output for one sentence.
///
/// `mean` is μ for a diagonal Gaussian, z itself for a deterministic
/// posterior, and the unit direction for the spherical posterior.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentCode {
    pub kind: PosteriorKind,
    pub mean: Vec<f64>,
    /// log σ², diagonal Gaussian only.
    pub log_var: Option<Vec<f64>>,
}

impl LatentCode {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

pub fn standard_normal(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

/// Draws one z from the prior.
pub fn sample_prior(kind: PriorKind, d: usize, rng: &mut impl Rng) -> Vec<f64> {
    let g = standard_normal(rng, d);
    match kind {
        PriorKind::Gaussian => g,
        PriorKind::SphereUniform => {
            let n = g.iter().map(|x| x * x).sum::<f64>().sqrt();
            g.into_iter().map(|x| x / n).collect()
        }
    }
}

/// Draws z given an encoding. `sigma` is the current noise scale for the
/// spherical posterior and is ignored otherwise.
pub fn sample_posterior(code: &LatentCode, sigma: f64, rng: &mut impl Rng) -> Vec<f64> {
    match code.kind {
        PosteriorKind::Deterministic => code.mean.clone(),
        PosteriorKind::DiagGaussian => {
            let eps = standard_normal(rng, code.dim());
            let lv = code.log_var.as_ref().expect("diagonal Gaussian code carries log σ²");
            code.mean
                .iter()
                .zip(lv)
                .zip(eps)
                .map(|((m, l), e)| m + (0.5 * l).exp() * e)
                .collect()
        }
        PosteriorKind::SphericalNoisy => {
            let eps = standard_normal(rng, code.dim());
            code.mean.iter().zip(eps).map(|(m, e)| m + sigma * e).collect()
        }
    }
}

/// `KL(N(μ, diag σ²) ‖ N(0, I))` in closed form.
pub fn kl_diag_gaussian(mu: &[f64], log_var: &[f64]) -> f64 {
    assert_eq!(mu.len(), log_var.len());
    -0.5 * mu
        .iter()
        .zip(log_var)
        .map(|(m, l)| 1.0 + l - m * m - l.exp())
        .sum::<f64>()
}
