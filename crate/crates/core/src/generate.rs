//! Sampling, reconstruction, interpolation and embedding export.

use std::io::Write;

use ltx_tensor::Real;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::checkpoint::Model;
use crate::error::{Error, Result};
use crate::latent::{sample_posterior, sample_prior};
use crate::model::Autoencoder;
use crate::tokenizer::TokenSeq;

pub const DEFAULT_MAX_DECODE_LEN: usize = 64;
pub const DEFAULT_INTERPOLATION_STEPS: usize = 10;

/// Below this angle slerp degenerates and falls back to linear interpolation.
const SLERP_MIN_ANGLE: f64 = 1e-6;

/// What to generate.
#[derive(Clone, Debug, PartialEq)]
pub enum GenerationMode {
    /// `n` greedy decodes of prior samples (ancestral samples for a language model).
    Sample { n: usize },
    /// Greedy decode of each input's mean-of-posterior code.
    Reconstruct { inputs: Vec<TokenSeq> },
    /// `steps` greedy decodes along the slerp path between two encodings.
    Interpolate { from: TokenSeq, to: TokenSeq, steps: usize },
}

#[derive(Clone, Debug, PartialEq)]
pub struct GenerationRequest {
    pub mode: GenerationMode,
    pub max_decode_len: usize,
    pub seed: u64,
}

impl GenerationRequest {
    pub fn validate(&self) -> Result<()> {
        if self.max_decode_len == 0 {
            return Err(Error::Input("max_decode_len must be at least 1".into()));
        }
        match &self.mode {
            GenerationMode::Sample { n: 0 } => Err(Error::Input("n must be at least 1".into())),
            GenerationMode::Interpolate { steps: 0, .. } => Err(Error::Input("steps must be at least 1".into())),
            GenerationMode::Reconstruct { inputs } if inputs.is_empty() => {
                Err(Error::Input("nothing to reconstruct: input is empty".into()))
            }
            _ => Ok(()),
        }
    }
}

/// Runs a generation request against a model.
pub fn generate<T: Real>(model: &Model<T>, req: &GenerationRequest) -> Result<Vec<TokenSeq>> {
    req.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(req.seed);
    match (model, &req.mode) {
        (Model::Language(lm), GenerationMode::Sample { n }) => lm.sample(*n, req.max_decode_len, &mut rng),
        (Model::Language(_), _) => Err(Error::Input(
            "a language model only supports sample mode".into(),
        )),
        (Model::Autoencoder(ae), GenerationMode::Sample { n }) => {
            sample_from_prior(ae, *n, req.max_decode_len, &mut rng)
        }
        (Model::Autoencoder(ae), GenerationMode::Reconstruct { inputs }) => {
            reconstruct(ae, inputs, req.max_decode_len)
        }
        (Model::Autoencoder(ae), GenerationMode::Interpolate { from, to, steps }) => {
            interpolate(ae, from, to, *steps, req.max_decode_len)
        }
    }
}

/// Greedy decodes of `n` prior draws. The encoder is never run.
pub fn sample_from_prior<T: Real>(
    ae: &Autoencoder<T>,
    n: usize,
    max_len: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<TokenSeq>> {
    let prior = ae.config().prior().expect("autoencoders have a prior");
    let d = ae.config().latent_dim;
    let zs: Vec<Vec<f64>> = (0..n).map(|_| sample_prior(prior, d, rng)).collect();
    ae.greedy_decode(&zs, max_len)
}

/// Mean-of-posterior codes: μ, the deterministic z, or the noiseless unit
/// direction.
pub fn mean_codes<T: Real>(ae: &Autoencoder<T>, inputs: &[TokenSeq]) -> Result<Vec<Vec<f64>>> {
    if inputs.is_empty() {
        return Err(Error::Input("no input sentences".into()));
    }
    Ok(ae.encode_many(inputs)?.into_iter().map(|c| c.mean).collect())
}

/// Encode, take the posterior mean, decode greedily. Uses no randomness.
pub fn reconstruct<T: Real>(ae: &Autoencoder<T>, inputs: &[TokenSeq], max_len: usize) -> Result<Vec<TokenSeq>> {
    let zs = mean_codes(ae, inputs)?;
    ae.greedy_decode(&zs, max_len)
}

/// Spherical linear interpolation between `z0` and `z1`.
pub fn slerp(z0: &[f64], z1: &[f64], t: f64) -> Result<Vec<f64>> {
    if z0.len() != z1.len() {
        return Err(Error::Input(format!(
            "slerp endpoints differ in length ({} vs {})",
            z0.len(),
            z1.len()
        )));
    }
    let n0 = norm(z0);
    let n1 = norm(z1);
    if n0 == 0.0 || n1 == 0.0 {
        return Err(Error::Input("slerp is undefined for a zero vector".into()));
    }
    if t == 0.0 {
        return Ok(z0.to_vec());
    }
    if t == 1.0 {
        return Ok(z1.to_vec());
    }
    let cos = (dot(z0, z1) / (n0 * n1)).clamp(-1.0, 1.0);
    let omega = cos.acos();
    if omega > std::f64::consts::PI - SLERP_MIN_ANGLE {
        return Err(Error::Input("slerp is undefined for antipodal endpoints".into()));
    }
    let (a, b) = if omega < SLERP_MIN_ANGLE {
        (1.0 - t, t)
    } else {
        let s = omega.sin();
        (((1.0 - t) * omega).sin() / s, (t * omega).sin() / s)
    };
    Ok(z0.iter().zip(z1).map(|(x, y)| a * x + b * y).collect())
}

/// Greedy decodes at `steps` evenly spaced points of the slerp path between
/// the mean encodings of `from` and `to`, endpoints included.
pub fn interpolate<T: Real>(
    ae: &Autoencoder<T>,
    from: &TokenSeq,
    to: &TokenSeq,
    steps: usize,
    max_len: usize,
) -> Result<Vec<TokenSeq>> {
    let codes = mean_codes(ae, &[from.clone(), to.clone()])?;
    let zs = interpolation_path(&codes[0], &codes[1], steps)?;
    ae.greedy_decode(&zs, max_len)
}

pub fn interpolation_path(z0: &[f64], z1: &[f64], steps: usize) -> Result<Vec<Vec<f64>>> {
    if steps == 0 {
        return Err(Error::Input("steps must be at least 1".into()));
    }
    (0..steps)
        .map(|i| {
            let t = if steps == 1 { 0.0 } else { i as f64 / (steps - 1) as f64 };
            slerp(z0, z1, t)
        })
        .collect()
}

/// Writes `samples_per_sentence` posterior samples of each sentence's code
/// as CSV rows `sentence_index,sample_index,z0,…,z{d-1}`. `sigma` is the
/// spherical noise scale (ignored by other posteriors).
pub fn export_embeddings<T: Real>(
    ae: &Autoencoder<T>,
    inputs: &[TokenSeq],
    samples_per_sentence: usize,
    sigma: f64,
    seed: u64,
    mut out: impl Write,
) -> Result<usize> {
    let codes = ae.encode_many(inputs)?;
    let d = ae.config().latent_dim;
    let io = |e| Error::io("<embeddings>", e);
    let header: Vec<String> = ["sentence_index".to_string(), "sample_index".to_string()]
        .into_iter()
        .chain((0..d).map(|k| format!("z{k}")))
        .collect();
    writeln!(out, "{}", header.join(",")).map_err(io)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = 0;
    for (i, code) in codes.iter().enumerate() {
        for s in 0..samples_per_sentence {
            let z = sample_posterior(code, sigma, &mut rng);
            let cols: Vec<String> = z.iter().map(|v| v.to_string()).collect();
            writeln!(out, "{i},{s},{}", cols.join(",")).map_err(io)?;
            rows += 1;
        }
    }
    Ok(rows)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn slerp_endpoints_and_midpoint() {
        let a = [1.0, 0.0];
        let b = [0.0, 1.0];
        assert_eq!(slerp(&a, &b, 0.0).unwrap(), a);
        assert_eq!(slerp(&a, &b, 1.0).unwrap(), b);
        let m = slerp(&a, &b, 0.5).unwrap();
        let h = std::f64::consts::FRAC_1_SQRT_2;
        assert!((m[0] - h).abs() < 1e-12 && (m[1] - h).abs() < 1e-12);
    }

    #[test]
    fn slerp_rejects_zero_and_handles_parallel() {
        assert!(slerp(&[0.0, 0.0], &[1.0, 0.0], 0.5).is_err());
        let m = slerp(&[1.0, 0.0], &[1.0, 0.0], 0.3).unwrap();
        assert!((m[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn path_has_requested_length() {
        let p = interpolation_path(&[1.0, 0.0], &[0.0, 1.0], 10).unwrap();
        assert_eq!(p.len(), 10);
        assert_eq!(p[0], vec![1.0, 0.0]);
        assert_eq!(p[9], vec![0.0, 1.0]);
    }
}
