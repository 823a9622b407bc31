//! Model variants, hyperparameters and the training protocol.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::kv::{parse_list, render_list, KeyValues, KvReader};

/// Model variants, named as in the results tables.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ModelKind {
    AeGaussDet,
    AeSph,
    AaeGauss,
    AaeGaussDet,
    AaeSph,
    Vae,
    VaeBow,
    Lm,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PosteriorKind {
    DiagGaussian,
    Deterministic,
    SphericalNoisy,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PriorKind {
    Gaussian,
    SphereUniform,
}

/// What keeps the aggregated posterior close to the prior.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Regularizer {
    None,
    Kl,
    Adversarial,
}

impl ModelKind {
    pub const ALL: [ModelKind; 8] = [
        ModelKind::AeGaussDet,
        ModelKind::AeSph,
        ModelKind::AaeGauss,
        ModelKind::AaeGaussDet,
        ModelKind::AaeSph,
        ModelKind::Vae,
        ModelKind::VaeBow,
        ModelKind::Lm,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::AeGaussDet => "ae-gauss-det",
            ModelKind::AeSph => "ae-sph",
            ModelKind::AaeGauss => "aae-gauss",
            ModelKind::AaeGaussDet => "aae-gauss-det",
            ModelKind::AaeSph => "aae-sph",
            ModelKind::Vae => "vae",
            ModelKind::VaeBow => "vae-bow",
            ModelKind::Lm => "lm",
        }
    }

    /// `None` for the language model, which has no latent code.
    pub fn posterior(self) -> Option<PosteriorKind> {
        use ModelKind::*;
        match self {
            AeGaussDet | AaeGaussDet => Some(PosteriorKind::Deterministic),
            AeSph | AaeSph => Some(PosteriorKind::SphericalNoisy),
            AaeGauss | Vae | VaeBow => Some(PosteriorKind::DiagGaussian),
            Lm => None,
        }
    }

    pub fn prior(self) -> Option<PriorKind> {
        self.posterior().map(|p| match p {
            PosteriorKind::SphericalNoisy => PriorKind::SphereUniform,
            _ => PriorKind::Gaussian,
        })
    }

    pub fn regularizer(self) -> Regularizer {
        use ModelKind::*;
        match self {
            AaeGauss | AaeGaussDet | AaeSph => Regularizer::Adversarial,
            Vae | VaeBow => Regularizer::Kl,
            AeGaussDet | AeSph | Lm => Regularizer::None,
        }
    }

    pub fn is_lm(self) -> bool {
        self == ModelKind::Lm
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        ModelKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| {
                let names: Vec<_> = ModelKind::ALL.iter().map(|k| k.name()).collect();
                format!("unknown model `{s}` (expected one of {})", names.join(", "))
            })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum NoiseDecay {
    None,
    /// `σ_t = σ₀ · 2^(−t / half_life)`
    Exponential { half_life: f64 },
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub kind: ModelKind,
    pub lstm_units: usize,
    pub embed_dim: usize,
    pub latent_dim: usize,
    pub vocab_size: usize,
    pub discriminator_layers: Vec<usize>,
    pub lambda: f64,
    pub word_dropout_keep: f64,
    pub rnn_dropout_keep: f64,
    pub noise_sigma: f64,
    pub noise_decay: NoiseDecay,
    pub use_bow_loss: bool,
    /// Project noisy spherical codes back onto the sphere. Off by default.
    pub renormalize_after_noise: bool,
}

impl ModelConfig {
    /// Desk-scale defaults for `kind`: 128 LSTM units, 64-dim embeddings,
    /// 16-dim latent code.
    pub fn desk(kind: ModelKind, vocab_size: usize) -> Self {
        let spherical = kind.posterior() == Some(PosteriorKind::SphericalNoisy);
        ModelConfig {
            kind,
            lstm_units: 128,
            embed_dim: 64,
            latent_dim: 16,
            vocab_size,
            discriminator_layers: vec![300, 300, 300],
            lambda: if kind.regularizer() == Regularizer::Adversarial {
                20.0
            } else {
                0.0
            },
            word_dropout_keep: 1.0,
            rnn_dropout_keep: 0.4,
            noise_sigma: if spherical { 0.1 } else { 0.0 },
            noise_decay: NoiseDecay::None,
            use_bow_loss: kind == ModelKind::VaeBow,
            renormalize_after_noise: false,
        }
    }

    /// Full-scale architecture: 512 units, 128-dim embeddings, 100-dim code.
    pub fn full_scale(kind: ModelKind, vocab_size: usize) -> Self {
        ModelConfig {
            lstm_units: 512,
            embed_dim: 128,
            latent_dim: 100,
            ..Self::desk(kind, vocab_size)
        }
    }

    pub fn posterior(&self) -> Option<PosteriorKind> {
        self.kind.posterior()
    }

    pub fn prior(&self) -> Option<PriorKind> {
        self.kind.prior()
    }

    /// Every consistency problem, not just the first.
    pub fn problems(&self) -> Vec<String> {
        let mut p = Vec::new();
        let k = self.kind;
        for (name, v) in [
            ("lstm_units", self.lstm_units),
            ("embed_dim", self.embed_dim),
            ("vocab_size", self.vocab_size),
        ] {
            if v == 0 {
                p.push(format!("{name} must be positive"));
            }
        }
        if !k.is_lm() && self.latent_dim == 0 {
            p.push("latent_dim must be positive".into());
        }
        if self.vocab_size <= crate::tokenizer::RESERVED && self.vocab_size != 0 {
            p.push("vocab_size must exceed the reserved tokens".into());
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            p.push("lambda must be a finite value >= 0".into());
        }
        if self.lambda != 0.0 && k.regularizer() != Regularizer::Adversarial {
            p.push(format!("lambda is fixed at 0 for {k}; got {}", self.lambda));
        }
        for (name, v) in [
            ("word_dropout_keep", self.word_dropout_keep),
            ("rnn_dropout_keep", self.rnn_dropout_keep),
        ] {
            if !(v > 0.0 && v <= 1.0) {
                p.push(format!("{name} must be in (0, 1]; got {v}"));
            }
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            p.push("noise_sigma must be >= 0".into());
        }
        let spherical = k.posterior() == Some(PosteriorKind::SphericalNoisy);
        if self.noise_sigma != 0.0 && !spherical {
            p.push(format!("noise_sigma only applies to spherical models, not {k}"));
        }
        if self.renormalize_after_noise && !spherical {
            p.push(format!("renormalize_after_noise only applies to spherical models, not {k}"));
        }
        if let NoiseDecay::Exponential { half_life } = self.noise_decay {
            if half_life.is_nan() || half_life <= 0.0 {
                p.push("noise_half_life must be positive".into());
            }
            if !spherical {
                p.push(format!("noise_decay only applies to spherical models, not {k}"));
            }
        }
        if self.use_bow_loss && k.is_lm() {
            p.push("bow_loss needs a latent code".into());
        }
        if k.regularizer() == Regularizer::Adversarial && self.discriminator_layers.contains(&0) {
            p.push("discriminator_layers must be positive".into());
        }
        p
    }

    pub fn validate(&self) -> Result<()> {
        let p = self.problems();
        if p.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(p))
        }
    }

    pub fn write_kv(&self, kv: &mut KeyValues) {
        kv.set("model", self.kind);
        kv.set("lstm_units", self.lstm_units);
        kv.set("embed_dim", self.embed_dim);
        kv.set("latent_dim", self.latent_dim);
        kv.set("vocab_size", self.vocab_size);
        kv.set("disc_layers", render_list(&self.discriminator_layers));
        kv.set("lambda", self.lambda);
        kv.set("word_dropout_keep", self.word_dropout_keep);
        kv.set("rnn_dropout_keep", self.rnn_dropout_keep);
        kv.set("noise_sigma", self.noise_sigma);
        match self.noise_decay {
            NoiseDecay::None => kv.set("noise_decay", "none"),
            NoiseDecay::Exponential { half_life } => {
                kv.set("noise_decay", "exp");
                kv.set("noise_half_life", half_life);
            }
        }
        kv.set("bow_loss", self.use_bow_loss);
        kv.set("renormalize_after_noise", self.renormalize_after_noise);
    }

    /// Reads a model config. Missing keys take the desk defaults for the
    /// chosen `model=`; `total_steps` sizes the default noise half-life.
    pub fn read_kv(r: &mut KvReader<'_>, vocab_size: Option<usize>, total_steps: u64) -> Option<Self> {
        let kind: ModelKind = r.required("model")?;
        let vocab = r.opt("vocab_size").or(vocab_size).unwrap_or(0);
        let d = Self::desk(kind, vocab);
        let layers = match r.raw("disc_layers") {
            Some(s) => match parse_list::<usize>(s) {
                Ok(v) => v,
                Err(e) => {
                    r.error(format!("disc_layers: {e}"));
                    d.discriminator_layers.clone()
                }
            },
            None => d.discriminator_layers.clone(),
        };
        let half_life: Option<f64> = r.opt("noise_half_life");
        let noise_decay = match r.raw("noise_decay").unwrap_or("none") {
            "none" => NoiseDecay::None,
            "exp" => NoiseDecay::Exponential {
                half_life: half_life.unwrap_or(total_steps as f64 / 10.0),
            },
            other => {
                r.error(format!("noise_decay: expected none|exp, got `{other}`"));
                NoiseDecay::None
            }
        };
        let cfg = ModelConfig {
            kind,
            lstm_units: r.or("lstm_units", d.lstm_units),
            embed_dim: r.or("embed_dim", d.embed_dim),
            latent_dim: r.or("latent_dim", d.latent_dim),
            vocab_size: vocab,
            discriminator_layers: layers,
            lambda: r.or("lambda", d.lambda),
            word_dropout_keep: r.or("word_dropout_keep", d.word_dropout_keep),
            rnn_dropout_keep: r.or("rnn_dropout_keep", d.rnn_dropout_keep),
            noise_sigma: r.or("noise_sigma", d.noise_sigma),
            noise_decay,
            use_bow_loss: r.or("bow_loss", d.use_bow_loss),
            renormalize_after_noise: r.or("renormalize_after_noise", d.renormalize_after_noise),
        };
        for p in cfg.problems() {
            r.error(p);
        }
        Some(cfg)
    }
}

/// Training protocol. Optimizers are fixed: Adam for the autoencoder and
/// language models, plain SGD for the discriminator.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainSpec {
    pub total_steps: u64,
    pub batch_size: usize,
    pub ae_lr: f64,
    pub disc_lr: f64,
    pub seed: u64,
    pub checkpoint_every: u64,
    pub eval_every: u64,
    /// Global gradient-norm cap; `None` disables clipping.
    pub clip_norm: Option<f64>,
    pub max_len: usize,
}

impl TrainSpec {
    pub fn desk() -> Self {
        TrainSpec {
            total_steps: 20_000,
            batch_size: 32,
            ae_lr: 1e-3,
            disc_lr: 1e-4,
            seed: 1,
            checkpoint_every: 0,
            eval_every: 100,
            clip_norm: Some(5.0),
            max_len: 64,
        }
    }

    /// Full-scale budget: 500k steps at batch 128.
    pub fn full_scale() -> Self {
        TrainSpec {
            total_steps: 500_000,
            batch_size: 128,
            ..Self::desk()
        }
    }

    pub fn problems(&self) -> Vec<String> {
        let mut p = Vec::new();
        if self.batch_size == 0 {
            p.push("batch_size must be positive".into());
        }
        if [self.ae_lr, self.disc_lr].iter().any(|lr| lr.is_nan() || *lr <= 0.0) {
            p.push("learning rates must be positive".into());
        }
        if let Some(c) = self.clip_norm {
            if c.is_nan() || c <= 0.0 {
                p.push("clip_norm must be positive (or `none`)".into());
            }
        }
        if self.max_len == 0 {
            p.push("max_len must be positive".into());
        }
        p
    }

    pub fn write_kv(&self, kv: &mut KeyValues) {
        kv.set("total_steps", self.total_steps);
        kv.set("batch_size", self.batch_size);
        kv.set("ae_lr", self.ae_lr);
        kv.set("disc_lr", self.disc_lr);
        kv.set("seed", self.seed);
        kv.set("checkpoint_every", self.checkpoint_every);
        kv.set("eval_every", self.eval_every);
        match self.clip_norm {
            Some(c) => kv.set("clip_norm", c),
            None => kv.set("clip_norm", "none"),
        }
        kv.set("max_len", self.max_len);
    }

    pub fn read_kv(r: &mut KvReader<'_>) -> Self {
        let d = Self::desk();
        let clip_norm = match r.raw("clip_norm") {
            None => d.clip_norm,
            Some("none") => None,
            Some(s) => match s.parse::<f64>() {
                Ok(v) => Some(v),
                Err(e) => {
                    r.error(format!("clip_norm: {e}"));
                    d.clip_norm
                }
            },
        };
        let spec = TrainSpec {
            total_steps: r.or("total_steps", d.total_steps),
            batch_size: r.or("batch_size", d.batch_size),
            ae_lr: r.or("ae_lr", d.ae_lr),
            disc_lr: r.or("disc_lr", d.disc_lr),
            seed: r.or("seed", d.seed),
            checkpoint_every: r.or("checkpoint_every", d.checkpoint_every),
            eval_every: r.or("eval_every", d.eval_every),
            clip_norm,
            max_len: r.or("max_len", d.max_len),
        };
        for p in spec.problems() {
            r.error(p);
        }
        spec
    }
}

/// Reads model + training keys together, as stored in checkpoints and run configs.
pub fn read_model_and_train(kv: &KeyValues, extra_keys: &[&str]) -> Result<(ModelConfig, TrainSpec)> {
    let mut r = KvReader::new(kv);
    r.allow(extra_keys);
    let train = TrainSpec::read_kv(&mut r);
    let model = ModelConfig::read_kv(&mut r, None, train.total_steps);
    r.finish()?;
    Ok((model.expect("errors reported by finish"), train))
}
