use std::sync::atomic::{AtomicU64, Ordering};

use ltx_tensor::{Bindings, ParamStore, Real, Tape, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{
    argmax_rows, chunks, recurrent_masks, rows_of, sentence_nll, token_mean_weights, word_dropout,
    DecoderCore, DecoderDropout, Discriminator,
};
use crate::config::{ModelConfig, PosteriorKind, Regularizer};
use crate::data::Batch;
use crate::error::{Error, Result};
use crate::latent::{standard_normal, LatentCode};
use crate::nn::{Embedding, Linear, Lstm, LstmState};
use crate::tokenizer::TokenSeq;

const DISC_SEED_SALT: u64 = 0xD15C_0000_0000_0001;
const INFER_BATCH: usize = 128;

/// Encoder output on a tape: `mean` is μ, z or the unit direction
/// depending on the posterior; `log_var` is present for diagonal Gaussians.
#[derive(Clone, Copy, Debug)]
pub struct Encoded {
    pub mean: Var,
    pub log_var: Option<Var>,
}

/// The pieces of one training objective. `total` is what gets
/// differentiated; the rest are kept for logging.
#[derive(Clone, Copy, Debug)]
pub struct LossTerms {
    pub total: Var,
    pub recon: Var,
    pub kl: Option<Var>,
    pub adv: Option<Var>,
    pub bow: Option<Var>,
    /// The sampled latent batch fed to the decoder.
    pub z: Var,
}

/// LSTM encoder/decoder sentence autoencoder.
///
/// The latent code initializes the decoder state through a linear layer
/// and is also fed, through `dec.wz`, into every decoder step. Encoder and
/// decoder share the token embedding table.
#[derive(Debug)]
pub struct Autoencoder<T: Real> {
    config: ModelConfig,
    params: ParamStore<T>,
    enc: Lstm,
    head: Linear,
    dec: DecoderCore,
    init: Linear,
    bow: Option<Linear>,
    disc: Option<Discriminator>,
    encoder_calls: AtomicU64,
}

impl<T: Real> Clone for Autoencoder<T> {
    fn clone(&self) -> Self {
        Autoencoder {
            config: self.config.clone(),
            params: self.params.clone(),
            enc: self.enc.clone(),
            head: self.head.clone(),
            dec: self.dec.clone(),
            init: self.init.clone(),
            bow: self.bow.clone(),
            disc: self.disc.clone(),
            encoder_calls: AtomicU64::new(self.encoder_calls()),
        }
    }
}

impl<T: Real> Autoencoder<T> {
    /// Builds and randomly initializes a model. Discriminator weights come
    /// from a separate stream so the autoencoder weights depend only on
    /// `seed`, whether or not a discriminator exists.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let posterior = config
            .posterior()
            .ok_or_else(|| Error::Input("a language model is not an autoencoder".into()))?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let (v, e, h, d) = (
            config.vocab_size,
            config.embed_dim,
            config.lstm_units,
            config.latent_dim,
        );
        let embed = Embedding::new(&mut store, "embed", v, e, &mut rng)?;
        let enc = Lstm::new(&mut store, "enc", e, h, None, &mut rng)?;
        let head_out = if posterior == PosteriorKind::DiagGaussian { 2 * d } else { d };
        let head = Linear::new(&mut store, "head", h, head_out, &mut rng)?;
        let lstm = Lstm::new(&mut store, "dec", e, h, Some(d), &mut rng)?;
        let init = Linear::new(&mut store, "dec.init", d, 2 * h, &mut rng)?;
        let out = Linear::new(&mut store, "out", h, v, &mut rng)?;
        let bow = if config.use_bow_loss {
            Some(Linear::new(&mut store, "bow", d, v, &mut rng)?)
        } else {
            None
        };
        let disc = if config.kind.regularizer() == Regularizer::Adversarial {
            let mut drng = ChaCha8Rng::seed_from_u64(seed ^ DISC_SEED_SALT);
            Some(Discriminator::new(&mut store, d, &config.discriminator_layers, &mut drng)?)
        } else {
            None
        };
        Ok(Autoencoder {
            config,
            params: store,
            enc,
            head,
            dec: DecoderCore { embed, lstm, out },
            init,
            bow,
            disc,
            encoder_calls: AtomicU64::new(0),
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    pub fn posterior(&self) -> PosteriorKind {
        self.config.posterior().expect("autoencoders have a posterior")
    }

    pub fn discriminator(&self) -> Option<&Discriminator> {
        self.disc.as_ref()
    }

    /// How many encoder passes have run (one per encoded batch).
    pub fn encoder_calls(&self) -> u64 {
        self.encoder_calls.load(Ordering::Relaxed)
    }

    pub fn is_disc_param(name: &str) -> bool {
        name.starts_with("disc.")
    }

    /// Binds every parameter as a constant, for inference.
    pub fn bind_frozen(&self, tape: &mut Tape<T>) -> Bindings {
        self.params.bind(tape, |_| false)
    }

    /// Binds encoder/decoder parameters as trainable, discriminator frozen.
    pub fn bind_autoencoder(&self, tape: &mut Tape<T>) -> Bindings {
        self.params.bind(tape, |n| !Self::is_disc_param(n))
    }

    /// Binds discriminator parameters as trainable, the rest frozen.
    pub fn bind_discriminator(&self, tape: &mut Tape<T>) -> Bindings {
        self.params.bind(tape, Self::is_disc_param)
    }

    /// Encoder LSTM hidden state at each sentence's EOS step, `[B, H]`.
    fn final_state_tape(&self, tape: &mut Tape<T>, p: &Bindings, batch: &Batch) -> Result<Var> {
        if batch.is_empty() || batch.seqs.iter().any(Vec::is_empty) {
            return Err(Error::Input("cannot encode an empty sentence".into()));
        }
        self.encoder_calls.fetch_add(1, Ordering::Relaxed);
        let b = batch.len();
        let (ids, steps, last) = batch.encoder_grid();
        let x = self.dec.embed.lookup(tape, p, &ids)?;
        let xp = self.enc.project_inputs(tape, p, x)?;
        let hs = self.enc.unroll(tape, p, xp, steps, b, None, None, None)?;
        let all = tape.concat(&hs, 0)?;
        Ok(tape.gather_rows(all, &last)?)
    }

    pub fn encode_tape(&self, tape: &mut Tape<T>, p: &Bindings, batch: &Batch) -> Result<Encoded> {
        let h = self.final_state_tape(tape, p, batch)?;
        let out = self.head.forward(tape, p, h)?;
        let d = self.config.latent_dim;
        Ok(match self.posterior() {
            PosteriorKind::DiagGaussian => Encoded {
                mean: tape.slice(out, 1, 0, d)?,
                log_var: Some(tape.slice(out, 1, d, d)?),
            },
            PosteriorKind::Deterministic => Encoded {
                mean: out,
                log_var: None,
            },
            PosteriorKind::SphericalNoisy => Encoded {
                mean: tape.normalize_rows(out)?,
                log_var: None,
            },
        })
    }

    /// Reparameterized posterior sample on the tape. `sigma` is the
    /// spherical noise scale at the current step.
    pub fn sample_posterior_tape(
        &self,
        tape: &mut Tape<T>,
        enc: Encoded,
        sigma: f64,
        rng: &mut impl Rng,
    ) -> Result<Var> {
        let shape = tape.shape(enc.mean).to_vec();
        let n = shape.iter().product();
        match self.posterior() {
            PosteriorKind::Deterministic => Ok(enc.mean),
            PosteriorKind::DiagGaussian => {
                let lv = enc.log_var.expect("diagonal Gaussian has log σ²");
                let eps = standard_normal(rng, n).into_iter().map(T::from_f64_lossy).collect();
                let eps = tape.constant(shape, eps)?;
                let half = tape.scale(lv, T::from_f64_lossy(0.5))?;
                let std = tape.exp(half)?;
                let noise = tape.mul(std, eps)?;
                Ok(tape.add(enc.mean, noise)?)
            }
            PosteriorKind::SphericalNoisy => {
                if sigma == 0.0 {
                    return Ok(enc.mean);
                }
                let eps = standard_normal(rng, n)
                    .into_iter()
                    .map(|e| T::from_f64_lossy(sigma * e))
                    .collect();
                let eps = tape.constant(shape, eps)?;
                let z = tape.add(enc.mean, eps)?;
                if self.config.renormalize_after_noise {
                    Ok(tape.normalize_rows(z)?)
                } else {
                    Ok(z)
                }
            }
        }
    }

    fn decoder_start(&self, tape: &mut Tape<T>, p: &Bindings, z: Var) -> Result<(LstmState, Var)> {
        let h = self.config.lstm_units;
        let s = self.init.forward(tape, p, z)?;
        let state = LstmState {
            h: tape.slice(s, 1, 0, h)?,
            c: tape.slice(s, 1, h, h)?,
        };
        let wz = self.dec.lstm.wz.expect("decoder is conditioned on z");
        let cond = tape.matmul(z, p.var(wz))?;
        Ok((state, cond))
    }

    /// Teacher-forced decoder log-probabilities `[steps·B, V]` (time-major)
    /// for `batch` given latent codes `z` `[B, d]`, with word dropout and
    /// recurrent dropout drawn from `rng`.
    pub fn decode_tape(
        &self,
        tape: &mut Tape<T>,
        p: &Bindings,
        z: Var,
        batch: &Batch,
        dropout: DecoderDropout,
        rng: &mut impl Rng,
    ) -> Result<Var> {
        let b = batch.len();
        let mut grid = batch.decoder_grid();
        word_dropout(&mut grid.inputs, b, dropout.word_keep, rng);
        let masks = recurrent_masks(
            tape,
            rng,
            dropout.rnn_keep,
            b,
            grid.steps,
            self.config.embed_dim,
            self.config.lstm_units,
        )?;
        let (init, cond) = self.decoder_start(tape, p, z)?;
        self.dec
            .logprobs(tape, p, &grid.inputs, grid.steps, b, Some(init), Some(cond), masks)
    }

    /// Bag-of-words loss: a linear softmax head on z predicts every token of
    /// the sentence regardless of position. Per-sentence token mean,
    /// averaged over the batch.
    pub fn bow_loss_tape(&self, tape: &mut Tape<T>, p: &Bindings, z: Var, batch: &Batch) -> Result<Var> {
        let head = self
            .bow
            .as_ref()
            .ok_or_else(|| Error::Input("model has no bag-of-words head".into()))?;
        let logits = head.forward(tape, p, z)?;
        let lp = tape.log_softmax_rows(logits)?;
        let inv_b = 1.0 / batch.len() as f64;
        let (mut rows, mut targets, mut weights) = (Vec::new(), Vec::new(), Vec::new());
        for (j, s) in batch.seqs.iter().enumerate() {
            for &tok in s {
                rows.push(j);
                targets.push(tok as usize);
                weights.push(T::from_f64_lossy(inv_b / s.len() as f64));
            }
        }
        if rows.is_empty() {
            return Ok(tape.constant(vec![1], vec![T::zero()])?);
        }
        let picked = tape.gather_rows(lp, &rows)?;
        Ok(tape.nll(picked, &targets, &weights)?)
    }

    /// KL from the diagonal posterior to N(0, I), summed over dimensions and
    /// averaged over the batch.
    pub fn kl_tape(&self, tape: &mut Tape<T>, enc: Encoded) -> Result<Var> {
        let lv = enc
            .log_var
            .ok_or_else(|| Error::Input("KL needs a diagonal Gaussian posterior".into()))?;
        let b = tape.shape(enc.mean)[0];
        let var = tape.exp(lv)?;
        let m2 = tape.mul(enc.mean, enc.mean)?;
        let t = tape.add_scalar(lv, T::one())?;
        let t = tape.sub(t, m2)?;
        let t = tape.sub(t, var)?;
        let s = tape.sum(t)?;
        Ok(tape.scale(s, T::from_f64_lossy(-0.5 / b as f64))?)
    }

    /// Full autoencoder objective for one minibatch:
    /// reconstruction + β·KL (VAEs) or + λ·adversarial term (AAEs, λ > 0),
    /// plus the bag-of-words loss when enabled.
    pub fn training_loss(
        &self,
        tape: &mut Tape<T>,
        p: &Bindings,
        batch: &Batch,
        beta: f64,
        sigma: f64,
        rng: &mut impl Rng,
    ) -> Result<LossTerms> {
        let enc = self.encode_tape(tape, p, batch)?;
        let z = self.sample_posterior_tape(tape, enc, sigma, rng)?;
        let dropout = DecoderDropout {
            word_keep: self.config.word_dropout_keep,
            rnn_keep: self.config.rnn_dropout_keep,
        };
        let logp = self.decode_tape(tape, p, z, batch, dropout, rng)?;
        let grid = batch.decoder_grid();
        let w = token_mean_weights(&grid, batch);
        let recon = tape.nll(logp, &grid.targets, &w)?;
        let mut total = recon;
        let mut kl = None;
        let mut adv = None;
        match self.config.kind.regularizer() {
            Regularizer::Kl => {
                // Reconstruction is a per-token mean, so the per-sentence KL
                // is spread over the batch's mean target length to keep both
                // terms on the scale of one ELBO.
                let k = self.kl_tape(tape, enc)?;
                let weighted = tape.scale(k, T::from_f64_lossy(beta / mean_target_len(batch)))?;
                total = tape.add(total, weighted)?;
                kl = Some(k);
            }
            Regularizer::Adversarial if self.config.lambda > 0.0 => {
                let disc = self.disc.as_ref().expect("adversarial model has a discriminator");
                let logits = disc.logits(tape, p, z)?;
                let g = super::gen_reg_term(tape, logits)?;
                let weighted = tape.scale(g, T::from_f64_lossy(self.config.lambda))?;
                total = tape.add(total, weighted)?;
                adv = Some(g);
            }
            _ => {}
        }
        let mut bow = None;
        if self.bow.is_some() {
            let l = self.bow_loss_tape(tape, p, z, batch)?;
            total = tape.add(total, l)?;
            bow = Some(l);
        }
        Ok(LossTerms {
            total,
            recon,
            kl,
            adv,
            bow,
            z,
        })
    }

    /// Discriminator objective on prior samples and (detached) posterior samples.
    pub fn discriminator_loss_tape(
        &self,
        tape: &mut Tape<T>,
        p: &Bindings,
        z_prior: Var,
        z_post: Var,
    ) -> Result<Var> {
        let disc = self
            .disc
            .as_ref()
            .ok_or_else(|| Error::Input("model has no discriminator".into()))?;
        let lp = disc.logits(tape, p, z_prior)?;
        let lq = disc.logits(tape, p, z_post)?;
        super::disc_loss(tape, lp, lq)
    }

    /// `p_D(z)` for each row of `zs`.
    pub fn discriminator_prob(&self, zs: &[Vec<f64>]) -> Result<Vec<f64>> {
        let disc = self
            .disc
            .as_ref()
            .ok_or_else(|| Error::Input("model has no discriminator".into()))?;
        let mut tape = Tape::new();
        let p = self.bind_frozen(&mut tape);
        let z = self.latent_constant(&mut tape, zs)?;
        let l = disc.logits(&mut tape, &p, z)?;
        let probs = tape.sigmoid(l)?;
        Ok(tape.value(probs).iter().map(|v| v.as_f64()).collect())
    }

    fn latent_constant(&self, tape: &mut Tape<T>, zs: &[Vec<f64>]) -> Result<Var> {
        let d = self.config.latent_dim;
        if zs.is_empty() || zs.iter().any(|z| z.len() != d) {
            return Err(Error::Input(format!("latent vectors must have length {d}")));
        }
        let flat = zs.iter().flatten().map(|&x| T::from_f64_lossy(x)).collect();
        Ok(tape.constant(vec![zs.len(), d], flat)?)
    }

    fn codes_from(&self, tape: &Tape<T>, enc: Encoded, n: usize) -> Vec<LatentCode> {
        let d = self.config.latent_dim;
        let mean = tape.value(enc.mean);
        let lv = enc.log_var.map(|v| tape.value(v));
        (0..n)
            .map(|i| LatentCode {
                kind: self.posterior(),
                mean: mean[i * d..(i + 1) * d].iter().map(|v| v.as_f64()).collect(),
                log_var: lv.map(|l| l[i * d..(i + 1) * d].iter().map(|v| v.as_f64()).collect()),
            })
            .collect()
    }

    /// Encodes one sentence. A pure function of parameters and input.
    pub fn encode(&self, seq: &TokenSeq) -> Result<LatentCode> {
        Ok(self.encode_many(std::slice::from_ref(seq))?.remove(0))
    }

    pub fn encode_many(&self, seqs: &[TokenSeq]) -> Result<Vec<LatentCode>> {
        let mut out = Vec::with_capacity(seqs.len());
        for batch in chunks(seqs, INFER_BATCH) {
            let mut tape = Tape::new();
            let p = self.bind_frozen(&mut tape);
            let enc = self.encode_tape(&mut tape, &p, &batch)?;
            out.extend(self.codes_from(&tape, enc, batch.len()));
        }
        Ok(out)
    }

    /// Final encoder hidden states, one `lstm_units` vector per sentence.
    pub fn encoder_states(&self, seqs: &[TokenSeq]) -> Result<Vec<Vec<f64>>> {
        let hd = self.config.lstm_units;
        let mut out = Vec::with_capacity(seqs.len());
        for batch in chunks(seqs, INFER_BATCH) {
            let mut tape = Tape::new();
            let p = self.bind_frozen(&mut tape);
            let h = self.final_state_tape(&mut tape, &p, &batch)?;
            out.extend(tape.value(h).chunks(hd).map(|r| r.iter().map(|v| v.as_f64()).collect::<Vec<_>>()));
        }
        Ok(out)
    }

    /// Per-step log-probability rows over the vocabulary for `target`
    /// (followed by EOS) under teacher forcing from `z`.
    pub fn teacher_forced_logprobs(
        &self,
        z: &[f64],
        target: &TokenSeq,
        dropout: DecoderDropout,
        rng: &mut impl Rng,
    ) -> Result<Vec<Vec<f64>>> {
        let mut tape = Tape::new();
        let p = self.bind_frozen(&mut tape);
        let zv = self.latent_constant(&mut tape, &[z.to_vec()])?;
        let batch = Batch::new(vec![target.clone()]);
        let lp = self.decode_tape(&mut tape, &p, zv, &batch, dropout, rng)?;
        Ok(rows_of(tape.value(lp), self.config.vocab_size, target.len() + 1))
    }

    /// `−Σ_t log p(x_t | x_<t, z)` per sentence with `z` the posterior mean
    /// (no noise, no dropout).
    pub fn reconstruction_nll(&self, seqs: &[TokenSeq]) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(seqs.len());
        for batch in chunks(seqs, INFER_BATCH) {
            let mut tape = Tape::new();
            let p = self.bind_frozen(&mut tape);
            let enc = self.encode_tape(&mut tape, &p, &batch)?;
            let mut unused = ChaCha8Rng::seed_from_u64(0);
            let lp = self.decode_tape(&mut tape, &p, enc.mean, &batch, DecoderDropout::NONE, &mut unused)?;
            let grid = batch.decoder_grid();
            let nll = sentence_nll(tape.value(lp), self.config.vocab_size, &grid, batch.len());
            out.extend(nll.into_iter().map(|(s, _)| s));
        }
        Ok(out)
    }

    /// Greedy decoding from each latent vector: argmax at every step (ties
    /// to the lowest id), stopping at EOS or after `max_len` tokens.
    pub fn greedy_decode(&self, zs: &[Vec<f64>], max_len: usize) -> Result<Vec<TokenSeq>> {
        let mut out = Vec::with_capacity(zs.len());
        for chunk in zs.chunks(INFER_BATCH) {
            let mut tape = Tape::new();
            let p = self.bind_frozen(&mut tape);
            let z = self.latent_constant(&mut tape, chunk)?;
            let (init, cond) = self.decoder_start(&mut tape, &p, z)?;
            out.extend(self.dec.generate(
                &mut tape,
                &p,
                chunk.len(),
                Some(init),
                Some(cond),
                max_len,
                argmax_rows,
            )?);
        }
        Ok(out)
    }

    /// Overwrites one parameter's values; used to set up analytic cases in tests.
    pub fn set_param(&mut self, name: &str, values: Vec<T>) -> Result<()> {
        let id = self
            .params
            .id(name)
            .ok_or_else(|| Error::Input(format!("no parameter {name}")))?;
        let t = self.params.get_mut(id);
        if t.numel() != values.len() {
            return Err(Error::Mismatch(format!("{name}: expected {} values", t.numel())));
        }
        t.values_mut().copy_from_slice(&values);
        Ok(())
    }

    /// Replaces all parameter values from `store`, matching by name and shape.
    pub fn load_params(&mut self, store: &ParamStore<T>) -> Result<()> {
        load_by_name(&mut self.params, store)
    }
}

pub(crate) fn load_by_name<T: Real>(dst: &mut ParamStore<T>, src: &ParamStore<T>) -> Result<()> {
    if dst.len() != src.len() {
        return Err(Error::Mismatch(format!(
            "expected {} parameter tensors, found {}",
            dst.len(),
            src.len()
        )));
    }
    for id in dst.ids().collect::<Vec<_>>() {
        let name = dst.name(id).to_string();
        let sid = src
            .id(&name)
            .ok_or_else(|| Error::Mismatch(format!("missing tensor {name}")))?;
        let s: &Tensor<T> = src.get(sid);
        let d = dst.get_mut(id);
        if s.shape() != d.shape() {
            return Err(Error::Mismatch(format!(
                "tensor {name}: config implies shape {:?}, file has {:?}",
                d.shape(),
                s.shape()
            )));
        }
        d.values_mut().copy_from_slice(s.values());
    }
    Ok(())
}

/// Mean number of predicted tokens per sentence (words plus EOS).
pub fn mean_target_len(batch: &Batch) -> f64 {
    let total: usize = batch.seqs.iter().map(|s| s.len() + 1).sum();
    total as f64 / batch.seqs.len().max(1) as f64
}
