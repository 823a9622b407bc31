//! Training loops for the autoencoders and the language models.

use std::io::Write;

use ltx_tensor::{clip_grad_norm, Optimizer, ParamId, ParamStore, Tape};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::checkpoint::{Checkpoint, Model, VocabRef};
use crate::config::{ModelConfig, Regularizer, TrainSpec};
use crate::data::{filter_long, Batch, BatchStream};
use crate::error::{Error, Result};
use crate::latent::sample_prior;
use crate::model::Autoencoder;
use crate::schedule::{kl_beta, noise_sigma};
use crate::tokenizer::TokenSeq;

const STREAM_SALT: u64 = 0x5EED_0000_0000_00A1;
const DISC_STREAM_SALT: u64 = 0x5EED_0000_0000_00D1;

/// One row of the loss trace. `kl_or_adv` holds the KL term for VAEs and
/// the adversarial term for AAEs with λ > 0.
#[derive(Clone, Debug, PartialEq)]
pub struct TraceRow {
    pub step: u64,
    pub recon: f64,
    pub kl_or_adv: Option<f64>,
    pub disc: Option<f64>,
}

pub fn write_trace_csv(rows: &[TraceRow], mut w: impl Write) -> std::io::Result<()> {
    writeln!(w, "step,recon_nll,kl_or_adv,disc_loss")?;
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for r in rows {
        writeln!(w, "{},{},{},{}", r.step, r.recon, opt(r.kl_or_adv), opt(r.disc))?;
    }
    Ok(())
}

/// Result of a training run.
#[derive(Debug)]
pub struct TrainOutput {
    pub checkpoint: Checkpoint,
    pub trace: Vec<TraceRow>,
    /// Sentences dropped for exceeding `max_len`.
    pub dropped: usize,
}

/// Called with the in-progress checkpoint every `checkpoint_every` steps.
pub type CheckpointHook<'a> = &'a mut dyn FnMut(&Checkpoint) -> Result<()>;

/// Language models accept empty sentences (a lone EOS); autoencoders cannot
/// encode them, so they are skipped.
fn prepare_corpus(corpus: &[TokenSeq], spec: &TrainSpec, keep_empty: bool) -> Result<(Vec<TokenSeq>, usize)> {
    let usable: Vec<TokenSeq> = corpus.iter().filter(|s| keep_empty || !s.is_empty()).cloned().collect();
    let (kept, dropped) = filter_long(usable, spec.max_len);
    if dropped > 0 {
        log::info!("dropped {dropped} sentences longer than {} tokens", spec.max_len);
    }
    if kept.is_empty() {
        return Err(Error::Input("training corpus has no usable sentences".into()));
    }
    Ok((kept, dropped))
}

fn numeric_failure(what: &str, step: u64, batch: &Batch) -> Error {
    let mut dump = String::new();
    for (i, s) in batch.seqs.iter().enumerate() {
        dump.push_str(&format!("\n  [{i}] {s:?}"));
    }
    Error::Numeric(format!("non-finite {what} at step {step}; offending batch:{dump}"))
}

/// Non-finite values caught inside the tape become a numeric failure that
/// names the batch. Other errors pass through unchanged.
fn forward_failure(e: Error, step: u64, batch: &Batch) -> Error {
    match e {
        Error::Tensor(ltx_tensor::TensorError::NonFinite { .. }) | Error::Numeric(_) => {
            numeric_failure("forward value", step, batch)
        }
        other => other,
    }
}

fn apply_update(
    store: &mut ParamStore<f32>,
    ids: &[ParamId],
    opt: &mut Optimizer<f32>,
    clip: Option<f64>,
) -> Result<()> {
    let mut params = store.select_mut(ids);
    if let Some(c) = clip {
        clip_grad_norm(&mut params, c);
    }
    opt.step(&mut params)?;
    Ok(())
}

/// Trains an autoencoder variant for `spec.total_steps` minibatch updates.
///
/// Each step encodes a batch, samples the posterior, decodes with teacher
/// forcing and applies one Adam update to the encoder/decoder. Adversarial
/// variants then take one SGD step on the discriminator, using prior samples
/// from a separate random stream so that the encoder/decoder trajectory
/// does not depend on whether a discriminator exists when λ = 0.
pub fn train_autoencoder(
    spec: &TrainSpec,
    config: &ModelConfig,
    corpus: &[TokenSeq],
    vocab: VocabRef,
    hook: Option<CheckpointHook<'_>>,
) -> Result<TrainOutput> {
    if config.kind.is_lm() {
        return Err(Error::Input("use train_language_model for model=lm".into()));
    }
    run(spec, config, corpus, vocab, hook)
}

/// Trains a decoder-only LSTM language model with cross-entropy.
pub fn train_language_model(
    spec: &TrainSpec,
    config: &ModelConfig,
    corpus: &[TokenSeq],
    vocab: VocabRef,
    hook: Option<CheckpointHook<'_>>,
) -> Result<TrainOutput> {
    if !config.kind.is_lm() {
        return Err(Error::Input(format!("{} is not a language model", config.kind)));
    }
    run(spec, config, corpus, vocab, hook)
}

fn run(
    spec: &TrainSpec,
    config: &ModelConfig,
    corpus: &[TokenSeq],
    vocab: VocabRef,
    mut hook: Option<CheckpointHook<'_>>,
) -> Result<TrainOutput> {
    let problems = spec.problems();
    if !problems.is_empty() {
        return Err(Error::Config(problems));
    }
    if let Some(bad) = corpus.iter().flatten().find(|&&t| t as usize >= config.vocab_size) {
        return Err(Error::Input(format!("token id {bad} is outside the vocabulary")));
    }
    let (kept, dropped) = prepare_corpus(corpus, spec, config.kind.is_lm())?;
    let mut ckpt = Checkpoint::init(config.clone(), spec.clone(), vocab)?;
    let mut stream = BatchStream::new(kept, spec.batch_size);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ STREAM_SALT);
    let mut disc_rng = ChaCha8Rng::seed_from_u64(spec.seed ^ DISC_STREAM_SALT);
    let main_ids = ckpt.model.main_param_ids();
    let disc_ids = ckpt.model.disc_param_ids();
    let mut trace = Vec::with_capacity(spec.total_steps as usize);

    while ckpt.step < spec.total_steps {
        let t = ckpt.step;
        let batch = stream.next_batch(&mut rng);
        let row = match &mut ckpt.model {
            Model::Language(lm) => {
                let mut tape = Tape::new();
                let p = lm.bind(&mut tape, true);
                let loss = lm
                    .training_loss(&mut tape, &p, &batch, &mut rng)
                    .map_err(|e| forward_failure(e, t, &batch))?;
                let value = tape.value(loss)[0] as f64;
                if !value.is_finite() {
                    return Err(numeric_failure("loss", t, &batch));
                }
                let grads = tape.backward(loss).map_err(|_| numeric_failure("gradient", t, &batch))?;
                lm.params_mut().accumulate(&grads, &p)?;
                apply_update(lm.params_mut(), &main_ids, &mut ckpt.ae_opt, spec.clip_norm)?;
                TraceRow {
                    step: t,
                    recon: value,
                    kl_or_adv: None,
                    disc: None,
                }
            }
            Model::Autoencoder(ae) => {
                let cfg = ae.config().clone();
                let beta = kl_beta(t, spec.total_steps);
                let sigma = noise_sigma(cfg.noise_sigma, cfg.noise_decay, t);
                let mut tape = Tape::new();
                let p = ae.bind_autoencoder(&mut tape);
                let terms = ae
                    .training_loss(&mut tape, &p, &batch, beta, sigma, &mut rng)
                    .map_err(|e| forward_failure(e, t, &batch))?;
                let scalar = |v| tape.value(v)[0] as f64;
                let total = scalar(terms.total);
                if !total.is_finite() {
                    return Err(numeric_failure("loss", t, &batch));
                }
                let recon = scalar(terms.recon);
                let kl_or_adv = terms.kl.or(terms.adv).map(scalar);
                let z_shape = tape.shape(terms.z).to_vec();
                let z_post = tape.value(terms.z).to_vec();
                let grads = tape.backward(terms.total).map_err(|_| numeric_failure("gradient", t, &batch))?;
                ae.params_mut().accumulate(&grads, &p)?;
                apply_update(ae.params_mut(), &main_ids, &mut ckpt.ae_opt, spec.clip_norm)?;
                let disc = if cfg.kind.regularizer() == Regularizer::Adversarial {
                    Some(discriminator_step(
                        ae,
                        &disc_ids,
                        &mut ckpt.disc_opt,
                        spec.clip_norm,
                        z_shape,
                        z_post,
                        &mut disc_rng,
                    )
                    .map_err(|e| match e {
                        Error::Tensor(_) | Error::Numeric(_) => numeric_failure("discriminator loss", t, &batch),
                        other => other,
                    })?)
                } else {
                    None
                };
                TraceRow {
                    step: t,
                    recon,
                    kl_or_adv,
                    disc,
                }
            }
        };
        if spec.eval_every > 0 && t % spec.eval_every == 0 {
            log::info!(
                "step {t}: recon {:.4} reg {} disc {}",
                row.recon,
                row.kl_or_adv.map(|v| format!("{v:.4}")).unwrap_or("-".into()),
                row.disc.map(|v| format!("{v:.4}")).unwrap_or("-".into()),
            );
        }
        trace.push(row);
        ckpt.step += 1;
        if spec.checkpoint_every > 0 && ckpt.step % spec.checkpoint_every == 0 && ckpt.step < spec.total_steps {
            if let Some(h) = hook.as_mut() {
                h(&ckpt)?;
            }
        }
    }
    Ok(TrainOutput {
        checkpoint: ckpt,
        trace,
        dropped,
    })
}

fn discriminator_step(
    ae: &mut Autoencoder<f32>,
    ids: &[ParamId],
    opt: &mut Optimizer<f32>,
    clip: Option<f64>,
    z_shape: Vec<usize>,
    z_post: Vec<f32>,
    rng: &mut ChaCha8Rng,
) -> Result<f64> {
    let (b, d) = (z_shape[0], z_shape[1]);
    let prior = ae.config().prior().expect("autoencoders have a prior");
    let z_prior: Vec<f32> = (0..b)
        .flat_map(|_| sample_prior(prior, d, rng))
        .map(|x| x as f32)
        .collect();
    let mut tape = Tape::new();
    let p = ae.bind_discriminator(&mut tape);
    let zp = tape.constant(vec![b, d], z_prior)?;
    let zq = tape.constant(z_shape, z_post)?;
    let loss = ae.discriminator_loss_tape(&mut tape, &p, zp, zq)?;
    let value = tape.value(loss)[0] as f64;
    if !value.is_finite() {
        return Err(Error::Numeric("discriminator loss".into()));
    }
    let grads = tape.backward(loss)?;
    ae.params_mut().accumulate(&grads, &p)?;
    apply_update(ae.params_mut(), ids, opt, clip)?;
    Ok(value)
}
