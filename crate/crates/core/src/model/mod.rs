//! Sequence autoencoders, the discriminator and the RNN language model.
//!
//! All models are generic over the element type so the same graphs can be
//! trained in `f32` and gradient-checked in `f64`.

mod autoencoder;
mod discriminator;
mod lm;

pub use autoencoder::{Autoencoder, Encoded, LossTerms};
pub use discriminator::{disc_loss, discriminator_losses, gen_reg_term, Discriminator};
pub use lm::LanguageModel;

use ltx_tensor::{Bindings, Real, Tape, Var};
use rand::Rng;

use crate::data::{Batch, DecoderGrid};
use crate::error::Result;
use crate::nn::{Embedding, Linear, Lstm, LstmState};
use crate::tokenizer::{TokenSeq, BOS, EOS, PAD, UNK};

/// Dropout applied while decoding with teacher forcing.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DecoderDropout {
    /// Probability of keeping each decoder input token (others become UNK).
    pub word_keep: f64,
    /// Keep probability for the recurrent dropout masks on LSTM inputs and states.
    pub rnn_keep: f64,
}

impl DecoderDropout {
    pub const NONE: DecoderDropout = DecoderDropout {
        word_keep: 1.0,
        rnn_keep: 1.0,
    };
}

/// Replaces decoder inputs after BOS with UNK, each with probability `1 - keep`.
pub(crate) fn word_dropout(inputs: &mut [usize], batch: usize, keep: f64, rng: &mut impl Rng) {
    if keep >= 1.0 {
        return;
    }
    for id in inputs.iter_mut().skip(batch) {
        if *id != PAD as usize && rng.random::<f64>() >= keep {
            *id = UNK as usize;
        }
    }
}

fn bernoulli_mask<T: Real>(rng: &mut impl Rng, n: usize, keep: f64) -> Vec<T> {
    let on = T::from_f64_lossy(1.0 / keep);
    (0..n)
        .map(|_| if rng.random::<f64>() < keep { on } else { T::zero() })
        .collect()
}

/// Per-sequence masks for the LSTM inputs (tiled over time) and recurrent
/// state. Sampled once per sequence and reused at every step.
pub(crate) fn recurrent_masks<T: Real>(
    tape: &mut Tape<T>,
    rng: &mut impl Rng,
    keep: f64,
    batch: usize,
    steps: usize,
    input_dim: usize,
    hidden: usize,
) -> Result<(Option<Var>, Option<Var>)> {
    if keep >= 1.0 {
        return Ok((None, None));
    }
    let per_seq: Vec<T> = bernoulli_mask(rng, batch * input_dim, keep);
    let mut tiled = Vec::with_capacity(steps * per_seq.len());
    for _ in 0..steps {
        tiled.extend_from_slice(&per_seq);
    }
    let input = tape.constant(vec![steps * batch, input_dim], tiled)?;
    let state = tape.constant(vec![batch, hidden], bernoulli_mask(rng, batch * hidden, keep))?;
    Ok((Some(input), Some(state)))
}

/// The decoder body shared by the autoencoders and the language model.
#[derive(Clone, Debug)]
pub(crate) struct DecoderCore {
    pub embed: Embedding,
    pub lstm: Lstm,
    pub out: Linear,
}

impl DecoderCore {
    /// Teacher-forced log-probabilities `[steps·B, V]`, time-major.
    #[allow(clippy::too_many_arguments)]
    pub fn logprobs<T: Real>(
        &self,
        tape: &mut Tape<T>,
        p: &Bindings,
        inputs: &[usize],
        steps: usize,
        batch: usize,
        init: Option<LstmState>,
        cond: Option<Var>,
        masks: (Option<Var>, Option<Var>),
    ) -> Result<Var> {
        let mut x = self.embed.lookup(tape, p, inputs)?;
        if let Some(m) = masks.0 {
            x = tape.mul(x, m)?;
        }
        let xp = self.lstm.project_inputs(tape, p, x)?;
        let hs = self.lstm.unroll(tape, p, xp, steps, batch, init, cond, masks.1)?;
        let h = tape.concat(&hs, 0)?;
        let logits = self.out.forward(tape, p, h)?;
        Ok(tape.log_softmax_rows(logits)?)
    }

    /// Runs the decoder one token at a time from BOS. `choose` maps the
    /// `[B, V]` logits of a step to the next token of every row. Rows stop
    /// at EOS; outputs exclude EOS and never exceed `max_len` tokens.
    #[allow(clippy::too_many_arguments)]
    pub fn generate<T: Real>(
        &self,
        tape: &mut Tape<T>,
        p: &Bindings,
        batch: usize,
        init: Option<LstmState>,
        cond: Option<Var>,
        max_len: usize,
        mut choose: impl FnMut(&[T], usize) -> Vec<u32>,
    ) -> Result<Vec<TokenSeq>> {
        let hd = self.lstm.hidden;
        let (mut hv, mut cv) = match init {
            Some(s) => (tape.value(s.h).to_vec(), tape.value(s.c).to_vec()),
            None => (vec![T::zero(); batch * hd], vec![T::zero(); batch * hd]),
        };
        let mark = tape.len();
        let mut prev = vec![BOS as usize; batch];
        let mut done = vec![false; batch];
        let mut out = vec![Vec::new(); batch];
        for _ in 0..max_len {
            tape.truncate(mark);
            let h = tape.constant(vec![batch, hd], std::mem::take(&mut hv))?;
            let c = tape.constant(vec![batch, hd], std::mem::take(&mut cv))?;
            let x = self.embed.lookup(tape, p, &prev)?;
            let mut xp = self.lstm.project_inputs(tape, p, x)?;
            if let Some(cz) = cond {
                xp = tape.add(xp, cz)?;
            }
            let st = self.lstm.step(tape, p, xp, LstmState { h, c }, None)?;
            let logits = self.out.forward(tape, p, st.h)?;
            let next = choose(tape.value(logits), self.out.fan_out);
            for (j, &tok) in next.iter().enumerate() {
                if done[j] {
                    continue;
                }
                if tok == EOS {
                    done[j] = true;
                } else {
                    out[j].push(tok);
                }
            }
            if done.iter().all(|&d| d) {
                break;
            }
            prev = next.iter().map(|&t| t as usize).collect();
            hv = tape.value(st.h).to_vec();
            cv = tape.value(st.c).to_vec();
        }
        tape.truncate(mark);
        Ok(out)
    }
}

/// Index of the largest value of each row; ties go to the lowest index.
pub(crate) fn argmax_rows<T: Real>(values: &[T], cols: usize) -> Vec<u32> {
    values
        .chunks(cols)
        .map(|row| {
            let mut best = 0;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            best as u32
        })
        .collect()
}

/// Per-token loss weights: every real target of sentence `b` weighs
/// `1 / (len_b · B)`, so the weighted sum is a per-sentence token mean
/// averaged over the batch.
pub(crate) fn token_mean_weights<T: Real>(grid: &DecoderGrid, batch: &Batch) -> Vec<T> {
    let b = batch.len();
    let inv_b = 1.0 / b as f64;
    grid.mask
        .iter()
        .enumerate()
        .map(|(k, &m)| {
            if m {
                let len = batch.seqs[k % b].len() + 1;
                T::from_f64_lossy(inv_b / len as f64)
            } else {
                T::zero()
            }
        })
        .collect()
}

/// Sums the gold-token log-probabilities of each sentence from a
/// time-major `[steps·B, V]` log-prob matrix. Returns `(−Σ log p, tokens)`.
pub(crate) fn sentence_nll<T: Real>(logp: &[T], vocab: usize, grid: &DecoderGrid, batch: usize) -> Vec<(f64, usize)> {
    let mut out = vec![(0.0, 0usize); batch];
    for (k, (&t, &m)) in grid.targets.iter().zip(&grid.mask).enumerate() {
        if m {
            let e = &mut out[k % batch];
            e.0 -= logp[k * vocab + t].as_f64();
            e.1 += 1;
        }
    }
    out
}

/// Splits `seqs` into batches of at most `size` for inference.
pub(crate) fn chunks(seqs: &[TokenSeq], size: usize) -> impl Iterator<Item = Batch> + '_ {
    seqs.chunks(size).map(|c| Batch::new(c.to_vec()))
}

/// Copies log-probability rows for one sequence out of a time-major matrix.
pub(crate) fn rows_of<T: Real>(logp: &[T], vocab: usize, steps: usize) -> Vec<Vec<f64>> {
    (0..steps)
        .map(|t| logp[t * vocab..(t + 1) * vocab].iter().map(|v| v.as_f64()).collect())
        .collect()
}
