use ltx_tensor::{Bindings, ParamStore, Real, Tape, Var};
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::autoencoder::load_by_name;
use super::{chunks, recurrent_masks, rows_of, sentence_nll, token_mean_weights, DecoderCore, DecoderDropout};
use crate::config::ModelConfig;
use crate::data::Batch;
use crate::error::{Error, Result};
use crate::nn::{Embedding, Linear, Lstm};
use crate::tokenizer::TokenSeq;

const INFER_BATCH: usize = 128;

/// Decoder-only LSTM language model. Same architecture as the autoencoder
/// decoder, minus the latent conditioning.
#[derive(Clone, Debug)]
pub struct LanguageModel<T: Real> {
    config: ModelConfig,
    params: ParamStore<T>,
    core: DecoderCore,
}

impl<T: Real> LanguageModel<T> {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        if !config.kind.is_lm() {
            return Err(Error::Input(format!("{} is not a language model", config.kind)));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let (v, e, h) = (config.vocab_size, config.embed_dim, config.lstm_units);
        let embed = Embedding::new(&mut store, "embed", v, e, &mut rng)?;
        let lstm = Lstm::new(&mut store, "dec", e, h, None, &mut rng)?;
        let out = Linear::new(&mut store, "out", h, v, &mut rng)?;
        Ok(LanguageModel {
            config,
            params: store,
            core: DecoderCore { embed, lstm, out },
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

    pub fn load_params(&mut self, store: &ParamStore<T>) -> Result<()> {
        load_by_name(&mut self.params, store)
    }

    fn logprobs_tape(
        &self,
        tape: &mut Tape<T>,
        p: &Bindings,
        batch: &Batch,
        dropout: DecoderDropout,
        rng: &mut impl Rng,
    ) -> Result<Var> {
        let grid = batch.decoder_grid();
        let masks = recurrent_masks(
            tape,
            rng,
            dropout.rnn_keep,
            batch.len(),
            grid.steps,
            self.config.embed_dim,
            self.config.lstm_units,
        )?;
        self.core
            .logprobs(tape, p, &grid.inputs, grid.steps, batch.len(), None, None, masks)
    }

    /// Cross-entropy training loss (per-sentence token mean, batch mean)
    /// with recurrent dropout.
    pub fn training_loss(&self, tape: &mut Tape<T>, p: &Bindings, batch: &Batch, rng: &mut impl Rng) -> Result<Var> {
        let dropout = DecoderDropout {
            word_keep: 1.0,
            rnn_keep: self.config.rnn_dropout_keep,
        };
        let lp = self.logprobs_tape(tape, p, batch, dropout, rng)?;
        let grid = batch.decoder_grid();
        let w = token_mean_weights(&grid, batch);
        Ok(tape.nll(lp, &grid.targets, &w)?)
    }

    pub fn bind(&self, tape: &mut Tape<T>, trainable: bool) -> Bindings {
        self.params.bind(tape, |_| trainable)
    }

    /// `(−Σ log p, tokens)` per sentence, counting EOS as a token.
    pub fn sequence_nll(&self, seqs: &[TokenSeq]) -> Result<Vec<(f64, usize)>> {
        let mut out = Vec::with_capacity(seqs.len());
        let mut unused = ChaCha8Rng::seed_from_u64(0);
        for batch in chunks(seqs, INFER_BATCH) {
            let mut tape = Tape::new();
            let p = self.bind(&mut tape, false);
            let lp = self.logprobs_tape(&mut tape, &p, &batch, DecoderDropout::NONE, &mut unused)?;
            let grid = batch.decoder_grid();
            out.extend(sentence_nll(tape.value(lp), self.config.vocab_size, &grid, batch.len()));
        }
        Ok(out)
    }

    /// Per-step predictive distributions (log space) for one sentence,
    /// one row per target including EOS.
    pub fn logprobs(&self, seq: &TokenSeq) -> Result<Vec<Vec<f64>>> {
        let mut tape = Tape::new();
        let p = self.bind(&mut tape, false);
        let batch = Batch::new(vec![seq.clone()]);
        let mut unused = ChaCha8Rng::seed_from_u64(0);
        let lp = self.logprobs_tape(&mut tape, &p, &batch, DecoderDropout::NONE, &mut unused)?;
        Ok(rows_of(tape.value(lp), self.config.vocab_size, seq.len() + 1))
    }

    /// Ancestral samples: each token drawn from the full predictive distribution.
    pub fn sample(&self, n: usize, max_len: usize, rng: &mut impl Rng) -> Result<Vec<TokenSeq>> {
        let mut out = Vec::with_capacity(n);
        let mut left = n;
        while left > 0 {
            let b = left.min(INFER_BATCH);
            let mut tape = Tape::new();
            let p = self.bind(&mut tape, false);
            let choose = |logits: &[T], v: usize| -> Vec<u32> {
                logits
                    .chunks(v)
                    .map(|row| {
                        let max = row.iter().fold(f64::NEG_INFINITY, |m, x| m.max(x.as_f64()));
                        let w: Vec<f64> = row.iter().map(|x| (x.as_f64() - max).exp()).collect();
                        WeightedIndex::new(&w).expect("softmax weights are positive").sample(rng) as u32
                    })
                    .collect()
            };
            out.extend(self.core.generate(&mut tape, &p, b, None, None, max_len, choose)?);
            left -= b;
        }
        Ok(out)
    }

    /// The input embedding row of each token.
    pub fn embedding_rows(&self, ids: &[u32]) -> Vec<Vec<f64>> {
        let table = self.params.get(self.core.embed.table);
        let d = self.core.embed.dim;
        ids.iter()
            .map(|&i| {
                let i = i as usize;
                table.values()[i * d..(i + 1) * d].iter().map(|v| v.as_f64()).collect()
            })
            .collect()
    }

    pub fn embed_dim(&self) -> usize {
        self.core.embed.dim
    }
}
