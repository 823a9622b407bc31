//! Minibatch assembly: length bucketing, padding and loss masks.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::tokenizer::{TokenSeq, BOS, EOS, PAD};

/// A minibatch of encoded sentences (no BOS/EOS).
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub seqs: Vec<TokenSeq>,
}

/// Time-major padded decoder input/target grids.
#[derive(Clone, Debug)]
pub struct DecoderGrid {
    /// `steps × batch` inputs: BOS then the sentence.
    pub inputs: Vec<usize>,
    /// `steps × batch` targets: the sentence then EOS.
    pub targets: Vec<usize>,
    /// 1 where a target is real, 0 on padding.
    pub mask: Vec<bool>,
    pub steps: usize,
}

impl Batch {
    pub fn new(seqs: Vec<TokenSeq>) -> Self {
        Batch { seqs }
    }

    pub fn len(&self) -> usize {
        self.seqs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.seqs.is_empty()
    }

    /// Time-major encoder inputs (sentence + EOS, PAD-padded) and, for each
    /// row, the stacked index of its EOS step.
    pub fn encoder_grid(&self) -> (Vec<usize>, usize, Vec<usize>) {
        let b = self.len();
        let steps = self.seqs.iter().map(|s| s.len() + 1).max().unwrap_or(1);
        let mut ids = vec![PAD as usize; steps * b];
        let mut last = Vec::with_capacity(b);
        for (j, s) in self.seqs.iter().enumerate() {
            for (t, &tok) in s.iter().enumerate() {
                ids[t * b + j] = tok as usize;
            }
            ids[s.len() * b + j] = EOS as usize;
            last.push(s.len() * b + j);
        }
        (ids, steps, last)
    }

    pub fn decoder_grid(&self) -> DecoderGrid {
        let b = self.len();
        let steps = self.seqs.iter().map(|s| s.len() + 1).max().unwrap_or(1);
        let mut inputs = vec![PAD as usize; steps * b];
        let mut targets = vec![PAD as usize; steps * b];
        let mut mask = vec![false; steps * b];
        for (j, s) in self.seqs.iter().enumerate() {
            inputs[j] = BOS as usize;
            for (t, &tok) in s.iter().enumerate() {
                inputs[(t + 1) * b + j] = tok as usize;
                targets[t * b + j] = tok as usize;
                mask[t * b + j] = true;
            }
            targets[s.len() * b + j] = EOS as usize;
            mask[s.len() * b + j] = true;
        }
        DecoderGrid {
            inputs,
            targets,
            mask,
            steps,
        }
    }
}

/// Drops sentences longer than `max_len` tokens; returns the kept ones and
/// the number dropped.
pub fn filter_long(seqs: Vec<TokenSeq>, max_len: usize) -> (Vec<TokenSeq>, usize) {
    let before = seqs.len();
    let kept: Vec<TokenSeq> = seqs.into_iter().filter(|s| s.len() <= max_len).collect();
    let dropped = before - kept.len();
    (kept, dropped)
}

/// Endless, seeded stream of length-bucketed minibatches.
///
/// Each epoch reshuffles the corpus, sorts windows of 32 batches by length
/// so that batches hold similar lengths, and then shuffles the batch order.
pub struct BatchStream {
    corpus: Vec<TokenSeq>,
    batch_size: usize,
    queue: Vec<Vec<usize>>,
}

impl BatchStream {
    pub fn new(corpus: Vec<TokenSeq>, batch_size: usize) -> Self {
        assert!(!corpus.is_empty() && batch_size > 0);
        BatchStream {
            corpus,
            batch_size,
            queue: Vec::new(),
        }
    }

    fn refill(&mut self, rng: &mut impl Rng) {
        let mut order: Vec<usize> = (0..self.corpus.len()).collect();
        order.shuffle(rng);
        let window = self.batch_size * 32;
        let mut batches = Vec::new();
        for chunk in order.chunks_mut(window) {
            chunk.sort_by_key(|&i| self.corpus[i].len());
            batches.extend(chunk.chunks(self.batch_size).map(<[usize]>::to_vec));
        }
        batches.shuffle(rng);
        batches.reverse();
        self.queue = batches;
    }

    pub fn next_batch(&mut self, rng: &mut impl Rng) -> Batch {
        if self.queue.is_empty() {
            self.refill(rng);
        }
        let idx = self.queue.pop().expect("non-empty after refill");
        Batch::new(idx.into_iter().map(|i| self.corpus[i].clone()).collect())
    }
}
