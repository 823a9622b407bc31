//! Automatic evaluation: cross-entropies through language models, the
//! Fréchet embedding distance, BLEU-3, ROUGE-3 and reconstruction NLL.
//!
//! Everything here runs in `f64` regardless of the training precision.

use std::collections::HashMap;
use std::fmt;
use std::path::Path;

use ltx_tensor::Real;
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::checkpoint::{Checkpoint, Model, VocabRef};
use crate::error::{Error, Result};
use crate::generate::{reconstruct, sample_from_prior};
use crate::kv::KeyValues;
use crate::model::{Autoencoder, LanguageModel};
use crate::tokenizer::{TokenSeq, Vocab, RESERVED};
use crate::train::train_language_model;

/// Diagonal regularizer added to every fitted covariance.
pub const COV_EPS: f64 = 1e-6;
const SYMMETRY_TOL: f64 = 1e-9;

/// Mean and covariance of a set of embeddings.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianFit {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
    pub n: usize,
}

impl GaussianFit {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

/// Sample mean and `1/(n−1)` covariance plus `ε·I`.
pub fn gaussian_fit(points: &[Vec<f64>]) -> Result<GaussianFit> {
    let n = points.len();
    if n < 2 {
        return Err(Error::Input(format!("a Gaussian fit needs at least 2 points, got {n}")));
    }
    let d = points[0].len();
    if d == 0 || points.iter().any(|p| p.len() != d) {
        return Err(Error::Input("embeddings must share one non-zero dimension".into()));
    }
    let mut mean = DVector::zeros(d);
    for p in points {
        mean += DVector::from_column_slice(p);
    }
    mean /= n as f64;
    let mut cov = DMatrix::zeros(d, d);
    for p in points {
        let c = DVector::from_column_slice(p) - &mean;
        cov.ger(1.0, &c, &c, 1.0);
    }
    cov /= (n - 1) as f64;
    for i in 0..d {
        cov[(i, i)] += COV_EPS;
    }
    Ok(GaussianFit { mean, cov, n })
}

/// Principal square root of a symmetric positive semi-definite matrix via
/// the symmetric eigendecomposition. Small negative eigenvalues are treated
/// as zero.
pub fn matrix_sqrt_psd(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if !a.is_square() {
        return Err(Error::Input(format!("matrix is {}×{}, not square", a.nrows(), a.ncols())));
    }
    let scale = a.amax().max(1.0);
    let asym = (a - a.transpose()).amax();
    if asym > SYMMETRY_TOL * scale {
        return Err(Error::Input(format!("matrix is not symmetric (max |A−Aᵀ| = {asym:e})")));
    }
    let sym = (a + a.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let roots = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    let q = &eig.eigenvectors;
    let s = q * DMatrix::from_diagonal(&roots) * q.transpose();
    Ok((&s + s.transpose()) * 0.5)
}

/// Squared Fréchet distance `‖μ₁−μ₂‖² + Tr(Σ₁ + Σ₂ − 2(Σ₁^½ Σ₂ Σ₁^½)^½)`.
pub fn frechet_distance(f1: &GaussianFit, f2: &GaussianFit) -> Result<f64> {
    if f1.dim() != f2.dim() {
        return Err(Error::Input(format!(
            "cannot compare fits of dimension {} and {}",
            f1.dim(),
            f2.dim()
        )));
    }
    let diff = &f1.mean - &f2.mean;
    let s1 = matrix_sqrt_psd(&f1.cov)?;
    let inner = &s1 * &f2.cov * &s1;
    let inner = (&inner + inner.transpose()) * 0.5;
    let cross = matrix_sqrt_psd(&inner)?;
    let d = diff.dot(&diff) + f1.cov.trace() + f2.cov.trace() - 2.0 * cross.trace();
    Ok(d.max(0.0))
}

/// Sentence embedder used for the Fréchet distance.
pub enum Embedder<'a> {
    /// Mean of a language model's input token embeddings.
    LmMeanEmbedding { lm: &'a LanguageModel<f32>, id: String },
    /// Final encoder hidden state of a fixed reference autoencoder.
    EncoderState { ae: &'a Autoencoder<f32>, id: String },
}

impl<'a> Embedder<'a> {
    /// The default embedder: mean token embedding of the data LM. Its id
    /// names the exact checkpoint so FIDs are only compared like for like.
    pub fn from_data_lm(ckpt: &'a Checkpoint) -> Result<Self> {
        let lm = ckpt.model.as_language_model()?;
        Ok(Embedder::LmMeanEmbedding {
            lm,
            id: format!("lm-mean-embedding:{}", short_hash(&ckpt.to_bytes())),
        })
    }

    pub fn from_reference_autoencoder(ckpt: &'a Checkpoint) -> Result<Self> {
        let ae = ckpt.model.as_autoencoder()?;
        Ok(Embedder::EncoderState {
            ae,
            id: format!("encoder-state:{}", short_hash(&ckpt.to_bytes())),
        })
    }

    pub fn id(&self) -> &str {
        match self {
            Embedder::LmMeanEmbedding { id, .. } | Embedder::EncoderState { id, .. } => id,
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Embedder::LmMeanEmbedding { lm, .. } => lm.embed_dim(),
            Embedder::EncoderState { ae, .. } => ae.config().lstm_units,
        }
    }
}

fn short_hash(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
}

/// One vector per sentence. Empty sentences embed as the zero vector.
pub fn embed_sentences(embedder: &Embedder<'_>, seqs: &[TokenSeq]) -> Result<Vec<Vec<f64>>> {
    let d = embedder.dim();
    let empty = seqs.iter().filter(|s| s.is_empty()).count();
    if empty > 0 {
        log::warn!("{empty} empty sentences embedded as the zero vector");
    }
    match embedder {
        Embedder::LmMeanEmbedding { lm, .. } => Ok(seqs
            .iter()
            .map(|s| {
                let mut acc = vec![0.0; d];
                for row in lm.embedding_rows(s) {
                    acc.iter_mut().zip(row).for_each(|(a, r)| *a += r);
                }
                let n = s.len().max(1) as f64;
                acc.into_iter().map(|a| a / n).collect()
            })
            .collect()),
        Embedder::EncoderState { ae, .. } => {
            let nonempty: Vec<TokenSeq> = seqs.iter().filter(|s| !s.is_empty()).cloned().collect();
            let mut states = if nonempty.is_empty() {
                Vec::new()
            } else {
                ae.encoder_states(&nonempty)?
            }
            .into_iter();
            Ok(seqs
                .iter()
                .map(|s| {
                    if s.is_empty() {
                        vec![0.0; d]
                    } else {
                        states.next().expect("one state per non-empty sentence")
                    }
                })
                .collect())
        }
    }
}

/// Fréchet distance between the embeddings of two sentence sets.
pub fn fid(embedder: &Embedder<'_>, a: &[TokenSeq], b: &[TokenSeq]) -> Result<f64> {
    let fa = gaussian_fit(&embed_sentences(embedder, a)?)?;
    let fb = gaussian_fit(&embed_sentences(embedder, b)?)?;
    frechet_distance(&fa, &fb)
}

fn strip_special(s: &[u32]) -> Vec<u32> {
    s.iter().copied().filter(|&t| t as usize >= RESERVED || t == crate::tokenizer::UNK).collect()
}

fn ngram_counts(s: &[u32], n: usize) -> HashMap<&[u32], usize> {
    let mut m = HashMap::new();
    if s.len() >= n {
        for w in s.windows(n) {
            *m.entry(w).or_insert(0) += 1;
        }
    }
    m
}

fn clipped_matches(cand: &[u32], reference: &[u32], n: usize) -> usize {
    let r = ngram_counts(reference, n);
    ngram_counts(cand, n)
        .into_iter()
        .map(|(g, c)| c.min(r.get(g).copied().unwrap_or(0)))
        .sum()
}

/// Sentence BLEU over 1- to 3-grams with a brevity penalty. Orders with no
/// matches are smoothed by adding one to numerator and denominator.
/// PAD/BOS/EOS are ignored.
pub fn bleu3(candidate: &[u32], reference: &[u32]) -> f64 {
    let c = strip_special(candidate);
    let r = strip_special(reference);
    if c.is_empty() {
        return if r.is_empty() { 1.0 } else { 0.0 };
    }
    let mut log_sum = 0.0;
    for n in 1..=3 {
        let total = c.len().saturating_sub(n - 1);
        let matches = clipped_matches(&c, &r, n);
        let p = if matches == 0 {
            1.0 / (total + 1) as f64
        } else {
            matches as f64 / total as f64
        };
        log_sum += p.ln();
    }
    let bp = if c.len() < r.len() {
        (1.0 - r.len() as f64 / c.len() as f64).exp()
    } else {
        1.0
    };
    bp * (log_sum / 3.0).exp()
}

/// Trigram recall against the reference. References shorter than three
/// tokens use their longest available order. PAD/BOS/EOS are ignored.
pub fn rouge3(candidate: &[u32], reference: &[u32]) -> f64 {
    let c = strip_special(candidate);
    let r = strip_special(reference);
    if r.is_empty() {
        return if c.is_empty() { 1.0 } else { 0.0 };
    }
    let n = r.len().min(3);
    let total = r.len() - n + 1;
    clipped_matches(&c, &r, n) as f64 / total as f64
}

/// Runs `f` over `items` in up to `threads` contiguous chunks, preserving order.
fn par_map<I: Sync, O: Send>(items: &[I], threads: usize, f: impl Fn(&[I]) -> Result<Vec<O>> + Sync) -> Result<Vec<O>> {
    let threads = threads.max(1).min(items.len().max(1));
    if threads == 1 {
        return f(items);
    }
    let size = items.len().div_ceil(threads);
    let parts: Vec<Result<Vec<O>>> = std::thread::scope(|s| {
        let handles: Vec<_> = items.chunks(size).map(|c| s.spawn(|| f(c))).collect();
        handles.into_iter().map(|h| h.join().expect("metric worker panicked")).collect()
    });
    let mut out = Vec::with_capacity(items.len());
    for p in parts {
        out.extend(p?);
    }
    Ok(out)
}

/// Mean over sentences of `−Σ_t log p(x_t | x_<t, z(x))` with z the
/// posterior mean, teacher-forced and without dropout.
pub fn reconstruction_nll<T: Real>(ae: &Autoencoder<T>, test: &[TokenSeq], threads: usize) -> Result<f64> {
    if test.is_empty() {
        return Err(Error::Input("empty test set".into()));
    }
    let nll = par_map(test, threads, |c| ae.reconstruction_nll(c))?;
    Ok(nll.iter().sum::<f64>() / nll.len() as f64)
}

/// The unit BLEU-3 and ROUGE-3 count n-grams over.
#[derive(Clone, Copy, Debug, Default)]
pub enum OverlapBasis<'a> {
    /// The model's own subword tokens.
    #[default]
    Subword,
    /// Whitespace-separated words of the decoded text.
    Word(&'a Vocab),
}

impl OverlapBasis<'_> {
    pub fn name(&self) -> &'static str {
        match self {
            OverlapBasis::Subword => "subword",
            OverlapBasis::Word(_) => "word",
        }
    }

    /// Re-expresses a candidate/reference pair in this basis. Words get ids
    /// from a table shared by the pair, starting above the reserved range.
    pub fn pair(&self, candidate: &[u32], reference: &[u32]) -> Result<(Vec<u32>, Vec<u32>)> {
        let vocab = match self {
            OverlapBasis::Subword => return Ok((candidate.to_vec(), reference.to_vec())),
            OverlapBasis::Word(v) => v,
        };
        let mut table: HashMap<String, u32> = HashMap::new();
        let mut words = |s: &[u32]| -> Result<Vec<u32>> {
            let text = vocab.decode(s)?;
            Ok(text
                .split_whitespace()
                .map(|w| {
                    let next = (RESERVED + table.len()) as u32;
                    *table.entry(w.to_string()).or_insert(next)
                })
                .collect())
        };
        let c = words(candidate)?;
        let r = words(reference)?;
        Ok((c, r))
    }
}

/// Mean BLEU-3 and ROUGE-3 of greedy reconstructions against their inputs.
pub fn reconstruction_overlap<T: Real>(
    ae: &Autoencoder<T>,
    test: &[TokenSeq],
    max_len: usize,
    threads: usize,
    basis: OverlapBasis<'_>,
) -> Result<(f64, f64)> {
    let recon = par_map(test, threads, |c| reconstruct(ae, c, max_len))?;
    let n = test.len() as f64;
    let (mut bleu, mut rouge) = (0.0, 0.0);
    for (c, r) in recon.iter().zip(test) {
        let (c, r) = basis.pair(c, r)?;
        bleu += bleu3(&c, &r);
        rouge += rouge3(&c, &r);
    }
    Ok((bleu / n, rouge / n))
}

/// Pooled NLL per token (EOS included) of `seqs` under `lm`.
pub fn lm_cross_entropy(lm: &LanguageModel<f32>, seqs: &[TokenSeq], threads: usize) -> Result<f64> {
    if seqs.is_empty() {
        return Err(Error::Input("no sentences to score".into()));
    }
    let scores = par_map(seqs, threads, |c| lm.sequence_nll(c))?;
    let (nll, tokens) = scores
        .iter()
        .fold((0.0, 0usize), |(a, n), &(s, t)| (a + s, n + t));
    Ok(nll / tokens as f64)
}

fn check_vocab(expected: &VocabRef, found: &VocabRef, what: &str) -> Result<()> {
    if expected.hash != found.hash {
        return Err(Error::Mismatch(format!(
            "{what} uses vocabulary {}, but the data LM uses {}",
            found.hash, expected.hash
        )));
    }
    Ok(())
}

/// Reverse cross-entropy: mean NLL per token of model samples under a
/// language model trained on real data. Samples must share its vocabulary.
pub fn reverse_cross_entropy(data_lm: &Checkpoint, samples_vocab: &VocabRef, samples: &[TokenSeq], threads: usize) -> Result<f64> {
    check_vocab(&data_lm.vocab, samples_vocab, "the sample set")?;
    if samples.is_empty() {
        return Err(Error::Input("empty sample list".into()));
    }
    let lm = data_lm.model.as_language_model()?;
    let v = lm.config().vocab_size;
    if let Some(bad) = samples.iter().flatten().find(|&&t| t as usize >= v) {
        return Err(Error::Input(format!("token id {bad} is outside the data LM vocabulary")));
    }
    lm_cross_entropy(lm, samples, threads)
}

/// Forward cross-entropy: trains a surrogate LM on the model samples (same
/// architecture and protocol as `template`, seeded with `seed`, for
/// `steps` updates) and returns its mean NLL per token on `test`.
pub fn forward_cross_entropy(
    template: &Checkpoint,
    samples: &[TokenSeq],
    test: &[TokenSeq],
    steps: u64,
    seed: u64,
    threads: usize,
) -> Result<f64> {
    if samples.is_empty() || test.is_empty() {
        return Err(Error::Input("forward cross-entropy needs samples and a test set".into()));
    }
    let config = template.model.as_language_model()?.config().clone();
    let mut spec = template.spec.clone();
    spec.total_steps = steps;
    spec.seed = seed;
    spec.checkpoint_every = 0;
    let out = train_language_model(&spec, &config, samples, template.vocab.clone(), None)?;
    lm_cross_entropy(out.checkpoint.model.as_language_model()?, test, threads)
}

/// How an evaluation is run.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalSpec {
    pub n_samples: usize,
    pub seed: u64,
    pub max_decode_len: usize,
    /// Surrogate LM training steps; defaults to the data LM's step budget.
    pub surrogate_steps: Option<u64>,
    pub threads: usize,
}

impl Default for EvalSpec {
    fn default() -> Self {
        EvalSpec {
            n_samples: 2000,
            seed: 1,
            max_decode_len: crate::generate::DEFAULT_MAX_DECODE_LEN,
            surrogate_steps: None,
            threads: 1,
        }
    }
}

/// What is being evaluated: a trained model or the real data itself.
pub enum Subject<'a> {
    Model(&'a Checkpoint),
    RealData { sentences: &'a [TokenSeq], vocab: VocabRef },
}

/// One row of the results table. Reconstruction fields are absent for
/// subjects without an encoder (real data, language models).
#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub label: String,
    pub model: String,
    pub forward_ce: f64,
    pub reverse_ce: f64,
    pub fid: f64,
    pub recon_bleu3: Option<f64>,
    pub recon_rouge3: Option<f64>,
    pub recon_nll: Option<f64>,
    pub n_samples: usize,
    pub n_test: usize,
    pub embedder: String,
    pub token_basis: String,
    pub seed: u64,
}

pub const CSV_HEADER: &str = "label,model,forward_ce,reverse_ce,fid,bleu3,rouge3,nll,n_samples,n_test,embedder";

impl EvalReport {
    pub fn to_kv(&self) -> KeyValues {
        let mut kv = KeyValues::new();
        kv.set("label", &self.label);
        kv.set("model", &self.model);
        kv.set("forward_ce", self.forward_ce);
        kv.set("reverse_ce", self.reverse_ce);
        kv.set("fid", self.fid);
        if let Some(v) = self.recon_bleu3 {
            kv.set("recon_bleu3", v);
        }
        if let Some(v) = self.recon_rouge3 {
            kv.set("recon_rouge3", v);
        }
        if let Some(v) = self.recon_nll {
            kv.set("recon_nll", v);
        }
        kv.set("n_samples", self.n_samples);
        kv.set("n_test", self.n_test);
        kv.set("embedder", &self.embedder);
        kv.set("token_basis", &self.token_basis);
        kv.set("seed", self.seed);
        kv
    }

    pub fn from_kv(kv: &KeyValues) -> Result<Self> {
        let get = |k: &str| -> Result<&str> {
            kv.get(k).ok_or_else(|| Error::Corrupt(format!("report lacks `{k}`")))
        };
        fn num<T: std::str::FromStr>(k: &str, v: &str) -> Result<T> {
            v.parse().map_err(|_| Error::Corrupt(format!("report field `{k}` is malformed")))
        }
        let opt = |k: &str| -> Result<Option<f64>> { kv.get(k).map(|v| num(k, v)).transpose() };
        Ok(EvalReport {
            label: get("label")?.to_string(),
            model: get("model")?.to_string(),
            forward_ce: num("forward_ce", get("forward_ce")?)?,
            reverse_ce: num("reverse_ce", get("reverse_ce")?)?,
            fid: num("fid", get("fid")?)?,
            recon_bleu3: opt("recon_bleu3")?,
            recon_rouge3: opt("recon_rouge3")?,
            recon_nll: opt("recon_nll")?,
            n_samples: num("n_samples", get("n_samples")?)?,
            n_test: num("n_test", get("n_test")?)?,
            embedder: get("embedder")?.to_string(),
            token_basis: get("token_basis")?.to_string(),
            seed: num("seed", get("seed")?)?,
        })
    }

    pub fn csv_row(&self) -> String {
        let o = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        format!(
            "{},{},{},{},{},{},{},{},{},{},{}",
            self.label,
            self.model,
            self.forward_ce,
            self.reverse_ce,
            self.fid,
            o(self.recon_bleu3),
            o(self.recon_rouge3),
            o(self.recon_nll),
            self.n_samples,
            self.n_test,
            self.embedder
        )
    }

    pub fn is_finite(&self) -> bool {
        [self.forward_ce, self.reverse_ce, self.fid]
            .into_iter()
            .chain(self.recon_bleu3)
            .chain(self.recon_rouge3)
            .chain(self.recon_nll)
            .all(f64::is_finite)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_kv().render()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_kv(&KeyValues::parse(&text)?)
    }
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_kv().render())
    }
}

/// Samples `n` sentences from a trained model with the given seed.
pub fn model_samples(ckpt: &Checkpoint, n: usize, max_len: usize, seed: u64) -> Result<Vec<TokenSeq>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    match &ckpt.model {
        Model::Autoencoder(ae) => sample_from_prior(ae, n, max_len, &mut rng),
        Model::Language(lm) => lm.sample(n, max_len, &mut rng),
    }
}

/// Computes every metric for one subject against the test set, with
/// BLEU-3 and ROUGE-3 over subword tokens.
pub fn build_report(
    subject: Subject<'_>,
    label: &str,
    data_lm: &Checkpoint,
    test: &[TokenSeq],
    spec: &EvalSpec,
) -> Result<EvalReport> {
    build_report_on(subject, label, data_lm, test, spec, OverlapBasis::Subword)
}

/// [`build_report`] with a choice of n-gram basis for BLEU-3 and ROUGE-3.
pub fn build_report_on(
    subject: Subject<'_>,
    label: &str,
    data_lm: &Checkpoint,
    test: &[TokenSeq],
    spec: &EvalSpec,
    basis: OverlapBasis<'_>,
) -> Result<EvalReport> {
    if test.len() < 2 {
        return Err(Error::Input("the test set needs at least 2 sentences".into()));
    }
    if spec.n_samples < 2 {
        return Err(Error::Input("n_samples must be at least 2".into()));
    }
    let (vocab, model_name) = match &subject {
        Subject::Model(c) => (c.vocab.clone(), c.config().kind.to_string()),
        Subject::RealData { vocab, .. } => (vocab.clone(), "real-data".to_string()),
    };
    check_vocab(&data_lm.vocab, &vocab, "the evaluated model")?;
    let embedder = Embedder::from_data_lm(data_lm)?;

    let samples: Vec<TokenSeq> = match &subject {
        Subject::Model(c) => model_samples(c, spec.n_samples, spec.max_decode_len, spec.seed)?,
        Subject::RealData { sentences, .. } => sentences.iter().take(spec.n_samples).cloned().collect(),
    };
    let steps = spec.surrogate_steps.unwrap_or(data_lm.spec.total_steps);
    let forward_ce = forward_cross_entropy(data_lm, &samples, test, steps, spec.seed, spec.threads)?;
    let reverse_ce = reverse_cross_entropy(data_lm, &vocab, &samples, spec.threads)?;
    let fid_value = fid(&embedder, test, &samples)?;

    let (mut bleu, mut rouge, mut nll) = (None, None, None);
    if let Subject::Model(c) = &subject {
        if let Model::Autoencoder(ae) = &c.model {
            let nonempty: Vec<TokenSeq> = test.iter().filter(|s| !s.is_empty()).cloned().collect();
            let (b, r) = reconstruction_overlap(ae, &nonempty, spec.max_decode_len, spec.threads, basis)?;
            bleu = Some(b);
            rouge = Some(r);
            nll = Some(reconstruction_nll(ae, &nonempty, spec.threads)?);
        }
    }
    let report = EvalReport {
        label: label.to_string(),
        model: model_name,
        forward_ce,
        reverse_ce,
        fid: fid_value,
        recon_bleu3: bleu,
        recon_rouge3: rouge,
        recon_nll: nll,
        n_samples: samples.len(),
        n_test: test.len(),
        embedder: embedder.id().to_string(),
        token_basis: basis.name().to_string(),
        seed: spec.seed,
    };
    if !report.is_finite() {
        return Err(Error::Numeric(format!("report for {label} has non-finite values")));
    }
    Ok(report)
}
