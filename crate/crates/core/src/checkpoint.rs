//! Binary checkpoint persistence.
//!
//! Layout: magic `LTXB`, format version (u32 LE), a length-prefixed UTF-8
//! block of canonical `key=value` lines, a u64 tensor count, then one record
//! per tensor in name order: length-prefixed name, u32 rank, u64 extents and
//! row-major f32 values, all little-endian. Adam moments are stored as
//! tensors named `opt.ae.m.<param>` and `opt.ae.v.<param>`.

use std::collections::BTreeMap;
use std::path::Path;

use ltx_tensor::{Optimizer, ParamId, ParamStore, Real};

use crate::config::{read_model_and_train, ModelConfig, TrainSpec};
use crate::error::{Error, Result};
use crate::kv::KeyValues;
use crate::model::{Autoencoder, LanguageModel};

pub const MAGIC: &[u8; 4] = b"LTXB";
pub const FORMAT_VERSION: u32 = 1;

const META_KEYS: &[&str] = &["step", "vocab_hash", "vocab_path", "opt_ae_steps", "opt_disc_steps"];
const MOMENT_PREFIX_M: &str = "opt.ae.m.";
const MOMENT_PREFIX_V: &str = "opt.ae.v.";

/// Identifies the vocabulary a model was trained with.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct VocabRef {
    pub hash: String,
    pub path: String,
}

/// Either kind of trainable model.
#[derive(Clone, Debug)]
pub enum Model<T: Real> {
    Autoencoder(Autoencoder<T>),
    Language(LanguageModel<T>),
}

impl<T: Real> Model<T> {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        if config.kind.is_lm() {
            Ok(Model::Language(LanguageModel::new(config, seed)?))
        } else {
            Ok(Model::Autoencoder(Autoencoder::new(config, seed)?))
        }
    }

    pub fn config(&self) -> &ModelConfig {
        match self {
            Model::Autoencoder(m) => m.config(),
            Model::Language(m) => m.config(),
        }
    }

    pub fn params(&self) -> &ParamStore<T> {
        match self {
            Model::Autoencoder(m) => m.params(),
            Model::Language(m) => m.params(),
        }
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        match self {
            Model::Autoencoder(m) => m.params_mut(),
            Model::Language(m) => m.params_mut(),
        }
    }

    /// Parameters updated by the main (Adam) optimizer, in store order.
    pub fn main_param_ids(&self) -> Vec<ParamId> {
        let p = self.params();
        p.ids().filter(|&id| !Autoencoder::<T>::is_disc_param(p.name(id))).collect()
    }

    /// Discriminator parameters (empty for non-adversarial models).
    pub fn disc_param_ids(&self) -> Vec<ParamId> {
        let p = self.params();
        p.ids().filter(|&id| Autoencoder::<T>::is_disc_param(p.name(id))).collect()
    }

    pub fn as_autoencoder(&self) -> Result<&Autoencoder<T>> {
        match self {
            Model::Autoencoder(m) => Ok(m),
            Model::Language(_) => Err(Error::Input("checkpoint holds a language model, not an autoencoder".into())),
        }
    }

    pub fn as_language_model(&self) -> Result<&LanguageModel<T>> {
        match self {
            Model::Language(m) => Ok(m),
            Model::Autoencoder(_) => Err(Error::Input("checkpoint holds an autoencoder, not a language model".into())),
        }
    }
}

/// Everything needed to resume or use a trained model.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub model: Model<f32>,
    pub spec: TrainSpec,
    pub step: u64,
    pub ae_opt: Optimizer<f32>,
    pub disc_opt: Optimizer<f32>,
    pub vocab: VocabRef,
}

impl Checkpoint {
    /// A fresh, untrained checkpoint.
    pub fn init(config: ModelConfig, spec: TrainSpec, vocab: VocabRef) -> Result<Self> {
        Ok(Checkpoint {
            model: Model::new(config, spec.seed)?,
            ae_opt: Optimizer::adam(spec.ae_lr),
            disc_opt: Optimizer::sgd(spec.disc_lr),
            spec,
            step: 0,
            vocab,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        self.model.config()
    }

    /// The canonical key=value block stored in the file.
    pub fn config_kv(&self) -> KeyValues {
        let mut kv = KeyValues::new();
        self.model.config().write_kv(&mut kv);
        self.spec.write_kv(&mut kv);
        kv.set("step", self.step);
        kv.set("vocab_hash", &self.vocab.hash);
        kv.set("vocab_path", &self.vocab.path);
        kv.set("opt_ae_steps", self.ae_opt.steps());
        kv.set("opt_disc_steps", self.disc_opt.steps());
        kv
    }

    /// All named tensors in the file, sorted by name.
    pub fn named_tensors(&self) -> BTreeMap<String, (Vec<usize>, Vec<f32>)> {
        let params = self.model.params();
        let mut out: BTreeMap<String, (Vec<usize>, Vec<f32>)> = params
            .iter()
            .map(|(n, t)| (n.to_string(), (t.shape().to_vec(), t.values().to_vec())))
            .collect();
        let (m, v) = self.ae_opt.moments();
        for ((id, mi), vi) in self.model.main_param_ids().into_iter().zip(m).zip(v) {
            let name = params.name(id);
            let shape = params.get(id).shape().to_vec();
            out.insert(format!("{MOMENT_PREFIX_M}{name}"), (shape.clone(), mi.clone()));
            out.insert(format!("{MOMENT_PREFIX_V}{name}"), (shape, vi.clone()));
        }
        out
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        let cfg = self.config_kv().render();
        buf.extend_from_slice(&(cfg.len() as u64).to_le_bytes());
        buf.extend_from_slice(cfg.as_bytes());
        let tensors = self.named_tensors();
        buf.extend_from_slice(&(tensors.len() as u64).to_le_bytes());
        for (name, (shape, values)) in &tensors {
            buf.extend_from_slice(&(name.len() as u64).to_le_bytes());
            buf.extend_from_slice(name.as_bytes());
            buf.extend_from_slice(&(shape.len() as u32).to_le_bytes());
            for &e in shape {
                buf.extend_from_slice(&(e as u64).to_le_bytes());
            }
            for v in values {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        buf
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::Corrupt("not a checkpoint file (bad magic)".into()));
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(Error::Version(version));
        }
        let cfg_len = r.len()?;
        let cfg = std::str::from_utf8(r.take(cfg_len)?)
            .map_err(|_| Error::Corrupt("config block is not UTF-8".into()))?;
        let count = r.len()?;
        let mut tensors = BTreeMap::new();
        for _ in 0..count {
            let nlen = r.len()?;
            let name = std::str::from_utf8(r.take(nlen)?)
                .map_err(|_| Error::Corrupt("tensor name is not UTF-8".into()))?
                .to_string();
            let rank = r.u32()? as usize;
            let mut shape = Vec::with_capacity(rank.min(8));
            for _ in 0..rank {
                shape.push(r.len()?);
            }
            let n = shape
                .iter()
                .try_fold(1usize, |acc, &e| acc.checked_mul(e))
                .filter(|&n| n.checked_mul(4).is_some_and(|b| b <= r.remaining()))
                .ok_or_else(|| Error::Corrupt(format!("tensor {name} extends past end of file")))?;
            let values = r
                .take(n * 4)?
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            if tensors.insert(name.clone(), (shape, values)).is_some() {
                return Err(Error::Corrupt(format!("tensor {name} appears twice")));
            }
        }
        if r.remaining() != 0 {
            return Err(Error::Corrupt(format!("{} trailing bytes", r.remaining())));
        }
        let kv = KeyValues::parse(cfg).map_err(|e| Error::Corrupt(format!("config block: {e}")))?;
        Self::assemble(&kv, tensors)
    }

    fn assemble(kv: &KeyValues, mut tensors: BTreeMap<String, (Vec<usize>, Vec<f32>)>) -> Result<Self> {
        let (config, spec) = read_model_and_train(kv, META_KEYS)?;
        let meta = |k: &str| -> Result<&str> {
            kv.get(k).ok_or_else(|| Error::Corrupt(format!("config block lacks `{k}`")))
        };
        let num = |k: &str| -> Result<u64> {
            meta(k)?
                .parse()
                .map_err(|_| Error::Corrupt(format!("`{k}` is not an integer")))
        };
        let step = num("step")?;
        let ae_steps = num("opt_ae_steps")?;
        let disc_steps = num("opt_disc_steps")?;
        let vocab = VocabRef {
            hash: meta("vocab_hash")?.to_string(),
            path: meta("vocab_path")?.to_string(),
        };
        let mut model = Model::<f32>::new(config, 0)?;
        let store = model.params_mut();
        for id in store.ids().collect::<Vec<_>>() {
            let name = store.name(id).to_string();
            let (shape, values) = tensors
                .remove(&name)
                .ok_or_else(|| Error::Mismatch(format!("checkpoint lacks tensor {name}")))?;
            let t = store.get_mut(id);
            if t.shape() != shape.as_slice() {
                return Err(Error::Mismatch(format!(
                    "tensor {name}: config implies shape {:?}, file has {:?}",
                    t.shape(),
                    shape
                )));
            }
            t.values_mut().copy_from_slice(&values);
        }
        let mut ae_opt = Optimizer::adam(spec.ae_lr);
        let (mut m, mut v) = (Vec::new(), Vec::new());
        for id in model.main_param_ids() {
            let name = model.params().name(id).to_string();
            let want = model.params().get(id).shape().to_vec();
            for (prefix, out) in [(MOMENT_PREFIX_M, &mut m), (MOMENT_PREFIX_V, &mut v)] {
                if let Some((shape, values)) = tensors.remove(&format!("{prefix}{name}")) {
                    if shape != want {
                        return Err(Error::Mismatch(format!("moment for {name} has shape {shape:?}")));
                    }
                    out.push(values);
                }
            }
        }
        if let Some(extra) = tensors.keys().next() {
            return Err(Error::Mismatch(format!("unexpected tensor {extra}")));
        }
        let n_main = model.main_param_ids().len();
        let have_moments = !m.is_empty() || !v.is_empty();
        if have_moments && (m.len() != n_main || v.len() != n_main) {
            return Err(Error::Mismatch("optimizer moments are incomplete".into()));
        }
        ae_opt.restore(ae_steps, m, v)?;
        let mut disc_opt = Optimizer::sgd(spec.disc_lr);
        disc_opt.restore(disc_steps, Vec::new(), Vec::new())?;
        Ok(Checkpoint {
            model,
            spec,
            step,
            ae_opt,
            disc_opt,
            vocab,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if n > self.remaining() {
            return Err(Error::Corrupt("file is truncated".into()));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn len(&mut self) -> Result<usize> {
        let b = self.take(8)?;
        let mut a = [0u8; 8];
        a.copy_from_slice(b);
        usize::try_from(u64::from_le_bytes(a)).map_err(|_| Error::Corrupt("length overflows".into()))
    }
}
