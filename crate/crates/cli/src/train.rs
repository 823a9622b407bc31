use std::path::{Path, PathBuf};

use ltx_core::checkpoint::Checkpoint;
use ltx_core::config::{read_model_and_train, ModelConfig, TrainSpec};
use ltx_core::kv::KeyValues;
use ltx_core::tokenizer::Vocab;
use ltx_core::train::{train_autoencoder, train_language_model, write_trace_csv};

use crate::error::{CliError, CliResult};
use crate::files::{absolute, guard, read_sentences, vocab_ref, write_echo, write_file};
use crate::TrainArgs;

const PATH_KEYS: [&str; 3] = ["corpus", "vocab", "out_dir"];

/// A fully resolved training run.
#[derive(Debug)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainSpec,
    pub corpus: PathBuf,
    pub vocab_path: PathBuf,
    pub out_dir: PathBuf,
    pub vocab: Vocab,
}

impl RunConfig {
    pub fn to_kv(&self) -> KeyValues {
        let mut kv = KeyValues::new();
        self.model.write_kv(&mut kv);
        self.train.write_kv(&mut kv);
        kv.set("corpus", self.corpus.display());
        kv.set("vocab", self.vocab_path.display());
        kv.set("out_dir", self.out_dir.display());
        kv
    }
}

/// Relative paths in a config file are taken relative to the file; those
/// given with `--set` are taken relative to the working directory.
fn resolve(base: &Path, value: &str) -> PathBuf {
    let p = Path::new(value);
    absolute(&if p.is_absolute() { p.to_path_buf() } else { base.join(p) })
}

pub fn resolve_config(a: &TrainArgs) -> CliResult<RunConfig> {
    let text = std::fs::read_to_string(&a.config)
        .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", a.config.display())))?;
    let mut kv = KeyValues::parse(&text)?;
    let overrides = KeyValues::from_pairs(a.overrides.iter().map(String::as_str))?;
    kv.merge(&overrides);
    if let Some(seed) = a.seed {
        kv.set("seed", seed);
    }
    let base = a.config.parent().unwrap_or(Path::new("."));
    let mut problems = Vec::new();
    let mut paths = Vec::new();
    for key in PATH_KEYS {
        match kv.get(key) {
            Some(v) if !v.is_empty() => {
                let from = if overrides.get(key).is_some() { Path::new(".") } else { base };
                paths.push(resolve(from, v))
            }
            _ => {
                problems.push(format!("missing required key `{key}`"));
                paths.push(PathBuf::new());
            }
        }
    }
    let vocab = if paths[1].as_os_str().is_empty() {
        None
    } else {
        Some(Vocab::load(&paths[1]).map_err(|e| CliError::Data(format!("cannot load vocabulary: {e}")))?)
    };
    if let Some(v) = &vocab {
        match kv.get("vocab_size").map(str::parse::<usize>) {
            Some(Ok(n)) if n != v.len() => problems.push(format!(
                "vocab_size={n} disagrees with the vocabulary file ({} entries)",
                v.len()
            )),
            _ => kv.set("vocab_size", v.len()),
        }
    }
    let parsed = read_model_and_train(&kv, &PATH_KEYS);
    let (model, train) = match parsed {
        Ok(mt) => mt,
        Err(ltx_core::Error::Config(more)) => {
            problems.extend(more);
            return Err(ltx_core::Error::Config(problems).into());
        }
        Err(e) => return Err(e.into()),
    };
    if !problems.is_empty() {
        return Err(ltx_core::Error::Config(problems).into());
    }
    let [corpus, vocab_path, out_dir]: [PathBuf; 3] = paths.try_into().expect("three path keys");
    Ok(RunConfig {
        model,
        train,
        corpus,
        vocab_path,
        out_dir,
        vocab: vocab.expect("vocab key present when there are no problems"),
    })
}

pub fn run(a: &TrainArgs, force: bool) -> CliResult<()> {
    let rc = resolve_config(a)?;
    let final_path = rc.out_dir.join("model.ltxb");
    guard(&final_path, force)?;
    let sentences = read_sentences(&rc.corpus)?;
    let corpus: Vec<_> = sentences.iter().map(|s| rc.vocab.encode(s)).collect();
    let vref = vocab_ref(&rc.vocab, &rc.vocab_path);
    write_echo(&final_path, &rc.to_kv())?;

    let out_dir = rc.out_dir.clone();
    let mut save_periodic = |c: &Checkpoint| -> ltx_core::Result<()> {
        let p = out_dir.join(format!("step-{}.ltxb", c.step));
        log::info!("checkpoint {}", p.display());
        c.save(&p)
    };
    let hook = Some(&mut save_periodic as &mut dyn FnMut(&Checkpoint) -> ltx_core::Result<()>);
    let out = if rc.model.kind.is_lm() {
        train_language_model(&rc.train, &rc.model, &corpus, vref, hook)?
    } else {
        train_autoencoder(&rc.train, &rc.model, &corpus, vref, hook)?
    };
    if out.dropped > 0 {
        println!("dropped {} sentences longer than {} tokens", out.dropped, rc.train.max_len);
    }
    out.checkpoint.save(&final_path)?;
    let mut trace = Vec::new();
    write_trace_csv(&out.trace, &mut trace).expect("writing to memory");
    write_file(&rc.out_dir.join("trace.csv"), trace)?;
    println!("{}", final_path.display());
    Ok(())
}
