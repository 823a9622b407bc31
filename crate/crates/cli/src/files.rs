//! Sentence files, overwrite protection and config echoes.

use std::path::{Path, PathBuf};

use ltx_core::checkpoint::{Checkpoint, VocabRef};
use ltx_core::kv::KeyValues;
use ltx_core::tokenizer::Vocab;

use crate::error::{CliError, CliResult};

/// Reads newline-delimited UTF-8 sentences. Tabs are rejected because no
/// output format quotes them.
pub fn read_sentences(path: &Path) -> CliResult<Vec<String>> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.contains('\t') {
            return Err(CliError::Data(format!(
                "{}:{}: sentences may not contain tab characters",
                path.display(),
                i + 1
            )));
        }
        out.push(line.to_string());
    }
    Ok(out)
}

/// Fails unless `path` is free or `force` is set.
pub fn guard(path: &Path, force: bool) -> CliResult<()> {
    if path.exists() && !force {
        return Err(CliError::Usage(format!(
            "{} already exists; pass --force to overwrite it",
            path.display()
        )));
    }
    Ok(())
}

pub fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> CliResult<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| ltx_core::Error::io(dir, e))?;
    }
    std::fs::write(path, contents).map_err(|e| ltx_core::Error::io(path, e).into())
}

pub fn write_lines(path: &Path, lines: &[String]) -> CliResult<()> {
    let mut text = String::new();
    for l in lines {
        text.push_str(l);
        text.push('\n');
    }
    write_file(path, text)
}

/// Where the resolved configuration of a run writing `output` is echoed.
pub fn echo_path(output: &Path) -> PathBuf {
    output.with_extension("resolved")
}

pub fn absolute(path: &Path) -> PathBuf {
    std::path::absolute(path).unwrap_or_else(|_| path.to_path_buf())
}

pub fn load_checkpoint(path: &Path) -> CliResult<Checkpoint> {
    Checkpoint::load(path).map_err(|e| match e {
        ltx_core::Error::Io { .. } => CliError::Data(format!("cannot read checkpoint {}: {e}", path.display())),
        other => other.into(),
    })
}

/// Loads the vocabulary a checkpoint was trained with, from `override_path`
/// or the path recorded in the checkpoint, and verifies its content hash.
pub fn vocab_for(reference: &VocabRef, override_path: Option<&Path>) -> CliResult<Vocab> {
    let path = override_path.map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from(&reference.path));
    let vocab = Vocab::load(&path)?;
    let hash = vocab.content_hash();
    if hash != reference.hash {
        return Err(ltx_core::Error::Mismatch(format!(
            "vocabulary {} has hash {hash}, but the checkpoint expects {}",
            path.display(),
            reference.hash
        ))
        .into());
    }
    Ok(vocab)
}

pub fn vocab_ref(vocab: &Vocab, path: &Path) -> VocabRef {
    VocabRef {
        hash: vocab.content_hash(),
        path: absolute(path).display().to_string(),
    }
}

pub fn write_echo(output: &Path, kv: &KeyValues) -> CliResult<()> {
    write_file(&echo_path(output), kv.render())
}
