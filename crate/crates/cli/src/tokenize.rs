use ltx_core::kv::KeyValues;
use ltx_core::tokenizer::bpe_train;

use crate::error::CliResult;
use crate::files::{absolute, guard, read_sentences, write_echo, write_file};
use crate::TokenizerTrainArgs;

pub fn run(a: &TokenizerTrainArgs, force: bool) -> CliResult<()> {
    guard(&a.out, force)?;
    let corpus = read_sentences(&a.corpus)?;
    let vocab = bpe_train(&corpus, a.vocab_size)?;
    let tokens: usize = corpus.iter().map(|s| vocab.encode(s).len()).sum();
    write_file(&a.out, vocab.to_file_string())?;

    let mut echo = KeyValues::new();
    echo.set("corpus", absolute(&a.corpus).display());
    echo.set("vocab_size", a.vocab_size);
    echo.set("out", absolute(&a.out).display());
    write_echo(&a.out, &echo)?;

    println!("vocab size {}", vocab.len());
    println!("mean tokens/sentence {:.4}", tokens as f64 / corpus.len() as f64);
    println!("wrote {}", a.out.display());
    Ok(())
}
