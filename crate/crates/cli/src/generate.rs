use ltx_core::checkpoint::Model;
use ltx_core::generate::{export_embeddings, generate, GenerationMode, GenerationRequest};
use ltx_core::kv::KeyValues;
use ltx_core::schedule::noise_sigma;
use ltx_core::tokenizer::{TokenSeq, Vocab};

use crate::error::{CliError, CliResult};
use crate::files::{absolute, guard, load_checkpoint, read_sentences, vocab_for, write_echo, write_file, write_lines};
use crate::{GenerateArgs, Mode};

fn usage(msg: &str) -> CliError {
    CliError::Usage(msg.to_string())
}

/// Checks that exactly the arguments belonging to the chosen mode were given.
fn check_arguments(a: &GenerateArgs) -> CliResult<()> {
    let (n, input, pair) = (a.n.is_some(), a.input.is_some(), a.pair.is_some());
    match a.mode {
        Mode::Sample if !n => Err(usage("--mode sample needs --n")),
        Mode::Sample if input || pair => Err(usage("--mode sample takes neither --input nor --pair")),
        Mode::Reconstruct | Mode::Embeddings if !input => Err(usage("this mode needs --input")),
        Mode::Reconstruct | Mode::Embeddings if n || pair => Err(usage("this mode takes neither --n nor --pair")),
        Mode::Interpolate if input == pair => Err(usage("--mode interpolate needs exactly one of --pair or --input")),
        Mode::Interpolate if n => Err(usage("--mode interpolate does not take --n")),
        _ => Ok(()),
    }
}

fn encode_all(vocab: &Vocab, lines: &[String]) -> Vec<TokenSeq> {
    lines.iter().map(|s| vocab.encode(s)).collect()
}

pub fn run(a: &GenerateArgs, force: bool) -> CliResult<()> {
    check_arguments(a)?;
    guard(&a.out, force)?;
    let ckpt = load_checkpoint(&a.checkpoint)?;
    let vocab = vocab_for(&ckpt.vocab, a.vocab.as_deref())?;
    let inputs = match &a.input {
        Some(p) => read_sentences(p)?,
        None => a.pair.clone().unwrap_or_default(),
    };

    let mut echo = KeyValues::new();
    echo.set("checkpoint", absolute(&a.checkpoint).display());
    echo.set("mode", format!("{:?}", a.mode).to_lowercase());
    echo.set("seed", a.seed);
    echo.set("max_len", a.max_len);
    echo.set("out", absolute(&a.out).display());

    if a.mode == Mode::Embeddings {
        let Model::Autoencoder(ae) = &ckpt.model else {
            return Err(usage("embeddings need an autoencoder checkpoint"));
        };
        if inputs.is_empty() {
            return Err(CliError::Data("input file is empty".into()));
        }
        let cfg = ae.config();
        let sigma = noise_sigma(cfg.noise_sigma, cfg.noise_decay, ckpt.step);
        let mut buf = Vec::new();
        let rows = export_embeddings(ae, &encode_all(&vocab, &inputs), a.samples_per_sentence, sigma, a.seed, &mut buf)?;
        write_file(&a.out, buf)?;
        echo.set("samples_per_sentence", a.samples_per_sentence);
        write_echo(&a.out, &echo)?;
        println!("wrote {rows} embedding rows to {}", a.out.display());
        return Ok(());
    }

    let mode = match a.mode {
        Mode::Sample => GenerationMode::Sample { n: a.n.unwrap_or(0) },
        Mode::Reconstruct => {
            if inputs.is_empty() {
                return Err(CliError::Data("nothing to reconstruct: the input file is empty".into()));
            }
            GenerationMode::Reconstruct {
                inputs: encode_all(&vocab, &inputs),
            }
        }
        Mode::Interpolate => {
            if inputs.len() != 2 {
                return Err(CliError::Data(format!(
                    "interpolation needs exactly two sentences, got {}",
                    inputs.len()
                )));
            }
            echo.set("steps", a.steps);
            GenerationMode::Interpolate {
                from: vocab.encode(&inputs[0]),
                to: vocab.encode(&inputs[1]),
                steps: a.steps,
            }
        }
        Mode::Embeddings => unreachable!("handled above"),
    };
    if let Some(n) = a.n {
        echo.set("n", n);
    }
    let req = GenerationRequest {
        mode,
        max_decode_len: a.max_len,
        seed: a.seed,
    };
    let seqs = generate(&ckpt.model, &req)?;
    let lines = seqs.iter().map(|s| vocab.decode(s)).collect::<ltx_core::Result<Vec<_>>>()?;
    write_lines(&a.out, &lines)?;
    write_echo(&a.out, &echo)?;
    println!("wrote {} lines to {}", lines.len(), a.out.display());
    Ok(())
}
