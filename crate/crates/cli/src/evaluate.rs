use std::path::Path;

use ltx_core::eval::{build_report_on, EvalSpec, OverlapBasis, Subject, CSV_HEADER};
use ltx_core::kv::KeyValues;

use crate::error::{CliError, CliResult};
use crate::files::{absolute, guard, load_checkpoint, read_sentences, vocab_for, write_echo, write_file};
use crate::{Basis, EvaluateArgs};

/// A checkpoint's file stem, or its directory name for the `model.ltxb`
/// that `ltx train` writes.
fn run_name(path: &Path) -> Option<String> {
    let stem = path.file_stem()?.to_string_lossy().into_owned();
    if stem != "model" {
        return Some(stem);
    }
    let dir = absolute(path).parent()?.file_name()?.to_string_lossy().into_owned();
    Some(dir)
}

pub fn run(a: &EvaluateArgs, force: bool, threads: usize) -> CliResult<()> {
    let csv_path = a.out.with_extension("csv");
    guard(&a.out, force)?;
    guard(&csv_path, force)?;
    let data_lm = load_checkpoint(&a.data_lm)?;
    if !data_lm.config().kind.is_lm() {
        return Err(CliError::Data(format!(
            "{} is a {} checkpoint, not a language model",
            a.data_lm.display(),
            data_lm.config().kind
        )));
    }
    let subject_ckpt = a.checkpoint.as_deref().map(load_checkpoint).transpose()?;
    if let Some(c) = &subject_ckpt {
        if c.vocab.hash != data_lm.vocab.hash {
            return Err(ltx_core::Error::Mismatch(format!(
                "the checkpoint uses vocabulary {} but the data LM uses {}",
                c.vocab.hash, data_lm.vocab.hash
            ))
            .into());
        }
    }
    let vocab = vocab_for(&data_lm.vocab, a.vocab.as_deref())?;
    let test: Vec<_> = read_sentences(&a.test)?.iter().map(|s| vocab.encode(s)).collect();
    let real: Option<Vec<_>> = a
        .real_data
        .as_deref()
        .map(|p| read_sentences(p).map(|l| l.iter().map(|s| vocab.encode(s)).collect()))
        .transpose()?;

    let spec = EvalSpec {
        n_samples: a.n_samples,
        seed: a.seed,
        max_decode_len: a.max_len,
        surrogate_steps: a.surrogate_steps,
        threads,
    };
    let (subject, default_label) = match (&subject_ckpt, &real) {
        (Some(c), _) => {
            let name = a.checkpoint.as_deref().and_then(run_name);
            (Subject::Model(c), name.unwrap_or_else(|| c.config().kind.to_string()))
        }
        (None, Some(sentences)) => (
            Subject::RealData {
                sentences,
                vocab: data_lm.vocab.clone(),
            },
            "real-data".to_string(),
        ),
        (None, None) => return Err(CliError::Usage("pass --checkpoint or --real-data".into())),
    };
    let label = a.label.clone().unwrap_or(default_label);
    if label.contains(',') || label.contains('\n') {
        return Err(CliError::Usage("--label may not contain commas or newlines".into()));
    }
    let basis = match a.overlap_basis {
        Basis::Subword => OverlapBasis::Subword,
        Basis::Word => OverlapBasis::Word(&vocab),
    };
    let report = build_report_on(subject, &label, &data_lm, &test, &spec, basis)?;

    write_file(&a.out, report.to_kv().render())?;
    write_file(&csv_path, format!("{CSV_HEADER}\n{}\n", report.csv_row()))?;
    let mut echo = KeyValues::new();
    if let Some(p) = &a.checkpoint {
        echo.set("checkpoint", absolute(p).display());
    }
    if let Some(p) = &a.real_data {
        echo.set("real_data", absolute(p).display());
    }
    echo.set("test", absolute(&a.test).display());
    echo.set("data_lm", absolute(&a.data_lm).display());
    echo.set("n_samples", spec.n_samples);
    echo.set("seed", spec.seed);
    echo.set("max_len", spec.max_decode_len);
    if let Some(s) = spec.surrogate_steps {
        echo.set("surrogate_steps", s);
    }
    echo.set("overlap_basis", basis.name());
    echo.set("label", &label);
    echo.set("out", absolute(&a.out).display());
    write_echo(&a.out, &echo)?;
    print!("{report}");
    Ok(())
}
