//! Checkpoint persistence: the documented byte layout, roundtrips and
//! every rejection path.

mod common;

use common::{random_seqs, rng, short_spec, toy_config, TOY_VOCAB};
use ltx_core::checkpoint::{Checkpoint, VocabRef};
use ltx_core::config::ModelKind;
use ltx_core::train::train_autoencoder;
use ltx_core::Error;

fn trained(kind: ModelKind) -> Checkpoint {
    let corpus = random_seqs(&mut rng(1), 20, TOY_VOCAB, 6);
    let vocab = VocabRef {
        hash: "abc123".into(),
        path: "/tmp/vocab.txt".into(),
    };
    train_autoencoder(&short_spec(5, 2), &toy_config(kind), &corpus, vocab, None)
        .unwrap()
        .checkpoint
}

/// An independent writer for the documented layout: magic, version, a
/// length-prefixed config block, then length-prefixed named tensors.
fn encode(version: u32, config: &str, tensors: &[(String, Vec<usize>, Vec<f32>)]) -> Vec<u8> {
    let mut b = b"LTXB".to_vec();
    b.extend(version.to_le_bytes());
    b.extend((config.len() as u64).to_le_bytes());
    b.extend(config.as_bytes());
    b.extend((tensors.len() as u64).to_le_bytes());
    for (name, shape, values) in tensors {
        b.extend((name.len() as u64).to_le_bytes());
        b.extend(name.as_bytes());
        b.extend((shape.len() as u32).to_le_bytes());
        for &e in shape {
            b.extend((e as u64).to_le_bytes());
        }
        for v in values {
            b.extend(v.to_le_bytes());
        }
    }
    b
}

type NamedTensor = (String, Vec<usize>, Vec<f32>);

fn parts(c: &Checkpoint) -> (String, Vec<NamedTensor>) {
    let tensors = c.named_tensors().into_iter().map(|(n, (s, v))| (n, s, v)).collect();
    (c.config_kv().render(), tensors)
}

#[test]
fn bytes_follow_the_documented_layout() {
    let c = trained(ModelKind::AaeSph);
    let (cfg, tensors) = parts(&c);
    assert!(tensors.iter().any(|(n, _, _)| n.starts_with("opt.ae.m.")));
    assert_eq!(c.to_bytes(), encode(1, &cfg, &tensors));
}

#[test]
fn save_load_save_is_byte_identical() {
    for kind in [ModelKind::Vae, ModelKind::AaeGauss, ModelKind::AeSph] {
        let c = trained(kind);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ltxb");
        c.save(&path).unwrap();
        let back = Checkpoint::load(&path).unwrap();
        assert_eq!(back.step, c.step);
        assert_eq!(back.vocab, c.vocab);
        assert_eq!(back.to_bytes(), c.to_bytes(), "{kind}");
    }
}

#[test]
fn every_truncation_is_rejected_as_corrupt() {
    let bytes = trained(ModelKind::AeGaussDet).to_bytes();
    let cuts: Vec<usize> = (0..64).chain((64..bytes.len()).step_by(97)).chain([bytes.len() - 1]).collect();
    for cut in cuts {
        match Checkpoint::from_bytes(&bytes[..cut]) {
            Err(Error::Corrupt(_)) => {}
            other => panic!("cut at {cut}: {other:?}"),
        }
    }
}

#[test]
fn unknown_version_and_bad_magic() {
    let c = trained(ModelKind::AeGaussDet);
    let (cfg, tensors) = parts(&c);
    assert!(matches!(Checkpoint::from_bytes(&encode(2, &cfg, &tensors)), Err(Error::Version(2))));
    let mut bad = c.to_bytes();
    bad[0] = b'X';
    assert!(matches!(Checkpoint::from_bytes(&bad), Err(Error::Corrupt(_))));
    let mut extra = c.to_bytes();
    extra.push(0);
    assert!(matches!(Checkpoint::from_bytes(&extra), Err(Error::Corrupt(_))));
}

#[test]
fn config_and_tensor_shapes_must_agree() {
    let c = trained(ModelKind::AeGaussDet);
    let (cfg, tensors) = parts(&c);
    // Claim a wider code than the tensors were built for.
    let wider = cfg.replace("latent_dim=4", "latent_dim=5");
    assert_ne!(wider, cfg);
    assert!(matches!(Checkpoint::from_bytes(&encode(1, &wider, &tensors)), Err(Error::Mismatch(_))));

    let missing: Vec<_> = tensors.iter().filter(|(n, _, _)| n != "head.b").cloned().collect();
    assert!(matches!(Checkpoint::from_bytes(&encode(1, &cfg, &missing)), Err(Error::Mismatch(_))));

    let mut unexpected = tensors.clone();
    unexpected.push(("zzz".into(), vec![1], vec![0.0]));
    assert!(matches!(Checkpoint::from_bytes(&encode(1, &cfg, &unexpected)), Err(Error::Mismatch(_))));

    let no_v: Vec<_> = tensors.iter().filter(|(n, _, _)| !n.starts_with("opt.ae.v.")).cloned().collect();
    assert!(matches!(Checkpoint::from_bytes(&encode(1, &cfg, &no_v)), Err(Error::Mismatch(_))));
}

#[test]
fn invalid_config_block_is_rejected() {
    let c = trained(ModelKind::AeGaussDet);
    let (cfg, tensors) = parts(&c);
    let bogus = format!("{cfg}bogus=1\n");
    assert!(Checkpoint::from_bytes(&encode(1, &bogus, &tensors)).is_err());
    let no_step: String = cfg.lines().filter(|l| !l.starts_with("step=")).map(|l| format!("{l}\n")).collect();
    assert!(matches!(Checkpoint::from_bytes(&encode(1, &no_step, &tensors)), Err(Error::Corrupt(_))));
}
