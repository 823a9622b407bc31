//! Encoder, decoder, loss-term and discriminator properties of the models.

mod common;

use common::{random_seqs, rng, toy_config, TOY_VOCAB};
use ltx_core::config::{ModelKind, PosteriorKind};
use ltx_core::data::Batch;
use ltx_core::generate::{export_embeddings, generate, GenerationMode, GenerationRequest};
use ltx_core::checkpoint::Model;
use ltx_core::model::{discriminator_losses, Autoencoder, DecoderDropout, LanguageModel};
use ltx_core::tokenizer::{EOS, UNK};
use ltx_tensor::Tape;
use proptest::prelude::*;

fn zeroed(ae: &mut Autoencoder<f64>, name: &str) {
    let n = ae.params().get(ae.params().id(name).unwrap()).numel();
    ae.set_param(name, vec![0.0; n]).unwrap();
}

#[test]
fn spherical_directions_have_unit_norm() {
    for kind in [ModelKind::AeSph, ModelKind::AaeSph] {
        let ae = Autoencoder::<f64>::new(toy_config(kind), 1).unwrap();
        let seqs = random_seqs(&mut rng(2), 500, TOY_VOCAB, 12);
        for code in ae.encode_many(&seqs).unwrap() {
            let n: f64 = code.mean.iter().map(|x| x * x).sum::<f64>().sqrt();
            assert!((n - 1.0).abs() < 1e-6, "{kind}: norm {n}");
        }
    }
}

#[test]
fn deterministic_encoder_is_pure() {
    let ae = Autoencoder::<f32>::new(toy_config(ModelKind::AeGaussDet), 1).unwrap();
    let x = vec![5, 6, 7, 8];
    let a = ae.encode(&x).unwrap();
    let b = ae.encode(&x).unwrap();
    assert_eq!(a.kind, PosteriorKind::Deterministic);
    assert_eq!(a.mean, b.mean);
}

#[test]
fn zero_head_gives_standard_posterior() {
    let mut ae = Autoencoder::<f64>::new(toy_config(ModelKind::Vae), 1).unwrap();
    zeroed(&mut ae, "head.w");
    zeroed(&mut ae, "head.b");
    let code = ae.encode(&vec![4, 9, 11]).unwrap();
    assert!(code.mean.iter().all(|&m| m == 0.0));
    assert!(code.log_var.unwrap().iter().all(|&l| l == 0.0));
}

#[test]
fn empty_sentence_cannot_be_encoded() {
    let ae = Autoencoder::<f32>::new(toy_config(ModelKind::AeSph), 1).unwrap();
    assert!(ae.encode(&vec![]).is_err());
}

#[test]
fn teacher_forced_rows_are_distributions() {
    let ae = Autoencoder::<f64>::new(toy_config(ModelKind::Vae), 1).unwrap();
    let z = [0.3, -0.2, 0.9, 0.1];
    let drop = DecoderDropout {
        word_keep: 0.5,
        rnn_keep: 0.4,
    };
    let rows = ae.teacher_forced_logprobs(&z, &vec![4, 5, 6], drop, &mut rng(1)).unwrap();
    assert_eq!(rows.len(), 4);
    for r in rows {
        let s: f64 = r.iter().map(|l| l.exp()).sum();
        assert!((s - 1.0).abs() < 1e-5, "row sums to {s}");
    }
}

#[test]
fn full_word_keep_matches_no_dropout_bitwise() {
    let ae = Autoencoder::<f32>::new(toy_config(ModelKind::Vae), 1).unwrap();
    let z = [0.3, -0.2, 0.9, 0.1];
    let x = vec![4, 5, 6, 7];
    let none = ae.teacher_forced_logprobs(&z, &x, DecoderDropout::NONE, &mut rng(1)).unwrap();
    let keep_all = DecoderDropout {
        word_keep: 1.0,
        rnn_keep: 1.0,
    };
    let again = ae.teacher_forced_logprobs(&z, &x, keep_all, &mut rng(77)).unwrap();
    assert_eq!(none, again);
}

#[test]
fn vanishing_word_keep_turns_inputs_into_unk() {
    // With every input after BOS replaced by UNK, the decoder cannot tell
    // two targets of the same length apart: their log-prob rows coincide.
    let ae = Autoencoder::<f64>::new(toy_config(ModelKind::Vae), 1).unwrap();
    let z = [0.1, 0.2, -0.3, 0.4];
    let drop = DecoderDropout {
        word_keep: 1e-12,
        rnn_keep: 1.0,
    };
    let a = ae.teacher_forced_logprobs(&z, &vec![4, 5, 6], drop, &mut rng(3)).unwrap();
    let b = ae.teacher_forced_logprobs(&z, &vec![9, 10, 11], drop, &mut rng(3)).unwrap();
    assert_eq!(a, b);
    let unk = ae.teacher_forced_logprobs(&z, &vec![UNK, UNK, UNK], DecoderDropout::NONE, &mut rng(3)).unwrap();
    assert_eq!(a, unk);
}

fn bow(ae: &Autoencoder<f64>, z: &[f64], seq: Vec<u32>) -> f64 {
    let mut tape = Tape::new();
    let p = ae.bind_frozen(&mut tape);
    let zv = tape.constant(vec![1, z.len()], z.to_vec()).unwrap();
    let l = ae.bow_loss_tape(&mut tape, &p, zv, &Batch::new(vec![seq])).unwrap();
    tape.scalar(l)
}

#[test]
fn bag_of_words_loss_properties() {
    let mut ae = Autoencoder::<f64>::new(toy_config(ModelKind::VaeBow), 1).unwrap();
    let z = [0.5, -1.0, 0.25, 2.0];
    let a = bow(&ae, &z, vec![4, 5, 6, 5]);
    let b = bow(&ae, &z, vec![5, 6, 5, 4]);
    assert!((a - b).abs() < 1e-12, "order must not matter");

    zeroed(&mut ae, "bow.w");
    zeroed(&mut ae, "bow.b");
    let uniform = bow(&ae, &z, vec![4, 7, 9]);
    assert!((uniform - (TOY_VOCAB as f64).ln()).abs() < 1e-12);

    // A head whose bias puts (numerically) all mass on token 7.
    let mut bias = vec![0.0; TOY_VOCAB];
    bias[7] = 1e3;
    ae.set_param("bow.b", bias).unwrap();
    assert!(bow(&ae, &z, vec![7]).abs() < 1e-12);
}

#[test]
fn uncertain_discriminator_gives_log_two_losses() {
    let mut ae = Autoencoder::<f64>::new(toy_config(ModelKind::AaeGauss), 1).unwrap();
    let last = format!("disc.{}", ae.config().discriminator_layers.len());
    zeroed(&mut ae, &format!("{last}.w"));
    zeroed(&mut ae, &format!("{last}.b"));
    let mut tape = Tape::new();
    let frozen = ae.bind_frozen(&mut tape);
    let trainable = ae.bind_discriminator(&mut tape);
    let zp = tape.constant(vec![2, 4], vec![0.1; 8]).unwrap();
    let zq = tape.constant(vec![2, 4], vec![-0.4; 8]).unwrap();
    let disc = ae.discriminator().unwrap();
    let (d, g) = discriminator_losses(&mut tape, disc, &trainable, &frozen, zp, zq).unwrap();
    let ln2 = std::f64::consts::LN_2;
    assert!((tape.scalar(d) - 2.0 * ln2).abs() < 1e-12);
    assert!((tape.scalar(g) - ln2).abs() < 1e-12);
}

fn nonzero(g: Option<&[f64]>) -> bool {
    g.is_some_and(|v| v.iter().any(|&x| x != 0.0))
}

#[test]
fn adversarial_gradients_stay_on_their_side() {
    let ae = Autoencoder::<f64>::new(toy_config(ModelKind::AaeGauss), 1).unwrap();
    let batch = Batch::new(random_seqs(&mut rng(4), 3, TOY_VOCAB, 5));
    let is_disc = |name: &str| Autoencoder::<f64>::is_disc_param(name);
    for which in ["disc", "reg"] {
        let mut tape = Tape::new();
        let p_ae = ae.bind_autoencoder(&mut tape);
        let p_disc = ae.bind_discriminator(&mut tape);
        let enc = ae.encode_tape(&mut tape, &p_ae, &batch).unwrap();
        let z = ae.sample_posterior_tape(&mut tape, enc, 0.0, &mut rng(1)).unwrap();
        let zp = tape.constant(vec![3, 4], vec![0.2; 12]).unwrap();
        let (d, g) = discriminator_losses(&mut tape, ae.discriminator().unwrap(), &p_disc, &p_ae, zp, z).unwrap();
        let grads = tape.backward(if which == "disc" { d } else { g }).unwrap();
        for id in ae.params().ids() {
            let name = ae.params().name(id);
            let on_ae = nonzero(grads.get(p_ae.var(id)));
            let on_disc = nonzero(grads.get(p_disc.var(id)));
            if which == "disc" {
                assert!(!on_ae, "discriminator loss reached {name} through the encoder bindings");
                assert_eq!(on_disc, is_disc(name), "{name}");
            } else {
                assert!(!on_disc, "regularization term reached {name} as a discriminator parameter");
                assert!(!(on_ae && is_disc(name)), "{name}");
            }
        }
        if which == "reg" {
            let head = ae.params().id("head.w").unwrap();
            assert!(nonzero(grads.get(p_ae.var(head))), "regularization term must reach the encoder");
        }
    }
}

#[test]
fn greedy_decoding_is_bounded_and_repeatable() {
    let ae = Autoencoder::<f32>::new(toy_config(ModelKind::AeGaussDet), 1).unwrap();
    let zs = vec![vec![0.5, -0.5, 1.0, 0.0], vec![2.0, 1.0, -1.0, 0.3]];
    for max_len in [1, 3, 7] {
        let a = ae.greedy_decode(&zs, max_len).unwrap();
        assert_eq!(a, ae.greedy_decode(&zs, max_len).unwrap());
        assert!(a.iter().all(|s| s.len() <= max_len && !s.contains(&EOS)));
    }
}

#[test]
fn eos_first_means_empty_output() {
    let mut ae = Autoencoder::<f64>::new(toy_config(ModelKind::AeGaussDet), 1).unwrap();
    zeroed(&mut ae, "out.w");
    let mut bias = vec![0.0; TOY_VOCAB];
    bias[EOS as usize] = 10.0;
    ae.set_param("out.b", bias).unwrap();
    let out = ae.greedy_decode(&[vec![0.1, 0.2, 0.3, 0.4]], 10).unwrap();
    assert_eq!(out, vec![Vec::<u32>::new()]);
}

#[test]
fn uniform_decoder_nll_is_length_times_log_vocab() {
    let mut ae = Autoencoder::<f64>::new(toy_config(ModelKind::Vae), 1).unwrap();
    zeroed(&mut ae, "out.w");
    zeroed(&mut ae, "out.b");
    let x = vec![4, 5, 6, 7, 8];
    let nll = ae.reconstruction_nll(std::slice::from_ref(&x)).unwrap()[0];
    // Five tokens plus EOS are predicted.
    let want = (x.len() + 1) as f64 * (TOY_VOCAB as f64).ln();
    assert!((nll - want).abs() < 1e-9, "{nll} vs {want}");
}

#[test]
fn sampling_never_runs_the_encoder() {
    let model = Model::<f32>::new(toy_config(ModelKind::AaeSph), 1).unwrap();
    let req = GenerationRequest {
        mode: GenerationMode::Sample { n: 7 },
        max_decode_len: 5,
        seed: 3,
    };
    let out = generate(&model, &req).unwrap();
    assert_eq!(out.len(), 7);
    assert_eq!(model.as_autoencoder().unwrap().encoder_calls(), 0);
}

#[test]
fn reconstruction_ignores_the_seed() {
    let model = Model::<f32>::new(toy_config(ModelKind::Vae), 1).unwrap();
    let inputs = random_seqs(&mut rng(9), 4, TOY_VOCAB, 6);
    let run = |seed| {
        generate(
            &model,
            &GenerationRequest {
                mode: GenerationMode::Reconstruct { inputs: inputs.clone() },
                max_decode_len: 8,
                seed,
            },
        )
        .unwrap()
    };
    assert_eq!(run(1), run(2));
}

#[test]
fn embedding_export_layout() {
    let inputs = random_seqs(&mut rng(1), 10, TOY_VOCAB, 6);
    let det = Autoencoder::<f32>::new(toy_config(ModelKind::AeGaussDet), 1).unwrap();
    let mut buf = Vec::new();
    let rows = export_embeddings(&det, &inputs, 100, 0.0, 1, &mut buf).unwrap();
    assert_eq!(rows, 1000);
    let text = String::from_utf8(buf).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "sentence_index,sample_index,z0,z1,z2,z3");
    let body: Vec<&str> = lines.collect();
    assert_eq!(body.len(), 1000);
    for sentence in body.chunks(100) {
        let coords = |l: &str| l.splitn(3, ',').nth(2).unwrap().to_string();
        assert!(sentence.iter().all(|l| coords(l) == coords(sentence[0])));
    }

    let vae = Autoencoder::<f32>::new(toy_config(ModelKind::Vae), 1).unwrap();
    let mut buf = Vec::new();
    export_embeddings(&vae, &inputs[..1], 2, 0.0, 1, &mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let l: Vec<&str> = text.lines().skip(1).collect();
    assert_ne!(l[0].splitn(3, ',').nth(2), l[1].splitn(3, ',').nth(2));
}

#[test]
fn language_model_distributions() {
    let lm = LanguageModel::<f64>::new(toy_config(ModelKind::Lm), 1).unwrap();
    let rows = lm.logprobs(&vec![4, 5, 6]).unwrap();
    assert_eq!(rows.len(), 4);
    for r in &rows {
        let s: f64 = r.iter().map(|l| l.exp()).sum();
        assert!((s - 1.0).abs() < 1e-5);
    }
    let (nll, tokens) = lm.sequence_nll(&[vec![4, 5, 6]]).unwrap()[0];
    assert_eq!(tokens, 4);
    let direct = -(rows[0][4] + rows[1][5] + rows[2][6] + rows[3][EOS as usize]);
    assert!((nll - direct).abs() < 1e-9);
    let a = lm.sample(5, 6, &mut rng(4)).unwrap();
    assert_eq!(a, lm.sample(5, 6, &mut rng(4)).unwrap());
    assert!(a.iter().all(|s| s.len() <= 6));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn spherical_norm_holds_for_any_sentence(seq in prop::collection::vec(4u32..20, 1..15)) {
        let ae = Autoencoder::<f32>::new(toy_config(ModelKind::AaeSph), 6).unwrap();
        let code = ae.encode(&seq).unwrap();
        let n: f64 = code.mean.iter().map(|x| x * x).sum::<f64>().sqrt();
        prop_assert!((n - 1.0).abs() < 1e-6);
    }
}
