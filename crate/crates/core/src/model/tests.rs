use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;

fn tiny(transparent: bool, shared: bool) -> ModelConfig {
    ModelConfig {
        dropout: 0.0,
        label_smoothing: 0.1,
        transparent_attention: transparent,
        shared_embeddings: shared,
        ..ModelConfig::new(17, 2, 8, 12, 2, (2, 2))
    }
}

fn batch() -> Vec<Pair> {
    vec![
        (vec![4, 9, 10, 11], vec![12, 13, 7]),
        (vec![5, 8], vec![]),
        (vec![4, 16, 15, 14, 13, 6], vec![9, 9, 10, 11, 12]),
    ]
}

fn perturb(mut p: Vec<f64>, seed: u64) -> Vec<f64> {
    use rand::Rng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    p.iter_mut().for_each(|x| *x += rng.gen_range(-0.3..0.3));
    p
}

#[test]
fn parameter_count_matches_layout() {
    let m = Model::<f32>::new(ModelConfig::new(1000, 0, 32, 64, 4, (2, 2)), 0).unwrap();
    assert_eq!(m.num_params(), 74_880);
}

#[test]
fn initialization_is_seeded() {
    let a = Model::<f32>::new(tiny(true, true), 3).unwrap();
    let b = Model::<f32>::new(tiny(true, true), 3).unwrap();
    let c = Model::<f32>::new(tiny(true, true), 4).unwrap();
    assert_eq!(a.params(), b.params());
    assert_ne!(a.params(), c.params());
    assert_eq!(a.loss(&batch()).unwrap(), b.loss(&batch()).unwrap());
}

fn check_gradients(config: ModelConfig, dropout_seed: Option<u64>) {
    let base = Model::<f64>::new(config.clone(), 1).unwrap();
    // Move norm gains and mixing logits off their symmetric initial values.
    let m = Model::<f64>::from_params(config, perturb(base.params().to_vec(), 2)).unwrap();
    let b = batch();
    let rng = || dropout_seed.map(ChaCha8Rng::seed_from_u64);
    let mut grad = vec![0.0; m.num_params()];
    let mut r = rng();
    m.loss_and_grad(&b, r.as_mut(), &mut grad).unwrap();
    let loss_at = |p: Vec<f64>| {
        let mm = Model::<f64>::from_params(m.config().clone(), p).unwrap();
        let mut r = rng();
        let mut scratch = vec![0.0; mm.num_params()];
        mm.loss_and_grad(&b, r.as_mut(), &mut scratch).unwrap().mean_loss()
    };
    let h = 1e-6;
    let mut worst = 0.0f64;
    for i in 0..m.num_params() {
        let mut plus = m.params().to_vec();
        plus[i] += h;
        let mut minus = m.params().to_vec();
        minus[i] -= h;
        let fd = (loss_at(plus) - loss_at(minus)) / (2.0 * h);
        let err = (fd - grad[i]).abs() / (1e-4 + fd.abs().max(grad[i].abs()));
        worst = worst.max(err);
        assert!(
            (fd - grad[i]).abs() <= 1e-6 + 1e-4 * fd.abs(),
            "parameter {i}: analytic {} vs numeric {fd}",
            grad[i]
        );
    }
    assert!(worst < 1e-3);
}

#[test]
fn gradients_match_finite_differences() {
    check_gradients(tiny(false, true), None);
}

#[test]
fn gradients_match_with_mixing_and_separate_embeddings() {
    check_gradients(tiny(true, false), None);
}

#[test]
fn gradients_match_under_dropout() {
    check_gradients(
        ModelConfig {
            dropout: 0.2,
            ..tiny(true, true)
        },
        Some(9),
    );
}

#[test]
fn loss_matches_smoothed_cross_entropy_oracle() {
    let m = Model::<f64>::new(tiny(false, true), 5).unwrap();
    let b = batch();
    let logits = m.logits(&b).unwrap();
    let labels: Vec<u32> = b
        .iter()
        .flat_map(|(_, t)| t.iter().copied().chain([crate::subword::EOS_ID]))
        .collect();
    let v = 17;
    let eps = 0.1;
    let mut want = 0.0;
    for (row, &y) in logits.chunks(v).zip(&labels) {
        let z: f64 = row.iter().map(|x| x.exp()).sum();
        for (j, &x) in row.iter().enumerate() {
            let q = eps / v as f64 + if j as u32 == y { 1.0 - eps } else { 0.0 };
            want -= q * (x.exp() / z).ln();
        }
    }
    let got = m.loss(&b).unwrap();
    assert_eq!(got.tokens, labels.len());
    assert!((got.loss_sum - want).abs() < 1e-9, "{} vs {want}", got.loss_sum);
}

#[test]
fn one_hot_mixing_reproduces_plain_model() {
    let plain = Model::<f32>::new(tiny(false, true), 7).unwrap();
    let mut mixed = Model::<f32>::new(tiny(true, true), 7).unwrap();
    let n = plain.num_params();
    mixed.params_mut()[..n].copy_from_slice(plain.params());
    let mix = mixed.tensor_mut("transparent.mix").unwrap();
    for row in mix.chunks_mut(3) {
        row.copy_from_slice(&[-1e4, -1e4, 0.0]);
    }
    let a = plain.logits(&batch()).unwrap();
    let b = mixed.logits(&batch()).unwrap();
    assert!(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()));
}

#[test]
fn decoder_is_causal() {
    let m = Model::<f64>::new(tiny(true, true), 11).unwrap();
    let a = m.logits(&[(vec![4, 9, 10], vec![7, 8, 9, 10])]).unwrap();
    let b = m.logits(&[(vec![4, 9, 10], vec![7, 8, 15, 16])]).unwrap();
    let v = 17;
    // Rows 0..=2 see BOS, 7, 8 only.
    for i in 0..3 * v {
        assert!((a[i] - b[i]).abs() < 1e-12);
    }
    assert!((3 * v..5 * v).any(|i| (a[i] - b[i]).abs() > 1e-6));
}

#[test]
fn packing_order_does_not_change_results() {
    let m = Model::<f64>::new(tiny(true, true), 13).unwrap();
    let b = batch();
    let together = m.logits(&b).unwrap();
    let mut singles = Vec::new();
    for ex in &b {
        singles.extend(m.logits(std::slice::from_ref(ex)).unwrap());
    }
    assert_eq!(together.len(), singles.len());
    assert!(together.iter().zip(&singles).all(|(x, y)| (x - y).abs() < 1e-10));
    let reversed: Vec<Pair> = b.iter().rev().cloned().collect();
    let l1 = m.loss(&b).unwrap();
    let l2 = m.loss(&reversed).unwrap();
    assert!((l1.loss_sum - l2.loss_sum).abs() < 1e-10);
}

#[test]
fn out_of_range_tokens_are_rejected() {
    let m = Model::<f32>::new(tiny(false, true), 0).unwrap();
    assert!(matches!(
        m.loss(&[(vec![4, 17], vec![1])]),
        Err(Error::InvalidTokenId { id: 17, size: 17 })
    ));
    assert!(m.loss(&[(vec![], vec![1])]).is_err());
}

fn random_model(seed: u64) -> Model<f64> {
    let m = Model::<f64>::new(tiny(true, true), seed).unwrap();
    Model::from_params(m.config().clone(), perturb(m.params().to_vec(), seed + 100)).unwrap()
}

#[test]
fn greedy_decoding_agrees_with_teacher_forcing() {
    let m = random_model(21);
    let sources = vec![vec![4, 9, 10, 11], vec![5, 16], vec![4, 12, 12, 12, 13, 14]];
    let outs = m.translate(&sources, &DecodeOptions::greedy()).unwrap();
    for (src, out) in sources.iter().zip(&outs) {
        assert!(!out.is_empty());
        let body: Vec<u32> = out.iter().copied().filter(|&t| t != crate::subword::EOS_ID).collect();
        let logits = m.logits(&[(src.clone(), body.clone())]).unwrap();
        for (r, &tok) in out.iter().enumerate() {
            let row = &logits[r * 17..(r + 1) * 17];
            let best = (0..17).fold(0, |b, j| if row[j] > row[b] { j } else { b });
            assert_eq!(best as u32, tok, "row {r}");
        }
    }
}

#[test]
fn unit_beam_equals_greedy() {
    for seed in 0..4 {
        let m = random_model(seed);
        let sources = vec![vec![4, 9, 10, 11], vec![5, 16], vec![4, 12, 12, 13, 14, 8, 8]];
        let g = m.translate(&sources, &DecodeOptions::greedy()).unwrap();
        let b = m
            .translate(
                &sources,
                &DecodeOptions {
                    beam: 1,
                    ..DecodeOptions::default()
                },
            )
            .unwrap();
        assert_eq!(g, b);
        let wide = m.translate(&sources, &DecodeOptions::beam(4)).unwrap();
        for (src, out) in sources.iter().zip(&wide) {
            let budget = 2 * src.len() + 10;
            assert!(out.len() <= budget);
            assert!(out.last() == Some(&crate::subword::EOS_ID) || out.len() == budget);
        }
    }
}

#[test]
fn beam_prefers_best_normalized_score() {
    let m = random_model(5);
    let src = vec![4, 9, 10, 11];
    let score = |out: &Vec<u32>| {
        let body: Vec<u32> = out.iter().copied().filter(|&t| t != crate::subword::EOS_ID).collect();
        let logits = m.logits(&[(src.clone(), body)]).unwrap();
        let mut s = 0.0;
        for (r, &tok) in out.iter().enumerate() {
            let row = &logits[r * 17..(r + 1) * 17];
            let lse = row.iter().map(|x| x.exp()).sum::<f64>().ln();
            s += row[tok as usize] - lse;
        }
        s / out.len() as f64
    };
    let greedy = m
        .translate(std::slice::from_ref(&src), &DecodeOptions::greedy())
        .unwrap();
    let beam = m
        .translate(std::slice::from_ref(&src), &DecodeOptions::beam(8))
        .unwrap();
    assert!(score(&beam[0]) >= score(&greedy[0]) - 1e-9);
}

#[test]
fn decoding_requires_a_leading_tag() {
    let m = Model::<f32>::new(tiny(false, true), 0).unwrap();
    assert!(matches!(
        m.translate(&[vec![9, 4]], &DecodeOptions::greedy()),
        Err(Error::MissingTag)
    ));
    assert!(matches!(
        m.translate(&[vec![]], &DecodeOptions::greedy()),
        Err(Error::MissingTag)
    ));
    assert_eq!(
        m.translate(&[], &DecodeOptions::greedy()).unwrap(),
        Vec::<Vec<u32>>::new()
    );
}

#[test]
fn checkpoint_round_trip() {
    let m = Model::<f32>::new(tiny(true, false), 2).unwrap();
    let bytes = m.to_bytes(123).unwrap();
    let (back, step) = Model::<f32>::from_bytes(&bytes).unwrap();
    assert_eq!(step, 123);
    assert_eq!(back.params(), m.params());
    assert_eq!(back.config(), m.config());

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    m.save(&path, 7).unwrap();
    assert_eq!(Model::<f32>::load(&path).unwrap().1, 7);

    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(Model::<f32>::from_bytes(&bad).is_err());
    assert!(Model::<f32>::from_bytes(&bytes[..bytes.len() - 4]).is_err());
    assert!(Model::<f32>::from_bytes(&bytes[..10]).is_err());
}
