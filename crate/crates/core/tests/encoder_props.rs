//! Structural properties of the transformer encoder.

use rand::seq::SliceRandom;
use rand::Rng as _;

use nerkit::encoder::{attention_probs, encode, forward, init_params, EncoderConfig, EncoderParams, Input};
use nerkit::rng;

const VOCAB: usize = 40;

fn toy(seed: u64) -> EncoderParams {
    init_params(&EncoderConfig::preset("toy").unwrap().with_vocab_size(VOCAB), seed).unwrap()
}

fn random_ids(rng: &mut rng::Rng, n: usize) -> Vec<usize> {
    (0..n).map(|_| rng.random_range(5..VOCAB)).collect()
}

#[test]
fn permutation_equivariant_without_positions() {
    let mut rng = rng::named(1, "test.perm");
    for seed in 0..20 {
        let mut p = toy(seed);
        p.position_embeddings.fill(0.0);
        let n = rng.random_range(2..12);
        let ids = random_ids(&mut rng, n);
        let segs = vec![0; n];
        let mask = vec![true; n];
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut rng);
        let permuted: Vec<usize> = perm.iter().map(|&i| ids[i]).collect();
        let h = encode(&p, &ids, &segs, &mask).unwrap();
        let hp = encode(&p, &permuted, &segs, &mask).unwrap();
        for (row, &src) in perm.iter().enumerate() {
            for c in 0..h.ncols() {
                assert!((hp[[row, c]] - h[[src, c]]).abs() < 1e-10);
            }
        }
    }
}

#[test]
fn position_embeddings_break_equivariance() {
    let p = toy(3);
    let ids = [7, 8, 9];
    let h = encode(&p, &ids, &[0; 3], &[true; 3]).unwrap();
    let hp = encode(&p, &[9, 8, 7], &[0; 3], &[true; 3]).unwrap();
    assert!((0..h.ncols()).any(|c| (hp[[0, c]] - h[[2, c]]).abs() > 1e-6));
}

#[test]
fn finite_outputs_over_many_seeds() {
    let mut rng = rng::named(2, "test.finite");
    for seed in 0..1000 {
        let p = toy(seed);
        let n = rng.random_range(1..=32);
        let ids = random_ids(&mut rng, n);
        let segs: Vec<usize> = (0..n).map(|_| rng.random_range(0..2)).collect();
        let mut mask = vec![true; n];
        for m in mask.iter_mut().skip(1) {
            *m = rng.random_bool(0.8);
        }
        let h = encode(&p, &ids, &segs, &mask).unwrap();
        assert!(h.iter().all(|x| x.is_finite()), "seed {seed}");
    }
}

#[test]
fn padded_tokens_do_not_leak() {
    let p = toy(4);
    let ids = [2, 10, 11, 12, 3, 0, 0, 0];
    let mask = [true, true, true, true, true, false, false, false];
    let segs = [0; 8];
    let h = encode(&p, &ids, &segs, &mask).unwrap();
    let mut other = ids;
    other[5..].copy_from_slice(&[17, 30, 5]);
    let h2 = encode(&p, &other, &segs, &mask).unwrap();
    for i in 0..5 {
        assert_eq!(h.row(i), h2.row(i));
    }
    let probs = attention_probs(&p, &ids, &segs, &mask, 1, 1).unwrap();
    for i in 0..8 {
        assert!((probs.row(i).sum() - 1.0).abs() < 1e-9);
        for j in 5..8 {
            assert_eq!(probs[[i, j]], 0.0);
        }
    }
}

#[test]
fn layer_norm_gain_matters() {
    let mut p = toy(5);
    let ids = [2, 10, 11, 3];
    let h = encode(&p, &ids, &[0; 4], &[true; 4]).unwrap();
    for l in &mut p.layers {
        l.attn_norm_g.mapv_inplace(|g| 2.0 * g);
        l.ffn_norm_g.mapv_inplace(|g| 2.0 * g);
    }
    let h2 = encode(&p, &ids, &[0; 4], &[true; 4]).unwrap();
    assert!(h.iter().zip(h2.iter()).any(|(a, b)| (a - b).abs() > 1e-6));
}

#[test]
fn inference_is_deterministic_and_dropout_is_seeded() {
    let mut cfg = EncoderConfig::preset("toy").unwrap().with_vocab_size(VOCAB);
    cfg.dropout_rate = 0.1;
    let p = init_params(&cfg, 6).unwrap();
    let ids = [2, 10, 11, 12, 3];
    let input = Input::new(&ids, &[0; 5], &[true; 5]);
    assert_eq!(encode(&p, &ids, &[0; 5], &[true; 5]).unwrap(), encode(&p, &ids, &[0; 5], &[true; 5]).unwrap());
    let a = forward(&p, input, Some(&mut rng::named(1, "dropout"))).unwrap().0;
    let b = forward(&p, input, Some(&mut rng::named(1, "dropout"))).unwrap().0;
    let c = forward(&p, input, None).unwrap().0;
    assert_eq!(a, b);
    assert_ne!(a, c);
}

#[test]
fn single_key_attention_is_one() {
    let p = toy(7);
    let probs = attention_probs(&p, &[9], &[0], &[true], 0, 0).unwrap();
    assert_eq!(probs, ndarray::array![[1.0]]);
}
