//! Linear-chain CRF against exhaustive enumeration.

mod common;

use ndarray::Array2;
use proptest::prelude::*;

use nerkit::corpus::{check_transitions, TagSet};
use nerkit::crf::{self, bio_constraint_mask, CrfParams};

fn instance(max_t: usize, max_k: usize, lo: f64, hi: f64) -> impl Strategy<Value = (Array2<f64>, CrfParams)> {
    (1..=max_t, 1..=max_k).prop_flat_map(move |(t, k)| {
        let n = t * k + k * k + 2 * k;
        prop::collection::vec(lo..hi, n).prop_map(move |v| {
            let mut it = v.into_iter();
            common::random_instance(t, k, || it.next().unwrap())
        })
    })
}

/// Instances with entries in {-1, 0, 1}: many exact ties.
fn tied_instance() -> impl Strategy<Value = (Array2<f64>, CrfParams)> {
    (1..=5usize, 1..=4usize).prop_flat_map(|(t, k)| {
        let n = t * k + k * k + 2 * k;
        prop::collection::vec(-1i32..=1, n).prop_map(move |v| {
            let mut it = v.into_iter();
            common::random_instance(t, k, || it.next().unwrap() as f64)
        })
    })
}

/// Exact unary marginals by enumeration.
fn brute_marginals(e: &Array2<f64>, p: &CrfParams) -> Array2<f64> {
    let z = common::brute_log_partition(e, p);
    let mut m = Array2::zeros(e.raw_dim());
    for q in common::all_paths(e.nrows(), e.ncols()) {
        let w = (common::path_score(e, p, &q) - z).exp();
        for (i, &y) in q.iter().enumerate() {
            m[[i, y]] += w;
        }
    }
    m
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn log_partition_matches_enumeration((e, p) in instance(5, 4, -3.0, 3.0)) {
        let got = crf::log_partition(e.view(), &p);
        prop_assert!((got - common::brute_log_partition(&e, &p)).abs() < 1e-8);
    }

    #[test]
    fn viterbi_matches_enumeration((e, p) in instance(5, 4, -3.0, 3.0)) {
        let (path, score) = crf::viterbi(e.view(), &p, None).unwrap();
        let (best, best_score) = common::brute_argmax(&e, &p, None).unwrap();
        prop_assert_eq!(path, best);
        prop_assert!((score - best_score).abs() < 1e-9);
    }

    #[test]
    fn viterbi_tie_break_is_lexicographic((e, p) in tied_instance()) {
        let (path, _) = crf::viterbi(e.view(), &p, None).unwrap();
        prop_assert_eq!(path, common::brute_argmax(&e, &p, None).unwrap().0);
    }

    #[test]
    fn constrained_viterbi_matches_enumeration(
        t in 1usize..=4,
        vals in prop::collection::vec(-2i32..=2, 4 * 5 + 25 + 10),
    ) {
        let tagset = TagSet::new(&["PER", "LOC"]).unwrap();
        let mask = bio_constraint_mask(&tagset);
        let mut it = vals.into_iter();
        let (e, p) = common::random_instance(t, 5, || it.next().unwrap() as f64);
        let (path, score) = crf::viterbi(e.view(), &p, Some(&mask)).unwrap();
        let (best, best_score) = common::brute_argmax(&e, &p, Some(&mask)).unwrap();
        prop_assert_eq!(&path, &best);
        prop_assert_eq!(score, best_score);
        let tags: Vec<&str> = path.iter().map(|&i| tagset.tag(i)).collect();
        prop_assert!(check_transitions(&tags).is_empty());
    }

    #[test]
    fn gold_probability_in_unit_interval((e, p) in instance(5, 4, -5.0, 5.0), seed in any::<u64>()) {
        let k = e.ncols();
        let tags: Vec<usize> = (0..e.nrows()).map(|i| ((seed >> (i * 3)) as usize) % k).collect();
        let prob = (crf::score_sequence(e.view(), &p, &tags).unwrap() - crf::log_partition(e.view(), &p)).exp();
        prop_assert!(prob > 0.0 && prob <= 1.0 + 1e-12);
        prop_assert!(crf::nll(e.view(), &p, &tags).unwrap() >= -1e-9);
    }

    #[test]
    fn row_shift_moves_partition_only((e, p) in instance(5, 4, -3.0, 3.0), c in -10.0f64..10.0, row in 0usize..5) {
        let row = row % e.nrows();
        let mut shifted = e.clone();
        shifted.row_mut(row).mapv_inplace(|x| x + c);
        let dz = crf::log_partition(shifted.view(), &p) - crf::log_partition(e.view(), &p);
        prop_assert!((dz - c).abs() < 1e-9);
        prop_assert_eq!(crf::viterbi(shifted.view(), &p, None).unwrap().0, crf::viterbi(e.view(), &p, None).unwrap().0);
    }

    #[test]
    fn marginals_and_gradient_match_enumeration((e, p) in instance(5, 4, -3.0, 3.0), seed in any::<u64>()) {
        let (t, k) = e.dim();
        let tags: Vec<usize> = (0..t).map(|i| ((seed >> (i * 3)) as usize) % k).collect();
        let (m, g) = crf::marginals_and_grad(e.view(), &p, &tags).unwrap();
        let exact = brute_marginals(&e, &p);
        for ((a, b), (i, y)) in m.iter().zip(exact.iter()).zip((0..t).flat_map(|i| (0..k).map(move |y| (i, y)))) {
            prop_assert!((a - b).abs() < 1e-10);
            let onehot = if tags[i] == y { 1.0 } else { 0.0 };
            prop_assert!((g.emissions[[i, y]] - (b - onehot)).abs() < 1e-10);
        }
        for row in g.emissions.rows() {
            prop_assert!(row.sum().abs() < 1e-10);
        }
        // Expected transition counts by enumeration.
        let z = common::brute_log_partition(&e, &p);
        let mut expected = Array2::<f64>::zeros((k, k));
        for q in common::all_paths(t, k) {
            let w = (common::path_score(&e, &p, &q) - z).exp();
            for i in 1..t {
                expected[[q[i - 1], q[i]]] += w;
            }
        }
        for i in 1..t {
            expected[[tags[i - 1], tags[i]]] -= 1.0;
        }
        for (a, b) in g.params.transitions.iter().zip(expected.iter()) {
            prop_assert!((a - b).abs() < 1e-10);
        }
    }
}

#[test]
fn random_four_by_three_is_hand_summed() {
    let e = ndarray::array![[0.3, -1.2, 0.7], [1.1, 0.4, -0.5], [-0.8, 0.9, 0.2], [0.6, -0.3, 1.4]];
    let p = CrfParams {
        transitions: ndarray::array![[0.1, -0.4, 0.2], [0.5, 0.3, -0.6], [-0.2, 0.8, 0.0]],
        start: ndarray::array![0.25, -0.5, 0.75],
        end: ndarray::array![-0.1, 0.2, 0.3],
    };
    // start[2] + e[0,2] + trans[2,0] + e[1,0] + trans[0,1] + e[2,1] + trans[1,2] + e[3,2] + end[2]
    let hand = 0.75 + 0.7 + -0.2 + 1.1 + -0.4 + 0.9 + -0.6 + 1.4 + 0.3;
    assert!((crf::score_sequence(e.view(), &p, &[2, 0, 1, 2]).unwrap() - hand).abs() < 1e-12);
    assert_eq!(common::all_paths(4, 3).len(), 81);
    assert!((crf::log_partition(e.view(), &p) - common::brute_log_partition(&e, &p)).abs() < 1e-8);
}

#[test]
fn constrained_decoding_never_violates_bio() {
    let tagset = TagSet::new(&["PER", "LOC", "ORG"]).unwrap();
    let mask = bio_constraint_mask(&tagset);
    let mut rng = nerkit::rng::named(9, "crf.bio");
    use rand::Rng as _;
    for _ in 0..1000 {
        let t = rng.random_range(1..=12);
        let (e, p) = common::random_instance(t, tagset.num_tags(), || rng.random_range(-4.0..4.0));
        let (path, _) = crf::viterbi(e.view(), &p, Some(&mask)).unwrap();
        let tags: Vec<&str> = path.iter().map(|&i| tagset.tag(i)).collect();
        assert!(check_transitions(&tags).is_empty(), "{tags:?}");
    }
}
