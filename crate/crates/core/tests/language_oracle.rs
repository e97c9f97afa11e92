use houston::event_stream::WordCounts;
use houston::language::ClusterWordCounts;
use proptest::prelude::*;

/// Probability of drawing `seq` in order from a Polya urn that starts with
/// `counts[w] + theta0` balls of colour `w`.
fn urn_sequence_probability(counts: &[u64], theta0: f64, seq: &[u32]) -> f64 {
    let mut balls: Vec<f64> = counts.iter().map(|&c| c as f64 + theta0).collect();
    let mut p = 1.0;
    for &w in seq {
        let total: f64 = balls.iter().sum();
        p *= balls[w as usize] / total;
        balls[w as usize] += 1.0;
    }
    p
}

fn all_sequences(vocab: u32, len: usize) -> Vec<Vec<u32>> {
    let mut out = vec![Vec::new()];
    for _ in 0..len {
        out = out
            .into_iter()
            .flat_map(|s| {
                (0..vocab).map(move |w| {
                    let mut t = s.clone();
                    t.push(w);
                    t
                })
            })
            .collect();
    }
    out
}

fn cluster(counts: &[u64], theta0: f64) -> ClusterWordCounts {
    let mut c = ClusterWordCounts::new(counts.len(), theta0).unwrap();
    let tokens: Vec<u32> =
        counts.iter().enumerate().flat_map(|(w, &n)| std::iter::repeat_n(w as u32, n as usize)).collect();
    if !tokens.is_empty() {
        c.absorb(&WordCounts::from_tokens(&tokens).unwrap()).unwrap();
    }
    c
}

#[test]
fn predictive_matches_exhaustive_urn_enumeration() {
    for vocab in 1..=3u32 {
        let count_grids = all_sequences(6, vocab as usize);
        for counts in count_grids {
            let counts: Vec<u64> = counts.into_iter().map(u64::from).collect();
            for theta0 in [0.1, 1.0] {
                let c = cluster(&counts, theta0);
                for len in 1..=5 {
                    let seqs = all_sequences(vocab, len);
                    let mut total = 0.0;
                    for seq in &seqs {
                        let oracle = urn_sequence_probability(&counts, theta0, seq);
                        total += oracle;
                        let doc = WordCounts::from_tokens(seq).unwrap();
                        let got = c.log_predictive(&doc).unwrap().exp();
                        assert!((got - oracle).abs() <= 1e-9, "{counts:?} {seq:?}: {got} vs {oracle}");
                    }
                    assert!((total - 1.0).abs() < 1e-9);
                }
            }
        }
    }
}

fn arb_doc(vocab: u32) -> impl Strategy<Value = WordCounts> {
    prop::collection::vec(0..vocab, 1..8).prop_map(|t| WordCounts::from_tokens(&t).unwrap())
}

proptest! {
    #[test]
    fn absorb_then_release_restores_state(
        docs in prop::collection::vec(arb_doc(12), 0..10),
        extra in arb_doc(12),
        theta0 in 0.01f64..5.0,
    ) {
        let mut c = ClusterWordCounts::new(12, theta0).unwrap();
        for d in &docs {
            c.absorb(d).unwrap();
        }
        let before = c.clone();
        c.absorb(&extra).unwrap();
        prop_assert_eq!(c.total(), before.total() + extra.total());
        c.release(&extra).unwrap();
        prop_assert_eq!(c, before);
    }

    #[test]
    fn sequential_absorption_is_the_chain_rule(a in arb_doc(6), b in arb_doc(6)) {
        // p(a) p(b | a) equals p(a ++ b) for one ordered arrangement
        let mut c = ClusterWordCounts::new(6, 0.5).unwrap();
        let la = c.log_predictive(&a).unwrap();
        c.absorb(&a).unwrap();
        let lb = c.log_predictive(&b).unwrap();
        let mut tokens: Vec<u32> = a.iter().flat_map(|(w, n)| std::iter::repeat_n(w, n as usize)).collect();
        tokens.extend(b.iter().flat_map(|(w, n)| std::iter::repeat_n(w, n as usize)));
        let joint = ClusterWordCounts::new(6, 0.5).unwrap().log_predictive(&WordCounts::from_tokens(&tokens).unwrap()).unwrap();
        prop_assert!((la + lb - joint).abs() < 1e-9);
    }

    #[test]
    fn release_refuses_underflow(doc in arb_doc(5)) {
        let mut c = ClusterWordCounts::new(5, 0.1).unwrap();
        prop_assert!(c.release(&doc).is_err());
        prop_assert_eq!(c.total(), 0);
    }
}

#[test]
fn out_of_vocabulary_words_are_rejected() {
    let c = ClusterWordCounts::new(3, 0.1).unwrap();
    assert!(c.log_predictive(&WordCounts::new(vec![(3, 1)]).unwrap()).is_err());
    assert!(ClusterWordCounts::new(3, 0.0).is_err());
}
