use depa::eval::{attention_maps, bleu, chrf, paired_bootstrap, repetition_rate};
use depa::corpus::{SentencePair, TargetVocabFilter, NUM_SPECIALS};
use depa::model::{MaskKind, ModelConfig, ModelParams};
use proptest::prelude::*;

fn sentence() -> impl Strategy<Value = String> {
    prop::collection::vec(prop::sample::select(vec!["a", "b", "c", "d", "e"]), 1..8).prop_map(|w| w.join(" "))
}

fn corpus() -> impl Strategy<Value = Vec<String>> {
    prop::collection::vec(sentence(), 1..10)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn identity_scores_are_perfect(h in corpus()) {
        prop_assert!((bleu(&h, &h).unwrap() - 100.0).abs() < 1e-9);
        prop_assert!((chrf(&h, &h).unwrap() - 100.0).abs() < 1e-9);
    }

    #[test]
    fn scores_are_bounded(h in corpus(), r in corpus()) {
        let n = h.len().min(r.len());
        let b = bleu(&h[..n], &r[..n]).unwrap();
        let c = chrf(&h[..n], &r[..n]).unwrap();
        prop_assert!((0.0..=100.0 + 1e-9).contains(&b));
        prop_assert!((0.0..=100.0 + 1e-9).contains(&c));
    }

    #[test]
    fn bleu_ignores_sentence_order(pairs in prop::collection::vec((sentence(), sentence()), 1..10), rot in 0usize..10) {
        let (h, r): (Vec<String>, Vec<String>) = pairs.into_iter().unzip();
        let k = rot % h.len();
        let (mut h2, mut r2) = (h.clone(), r.clone());
        h2.rotate_left(k);
        r2.rotate_left(k);
        prop_assert!((bleu(&h, &r).unwrap() - bleu(&h2, &r2).unwrap()).abs() < 1e-9);
    }

    #[test]
    fn bootstrap_tie_rule_and_coverage(a in corpus(), seed in any::<u64>()) {
        let refs: Vec<String> = a.iter().rev().cloned().collect();
        let b: Vec<String> = a.iter().map(|s| format!("{s} a")).collect();
        prop_assert_eq!(paired_bootstrap(&a, &a, &refs, 100, seed).unwrap(), 1.0);
        let ab = paired_bootstrap(&a, &b, &refs, 100, seed).unwrap();
        let ba = paired_bootstrap(&b, &a, &refs, 100, seed).unwrap();
        prop_assert!(ab + ba >= 1.0 - 1e-12);
        prop_assert_eq!(ab, paired_bootstrap(&a, &b, &refs, 100, seed).unwrap());
    }

    #[test]
    fn repetition_rate_detects_consecutive_duplicates(h in corpus()) {
        let r = repetition_rate(&h);
        prop_assert!((0.0..=1.0).contains(&r));
        let has_dup = h.iter().any(|s| {
            let w: Vec<&str> = s.split(' ').collect();
            w.windows(2).any(|p| p[0] == p[1])
        });
        prop_assert_eq!(r == 0.0, !has_dup);
    }
}

#[test]
fn brevity_penalty_fixture() {
    let got = bleu(&["a b c d"], &["a b c d e"]).unwrap();
    let want = 100.0 * (1.0f64 - 5.0 / 4.0).exp();
    assert!((got - want).abs() < 0.01);
    assert!((got - 77.88).abs() < 0.01);
}

#[test]
fn chrf_fixture_matches_hand_computation() {
    // Orders 1..3 only; 1-grams share a,b (2/3), 2-grams share "ab" (1/2).
    let got = chrf(&["abc"], &["abd"]).unwrap();
    let want = 100.0 * (2.0 / 3.0 + 0.5 + 0.0) / 3.0;
    assert!((got - want).abs() < 1e-9, "{got} vs {want}");
}

#[test]
fn attention_rows_sum_to_one() {
    let v = NUM_SPECIALS + 6;
    let cfg = ModelConfig {
        d_model: 8,
        n_heads: 2,
        ffn_dim: 16,
        dropout: 0.0,
        max_offset: 4,
        max_len: 16,
        use_it: true,
        ..ModelConfig::default()
    };
    let m = ModelParams::init(&cfg, &TargetVocabFilter::identity(v), 4).unwrap();
    let pair = SentencePair::new(vec![4, 5, 6, 7], vec![8, 9, 4], v).unwrap();
    for kind in [MaskKind::Causal, MaskKind::Full] {
        let dump = attention_maps(&m, &pair, kind).unwrap();
        assert_eq!(dump.maps.len(), 2);
        for layer in &dump.maps {
            for head in layer {
                for (i, row) in head.iter().enumerate() {
                    assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-5);
                    if kind == MaskKind::Causal {
                        assert!(row[i + 1..].iter().all(|&p| p == 0.0));
                    }
                }
            }
        }
    }
}
