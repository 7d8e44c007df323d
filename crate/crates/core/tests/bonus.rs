mod common;

use phrasemem::bonus::{
    bonus_values, log_softmax, phrase_attention, rescore, rescore_ids, select_recommendations, BonusConfig, BonusMap,
};
use phrasemem::candidate_index::{build_index, match_source, SourceSpan};
use phrasemem::recommender::MatcherState;
use phrasemem::{Ablation, AttentionVector, Error, Vocabulary};
use proptest::prelude::*;

use common::*;

fn settled_bonus(attn: &AttentionVector, cfg: &BonusConfig) -> BonusMap {
    let index = build_index(match_source(&toks("ta dingju zai"), &settled_table(), 7), 10);
    let recs = select_recommendations(cfg, &MatcherState::from_partial(&index, &toks("he")), &index);
    bonus_values(&index, &recs, attn).unwrap()
}

#[test]
fn settled_gets_one_third_under_uniform_attention() {
    let v = settled_bonus(&AttentionVector::uniform(3), &BonusConfig::default());
    assert!((v["settled"] - 1.0 / 3.0).abs() < 1e-12);
    // first word of both phrases, reached through the empty prefix
    assert!((v["he"] - 1.0 / 3.0).abs() < 1e-12);
}

#[test]
fn no_first_drops_empty_prefix_recommendations() {
    let cfg = BonusConfig::new(0.5, Ablation::NoFirst).unwrap();
    let v = settled_bonus(&AttentionVector::uniform(3), &cfg);
    assert_eq!(v.keys().collect::<Vec<_>>(), ["settled"]);
    let cfg = BonusConfig::new(0.5, Ablation::Baseline).unwrap();
    assert!(settled_bonus(&AttentionVector::uniform(3), &cfg).is_empty());
}

#[test]
fn attention_outside_spans_gives_zero() {
    let sentence = toks("ta dingju zai meiguo");
    let index = build_index(match_source(&sentence, &settled_table(), 7), 10);
    let recs = select_recommendations(&BonusConfig::default(), &MatcherState::from_partial(&index, &toks("he")), &index);
    let v = bonus_values(&index, &recs, &AttentionVector::one_hot(4, 3)).unwrap();
    assert_eq!(v["settled"], 0.0);
}

#[test]
fn single_certain_origin_gives_one() {
    let index = build_index(match_source(&toks("a"), &table(vec![entry("a", "x y", 1.0)]), 7), 10);
    let recs = select_recommendations(&BonusConfig::default(), &MatcherState::new(), &index);
    let v = bonus_values(&index, &recs, &AttentionVector::one_hot(1, 0)).unwrap();
    assert_eq!(v["x"], 1.0);
}

#[test]
fn phrase_attention_worked_values() {
    let four = toks("a b c d");
    let got = phrase_attention(&AttentionVector::uniform(4), &SourceSpan::new(&four, 0, 3)).unwrap();
    assert!((got - 0.25).abs() < 1e-12);
    let got = phrase_attention(&AttentionVector::one_hot(4, 1), &SourceSpan::new(&four, 0, 2)).unwrap();
    assert!((got - 0.5).abs() < 1e-12);
    let attn = AttentionVector::new(vec![0.7, 0.1, 0.1, 0.1]).unwrap();
    assert!((phrase_attention(&attn, &SourceSpan::new(&four, 0, 4)).unwrap() - 0.25).abs() < 1e-12);
}

#[test]
fn span_beyond_attention_is_rejected() {
    let four = toks("a b c d");
    let err = phrase_attention(&AttentionVector::uniform(3), &SourceSpan::new(&four, 2, 4)).unwrap_err();
    assert!(matches!(err, Error::Contract(_)));
}

#[test]
fn attention_vector_validation() {
    assert!(AttentionVector::new(vec![]).is_err());
    assert!(AttentionVector::new(vec![0.5, 0.4]).is_err());
    assert!(AttentionVector::new(vec![1.5, -0.5]).is_err());
    assert!(AttentionVector::new(vec![f64::NAN, 1.0]).is_err());
    assert!(AttentionVector::new(vec![0.5, 0.5 + 1e-9]).is_ok());
}

#[test]
fn lambda_must_be_inside_unit_interval() {
    for bad in [0.0, 1.0, -0.1, 1.5, f64::NAN] {
        assert!(matches!(BonusConfig::new(bad, Ablation::Full), Err(Error::Config(_))), "{bad}");
    }
    let cfg = BonusConfig::from_logit(0.0, Ablation::Full).unwrap();
    assert_eq!(cfg.lambda(), 0.5);
}

#[test]
fn scaled_logit_example() {
    // lambda 0.5 and V = 1/3 scale the logit by 1 + 1/6
    let base = [2.0, 1.0, 0.5];
    let out = rescore_ids(&base, &[(1, 1.0 / 3.0)], 0.5).unwrap();
    let scaled = [2.0, 1.0 * (1.0 + 1.0 / 6.0), 0.5];
    let z: f64 = scaled.iter().map(|x: &f64| x.exp()).sum();
    for (lp, s) in out.log_probs.iter().zip(scaled) {
        assert!((lp.exp() - s.exp() / z).abs() < 1e-12);
    }
}

#[test]
fn three_word_softmax_by_hand() {
    // logits 1, 2, 3 with bonus 0.4 on id 2 and lambda 0.5 -> 1, 2, 3.6
    let out = rescore_ids(&[1.0, 2.0, 3.0], &[(2, 0.4)], 0.5).unwrap();
    let expected = [0.0582003750, 0.1582050219, 0.7835946031];
    for (p, q) in out.probs().iter().zip(expected) {
        assert!((p - q).abs() < 1e-9, "{p} vs {q}");
    }
}

#[test]
fn rescore_by_word_drops_unknown_words() {
    let vocab = Vocabulary::from_tokens(["a", "b"]);
    let bonuses = BonusMap::from([("b".to_string(), 1.0), ("zz".to_string(), 1.0)]);
    let out = rescore(&[1.0, 1.0], &vocab, &bonuses, 0.5).unwrap();
    assert_eq!(out.diagnostics.dropped_oov, 1);
    assert_eq!(out.diagnostics.recommendations, 2);
    assert!(out.log_probs[1] > out.log_probs[0]);
    assert!(rescore(&[1.0], &vocab, &bonuses, 0.5).is_err());
}

#[test]
fn rescore_rejects_bad_input() {
    assert!(rescore_ids(&[1.0, f64::INFINITY], &[], 0.5).is_err());
    assert!(rescore_ids(&[1.0], &[(3, 1.0)], 0.5).is_err());
    assert!(rescore_ids(&[1.0], &[], -0.5).is_err());
}

#[test]
fn negative_logits_are_counted() {
    let out = rescore_ids(&[-1.0, 2.0], &[(0, 0.5), (1, 0.5)], 0.5).unwrap();
    assert_eq!(out.diagnostics.negative_logit_bonus, 1);
    assert_eq!(out.diagnostics.nonzero_bonus, 2);
}

fn attention(len: usize) -> impl Strategy<Value = AttentionVector> {
    prop::collection::vec(0.0f64..1.0, len).prop_map(|mut w| {
        w[0] += 1e-3;
        let total: f64 = w.iter().sum();
        AttentionVector::new(w.iter().map(|x| x / total).collect()).unwrap()
    })
}

proptest! {
    #[test]
    fn phrase_attention_is_bounded(attn in attention(6), start in 0usize..6, len in 1usize..6) {
        let sentence = toks("a b c d e f");
        let end = (start + len).min(6);
        let a = phrase_attention(&attn, &SourceSpan::new(&sentence, start, end)).unwrap();
        let max = attn.weights()[start..end].iter().copied().fold(0.0, f64::max);
        prop_assert!(a >= 0.0 && a <= max + 1e-15 && a <= 1.0);
    }

    #[test]
    fn bonus_is_linear_in_attention(a in attention(3), b in attention(3), t in 0.0f64..1.0) {
        let mix = AttentionVector::new(a.weights().iter().zip(b.weights()).map(|(x, y)| t * x + (1.0 - t) * y).collect()).unwrap();
        let cfg = BonusConfig::default();
        let (va, vb, vm) = (settled_bonus(&a, &cfg), settled_bonus(&b, &cfg), settled_bonus(&mix, &cfg));
        for word in vm.keys() {
            prop_assert!((vm[word] - (t * va[word] + (1.0 - t) * vb[word])).abs() < 1e-12);
        }
    }

    #[test]
    fn rescored_distribution_is_normalized(
        base in prop::collection::vec(-30.0f64..30.0, 1..40),
        raw in prop::collection::vec((0usize..40, 0.0f64..4.0), 0..20),
        lambda in 0.0f64..1.0,
    ) {
        let bonuses: Vec<(usize, f64)> = raw.into_iter().map(|(i, v)| (i % base.len(), v)).collect();
        let out = rescore_ids(&base, &bonuses, lambda).unwrap();
        prop_assert!((out.probs().iter().sum::<f64>() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn zero_lambda_or_no_bonus_is_identity(
        base in prop::collection::vec(-30.0f64..30.0, 1..40),
        raw in prop::collection::vec((0usize..40, 0.0f64..4.0), 0..20),
    ) {
        let bonuses: Vec<(usize, f64)> = raw.into_iter().map(|(i, v)| (i % base.len(), v)).collect();
        let reference = log_softmax(&base);
        for out in [rescore_ids(&base, &bonuses, 0.0).unwrap(), rescore_ids(&base, &[], 0.7).unwrap()] {
            for (p, q) in out.probs().iter().zip(&reference) {
                prop_assert!((p - q.exp()).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn larger_bonus_raises_positive_logit(
        base in prop::collection::vec(0.1f64..20.0, 2..20),
        v in 0.0f64..2.0,
        extra in 0.01f64..2.0,
        lambda in 0.05f64..0.95,
    ) {
        let lo = rescore_ids(&base, &[(0, v)], lambda).unwrap();
        let hi = rescore_ids(&base, &[(0, v + extra)], lambda).unwrap();
        prop_assert!(hi.log_probs[0] > lo.log_probs[0]);
        for i in 1..base.len() {
            prop_assert!(hi.log_probs[i] <= lo.log_probs[i]);
        }
    }

    #[test]
    fn repeated_ids_accumulate(base in prop::collection::vec(-5.0f64..5.0, 3), v in 0.0f64..1.0, w in 0.0f64..1.0) {
        let split = rescore_ids(&base, &[(1, v), (1, w)], 0.5).unwrap();
        let joined = rescore_ids(&base, &[(1, v + w)], 0.5).unwrap();
        for (a, b) in split.log_probs.iter().zip(&joined.log_probs) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }
}
