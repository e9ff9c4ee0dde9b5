use num_rational::Rational64;
use proptest::prelude::*;

use estp_core::episode::{Episode, Fps, GroundTruthItem, Interval, Prediction, Query, TaskType, Timeline};
use estp_core::matcher::{brute_force_match, match_predictions, MatchConfig, MatchStrategy};
use estp_core::scoring::{aggregate, Aggregate, AnswerScorerSpec, Scorer, TimeScoreSpec};

const WORDS: [&str; 4] = ["red", "cup", "pan", "the"];

fn content() -> impl Strategy<Value = String> {
    prop::collection::vec(prop::sample::select(&WORDS[..]), 1..3).prop_map(|w| w.join(" "))
}

fn interval() -> impl Strategy<Value = (u64, u64)> {
    (0u64..40, 0u64..10).prop_map(|(s, len)| (s, s + len))
}

prop_compose! {
    fn instance()(
        gts in prop::collection::vec((0usize..2, content(), interval(), 0usize..12), 0..6),
        preds in prop::collection::vec((0usize..2, content(), 0u64..50), 0..8),
    ) -> (Episode, Vec<Prediction>) {
        let mut ep = Episode::new("e", Timeline::new(Fps::new(1, 1), 50), 10, 40);
        ep.queries.push(Query::new("q0", "?", 0));
        ep.queries.push(Query::new("q1", "?", 0));
        for (i, (q, c, (s, e), t)) in gts.into_iter().enumerate() {
            ep.gt_items.push(GroundTruthItem::new(format!("g{i}"), format!("q{q}"), c, vec![Interval::new(s, e)], TaskType::ALL[t]));
        }
        let preds = preds
            .into_iter()
            .enumerate()
            .map(|(i, (q, c, f))| Prediction::new(format!("p{i}"), format!("q{q}"), c, f))
            .collect();
        (ep, preds)
    }
}

fn scorer() -> Scorer<f64> {
    Scorer::new(AnswerScorerSpec::token_f1(), TimeScoreSpec::default()).unwrap()
}

fn optimal() -> MatchConfig {
    MatchConfig { strategy: MatchStrategy::OptimalAssignment, ..Default::default() }
}

proptest! {
    #[test]
    fn optimal_agrees_with_exhaustive_search((ep, preds) in instance()) {
        let sc = scorer();
        let fast = match_predictions(&ep, &preds, optimal(), Some(&sc)).unwrap();
        let slow = brute_force_match(&ep, &preds, &sc).unwrap();
        prop_assert_eq!(fast.pairs, slow.pairs);
    }

    #[test]
    fn optimal_credit_at_least_greedy((ep, preds) in instance()) {
        let sc = scorer();
        let greedy = match_predictions(&ep, &preds, MatchConfig::default(), None).unwrap();
        let best = match_predictions(&ep, &preds, optimal(), Some(&sc)).unwrap();
        let g = aggregate(&ep, &preds, &greedy, &sc).unwrap();
        let o = aggregate(&ep, &preds, &best, &sc).unwrap();
        prop_assert!(o.totals.sum_s >= g.totals.sum_s - 1e-12);
    }

    #[test]
    fn counts_partition((ep, preds) in instance()) {
        let m = match_predictions(&ep, &preds, MatchConfig::default(), None).unwrap();
        prop_assert_eq!(m.pairs.len() + m.false_negatives.len(), ep.gt_items.len());
        prop_assert_eq!(m.pairs.len() + m.false_positives.len() + m.ignored_duplicates.len(), preds.len());
    }

    #[test]
    fn f1_bounded_and_harmonic((ep, preds) in instance()) {
        let sc = scorer();
        let m = match_predictions(&ep, &preds, MatchConfig::default(), None).unwrap();
        let r = aggregate(&ep, &preds, &m, &sc).unwrap();
        for a in std::iter::once(&r.totals).chain(r.per_task.values()) {
            prop_assert!((0.0..=1.0).contains(&a.estp_f1));
            let pr = a.precision + a.recall;
            // zero-credit matches with no FP or FN leave P = R = 1 by convention but F1 = 0
            let degenerate = a.sum_s == 0.0 && a.fp_count + a.fn_count == 0;
            if pr > 0.0 && !degenerate {
                prop_assert!((2.0 * a.precision * a.recall / pr - a.estp_f1).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn exact_aggregate_identity(s in 0i64..50, fp in 0usize..20, fn_ in 0usize..20) {
        // credit cannot exceed the number of matches
        let s = Rational64::new(s.min(40), 4);
        let a = Aggregate::from_components(s, fp, fn_);
        let two = Rational64::from_integer(2);
        if a.precision + a.recall > Rational64::from_integer(0) {
            prop_assert_eq!(two * a.precision * a.recall / (a.precision + a.recall), a.estp_f1);
        }
    }
}
