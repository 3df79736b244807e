mod common;

use basfuzz::harness::seed_rng;
use basfuzz::metrics::{summarize, FuzzReport, SummaryOptions};
use basfuzz::objective::{bleu, BleuConfig};
use basfuzz::perturb::cosine;
use basfuzz::search::{soft_sample_indices, update_width, SearchParams};
use basfuzz::text::{render_tokens, tokenize, tokenize_surfaces, FuzzInput, StopwordSet};
use basfuzz::wir::{importance_scores, order_by_score};
use common::{oracles, planted_pair};
use proptest::prelude::*;

fn words() -> impl Strategy<Value = String> {
    prop::collection::vec(prop::sample::select(vec!["a", "b", "c", "d", "e", "f"]), 1..12).prop_map(|v| v.join(" "))
}

proptest! {
    #[test]
    fn render_then_tokenize_is_stable(s in "[A-Za-z0-9 ,.!?'()-]{0,40}") {
        let once = render_tokens(&tokenize(&s));
        let twice = render_tokens(&tokenize(&once));
        prop_assert_eq!(&once, &twice);
        prop_assert_eq!(tokenize_surfaces(&once), tokenize_surfaces(&s));
    }

    #[test]
    fn bleu_is_bounded_and_matches_oracle(h in words(), r in words()) {
        let b = bleu(&h, &r, &BleuConfig::default()).unwrap();
        prop_assert!((0.0..=1.0).contains(&b));
        prop_assert!((b - oracles::bleu(&h, &r, 1e-9)).abs() <= 1e-9);
        prop_assert_eq!(bleu(&r, &r, &BleuConfig::default()).unwrap(), 1.0);
    }

    #[test]
    fn cosine_is_symmetric_and_scale_free(
        a in prop::collection::vec(-5.0f64..5.0, 4),
        b in prop::collection::vec(-5.0f64..5.0, 4),
        k in 0.1f64..10.0,
    ) {
        prop_assume!(a.iter().any(|x| x.abs() > 1e-3) && b.iter().any(|x| x.abs() > 1e-3));
        let ab = cosine(&a, &b).unwrap();
        prop_assert!((ab - cosine(&b, &a).unwrap()).abs() < 1e-12);
        let scaled: Vec<f64> = a.iter().map(|x| x * k).collect();
        prop_assert!((ab - cosine(&scaled, &b).unwrap()).abs() < 1e-9);
        prop_assert!((-1.0 - 1e-12..=1.0 + 1e-12).contains(&ab));
    }

    #[test]
    fn larger_loss_change_ranks_first(deltas in prop::collection::vec(0.0f64..1.0, 1..10)) {
        let scores = importance_scores(&deltas);
        let positions: Vec<usize> = (0..deltas.len()).collect();
        let order = order_by_score(&positions, &scores);
        for w in order.windows(2) {
            prop_assert!(deltas[w[0]] >= deltas[w[1]]);
            if deltas[w[0]] == deltas[w[1]] {
                prop_assert!(w[0] < w[1]);
            }
        }
    }

    #[test]
    fn width_update_stays_in_bounds(b in 2usize..=6, h in 0.0f64..5.0) {
        let p = SearchParams::default();
        let w = update_width(b, h, &p);
        prop_assert!((p.b_min..=p.b_max).contains(&w));
        prop_assert!(w >= b && w <= b + p.sigma);
        prop_assert!((oracles::entropy(&[0.1, 0.2], p.epsilon) - basfuzz::search::beam_entropy(&[0.1, 0.2], p.epsilon)).abs() < 1e-12);
    }

    #[test]
    fn soft_sampling_draws_distinct_indices(
        losses in prop::collection::vec(0.0f64..1.0, 0..8),
        count in 0usize..10,
        seed in any::<u64>(),
    ) {
        let mut rng = seed_rng(seed, "p");
        let picked = soft_sample_indices(&losses, count, &mut rng);
        prop_assert_eq!(picked.len(), count.min(losses.len()));
        let mut sorted = picked.clone();
        sorted.sort();
        sorted.dedup();
        prop_assert_eq!(sorted.len(), picked.len());
        prop_assert!(picked.iter().all(|&i| i < losses.len()));
    }

    #[test]
    fn summary_ignores_report_order(flags in prop::collection::vec((any::<bool>(), 0usize..4, 1u64..50), 1..12), rot in 0usize..12) {
        let seed = FuzzInput::new("s", "", "a b c d", "a b c d", &StopwordSet::default());
        let reports: Vec<FuzzReport> = flags
            .iter()
            .map(|&(success, subs, q)| {
                let mut r = FuzzReport::new(&seed);
                r.success = success;
                r.substitutions = (0..subs)
                    .map(|i| basfuzz::search::Substitution { position: i, original: "a".into(), replacement: "b".into() })
                    .collect();
                r.queries.logical_queries = q;
                r
            })
            .collect();
        let mut rotated = reports.clone();
        rotated.rotate_left(rot % reports.len());
        rotated.reverse();
        let a = summarize(&reports, SummaryOptions::default());
        let b = summarize(&rotated, SummaryOptions::default());
        prop_assert_eq!(a.n_suc, b.n_suc);
        prop_assert_eq!(a.s_rate, b.s_rate);
        let close = |x: Option<f64>, y: Option<f64>| match (x, y) {
            (Some(x), Some(y)) => (x - y).abs() < 1e-9,
            (None, None) => true,
            _ => false,
        };
        prop_assert!(close(a.c_rate, b.c_rate));
        prop_assert!(close(a.q_n, b.q_n));
    }
}

#[test]
fn caching_does_not_change_results() {
    let suite = planted_pair(15, 10, 41);
    let (cached, _) = suite.instrumented_bench(true);
    let (uncached, mock) = suite.instrumented_bench(false);
    for seed in &cached.seeds {
        let mut s1 = cached.client.session();
        let mut s2 = uncached.client.session();
        let mut a = cached.fuzzer(&cached.params).fuzz(seed, &mut s1, &mut seed_rng(9, &seed.seed_id));
        let mut b = uncached.fuzzer(&uncached.params).fuzz(seed, &mut s2, &mut seed_rng(9, &seed.seed_id));
        assert_eq!(a.queries.logical_queries, b.queries.logical_queries);
        assert!(a.queries.model_invocations <= b.queries.model_invocations);
        assert_eq!(b.queries.model_invocations, b.queries.logical_queries);
        for r in [&mut a, &mut b] {
            r.queries = Default::default();
            r.wall_time = Default::default();
        }
        assert_eq!(a, b);
    }
    assert_eq!(mock.invocations(), uncached.client.ledger_snapshot().model_invocations);
}
