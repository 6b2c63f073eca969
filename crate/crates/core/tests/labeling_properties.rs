mod common;

use common::{pd, simplex, simplex_with_class};
use cssl_core::credal::credal_contains;
use cssl_core::labeling::{
    adaptive_alpha, make_cssl_label, make_fixmatch_label, make_label, make_upsmatch_label, smoothed_target, AlignmentState,
};
use cssl_core::{CredalTarget, ProbDist, PseudoLabel, StrategyConfig};
use proptest::prelude::*;

fn state(prior: &[f64], mean: &[f64]) -> AlignmentState {
    let mut s = AlignmentState::new(pd(prior), 0.999).unwrap();
    s.running_mean = pd(mean);
    s
}

/// Random alignment state of dimension `k`.
fn alignment(k: usize) -> impl Strategy<Value = AlignmentState> {
    (prop::collection::vec(1e-2f64..1.0, k), prop::collection::vec(1e-2f64..1.0, k)).prop_map(|(a, b)| {
        let norm = |v: Vec<f64>| {
            let s: f64 = v.iter().sum();
            v.into_iter().map(|x| x / s).collect::<Vec<_>>()
        };
        state(&norm(a), &norm(b))
    })
}

fn with_alignment() -> impl Strategy<Value = (Vec<f64>, AlignmentState)> {
    simplex().prop_flat_map(|p| {
        let k = p.len();
        (Just(p), alignment(k))
    })
}

proptest! {
    #[test]
    fn cssl_never_skips((p, st) in with_alignment(), min_alpha in 0.0f64..=1.0, aligned in any::<bool>()) {
        let cfg = StrategyConfig { min_alpha, ..StrategyConfig::cssl() }.with_alignment(aligned);
        let label = make_cssl_label(&pd(&p), &st, &cfg).unwrap();
        prop_assert!(matches!(label, PseudoLabel::Credal(t) if t.alpha >= min_alpha && t.alpha <= 1.0));
    }

    #[test]
    fn fixmatch_skips_exactly_below_threshold((p, st) in with_alignment(), tau in 0.0f64..=1.0) {
        let p = pd(&p);
        let label = make_fixmatch_label(&p, &st, &StrategyConfig::fixmatch(tau)).unwrap();
        if p.max_prob() >= tau {
            prop_assert_eq!(label, PseudoLabel::Hard(p.argmax()));
        } else {
            prop_assert_eq!(label, PseudoLabel::Skip);
        }
    }

    #[test]
    fn upsmatch_skips_exactly_when_a_gate_fails(
        (p, st) in with_alignment(), tau in 0.0f64..=1.0, kappa in 0.0f64..0.5, u in 0.0f64..0.5,
    ) {
        let p = pd(&p);
        let label = make_upsmatch_label(&p, u, &st, &StrategyConfig::upsmatch(tau, kappa)).unwrap();
        let pass = p.max_prob() >= tau && u <= kappa;
        prop_assert_eq!(label == PseudoLabel::Skip, !pass);
        if pass {
            prop_assert_eq!(label, PseudoLabel::Hard(p.argmax()));
        }
    }

    #[test]
    fn upsmatch_without_uncertainty_gate_is_fixmatch((p, st) in with_alignment(), tau in 0.0f64..=1.0, u in 0.0f64..10.0) {
        let p = pd(&p);
        let ups = StrategyConfig::upsmatch(tau, f64::INFINITY);
        let fix = StrategyConfig::fixmatch(tau);
        prop_assert_eq!(make_label(&p, Some(u), &st, &ups).unwrap(), make_label(&p, None, &st, &fix).unwrap());
    }

    #[test]
    fn lsmatch_target_lies_in_the_credal_set(k in 2usize..=12, y_seed in 0usize..64, alpha in 0.0f64..=1.0) {
        let y = y_seed % k;
        let q = smoothed_target(k, y, alpha).unwrap();
        prop_assert!(credal_contains(CredalTarget::new(y, alpha).unwrap(), &q).unwrap());
    }

    #[test]
    fn alignment_with_matching_prior_keeps_argmax((p, prior_seed) in simplex_with_class().prop_flat_map(|(p, _)| {
        let k = p.len();
        (Just(p), prop::collection::vec(1e-2f64..1.0, k))
    })) {
        let s: f64 = prior_seed.iter().sum();
        let prior: Vec<f64> = prior_seed.iter().map(|v| v / s).collect();
        let st = state(&prior, &prior);
        let p = pd(&p);
        let label = make_cssl_label(&p, &st, &StrategyConfig::cssl()).unwrap();
        let PseudoLabel::Credal(t) = label else { panic!("expected a credal label") };
        prop_assert_eq!(t.ref_class, p.argmax());
    }

    #[test]
    fn adaptive_alpha_is_scale_invariant(q in prop::collection::vec(1e-3f64..10.0, 2..10), c in 1e-3f64..1e3) {
        let scaled: Vec<f64> = q.iter().map(|v| v * c).collect();
        let (y1, a1) = adaptive_alpha(&q, 0.0).unwrap();
        let (y2, a2) = adaptive_alpha(&scaled, 0.0).unwrap();
        prop_assert_eq!(y1, y2);
        prop_assert!((a1 - a2).abs() <= 1e-12);
    }

    #[test]
    fn unaligned_alpha_is_one_minus_max_prob((p, st) in with_alignment()) {
        let p = pd(&p);
        let cfg = StrategyConfig::cssl().with_alignment(false);
        let PseudoLabel::Credal(t) = make_cssl_label(&p, &st, &cfg).unwrap() else { panic!("expected a credal label") };
        prop_assert_eq!(t.alpha, 1.0 - p.max_prob());
        prop_assert_eq!(t.ref_class, p.argmax());
    }
}

#[test]
fn lsmatch_and_cssl_share_reference_and_alpha() {
    let st = state(&[0.5, 0.3, 0.2], &[0.2, 0.3, 0.5]);
    let p = ProbDist::new(vec![0.3, 0.3, 0.4]).unwrap();
    let PseudoLabel::Credal(t) = make_label(&p, None, &st, &StrategyConfig::cssl()).unwrap() else { panic!() };
    let PseudoLabel::Soft(q) = make_label(&p, None, &st, &StrategyConfig::lsmatch()).unwrap() else { panic!() };
    assert_eq!(q, smoothed_target(3, t.ref_class, t.alpha).unwrap());
    assert!(credal_contains(t, &q).unwrap());
}
