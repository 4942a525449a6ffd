mod support;

use proptest::prelude::*;
use support::*;
use wildcensus::datastore::Detection;
use wildcensus::eval::{count_confusion, iou, pr_curve, sweep_confidence, MatchResult};
use wildcensus::{BBox, Class};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn ap_matches_cutoff_oracle(seed in any::<u64>(), iou_t in prop::sample::select(vec![0.1, 0.3, 0.5])) {
        let cases = random_instance(seed);
        let got = implementation_ap(&cases, Class::Deer, iou_t);
        let want = oracle_ap(&cases, Class::Deer, iou_t);
        prop_assert!((got - want).abs() < 1e-9, "{got} vs {want}");
        prop_assert!((0.0..=1.0).contains(&got));
    }

    #[test]
    fn perfect_detector_scores_one(seed in any::<u64>()) {
        prop_assert_eq!(implementation_ap(&perfect_instance(seed), Class::Deer, 0.1), 1.0);
    }

    #[test]
    fn match_accounting(seed in any::<u64>(), conf in 0.0f64..1.0) {
        for c in random_instance(seed) {
            let r = match_case(&c, 0.1, conf);
            let kept = c.dets.iter().filter(|d| d.confidence >= conf).count();
            prop_assert_eq!(r.tp() + r.fn_count(), c.labels.len());
            prop_assert_eq!(r.tp() + r.fp(), kept);
            let mut hit: Vec<usize> = r.detections.iter().filter_map(|d| d.matched_label).collect();
            let n = hit.len();
            hit.sort_unstable();
            hit.dedup();
            prop_assert_eq!(hit.len(), n, "label matched twice");
        }
    }

    #[test]
    fn ap_invariant_under_monotone_rescaling(seed in any::<u64>()) {
        let cases = random_instance(seed);
        let squashed: Vec<ImageCase> = cases
            .iter()
            .map(|c| ImageCase {
                dets: c.dets.iter().map(|d| Detection { confidence: d.confidence.powi(3) * 0.5 + 0.1, ..d.clone() }).collect(),
                ..c.clone()
            })
            .collect();
        let a = implementation_ap(&cases, Class::Deer, 0.1);
        let b = implementation_ap(&squashed, Class::Deer, 0.1);
        prop_assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn lower_iou_never_loses_tps(seed in any::<u64>(), lo in 0.0f64..0.5, gap in 0.0f64..0.5) {
        for c in random_instance(seed) {
            prop_assert!(match_case(&c, lo, 0.0).tp() >= match_case(&c, lo + gap, 0.0).tp());
        }
    }

    #[test]
    fn recall_non_decreasing(seed in any::<u64>()) {
        let cases = random_instance(seed);
        let results: Vec<MatchResult> = cases.iter().map(|c| match_case(c, 0.1, 0.0)).collect();
        let curve = pr_curve(&results, Some(Class::Deer)).unwrap();
        prop_assert!(curve.windows(2).all(|w| w[0].recall <= w[1].recall && w[0].confidence > w[1].confidence));
    }

    #[test]
    fn sweep_profile_matches_refiltering(seed in any::<u64>()) {
        let cases = random_instance(seed);
        let results: Vec<MatchResult> = cases.iter().map(|c| match_case(c, 0.1, 0.0)).collect();
        let grid: Vec<f64> = (0..=20).map(|k| k as f64 / 20.0).collect();
        let s = sweep_confidence(&results, Some(Class::Deer), &grid).unwrap();
        for p in &s.profile {
            let filtered: Vec<ImageCase> = cases
                .iter()
                .map(|c| ImageCase { dets: c.dets.iter().filter(|d| d.confidence >= p.tau).cloned().collect(), ..c.clone() })
                .collect();
            let want = oracle_ap(&filtered, Class::Deer, 0.1);
            prop_assert!((p.ap - want).abs() < 1e-9, "tau {} {} vs {}", p.tau, p.ap, want);
        }
        let best = s.profile.iter().map(|p| p.ap).fold(0.0, f64::max);
        prop_assert_eq!(s.optimal_ap, best);
        let first = s.profile.iter().find(|p| p.ap == best).unwrap();
        prop_assert_eq!(s.optimal_confidence, first.tau);
    }

    #[test]
    fn confusion_total_is_image_count(seed in any::<u64>(), tau in 0.0f64..1.0) {
        let cases = random_instance(seed);
        let ids: Vec<&str> = cases.iter().map(|c| c.id.as_str()).collect();
        let dets: Vec<Detection> = cases.iter().flat_map(|c| c.dets.clone()).collect();
        let labels: Vec<_> = cases.iter().flat_map(|c| c.labels.clone()).collect();
        let m = count_confusion(&ids, &dets, &labels, Class::Deer, tau);
        prop_assert_eq!(m.total(), cases.len());
    }

    #[test]
    fn iou_symmetric_and_bounded(a in (0.0f64..50.0, 0.0f64..50.0, 0.1f64..30.0, 0.1f64..30.0),
                                 b in (0.0f64..50.0, 0.0f64..50.0, 0.1f64..30.0, 0.1f64..30.0)) {
        let (a, b) = (BBox::new(a.0, a.1, a.2, a.3), BBox::new(b.0, b.1, b.2, b.3));
        let (x, y) = (iou(&a, &b).unwrap(), iou(&b, &a).unwrap());
        prop_assert_eq!(x, y);
        prop_assert!((0.0..=1.0).contains(&x));
        prop_assert!((x - oracle_iou(&a, &b)).abs() < 1e-12);
        prop_assert!((iou(&a, &a).unwrap() - 1.0).abs() < 1e-12);
    }
}
