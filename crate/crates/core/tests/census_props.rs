mod support;

use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use support::*;
use wildcensus::census::{
    dedup, estimate, ConfirmedSighting, DedupParams, SightingSource, UniqueIndividual,
};
use wildcensus::synth::{generate, ScenarioSpec};
use wildcensus::{Class, Enu};

fn sighting(k: usize, e: f64, n: f64, t: f64) -> ConfirmedSighting {
    ConfirmedSighting {
        sighting_id: format!("s{k:03}"),
        image_id: format!("i{k}"),
        class: Class::Deer,
        bbox: wildcensus::BBox::new(0.0, 0.0, 1.0, 1.0),
        ground_point: Some(Enu::new(e, n)),
        timestamp: Some(t),
        transect_id: 1,
        supporting_observers: vec!["a".into(), "b".into()],
        source: SightingSource::Human,
        adjudicated: false,
    }
}

/// Connected components by repeated relaxation over all pairs.
fn closure_oracle(s: &[ConfirmedSighting], p: &DedupParams) -> Vec<Vec<String>> {
    let n = s.len();
    let mut label: Vec<usize> = (0..n).collect();
    let linked = |i: usize, j: usize| {
        s[i].ground_point
            .unwrap()
            .distance(&s[j].ground_point.unwrap())
            <= p.radius
            && (s[i].timestamp.unwrap() - s[j].timestamp.unwrap()).abs() <= p.time_window
    };
    loop {
        let mut changed = false;
        for i in 0..n {
            for j in 0..n {
                if linked(i, j) && label[j] < label[i] {
                    label[i] = label[j];
                    changed = true;
                }
            }
        }
        if !changed {
            break;
        }
    }
    let mut groups: std::collections::BTreeMap<usize, Vec<String>> = Default::default();
    for i in 0..n {
        groups
            .entry(label[i])
            .or_default()
            .push(s[i].sighting_id.clone());
    }
    let mut out: Vec<Vec<String>> = groups
        .into_values()
        .map(|mut g| {
            g.sort();
            g
        })
        .collect();
    out.sort();
    out
}

fn members(ind: &[UniqueIndividual]) -> Vec<Vec<String>> {
    let mut m: Vec<Vec<String>> = ind.iter().map(|i| i.members.clone()).collect();
    m.sort();
    m
}

fn sightings_strategy() -> impl Strategy<Value = Vec<ConfirmedSighting>> {
    prop::collection::vec((0.0f64..200.0, 0.0f64..200.0, 0.0f64..20_000.0), 0..60).prop_map(|v| {
        v.into_iter()
            .enumerate()
            .map(|(k, (e, n, t))| sighting(k, e, n, t))
            .collect()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn dedup_matches_transitive_closure(s in sightings_strategy(), radius in 1.0f64..40.0) {
        let p = DedupParams { radius, ..DedupParams::default() };
        let got = dedup(&s, &p).unwrap();
        prop_assert_eq!(members(&got), closure_oracle(&s, &p));
    }

    #[test]
    fn dedup_is_a_partition_and_order_free(s in sightings_strategy(), seed in any::<u64>()) {
        let p = DedupParams::default();
        let a = dedup(&s, &p).unwrap();
        let mut shuffled = s.clone();
        shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let b = dedup(&shuffled, &p).unwrap();
        prop_assert_eq!(&a, &b);
        let mut all: Vec<&String> = a.iter().flat_map(|i| &i.members).collect();
        all.sort();
        prop_assert_eq!(all.len(), s.len());
        all.dedup();
        prop_assert_eq!(all.len(), s.len());
        prop_assert!(a.len() <= s.len());
    }
}

#[test]
fn planted_deer_are_counted_once() {
    for k in [0usize, 1, 25, 200] {
        let sc = generate(&ScenarioSpec {
            deer: k,
            ..ScenarioSpec::default()
        })
        .unwrap();
        assert_eq!(sc.deer_count, k);
        let rec = reconcile_scenario(&sc);
        assert!(rec.conflicts.is_empty());
        let ind = dedup(&rec.sightings, &DedupParams::default()).unwrap();
        assert_eq!(ind.len(), k, "K = {k}");
        if k > 0 {
            assert!(rec.sightings.len() > k, "no overlap duplicates for K = {k}");
        }
        let est = estimate(ind.len(), &sc.plan).unwrap();
        assert_eq!(est.density_per_m2, k as f64 / sc.plan.surveyed_area());
    }
}

#[test]
fn observer_misses_surface_as_conflicts() {
    let spec = ScenarioSpec {
        deer: 40,
        observers: wildcensus::synth::ObserverProfile {
            miss_rate: 0.3,
            ..Default::default()
        },
        ..ScenarioSpec::default()
    };
    let sc = generate(&spec).unwrap();
    let rec = reconcile_scenario(&sc);
    assert!(!rec.conflicts.is_empty());
    let ind = dedup(&rec.sightings, &DedupParams::default()).unwrap();
    assert!(ind.len() <= 40);
}
