//! Random instances and independent oracles shared by the integration tests.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use wildcensus::datastore::{Detection, GroundTruthLabel};
use wildcensus::eval::{average_precision, match_image, pr_curve, MatchResult};
use wildcensus::{BBox, Class};

#[derive(Debug, Clone)]
pub struct ImageCase {
    pub id: String,
    pub dets: Vec<Detection>,
    pub labels: Vec<GroundTruthLabel>,
}

fn small_box(rng: &mut ChaCha8Rng) -> BBox {
    BBox::new(
        rng.random_range(0..5) as f64 * 6.0,
        rng.random_range(0..5) as f64 * 6.0,
        rng.random_range(4..16) as f64,
        rng.random_range(4..16) as f64,
    )
}

fn class(rng: &mut ChaCha8Rng) -> Class {
    if rng.random_bool(0.8) {
        Class::Deer
    } else {
        Class::Cow
    }
}

/// Up to 6 images with up to 5 labels and 5 detections each, on a coarse
/// lattice so overlaps and confidence ties are common. At least one deer
/// label is present.
pub fn random_instance(seed: u64) -> Vec<ImageCase> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(1..=6);
    let mut cases: Vec<ImageCase> = (0..n)
        .map(|i| {
            let id = format!("img{i}");
            let labels = (0..rng.random_range(0..=5))
                .map(|_| GroundTruthLabel {
                    image_id: id.clone(),
                    class: class(&mut rng),
                    bbox: small_box(&mut rng),
                    mask: None,
                    observers: vec![],
                })
                .collect();
            let dets = (0..rng.random_range(0..=5))
                .map(|_| Detection {
                    image_id: id.clone(),
                    class: class(&mut rng),
                    bbox: small_box(&mut rng),
                    confidence: rng.random_range(1..=10) as f64 / 10.0,
                    mask: None,
                })
                .collect();
            ImageCase { id, dets, labels }
        })
        .collect();
    if !cases
        .iter()
        .flat_map(|c| &c.labels)
        .any(|l| l.class == Class::Deer)
    {
        let id = cases[0].id.clone();
        cases[0].labels.push(GroundTruthLabel {
            image_id: id,
            class: Class::Deer,
            bbox: small_box(&mut rng),
            mask: None,
            observers: vec![],
        });
    }
    cases
}

/// Every label detected exactly, with random confidences.
pub fn perfect_instance(seed: u64) -> Vec<ImageCase> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let mut cases = random_instance(seed);
    for c in &mut cases {
        c.dets = c
            .labels
            .iter()
            .map(|l| Detection {
                image_id: l.image_id.clone(),
                class: l.class,
                bbox: l.bbox,
                confidence: rng.random_range(0.05..1.0),
                mask: None,
            })
            .collect();
    }
    cases
}

pub fn match_case(c: &ImageCase, iou: f64, conf: f64) -> MatchResult {
    let d: Vec<&Detection> = c.dets.iter().collect();
    let l: Vec<&GroundTruthLabel> = c.labels.iter().collect();
    let mut r = match_image(&d, &l, iou, conf).unwrap();
    r.image_id = c.id.clone();
    r
}

pub fn implementation_ap(cases: &[ImageCase], class: Class, iou: f64) -> f64 {
    let results: Vec<MatchResult> = cases.iter().map(|c| match_case(c, iou, 0.0)).collect();
    average_precision(&pr_curve(&results, Some(class)).unwrap()).unwrap_or(0.0)
}

// ---- oracle ----

pub fn oracle_iou(a: &BBox, b: &BBox) -> f64 {
    let ix = ((a.x + a.w).min(b.x + b.w) - a.x.max(b.x)).max(0.0);
    let iy = ((a.y + a.h).min(b.y + b.h) - a.y.max(b.y)).max(0.0);
    let inter = ix * iy;
    let union = a.w * a.h + b.w * b.h - inter;
    if inter == 0.0 {
        0.0
    } else {
        inter / union
    }
}

/// `(tp, fp)` for `class` among detections at confidence `>= cutoff`,
/// re-running greedy matching from scratch.
pub fn oracle_counts(cases: &[ImageCase], class: Class, iou: f64, cutoff: f64) -> (usize, usize) {
    let (mut tp, mut fp) = (0, 0);
    for c in cases {
        let mut dets: Vec<&Detection> = c.dets.iter().filter(|d| d.confidence >= cutoff).collect();
        dets.sort_by(|a, b| {
            b.confidence
                .partial_cmp(&a.confidence)
                .unwrap()
                .then(a.bbox.x.partial_cmp(&b.bbox.x).unwrap())
                .then(a.bbox.y.partial_cmp(&b.bbox.y).unwrap())
        });
        let mut used = vec![false; c.labels.len()];
        for d in dets {
            let mut best = None;
            let mut best_iou = 0.0;
            for (j, l) in c.labels.iter().enumerate() {
                let v = oracle_iou(&d.bbox, &l.bbox);
                if !used[j] && l.class == d.class && v >= iou && v > best_iou {
                    best = Some(j);
                    best_iou = v;
                }
            }
            if let Some(j) = best {
                used[j] = true;
            }
            if d.class == class {
                if best.is_some() {
                    tp += 1;
                } else {
                    fp += 1;
                }
            }
        }
    }
    (tp, fp)
}

/// Exact envelope area from one (recall, precision) point per distinct
/// confidence cutoff.
pub fn oracle_ap(cases: &[ImageCase], class: Class, iou: f64) -> f64 {
    let n_labels = cases
        .iter()
        .flat_map(|c| &c.labels)
        .filter(|l| l.class == class)
        .count();
    let mut cutoffs: Vec<f64> = cases
        .iter()
        .flat_map(|c| &c.dets)
        .filter(|d| d.class == class)
        .map(|d| d.confidence)
        .collect();
    cutoffs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    cutoffs.dedup();
    let points: Vec<(f64, f64)> = cutoffs
        .iter()
        .map(|&c| {
            let (tp, fp) = oracle_counts(cases, class, iou, c);
            (tp as f64 / n_labels as f64, tp as f64 / (tp + fp) as f64)
        })
        .collect();
    let mut recalls: Vec<f64> = points.iter().map(|p| p.0).collect();
    recalls.sort_by(|a, b| a.partial_cmp(b).unwrap());
    recalls.dedup();
    let mut area = 0.0;
    let mut prev = 0.0;
    for r in recalls {
        let env = points
            .iter()
            .filter(|p| p.0 >= r)
            .map(|p| p.1)
            .fold(0.0, f64::max);
        area += (r - prev) * env;
        prev = r;
    }
    area
}

// ---- review sessions ----

use wildcensus::review::{
    BoxAction, Event, EventKind, ReviewService, TaskState, Verdict, VerdictBox,
};

pub fn manual_box(x: f64) -> VerdictBox {
    VerdictBox {
        bbox: BBox::new(x, 100.0, 40.0, 40.0),
        class: Class::Deer,
        action: BoxAction::AddManual,
        candidate_id: None,
    }
}

pub fn random_verdict(rng: &mut ChaCha8Rng, image: &str, observer: &str) -> Verdict {
    // boxes drawn from two slots so observers agree often but not always
    let mut boxes = Vec::new();
    for x in [0.0, 400.0] {
        if rng.random_bool(0.5) {
            boxes.push(manual_box(x + rng.random_range(0.0..6.0)));
        }
    }
    Verdict {
        verdict_id: String::new(),
        image_id: image.to_string(),
        observer_id: observer.to_string(),
        declared_empty: boxes.is_empty(),
        boxes,
        duration: rng.random_range(5.0..120.0),
        submitted_at: 0.0,
    }
}

/// Drives a service with random commands (including rejected ones) until the
/// log holds at least `events` events. Returns the service and its clock.
pub fn random_session(seed: u64, events: usize, ttl: f64) -> (ReviewService, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let svc = ReviewService::new(ttl);
    let observers = ["ana", "ben", "caro", "dev"];
    let mut now = 0.0;
    let mut next_task = 0;
    let mut held: Vec<(String, String)> = Vec::new();
    while svc.events().len() < events {
        now += rng.random_range(0.0..ttl / 3.0);
        match rng.random_range(0..10) {
            0 | 1 => {
                next_task += 1;
                svc.create_task(&format!("t{next_task:04}"), vec![], now)
                    .unwrap();
            }
            2..=4 => {
                let o = observers[rng.random_range(0..observers.len())];
                if let Some(t) = svc.lease_next(o, now).unwrap() {
                    held.push((t.image_id, o.to_string()));
                }
            }
            5..=7 if !held.is_empty() => {
                let (task, o) = held.swap_remove(rng.random_range(0..held.len()));
                let v = random_verdict(&mut rng, &task, &o);
                let _ = svc.submit_verdict(v, now);
            }
            8 if next_task > 0 => {
                // unsolicited verdict, may be refused
                let task = format!("t{:04}", rng.random_range(1..=next_task));
                let o = observers[rng.random_range(0..observers.len())];
                let v = random_verdict(&mut rng, &task, o);
                let _ = svc.submit_verdict(v, now);
            }
            _ => {
                let state = svc.state();
                let conflicts: Vec<&String> = state
                    .tasks
                    .values()
                    .filter(|t| t.state == TaskState::Conflict)
                    .map(|t| &t.image_id)
                    .collect();
                if let Some(id) = conflicts.first() {
                    let v = random_verdict(&mut rng, id, "expert");
                    svc.adjudicate(v, now).unwrap();
                }
            }
        }
    }
    (svc, now)
}

/// Tasks leased again while a previous lease was still live.
pub fn double_leases(events: &[Event]) -> Vec<u64> {
    use std::collections::HashMap;
    let mut live: HashMap<&str, f64> = HashMap::new();
    let mut bad = Vec::new();
    for e in events {
        match &e.kind {
            EventKind::Leased {
                image_id,
                expires_at,
                ..
            } => {
                if live.get(image_id.as_str()).is_some_and(|&exp| exp > e.at) {
                    bad.push(e.seq);
                }
                live.insert(image_id, *expires_at);
            }
            EventKind::LeaseExpired { image_id, .. } => {
                live.remove(image_id.as_str());
            }
            EventKind::VerdictSubmitted { verdict } => {
                live.remove(verdict.image_id.as_str());
            }
            _ => {}
        }
    }
    bad
}

// ---- census ----

use wildcensus::census::{reconcile, ImageReview, Reconciled};
use wildcensus::datastore::Dataset;
use wildcensus::geometry::CameraRegistry;
use wildcensus::synth::Scenario;

pub fn reviews_of(verdicts: &[Verdict]) -> Vec<ImageReview> {
    let mut by_image: std::collections::BTreeMap<&str, Vec<Verdict>> = Default::default();
    for v in verdicts {
        by_image
            .entry(v.image_id.as_str())
            .or_default()
            .push(v.clone());
    }
    by_image
        .into_iter()
        .map(|(id, reviews)| ImageReview {
            image_id: id.to_string(),
            reviews,
            adjudication: None,
        })
        .collect()
}

pub fn reconcile_scenario(sc: &Scenario) -> Reconciled {
    let ds = Dataset::new(sc.images.clone(), CameraRegistry::with_defaults()).unwrap();
    reconcile(&reviews_of(&sc.verdicts), &ds, &sc.spec.origin).unwrap()
}
