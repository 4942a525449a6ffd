//! Detection metrics: IoU, greedy matching, precision-recall curves,
//! all-points AP, the confidence-threshold sweep and per-image count
//! confusion matrices.
//!
//! Matching is greedy in descending confidence (ties broken by ascending box
//! `x`, then `y`), so the matches made at threshold `τ` are exactly the
//! matches made at threshold 0 restricted to detections with confidence
//! `≥ τ`. The sweep relies on this: one full curve is computed and each
//! threshold takes a prefix of it.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::datastore::{BBox, Class, Detection, GroundTruthLabel};

pub const REPORT_SCHEMA: &str = "wildcensus-report/1";
pub const DEFAULT_IOU: f64 = 0.10;
pub const DEFAULT_GRID_STEP: f64 = 0.005;

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("degenerate box {0:?}")]
    DegenerateBox(BBox),
    #[error("records from several images in one match call: {0:?} and {1:?}")]
    MixedImages(String, String),
    #[error("no ground-truth labels to evaluate against")]
    NoLabels,
    #[error("empty precision-recall curve")]
    EmptyCurve,
    #[error("empty threshold grid")]
    EmptyGrid,
    #[error("threshold {0} outside [0, 1]")]
    InvalidThreshold(f64),
}

pub type Result<T> = std::result::Result<T, EvalError>;

fn iou_unchecked(a: &BBox, b: &BBox) -> f64 {
    let iw = (a.x + a.w).min(b.x + b.w) - a.x.max(b.x);
    let ih = (a.y + a.h).min(b.y + b.h) - a.y.max(b.y);
    if iw <= 0.0 || ih <= 0.0 {
        return 0.0;
    }
    let inter = iw * ih;
    inter / (a.area() + b.area() - inter)
}

/// Intersection over union of two boxes.
pub fn iou(a: &BBox, b: &BBox) -> Result<f64> {
    for bx in [a, b] {
        if !bx.is_valid() {
            return Err(EvalError::DegenerateBox(*bx));
        }
    }
    Ok(iou_unchecked(a, b))
}

fn check_threshold(t: f64) -> Result<()> {
    if (0.0..=1.0).contains(&t) {
        Ok(())
    } else {
        Err(EvalError::InvalidThreshold(t))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionVerdict {
    /// Position in the input detection slice.
    pub index: usize,
    pub class: Class,
    pub confidence: f64,
    /// Matched label position; `None` means false positive.
    pub matched_label: Option<usize>,
    pub iou: f64,
}

impl DetectionVerdict {
    pub fn is_tp(&self) -> bool {
        self.matched_label.is_some()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelVerdict {
    pub index: usize,
    pub class: Class,
    pub matched_detection: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchResult {
    pub image_id: String,
    pub iou_threshold: f64,
    pub confidence_threshold: f64,
    /// Detections at or above the confidence threshold, in processing order.
    pub detections: Vec<DetectionVerdict>,
    pub labels: Vec<LabelVerdict>,
}

impl MatchResult {
    pub fn tp(&self) -> usize {
        self.detections.iter().filter(|d| d.is_tp()).count()
    }

    pub fn fp(&self) -> usize {
        self.detections.len() - self.tp()
    }

    pub fn fn_count(&self) -> usize {
        self.labels
            .iter()
            .filter(|l| l.matched_detection.is_none())
            .count()
    }

    pub fn label_count(&self, class: Class) -> usize {
        self.labels.iter().filter(|l| l.class == class).count()
    }
}

fn common_image<'a>(ids: impl Iterator<Item = &'a str>) -> Result<Option<&'a str>> {
    let mut first: Option<&str> = None;
    for id in ids {
        match first {
            None => first = Some(id),
            Some(f) if f != id => {
                return Err(EvalError::MixedImages(f.to_string(), id.to_string()))
            }
            _ => {}
        }
    }
    Ok(first)
}

/// Greedy confidence-ordered matching on a single image.
///
/// Each detection with confidence `≥ conf_thresh` takes the unmatched
/// same-class label of highest IoU (lowest index on ties) if that IoU is
/// `≥ iou_thresh`.
pub fn match_image(
    dets: &[&Detection],
    labels: &[&GroundTruthLabel],
    iou_thresh: f64,
    conf_thresh: f64,
) -> Result<MatchResult> {
    check_threshold(iou_thresh)?;
    check_threshold(conf_thresh)?;
    let image = common_image(
        dets.iter()
            .map(|d| d.image_id.as_str())
            .chain(labels.iter().map(|l| l.image_id.as_str())),
    )?
    .unwrap_or_default()
    .to_string();
    for b in dets
        .iter()
        .map(|d| &d.bbox)
        .chain(labels.iter().map(|l| &l.bbox))
    {
        if !b.is_valid() {
            return Err(EvalError::DegenerateBox(*b));
        }
    }

    let mut order: Vec<usize> = (0..dets.len())
        .filter(|&i| dets[i].confidence >= conf_thresh)
        .collect();
    order.sort_by(|&a, &b| {
        let (da, db) = (dets[a], dets[b]);
        db.confidence
            .total_cmp(&da.confidence)
            .then(da.bbox.x.total_cmp(&db.bbox.x))
            .then(da.bbox.y.total_cmp(&db.bbox.y))
            .then(a.cmp(&b))
    });

    let mut label_match: Vec<Option<usize>> = vec![None; labels.len()];
    let mut verdicts = Vec::with_capacity(order.len());
    for i in order {
        let d = dets[i];
        let mut best: Option<(usize, f64)> = None;
        for (j, l) in labels.iter().enumerate() {
            if l.class != d.class || label_match[j].is_some() {
                continue;
            }
            let v = iou_unchecked(&d.bbox, &l.bbox);
            if v >= iou_thresh && v > 0.0 && best.is_none_or(|(_, bv)| v > bv) {
                best = Some((j, v));
            }
        }
        if let Some((j, _)) = best {
            label_match[j] = Some(i);
        }
        verdicts.push(DetectionVerdict {
            index: i,
            class: d.class,
            confidence: d.confidence,
            matched_label: best.map(|(j, _)| j),
            iou: best.map_or(0.0, |(_, v)| v),
        });
    }
    Ok(MatchResult {
        image_id: image,
        iou_threshold: iou_thresh,
        confidence_threshold: conf_thresh,
        detections: verdicts,
        labels: labels
            .iter()
            .enumerate()
            .map(|(j, l)| LabelVerdict {
                index: j,
                class: l.class,
                matched_detection: label_match[j],
            })
            .collect(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrPoint {
    pub confidence: f64,
    pub recall: f64,
    pub precision: f64,
}

/// Cumulative precision/recall over all detections of `class` (or every
/// class when `None`), one point per distinct confidence in descending
/// order. Equal confidences are admitted together, since no threshold can
/// separate them.
pub fn pr_curve(results: &[MatchResult], class: Option<Class>) -> Result<Vec<PrPoint>> {
    let keep = |c: Class| class.is_none_or(|k| k == c);
    let n_labels: usize = results
        .iter()
        .map(|r| r.labels.iter().filter(|l| keep(l.class)).count())
        .sum();
    if n_labels == 0 {
        return Err(EvalError::NoLabels);
    }
    let mut scored: Vec<(f64, bool)> = results
        .iter()
        .flat_map(|r| r.detections.iter())
        .filter(|d| keep(d.class))
        .map(|d| (d.confidence, d.is_tp()))
        .collect();
    scored.sort_by(|a, b| b.0.total_cmp(&a.0));

    let mut points = Vec::new();
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < scored.len() {
        let conf = scored[i].0;
        while i < scored.len() && scored[i].0 == conf {
            if scored[i].1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push(PrPoint {
            confidence: conf,
            recall: tp as f64 / n_labels as f64,
            precision: tp as f64 / (tp + fp) as f64,
        });
    }
    Ok(points)
}

/// Area under the all-points interpolated precision envelope
/// `p(r) = max{precision_i : recall_i ≥ r}` over recall in `[0, 1]`.
pub fn average_precision(points: &[PrPoint]) -> Result<f64> {
    if points.is_empty() {
        return Err(EvalError::EmptyCurve);
    }
    let mut sorted: Vec<&PrPoint> = points.iter().collect();
    sorted.sort_by(|a, b| a.recall.total_cmp(&b.recall));
    let mut envelope = vec![0.0f64; sorted.len()];
    let mut running = 0.0f64;
    for i in (0..sorted.len()).rev() {
        running = running.max(sorted[i].precision);
        envelope[i] = running;
    }
    // integrate runs of constant envelope so a flat envelope is exact
    let mut area = 0.0;
    let mut run_start = 0.0;
    let mut run_end = 0.0;
    let mut run_value: Option<f64> = None;
    for (p, &env) in sorted.iter().zip(&envelope) {
        if p.recall <= run_end {
            continue;
        }
        match run_value {
            Some(v) if v == env => {}
            Some(v) => {
                area += (run_end - run_start) * v;
                run_start = run_end;
                run_value = Some(env);
            }
            None => run_value = Some(env),
        }
        run_end = p.recall;
    }
    if let Some(v) = run_value {
        area += (run_end - run_start) * v;
    }
    Ok(area.clamp(0.0, 1.0))
}

/// AP of the curve restricted to confidence `≥ tau`; 0 when nothing
/// survives.
pub fn ap_above(points: &[PrPoint], tau: f64) -> f64 {
    // points are in descending confidence
    let cut = points.partition_point(|p| p.confidence >= tau);
    if cut == 0 {
        0.0
    } else {
        average_precision(&points[..cut]).expect("non-empty prefix")
    }
}

/// Thresholds `0, step, 2·step, ..., 1`.
pub fn default_grid(step: f64) -> Vec<f64> {
    let n = (1.0 / step).round() as usize;
    (0..=n).map(|i| (i as f64 / n as f64).min(1.0)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub tau: f64,
    pub ap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sweep {
    pub optimal_confidence: f64,
    pub optimal_ap: f64,
    pub profile: Vec<SweepPoint>,
}

fn pick_optimum(profile: Vec<SweepPoint>) -> Sweep {
    let mut best = profile[0];
    for p in &profile[1..] {
        if p.ap > best.ap || (p.ap == best.ap && p.tau < best.tau) {
            best = *p;
        }
    }
    Sweep {
        optimal_confidence: best.tau,
        optimal_ap: best.ap,
        profile,
    }
}

fn check_grid(grid: &[f64]) -> Result<()> {
    if grid.is_empty() {
        return Err(EvalError::EmptyGrid);
    }
    grid.iter().try_for_each(|&t| check_threshold(t))
}

/// AP of detections filtered to confidence `≥ τ` for each `τ` in `grid`,
/// with the maximizing `τ` (smallest on ties).
pub fn sweep_confidence(
    results: &[MatchResult],
    class: Option<Class>,
    grid: &[f64],
) -> Result<Sweep> {
    check_grid(grid)?;
    let curve = pr_curve(results, class)?;
    Ok(pick_optimum(
        grid.iter()
            .map(|&tau| SweepPoint {
                tau,
                ap: ap_above(&curve, tau),
            })
            .collect(),
    ))
}

/// Matrix indexed `[ground-truth count][predicted count]`, one increment
/// per image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CountConfusion {
    pub class: Class,
    pub tau: f64,
    pub matrix: Vec<Vec<usize>>,
}

impl CountConfusion {
    pub fn new(class: Class, tau: f64) -> Self {
        Self {
            class,
            tau,
            matrix: vec![vec![0]],
        }
    }

    pub fn add(&mut self, gt: usize, pred: usize) {
        if gt >= self.matrix.len() {
            let width = self.matrix[0].len();
            self.matrix.resize(gt + 1, vec![0; width]);
        }
        if pred >= self.matrix[0].len() {
            for row in &mut self.matrix {
                row.resize(pred + 1, 0);
            }
        }
        self.matrix[gt][pred] += 1;
    }

    pub fn get(&self, gt: usize, pred: usize) -> usize {
        self.matrix
            .get(gt)
            .and_then(|r| r.get(pred))
            .copied()
            .unwrap_or(0)
    }

    pub fn total(&self) -> usize {
        self.matrix.iter().flatten().sum()
    }

    /// Images whose predicted count equals the true count.
    pub fn exact(&self) -> usize {
        (0..self.matrix.len()).map(|k| self.get(k, k)).sum()
    }
}

/// Per-image count confusion for `class` at threshold `tau` over
/// `image_ids`; images without records land in cell (0, 0).
pub fn count_confusion(
    image_ids: &[&str],
    dets: &[Detection],
    labels: &[GroundTruthLabel],
    class: Class,
    tau: f64,
) -> CountConfusion {
    let mut counts: HashMap<&str, (usize, usize)> =
        image_ids.iter().map(|id| (*id, (0, 0))).collect();
    for l in labels.iter().filter(|l| l.class == class) {
        if let Some(c) = counts.get_mut(l.image_id.as_str()) {
            c.0 += 1;
        }
    }
    for d in dets
        .iter()
        .filter(|d| d.class == class && d.confidence >= tau)
    {
        if let Some(c) = counts.get_mut(d.image_id.as_str()) {
            c.1 += 1;
        }
    }
    let mut m = CountConfusion::new(class, tau);
    for id in image_ids {
        let (g, p) = counts[id];
        m.add(g, p);
    }
    m
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub iou_threshold: f64,
    /// Classes averaged into mAP.
    pub classes: Vec<Class>,
    pub grid: Vec<f64>,
    /// Class counted in the confusion matrix.
    pub confusion_class: Class,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            iou_threshold: DEFAULT_IOU,
            classes: vec![Class::Deer],
            grid: default_grid(DEFAULT_GRID_STEP),
            confusion_class: Class::Deer,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassReport {
    pub class: Class,
    pub labels: usize,
    pub detections: usize,
    /// AP without any confidence filtering.
    pub ap_unfiltered: Option<f64>,
    pub ap_at_optimal: Option<f64>,
    /// Curve at the optimal threshold.
    pub pr_points: Vec<PrPoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub schema: String,
    pub config: EvalConfig,
    pub images: usize,
    pub map: f64,
    pub optimal_confidence: f64,
    pub sweep: Vec<SweepPoint>,
    pub per_class: Vec<ClassReport>,
    pub confusion: CountConfusion,
    pub tp: usize,
    pub fp: usize,
    pub fn_count: usize,
}

/// Groups records by image and matches every image in `image_ids` at
/// confidence 0. Records on images outside `image_ids` are ignored. Runs in
/// parallel on the current rayon pool; output order follows `image_ids`.
pub fn match_all(
    image_ids: &[&str],
    dets: &[Detection],
    labels: &[GroundTruthLabel],
    iou_thresh: f64,
) -> Result<Vec<MatchResult>> {
    let mut groups: HashMap<&str, (Vec<&Detection>, Vec<&GroundTruthLabel>)> = image_ids
        .iter()
        .map(|id| (*id, (Vec::new(), Vec::new())))
        .collect();
    for d in dets {
        if let Some(g) = groups.get_mut(d.image_id.as_str()) {
            g.0.push(d);
        }
    }
    for l in labels {
        if let Some(g) = groups.get_mut(l.image_id.as_str()) {
            g.1.push(l);
        }
    }
    image_ids
        .par_iter()
        .map(|id| {
            let (d, l) = &groups[id];
            let mut r = match_image(d, l, iou_thresh, 0.0)?;
            r.image_id = id.to_string();
            Ok(r)
        })
        .collect()
}

/// Full report: per-class curves, the mAP sweep, the optimum and the count
/// confusion matrix at the optimum.
pub fn evaluate(
    image_ids: &[&str],
    dets: &[Detection],
    labels: &[GroundTruthLabel],
    config: &EvalConfig,
) -> Result<EvalReport> {
    check_threshold(config.iou_threshold)?;
    check_grid(&config.grid)?;
    let unique: BTreeSet<&str> = image_ids.iter().copied().collect();
    let image_ids: Vec<&str> = if unique.len() == image_ids.len() {
        image_ids.to_vec()
    } else {
        unique.into_iter().collect()
    };
    let results = match_all(&image_ids, dets, labels, config.iou_threshold)?;

    let mut curves: BTreeMap<Class, Vec<PrPoint>> = BTreeMap::new();
    for class in Class::ALL {
        if let Ok(c) = pr_curve(&results, Some(class)) {
            curves.insert(class, c);
        }
    }
    let scored: Vec<&Vec<PrPoint>> = config
        .classes
        .iter()
        .filter_map(|c| curves.get(c))
        .collect();
    if scored.is_empty() {
        return Err(EvalError::NoLabels);
    }
    let profile: Vec<SweepPoint> = config
        .grid
        .iter()
        .map(|&tau| SweepPoint {
            tau,
            ap: scored.iter().map(|c| ap_above(c, tau)).sum::<f64>() / scored.len() as f64,
        })
        .collect();
    let sweep = pick_optimum(profile);
    let tau = sweep.optimal_confidence;

    let mut per_class = Vec::new();
    for class in Class::ALL {
        let n_labels: usize = results.iter().map(|r| r.label_count(class)).sum();
        let n_dets = results
            .iter()
            .flat_map(|r| &r.detections)
            .filter(|d| d.class == class && d.confidence >= tau)
            .count();
        if n_labels == 0 && n_dets == 0 {
            continue;
        }
        let curve = curves.get(&class);
        per_class.push(ClassReport {
            class,
            labels: n_labels,
            detections: n_dets,
            ap_unfiltered: curve.map(|c| ap_above(c, 0.0)),
            ap_at_optimal: curve.map(|c| ap_above(c, tau)),
            pr_points: curve
                .map(|c| {
                    c.iter()
                        .copied()
                        .take_while(|p| p.confidence >= tau)
                        .collect()
                })
                .unwrap_or_default(),
        });
    }

    let (mut tp, mut fp, mut fn_count) = (0, 0, 0);
    for r in &results {
        for d in r.detections.iter().filter(|d| d.confidence >= tau) {
            if d.is_tp() {
                tp += 1;
            } else {
                fp += 1;
            }
        }
        fn_count += r
            .labels
            .iter()
            .filter(|l| {
                l.matched_detection.is_none_or(|i| {
                    r.detections
                        .iter()
                        .any(|d| d.index == i && d.confidence < tau)
                })
            })
            .count();
    }

    Ok(EvalReport {
        schema: REPORT_SCHEMA.to_string(),
        config: config.clone(),
        images: image_ids.len(),
        map: sweep.optimal_ap,
        optimal_confidence: tau,
        sweep: sweep.profile,
        per_class,
        confusion: count_confusion(&image_ids, dets, labels, config.confusion_class, tau),
        tp,
        fp,
        fn_count,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn det(x: f64, y: f64, conf: f64) -> Detection {
        Detection {
            image_id: "img".into(),
            class: Class::Deer,
            bbox: BBox::new(x, y, 10.0, 10.0),
            confidence: conf,
            mask: None,
        }
    }

    fn label(x: f64, y: f64) -> GroundTruthLabel {
        GroundTruthLabel {
            image_id: "img".into(),
            class: Class::Deer,
            bbox: BBox::new(x, y, 10.0, 10.0),
            mask: None,
            observers: vec![],
        }
    }

    fn pt(recall: f64, precision: f64) -> PrPoint {
        PrPoint {
            confidence: 0.5,
            recall,
            precision,
        }
    }

    /// Counts unit pixels covered by both / either box (integer boxes only).
    fn pixel_iou(a: &BBox, b: &BBox) -> f64 {
        let inside = |bx: &BBox, x: i64, y: i64| {
            (x as f64) >= bx.x
                && (x as f64) < bx.x + bx.w
                && (y as f64) >= bx.y
                && (y as f64) < bx.y + bx.h
        };
        let (mut inter, mut uni) = (0, 0);
        for x in -5..40 {
            for y in -5..40 {
                let (ia, ib) = (inside(a, x, y), inside(b, x, y));
                inter += (ia && ib) as i32;
                uni += (ia || ib) as i32;
            }
        }
        inter as f64 / uni as f64
    }

    #[test]
    fn iou_cases() {
        let a = BBox::new(0.0, 0.0, 10.0, 10.0);
        assert_eq!(iou(&a, &a).unwrap(), 1.0);
        assert_eq!(iou(&a, &BBox::new(20.0, 20.0, 5.0, 5.0)).unwrap(), 0.0);
        let b = BBox::new(5.0, 0.0, 10.0, 10.0);
        let oracle = pixel_iou(&a, &b);
        assert!((oracle - 50.0 / 150.0).abs() < 1e-12);
        assert!((iou(&a, &b).unwrap() - oracle).abs() < 1e-12);
        assert!(iou(&a, &BBox::new(0.0, 0.0, 0.0, 3.0)).is_err());
    }

    #[test]
    fn iou_matches_pixel_oracle_on_grid_boxes() {
        let boxes: Vec<BBox> = (0..6)
            .flat_map(|i| {
                (0..4).map(move |j| {
                    BBox::new(
                        i as f64 * 3.0,
                        j as f64 * 2.0,
                        5.0 + j as f64,
                        4.0 + i as f64,
                    )
                })
            })
            .collect();
        for a in &boxes {
            for b in &boxes {
                assert!((iou(a, b).unwrap() - pixel_iou(a, b)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn match_single_tp() {
        let d = det(0.0, 0.0, 0.9);
        let l = label(0.0, 5.0);
        let r = match_image(&[&d], &[&l], 0.1, 0.0).unwrap();
        assert_eq!((r.tp(), r.fp(), r.fn_count()), (1, 0, 0));
    }

    #[test]
    fn match_higher_confidence_wins() {
        let (d1, d2) = (det(1.0, 0.0, 0.9), det(0.0, 1.0, 0.8));
        let l = label(0.0, 0.0);
        let r = match_image(&[&d2, &d1], &[&l], 0.1, 0.0).unwrap();
        assert_eq!((r.tp(), r.fp()), (1, 1));
        let tp = r.detections.iter().find(|v| v.is_tp()).unwrap();
        assert_eq!(tp.index, 1);
        assert_eq!(tp.confidence, 0.9);
    }

    #[test]
    fn match_all_missed() {
        let (l1, l2) = (label(0.0, 0.0), label(50.0, 50.0));
        let r = match_image(&[], &[&l1, &l2], 0.1, 0.0).unwrap();
        assert_eq!(r.fn_count(), 2);
    }

    #[test]
    fn match_respects_class_and_threshold() {
        let mut cow = det(0.0, 0.0, 0.9);
        cow.class = Class::Cow;
        let weak = det(0.0, 0.0, 0.05);
        let l = label(0.0, 0.0);
        let r = match_image(&[&cow, &weak], &[&l], 0.1, 0.1).unwrap();
        assert_eq!((r.tp(), r.fp(), r.fn_count()), (0, 1, 1));
    }

    #[test]
    fn match_ties_by_x_then_y() {
        let (a, b) = (det(2.0, 0.0, 0.5), det(1.0, 0.0, 0.5));
        let l = label(1.5, 0.0);
        let r = match_image(&[&a, &b], &[&l], 0.1, 0.0).unwrap();
        assert_eq!(r.detections[0].index, 1);
        assert!(r.detections[0].is_tp());
    }

    #[test]
    fn match_rejects_mixed_images() {
        let a = det(0.0, 0.0, 0.5);
        let mut l = label(0.0, 0.0);
        l.image_id = "other".into();
        assert!(matches!(
            match_image(&[&a], &[&l], 0.1, 0.0),
            Err(EvalError::MixedImages(..))
        ));
    }

    #[test]
    fn pr_tp_then_fp() {
        let (d1, d2) = (det(0.0, 0.0, 0.9), det(100.0, 0.0, 0.8));
        let l = label(0.0, 0.0);
        let r = match_image(&[&d1, &d2], &[&l], 0.1, 0.0).unwrap();
        let c = pr_curve(&[r], None).unwrap();
        let rp: Vec<(f64, f64)> = c.iter().map(|p| (p.recall, p.precision)).collect();
        assert_eq!(rp, vec![(1.0, 1.0), (1.0, 0.5)]);
        assert_eq!(average_precision(&c).unwrap(), 1.0);
    }

    #[test]
    fn pr_fp_then_tp() {
        let (d1, d2) = (det(100.0, 0.0, 0.9), det(0.0, 0.0, 0.8));
        let l = label(0.0, 0.0);
        let r = match_image(&[&d1, &d2], &[&l], 0.1, 0.0).unwrap();
        let c = pr_curve(&[r], None).unwrap();
        let rp: Vec<(f64, f64)> = c.iter().map(|p| (p.recall, p.precision)).collect();
        assert_eq!(rp, vec![(0.0, 0.0), (1.0, 0.5)]);
        assert_eq!(average_precision(&c).unwrap(), 0.5);
    }

    #[test]
    fn pr_requires_labels() {
        let d = det(0.0, 0.0, 0.9);
        let r = match_image(&[&d], &[], 0.1, 0.0).unwrap();
        assert_eq!(pr_curve(&[r], None), Err(EvalError::NoLabels));
        assert_eq!(average_precision(&[]), Err(EvalError::EmptyCurve));
    }

    #[test]
    fn ap_of_perfect_detector_is_exactly_one() {
        let pts: Vec<PrPoint> = (1..=7).map(|k| pt(k as f64 / 7.0, 1.0)).collect();
        assert_eq!(average_precision(&pts).unwrap(), 1.0);
    }

    #[test]
    fn ap_hand_envelopes() {
        assert_eq!(
            average_precision(&[pt(1.0, 1.0), pt(1.0, 0.5)]).unwrap(),
            1.0
        );
        assert_eq!(
            average_precision(&[pt(0.0, 0.0), pt(1.0, 0.5)]).unwrap(),
            0.5
        );
        // envelope: 1.0 on (0, .5], 2/3 on (.5, 1]
        let v = average_precision(&[pt(0.5, 1.0), pt(0.5, 0.5), pt(1.0, 2.0 / 3.0)]).unwrap();
        assert!((v - (0.5 + 0.5 * 2.0 / 3.0)).abs() < 1e-15);
    }

    #[test]
    fn sweep_finds_separating_threshold() {
        // TPs at 0.35..0.9, FPs at 0.05..0.25
        let mut dets = Vec::new();
        let mut labels = Vec::new();
        for k in 0..5 {
            let x = k as f64 * 100.0;
            labels.push(label(x, 0.0));
            dets.push(det(x, 0.0, 0.35 + 0.1 * k as f64));
            dets.push(det(x, 500.0, 0.05 + 0.05 * k as f64));
        }
        let dr: Vec<&Detection> = dets.iter().collect();
        let lr: Vec<&GroundTruthLabel> = labels.iter().collect();
        let r = match_image(&dr, &lr, 0.1, 0.0).unwrap();
        let grid = default_grid(0.05);
        let s = sweep_confidence(std::slice::from_ref(&r), None, &grid).unwrap();
        // trailing FPs never lower the envelope, so the tie rule picks 0
        assert_eq!(s.optimal_confidence, 0.0);
        assert_eq!(s.optimal_ap, 1.0);
        for p in s.profile.iter().filter(|p| p.tau > 0.25 && p.tau <= 0.35) {
            assert_eq!(p.ap, 1.0, "tau {}", p.tau);
        }
        // filtered-AP oracle: re-match at each τ
        for p in &s.profile {
            let rr = match_image(&dr, &lr, 0.1, p.tau).unwrap();
            let expect = pr_curve(&[rr], None)
                .ok()
                .filter(|c| !c.is_empty())
                .map_or(0.0, |c| average_precision(&c).unwrap());
            assert!((p.ap - expect).abs() < 1e-12, "tau {}", p.tau);
        }
        assert_eq!(s.profile.last().unwrap().ap, 0.0);
        assert_eq!(sweep_confidence(&[r], None, &[]), Err(EvalError::EmptyGrid));
    }

    #[test]
    fn confusion_cells() {
        let ids = ["a", "b", "c"];
        let mk_l = |id: &str| GroundTruthLabel {
            image_id: id.into(),
            ..label(0.0, 0.0)
        };
        let mk_d = |id: &str, c: f64| Detection {
            image_id: id.into(),
            ..det(0.0, 0.0, c)
        };
        let labels = vec![mk_l("a"), mk_l("a"), mk_l("b")];
        let dets = vec![mk_d("a", 0.9), mk_d("a", 0.8), mk_d("b", 0.1)];
        let m = count_confusion(&ids, &dets, &labels, Class::Deer, 0.26);
        assert_eq!(m.get(2, 2), 1);
        assert_eq!(m.get(1, 0), 1);
        assert_eq!(m.get(0, 0), 1);
        assert_eq!(m.total(), 3);

        let empties: Vec<String> = (0..575).map(|i| format!("e{i}")).collect();
        let refs: Vec<&str> = empties.iter().map(String::as_str).collect();
        let m = count_confusion(&refs, &[], &[], Class::Deer, 0.26);
        assert_eq!(m.get(0, 0), 575);
    }

    #[test]
    fn default_grid_resolves_0_26() {
        let g = default_grid(DEFAULT_GRID_STEP);
        assert_eq!(g.len(), 201);
        assert_eq!(g[0], 0.0);
        assert_eq!(*g.last().unwrap(), 1.0);
        assert!(g.iter().any(|t| (t - 0.26).abs() < 1e-12));
    }
}
