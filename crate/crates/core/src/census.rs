//! Verified sightings to a population estimate.
//!
//! [`reconcile`] merges the two observers' boxes per photograph into
//! [`ConfirmedSighting`]s, [`dedup`] links sightings of the same animal
//! across overlapping frames, and [`estimate`] scales the unique count by
//! the surveyed strip area.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::datastore::{BBox, Class, Dataset};
use crate::geometry::{pixel_to_ground, Enu, Geodetic, GeometryError};
use crate::planner::SurveyPlan;
use crate::review::{correspond, BoxAction, ReviewTask, Verdict, VerdictBox, AGREEMENT_IOU};

pub const CENSUS_SCHEMA: &str = "wildcensus-census/1";
pub const CONFLICT_SCHEMA: &str = "wildcensus-conflict/1";
pub const DEFAULT_DEDUP_RADIUS: f64 = 20.0;
pub const DEFAULT_TIME_WINDOW: f64 = 3.0 * 3600.0;

#[derive(Debug, Error)]
pub enum CensusError {
    #[error("{} image(s) lack two independent reviews: {}", .0.len(), preview(.0))]
    IncompleteReview(Vec<String>),
    #[error("image {0:?} is not in the manifest")]
    UnknownImage(String),
    #[error("{} sighting(s) have no ground point: {}", .0.len(), preview(.0))]
    MissingGroundPoint(Vec<String>),
    #[error("duplicate sighting id {0:?}")]
    DuplicateSighting(String),
    #[error("surveyed area must be > 0, got {0}")]
    ZeroArea(f64),
    #[error("invalid parameter: {0}")]
    InvalidParam(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

fn preview(ids: &[String]) -> String {
    let mut s = ids.iter().take(10).cloned().collect::<Vec<_>>().join(", ");
    if ids.len() > 10 {
        s.push_str(", ...");
    }
    s
}

pub type Result<T> = std::result::Result<T, CensusError>;

/// Review outcome for one photograph.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageReview {
    pub image_id: String,
    pub reviews: Vec<Verdict>,
    #[serde(default)]
    pub adjudication: Option<Verdict>,
}

impl From<&ReviewTask> for ImageReview {
    fn from(t: &ReviewTask) -> Self {
        Self {
            image_id: t.image_id.clone(),
            reviews: t.reviews.clone(),
            adjudication: t.adjudication.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SightingSource {
    Human,
    ModelAssisted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfirmedSighting {
    pub sighting_id: String,
    pub image_id: String,
    pub class: Class,
    pub bbox: BBox,
    pub ground_point: Option<Enu>,
    pub timestamp: Option<f64>,
    pub transect_id: u32,
    pub supporting_observers: Vec<String>,
    pub source: SightingSource,
    pub adjudicated: bool,
}

/// Box seen by one observer only, held back from the census.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConflictBox {
    pub observer_id: String,
    pub class: Class,
    pub bbox: BBox,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageConflict {
    pub schema: String,
    pub image_id: String,
    pub unsupported: Vec<ConflictBox>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Reconciled {
    pub sightings: Vec<ConfirmedSighting>,
    pub conflicts: Vec<ImageConflict>,
    /// Reviewed images whose manifest record is not census eligible.
    pub skipped_ineligible: usize,
}

fn source_of(boxes: &[&VerdictBox]) -> SightingSource {
    if boxes.iter().any(|b| b.action == BoxAction::ConfirmModel) {
        SightingSource::ModelAssisted
    } else {
        SightingSource::Human
    }
}

fn mean_box(a: &BBox, b: &BBox) -> BBox {
    BBox::new(
        (a.x + b.x) / 2.0,
        (a.y + b.y) / 2.0,
        (a.w + b.w) / 2.0,
        (a.h + b.h) / 2.0,
    )
}

/// Merges per-image verdicts into sightings. An adjudication is
/// authoritative; otherwise boxes the two observers share (same class, IoU
/// `>= 0.10`) become sightings and the rest go to the conflict list.
///
/// Ground points are the bbox centres projected through the image pose about
/// `origin`; images without a pose yield sightings without a ground point.
pub fn reconcile(
    reviews: &[ImageReview],
    dataset: &Dataset,
    origin: &Geodetic,
) -> Result<Reconciled> {
    let incomplete: Vec<String> = reviews
        .iter()
        .filter(|r| {
            r.adjudication.is_none()
                && r.reviews
                    .iter()
                    .map(|v| &v.observer_id)
                    .collect::<BTreeSet<_>>()
                    .len()
                    < 2
        })
        .map(|r| r.image_id.clone())
        .collect();
    if !incomplete.is_empty() {
        return Err(CensusError::IncompleteReview(incomplete));
    }
    let mut out = Reconciled::default();
    for r in reviews {
        let rec = dataset
            .image(&r.image_id)
            .ok_or_else(|| CensusError::UnknownImage(r.image_id.clone()))?;
        if !rec.census_eligible {
            out.skipped_ineligible += 1;
            continue;
        }
        let mut found: Vec<(Class, BBox, Vec<String>, SightingSource, bool)> = Vec::new();
        if let Some(adj) = &r.adjudication {
            for b in adj.positive_boxes() {
                found.push((
                    b.class,
                    b.bbox,
                    vec![adj.observer_id.clone()],
                    source_of(&[b]),
                    true,
                ));
            }
        } else {
            let (va, vb) = (&r.reviews[0], &r.reviews[1]);
            let mut unsupported = Vec::new();
            for class in Class::ALL {
                let pa: Vec<&VerdictBox> =
                    va.positive_boxes().filter(|b| b.class == class).collect();
                let pb: Vec<&VerdictBox> =
                    vb.positive_boxes().filter(|b| b.class == class).collect();
                let ba: Vec<BBox> = pa.iter().map(|b| b.bbox).collect();
                let bb: Vec<BBox> = pb.iter().map(|b| b.bbox).collect();
                let pairs = correspond(&ba, &bb, AGREEMENT_IOU);
                let mut observers = vec![va.observer_id.clone(), vb.observer_id.clone()];
                observers.sort();
                for &(i, j) in &pairs {
                    found.push((
                        class,
                        mean_box(&ba[i], &bb[j]),
                        observers.clone(),
                        source_of(&[pa[i], pb[j]]),
                        false,
                    ));
                }
                let used_a: BTreeSet<usize> = pairs.iter().map(|p| p.0).collect();
                let used_b: BTreeSet<usize> = pairs.iter().map(|p| p.1).collect();
                let lone = |v: &Verdict, boxes: &[BBox], used: &BTreeSet<usize>| {
                    boxes
                        .iter()
                        .enumerate()
                        .filter(|(k, _)| !used.contains(k))
                        .map(|(_, b)| ConflictBox {
                            observer_id: v.observer_id.clone(),
                            class,
                            bbox: *b,
                        })
                        .collect::<Vec<_>>()
                };
                unsupported.extend(lone(va, &ba, &used_a));
                unsupported.extend(lone(vb, &bb, &used_b));
            }
            if !unsupported.is_empty() {
                out.conflicts.push(ImageConflict {
                    schema: CONFLICT_SCHEMA.to_string(),
                    image_id: r.image_id.clone(),
                    unsupported,
                });
            }
        }
        let intr = dataset.intrinsics(rec);
        for (k, (class, bbox, supporters, source, adjudicated)) in found.into_iter().enumerate() {
            let ground_point = match &rec.pose {
                Some(pose) => {
                    let (cx, cy) = bbox.center();
                    let w = intr.image_width as f64;
                    let h = intr.image_height as f64;
                    Some(pixel_to_ground(
                        pose,
                        intr,
                        (cx.clamp(0.0, w), cy.clamp(0.0, h)),
                        origin,
                    )?)
                }
                None => None,
            };
            out.sightings.push(ConfirmedSighting {
                sighting_id: format!("{}#{}", r.image_id, k + 1),
                image_id: r.image_id.clone(),
                class,
                bbox,
                ground_point,
                timestamp: rec.pose.map(|p| p.timestamp),
                transect_id: rec.transect_id,
                supporting_observers: supporters,
                source,
                adjudicated,
            });
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UniqueIndividual {
    pub individual_id: u32,
    pub class: Class,
    /// Sorted.
    pub members: Vec<String>,
    pub centroid: Enu,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DedupParams {
    pub radius: f64,
    pub time_window: f64,
}

impl Default for DedupParams {
    fn default() -> Self {
        Self {
            radius: DEFAULT_DEDUP_RADIUS,
            time_window: DEFAULT_TIME_WINDOW,
        }
    }
}

struct UnionFind(Vec<usize>);

impl UnionFind {
    fn find(&mut self, mut x: usize) -> usize {
        while self.0[x] != x {
            self.0[x] = self.0[self.0[x]];
            x = self.0[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        // smaller root wins, keeping roots independent of merge order
        let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
        self.0[hi] = lo;
    }
}

/// Single-linkage clustering: two sightings of the same class are linked when
/// their ground points are within `radius` and their timestamps within
/// `time_window`. The result depends only on the set of sightings.
pub fn dedup(
    sightings: &[ConfirmedSighting],
    params: &DedupParams,
) -> Result<Vec<UniqueIndividual>> {
    if !(params.radius.is_finite() && params.radius > 0.0) {
        return Err(CensusError::InvalidParam(format!(
            "dedup radius {}",
            params.radius
        )));
    }
    if params.time_window.is_nan() || params.time_window < 0.0 {
        return Err(CensusError::InvalidParam(format!(
            "time window {}",
            params.time_window
        )));
    }
    let missing: Vec<String> = sightings
        .iter()
        .filter(|s| s.ground_point.is_none())
        .map(|s| s.sighting_id.clone())
        .collect();
    if !missing.is_empty() {
        return Err(CensusError::MissingGroundPoint(missing));
    }
    let mut order: Vec<&ConfirmedSighting> = sightings.iter().collect();
    order.sort_by(|a, b| a.sighting_id.cmp(&b.sighting_id));
    if let Some(w) = order
        .windows(2)
        .find(|w| w[0].sighting_id == w[1].sighting_id)
    {
        return Err(CensusError::DuplicateSighting(w[0].sighting_id.clone()));
    }

    let cell = |p: &Enu| {
        (
            (p.east / params.radius).floor() as i64,
            (p.north / params.radius).floor() as i64,
        )
    };
    let mut grid: HashMap<(i64, i64), Vec<usize>> = HashMap::new();
    for (i, s) in order.iter().enumerate() {
        grid.entry(cell(s.ground_point.as_ref().unwrap()))
            .or_default()
            .push(i);
    }
    let mut uf = UnionFind((0..order.len()).collect());
    for (i, s) in order.iter().enumerate() {
        let p = s.ground_point.unwrap();
        let (cx, cy) = cell(&p);
        for dx in -1..=1 {
            for dy in -1..=1 {
                let Some(bucket) = grid.get(&(cx + dx, cy + dy)) else {
                    continue;
                };
                for &j in bucket.iter().filter(|&&j| j > i) {
                    let o = order[j];
                    let close = p.distance(&o.ground_point.unwrap()) <= params.radius;
                    let dt = match (s.timestamp, o.timestamp) {
                        (Some(a), Some(b)) => (a - b).abs(),
                        _ => 0.0,
                    };
                    if close && dt <= params.time_window && s.class == o.class {
                        uf.union(i, j);
                    }
                }
            }
        }
    }
    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for i in 0..order.len() {
        groups.entry(uf.find(i)).or_default().push(i);
    }
    Ok(groups
        .into_values()
        .enumerate()
        .map(|(k, idx)| {
            let n = idx.len() as f64;
            let sum = idx.iter().fold(Enu::new(0.0, 0.0), |acc, &i| {
                acc.add(&order[i].ground_point.unwrap())
            });
            UniqueIndividual {
                individual_id: k as u32 + 1,
                class: order[idx[0]].class,
                members: idx.iter().map(|&i| order[i].sighting_id.clone()).collect(),
                centroid: sum.scale(1.0 / n),
            }
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CensusEstimate {
    pub unique_count: usize,
    pub surveyed_area_m2: f64,
    pub study_area_m2: f64,
    pub density_per_m2: f64,
    pub density_per_km2: f64,
    /// Uniform extrapolation of the strip density to the study area.
    pub abundance: f64,
    pub coverage: f64,
}

pub fn estimate_from_areas(
    unique_count: usize,
    surveyed_area_m2: f64,
    study_area_m2: f64,
) -> Result<CensusEstimate> {
    if !(surveyed_area_m2.is_finite() && surveyed_area_m2 > 0.0) {
        return Err(CensusError::ZeroArea(surveyed_area_m2));
    }
    let density = unique_count as f64 / surveyed_area_m2;
    Ok(CensusEstimate {
        unique_count,
        surveyed_area_m2,
        study_area_m2,
        density_per_m2: density,
        density_per_km2: density * 1e6,
        abundance: unique_count as f64 * study_area_m2 / surveyed_area_m2,
        coverage: surveyed_area_m2 / study_area_m2,
    })
}

/// Density over the plan's census-eligible strip area, extrapolated to its
/// study area.
pub fn estimate(unique_count: usize, plan: &SurveyPlan) -> Result<CensusEstimate> {
    estimate_from_areas(unique_count, plan.surveyed_area(), plan.study_area_m2)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CensusParams {
    pub dedup_radius: f64,
    pub time_window: f64,
    pub agreement_iou: f64,
    /// Set when the radius/window are the built-in defaults rather than
    /// field-calibrated values.
    pub default_dedup_criteria: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CensusReport {
    pub schema: String,
    pub params: CensusParams,
    pub images_reviewed: usize,
    pub sightings: usize,
    pub conflicts: usize,
    pub skipped_ineligible: usize,
    pub individuals: Vec<UniqueIndividual>,
    /// All classes together.
    pub estimate: CensusEstimate,
    pub per_class: BTreeMap<Class, CensusEstimate>,
}

/// Reconcile, dedup and estimate in one go.
pub fn run_census(
    reviews: &[ImageReview],
    dataset: &Dataset,
    plan: &SurveyPlan,
    dedup_params: &DedupParams,
) -> Result<(CensusReport, Vec<ImageConflict>)> {
    let origin = plan
        .origin
        .or_else(|| {
            dataset
                .images()
                .iter()
                .find_map(|r| r.pose.map(|p| p.position))
        })
        .unwrap_or(Geodetic::new(0.0, 0.0));
    let rec = reconcile(reviews, dataset, &origin)?;
    let individuals = dedup(&rec.sightings, dedup_params)?;
    let mut counts: BTreeMap<Class, usize> = BTreeMap::new();
    for ind in &individuals {
        *counts.entry(ind.class).or_default() += 1;
    }
    let per_class = counts
        .into_iter()
        .map(|(class, n)| Ok((class, estimate(n, plan)?)))
        .collect::<Result<BTreeMap<_, _>>>()?;
    let estimate = estimate(individuals.len(), plan)?;
    let defaults = DedupParams::default();
    let report = CensusReport {
        schema: CENSUS_SCHEMA.to_string(),
        params: CensusParams {
            dedup_radius: dedup_params.radius,
            time_window: dedup_params.time_window,
            agreement_iou: AGREEMENT_IOU,
            default_dedup_criteria: *dedup_params == defaults,
        },
        images_reviewed: reviews.len(),
        sightings: rec.sightings.len(),
        conflicts: rec.conflicts.len(),
        skipped_ineligible: rec.skipped_ineligible,
        individuals,
        estimate,
        per_class,
    };
    Ok((report, rec.conflicts))
}

pub fn write_outputs(dir: &Path, report: &CensusReport, conflicts: &[ImageConflict]) -> Result<()> {
    let io = |path: &Path| {
        let path = path.display().to_string();
        move |source| CensusError::Io { path, source }
    };
    std::fs::create_dir_all(dir).map_err(io(dir))?;
    let census = dir.join("census.json");
    let text = serde_json::to_string_pretty(report).expect("census serializes") + "\n";
    std::fs::write(&census, text).map_err(io(&census))?;
    let path = dir.join("conflicts.jsonl");
    let mut text = String::new();
    for c in conflicts {
        text.push_str(&serde_json::to_string(c).expect("conflict serializes"));
        text.push('\n');
    }
    std::fs::write(&path, text).map_err(io(&path))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datastore::ImageRecord;
    use crate::geometry::{CameraRegistry, FlightPose};

    fn sighting(id: &str, e: f64, n: f64, t: f64) -> ConfirmedSighting {
        ConfirmedSighting {
            sighting_id: id.into(),
            image_id: id.into(),
            class: Class::Deer,
            bbox: BBox::new(0.0, 0.0, 10.0, 10.0),
            ground_point: Some(Enu::new(e, n)),
            timestamp: Some(t),
            transect_id: 1,
            supporting_observers: vec!["A".into(), "B".into()],
            source: SightingSource::Human,
            adjudicated: false,
        }
    }

    fn vbox(x: f64) -> VerdictBox {
        VerdictBox {
            bbox: BBox::new(x, 1000.0, 60.0, 60.0),
            class: Class::Deer,
            action: BoxAction::AddManual,
            candidate_id: None,
        }
    }

    fn verdict(obs: &str, boxes: Vec<VerdictBox>) -> Verdict {
        Verdict {
            verdict_id: String::new(),
            image_id: "img".into(),
            observer_id: obs.into(),
            declared_empty: boxes.is_empty(),
            boxes,
            duration: 10.0,
            submitted_at: 0.0,
        }
    }

    fn dataset(eligible: bool) -> Dataset {
        let rec = ImageRecord {
            image_id: "img".into(),
            file: "img.jpg".into(),
            transect_id: 3,
            pose: Some(FlightPose {
                position: Geodetic::new(-34.0, -58.7),
                alt_agl: 45.0,
                heading: 0.0,
                timestamp: 100.0,
            }),
            camera_id: "phantom4pro".into(),
            census_eligible: eligible,
        };
        Dataset::new(vec![rec], CameraRegistry::with_defaults()).unwrap()
    }

    fn review(a: Vec<VerdictBox>, b: Vec<VerdictBox>) -> ImageReview {
        ImageReview {
            image_id: "img".into(),
            reviews: vec![verdict("A", a), verdict("B", b)],
            adjudication: None,
        }
    }

    #[test]
    fn shared_box_becomes_one_sighting() {
        let origin = Geodetic::new(-34.0, -58.7);
        let r = reconcile(
            &[review(vec![vbox(100.0)], vec![vbox(110.0)])],
            &dataset(true),
            &origin,
        )
        .unwrap();
        assert_eq!(r.sightings.len(), 1);
        assert_eq!(r.sightings[0].supporting_observers, ["A", "B"]);
        assert!(r.conflicts.is_empty());
        assert_eq!(r.sightings[0].transect_id, 3);
    }

    #[test]
    fn one_sided_box_is_a_conflict() {
        let origin = Geodetic::new(-34.0, -58.7);
        let r = reconcile(
            &[review(vec![vbox(100.0)], vec![])],
            &dataset(true),
            &origin,
        )
        .unwrap();
        assert!(r.sightings.is_empty());
        assert_eq!(r.conflicts[0].unsupported[0].observer_id, "A");
    }

    #[test]
    fn adjudication_is_authoritative() {
        let origin = Geodetic::new(-34.0, -58.7);
        let mut rv = review(vec![vbox(100.0)], vec![]);
        let mut confirm = vbox(100.0);
        confirm.action = BoxAction::ConfirmModel;
        confirm.candidate_id = Some(1);
        rv.adjudication = Some(verdict("expert", vec![confirm]));
        let r = reconcile(&[rv], &dataset(true), &origin).unwrap();
        assert_eq!(r.sightings.len(), 1);
        assert!(r.sightings[0].adjudicated);
        assert_eq!(r.sightings[0].source, SightingSource::ModelAssisted);
    }

    #[test]
    fn incomplete_and_ineligible() {
        let origin = Geodetic::new(-34.0, -58.7);
        let single = ImageReview {
            image_id: "img".into(),
            reviews: vec![verdict("A", vec![]), verdict("A", vec![])],
            adjudication: None,
        };
        match reconcile(&[single], &dataset(true), &origin) {
            Err(CensusError::IncompleteReview(ids)) => assert_eq!(ids, ["img"]),
            other => panic!("{other:?}"),
        }
        let r = reconcile(
            &[review(vec![vbox(0.0)], vec![vbox(0.0)])],
            &dataset(false),
            &origin,
        )
        .unwrap();
        assert_eq!((r.sightings.len(), r.skipped_ineligible), (0, 1));
    }

    #[test]
    fn dedup_examples() {
        let p = DedupParams::default();
        let pair = [sighting("a", 0.0, 0.0, 0.0), sighting("b", 3.0, 0.0, 5.0)];
        assert_eq!(dedup(&pair, &p).unwrap().len(), 1);
        let far = [sighting("a", 0.0, 0.0, 0.0), sighting("b", 100.0, 0.0, 5.0)];
        assert_eq!(dedup(&far, &p).unwrap().len(), 2);
        let late = [
            sighting("a", 0.0, 0.0, 0.0),
            sighting("b", 0.0, 0.0, 4.0 * 3600.0),
        ];
        assert_eq!(dedup(&late, &p).unwrap().len(), 2);
    }

    #[test]
    fn dedup_chains_transitively() {
        let p = DedupParams::default();
        let chain: Vec<_> = (0..5)
            .map(|k| sighting(&format!("s{k}"), 15.0 * k as f64, 0.0, 0.0))
            .collect();
        let out = dedup(&chain, &p).unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].centroid, Enu::new(30.0, 0.0));
    }

    #[test]
    fn dedup_rejects_missing_points() {
        let mut s = sighting("a", 0.0, 0.0, 0.0);
        s.ground_point = None;
        assert!(matches!(
            dedup(&[s], &DedupParams::default()),
            Err(CensusError::MissingGroundPoint(_))
        ));
    }

    #[test]
    fn estimate_examples() {
        let e = estimate_from_areas(10, 2e6, 20e6).unwrap();
        assert_eq!(e.density_per_km2, 5.0);
        assert_eq!(e.abundance, 100.0);
        let e = estimate_from_areas(231, 1e6, 10e6).unwrap();
        assert!((e.abundance - 2310.0).abs() < 1e-9);
        assert_eq!(e.coverage, 0.1);
        let e = estimate_from_areas(0, 1e6, 10e6).unwrap();
        assert_eq!((e.density_per_km2, e.abundance), (0.0, 0.0));
        assert!(matches!(
            estimate_from_areas(1, 0.0, 1.0),
            Err(CensusError::ZeroArea(_))
        ));
    }
}
