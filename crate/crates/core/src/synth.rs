//! Seeded synthetic surveys.
//!
//! A scenario plans flights over a rectangular study area, photographs every
//! transect at a fixed interval, plants deer inside the counted strips and
//! derives labels, detections and two-observer verdicts from the exact
//! camera geometry. Deer that fall in the forward overlap of consecutive
//! frames show up in both, which is what deduplication has to undo.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::datastore::{
    self, BBox, Class, DataError, Detection, GroundTruthLabel, ImageRecord, Mask,
};
use crate::geometry::{
    along_track_extent, enu_unproject, ground_to_pixel, CameraIntrinsics, Enu, FlightPose,
    Geodetic, GeometryError,
};
use crate::planner::{plan_survey, segment_distance, PlanError, PlanParams, StudyArea, SurveyPlan};
use crate::review::{BoxAction, Verdict, VerdictBox, VERDICT_SCHEMA};

pub const SCENARIO_SCHEMA: &str = "wildcensus-scenario/1";
pub const TRUTH_SCHEMA: &str = "wildcensus-truth/1";
pub const CAMERA_ID: &str = "phantom4pro";

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("cannot place {wanted} deer {spacing} m apart (placed {placed})")]
    InfeasibleSpacing {
        wanted: usize,
        placed: usize,
        spacing: f64,
    },
    #[error("invalid scenario: {0}")]
    InvalidSpec(String),
    #[error(transparent)]
    Plan(#[from] PlanError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, SynthError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectorProfile {
    /// Probability a visible animal is detected.
    pub tp_rate: f64,
    /// Expected false positives per image.
    pub fp_per_image: f64,
    pub tp_confidence: (f64, f64),
    pub fp_confidence: (f64, f64),
    /// Box jitter in pixels.
    pub jitter_px: f64,
}

impl Default for DetectorProfile {
    fn default() -> Self {
        Self {
            tp_rate: 1.0,
            fp_per_image: 0.0,
            tp_confidence: (0.5, 0.99),
            fp_confidence: (0.01, 0.3),
            jitter_px: 4.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ObserverProfile {
    /// Number of observers in the pool; each image goes to two of them.
    pub pool: usize,
    /// Probability an observer overlooks a visible animal.
    pub miss_rate: f64,
    pub jitter_px: f64,
    /// Seconds spent per image.
    pub seconds: (f64, f64),
}

impl Default for ObserverProfile {
    fn default() -> Self {
        Self {
            pool: 4,
            miss_rate: 0.0,
            jitter_px: 3.0,
            seconds: (20.0, 90.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioSpec {
    pub seed: u64,
    pub origin: Geodetic,
    /// East-west extent, meters.
    pub width: f64,
    /// North-south extent, meters.
    pub height: f64,
    pub deer: usize,
    pub min_spacing: f64,
    pub cows: usize,
    pub plan: PlanParams,
    pub camera: CameraIntrinsics,
    pub alt_agl: f64,
    /// Seconds between exposures.
    pub photo_interval: f64,
    /// Animal body size on the ground, meters (length, width).
    pub body: (f64, f64),
    pub detector: DetectorProfile,
    pub observers: ObserverProfile,
}

impl Default for ScenarioSpec {
    fn default() -> Self {
        Self {
            seed: 7,
            origin: Geodetic::new(-34.0, -58.8),
            width: 5000.0,
            height: 5000.0,
            deer: 25,
            min_spacing: 40.0,
            cows: 0,
            plan: PlanParams::default(),
            camera: CameraIntrinsics::phantom4pro(),
            alt_agl: 45.0,
            photo_interval: 5.0,
            body: (1.6, 0.8),
            detector: DetectorProfile::default(),
            observers: ObserverProfile::default(),
        }
    }
}

impl ScenarioSpec {
    /// About 40,000 photographs with a realistic detector and observers.
    pub fn large() -> Self {
        Self {
            seed: 11,
            width: 16_000.0,
            height: 16_500.0,
            deer: 300,
            cows: 100,
            plan: PlanParams {
                max_route_length: 40_000.0,
                ..PlanParams::default()
            },
            photo_interval: 1.6,
            detector: DetectorProfile {
                tp_rate: 0.95,
                fp_per_image: 0.05,
                ..DetectorProfile::default()
            },
            observers: ObserverProfile {
                miss_rate: 0.02,
                ..ObserverProfile::default()
            },
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(SynthError::InvalidSpec(m));
        if !(self.width > 0.0 && self.height > 0.0) {
            return bad(format!("area {} x {}", self.width, self.height));
        }
        if self.min_spacing.is_nan() || self.min_spacing <= 0.0 {
            return bad("min_spacing must be > 0".into());
        }
        if !(self.alt_agl > 0.0 && self.photo_interval > 0.0) {
            return bad("altitude and photo interval must be > 0".into());
        }
        let step = self.plan.speed * self.photo_interval;
        let along = along_track_extent(&self.camera, self.alt_agl)?;
        if step >= along {
            return bad(format!(
                "{step} m between exposures leaves gaps in a {along} m frame"
            ));
        }
        for (name, p) in [
            ("tp_rate", self.detector.tp_rate),
            ("miss_rate", self.observers.miss_rate),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return bad(format!("{name} {p} outside [0, 1]"));
            }
        }
        if self.observers.pool < 2 {
            return bad("need at least two observers".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedAnimal {
    pub id: u32,
    pub class: Class,
    pub position: Enu,
    pub transect_id: u32,
}

/// Everything a scenario produces.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub spec: ScenarioSpec,
    pub plan: SurveyPlan,
    pub images: Vec<ImageRecord>,
    pub labels: Vec<GroundTruthLabel>,
    pub detections: Vec<Detection>,
    pub verdicts: Vec<Verdict>,
    pub animals: Vec<PlantedAnimal>,
    /// Deer seen in at least one census-eligible photograph.
    pub deer_count: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Truth {
    pub schema: String,
    pub deer_count: usize,
    pub images: usize,
    pub animals: Vec<PlantedAnimal>,
}

fn heading_of(d: &Enu) -> f64 {
    d.east.atan2(d.north).to_degrees().rem_euclid(360.0)
}

fn uniform(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}

fn jitter(rng: &mut ChaCha8Rng, b: &BBox, px: f64, w: u32, h: u32) -> BBox {
    let mut d = || {
        if px > 0.0 {
            rng.random_range(-px..px)
        } else {
            0.0
        }
    };
    let (dx, dy, dw, dh) = (d(), d(), d(), d());
    clip(
        &BBox::new(b.x + dx, b.y + dy, (b.w + dw).max(2.0), (b.h + dh).max(2.0)),
        w,
        h,
    )
}

fn clip(b: &BBox, w: u32, h: u32) -> BBox {
    let x0 = b.x.clamp(0.0, w as f64 - 1.0);
    let y0 = b.y.clamp(0.0, h as f64 - 1.0);
    let x1 = (b.x + b.w).clamp(x0 + 1.0, w as f64);
    let y1 = (b.y + b.h).clamp(y0 + 1.0, h as f64);
    BBox::new(x0, y0, x1 - x0, y1 - y0)
}

/// Twelve-vertex ellipse inscribed in `b`.
fn ellipse_mask(b: &BBox) -> Mask {
    let (cx, cy) = b.center();
    (0..12)
        .map(|k| {
            let a = k as f64 * std::f64::consts::TAU / 12.0;
            [cx + b.w / 2.0 * a.cos(), cy + b.h / 2.0 * a.sin()]
        })
        .collect()
}

struct Placement<'a> {
    spec: &'a ScenarioSpec,
    plan: &'a SurveyPlan,
    swath: f64,
}

impl Placement<'_> {
    /// Random points inside primary strips, away from strip ends and
    /// connectors, at least `min_spacing` apart.
    fn place(
        &self,
        rng: &mut ChaCha8Rng,
        n: usize,
        taken: &mut Vec<Enu>,
        class: Class,
    ) -> Result<Vec<PlantedAnimal>> {
        let primaries: Vec<_> = self
            .plan
            .transects
            .iter()
            .filter(|t| t.kind == crate::planner::TransectKind::Primary && t.census_eligible)
            .collect();
        let connectors: Vec<_> = self
            .plan
            .transects
            .iter()
            .filter(|t| t.kind == crate::planner::TransectKind::Connector)
            .collect();
        let end_margin = self.swath / 2.0 + 30.0;
        let side = self.swath / 2.0 - self.spec.body.0.max(self.spec.body.1) - 1.0;
        let spacing = self.spec.min_spacing;
        let cell = |p: &Enu| {
            (
                (p.east / spacing).floor() as i64,
                (p.north / spacing).floor() as i64,
            )
        };
        let mut grid: HashMap<(i64, i64), Vec<Enu>> = HashMap::new();
        for p in taken.iter() {
            grid.entry(cell(p)).or_default().push(*p);
        }
        let mut out = Vec::with_capacity(n);
        let mut attempts = 0usize;
        while out.len() < n {
            attempts += 1;
            if primaries.is_empty() || attempts > 200 * n + 1000 {
                return Err(SynthError::InfeasibleSpacing {
                    wanted: n,
                    placed: out.len(),
                    spacing,
                });
            }
            let t = primaries[rng.random_range(0..primaries.len())];
            if t.length <= 2.0 * end_margin {
                continue;
            }
            let s = rng.random_range(end_margin..t.length - end_margin);
            let off = rng.random_range(-side..side);
            let dir = t.end.sub(&t.start).scale(1.0 / t.length);
            let across = Enu::new(dir.north, -dir.east);
            let p = t.start.add(&dir.scale(s)).add(&across.scale(off));
            let (cx, cy) = cell(&p);
            let crowded = (-1..=1).any(|dx| {
                (-1..=1).any(|dy| {
                    grid.get(&(cx + dx, cy + dy))
                        .is_some_and(|v| v.iter().any(|q| q.distance(&p) < spacing))
                })
            });
            let near_connector = connectors
                .iter()
                .any(|c| segment_distance(&p, &p, &c.start, &c.end) < self.swath / 2.0 + 10.0);
            let near_other = primaries.iter().any(|o| {
                o.id != t.id && segment_distance(&p, &p, &o.start, &o.end) < self.swath / 2.0 + 10.0
            });
            if crowded || near_connector || near_other {
                continue;
            }
            grid.entry((cx, cy)).or_default().push(p);
            taken.push(p);
            out.push(PlantedAnimal {
                id: 0,
                class,
                position: p,
                transect_id: t.id,
            });
        }
        Ok(out)
    }
}

/// Runs a scenario. Output depends only on the spec.
pub fn generate(spec: &ScenarioSpec) -> Result<Scenario> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (hw, hh) = (spec.width / 2.0, spec.height / 2.0);
    let area = StudyArea::new(vec![
        Enu::new(-hw, -hh),
        Enu::new(hw, -hh),
        Enu::new(hw, hh),
        Enu::new(-hw, hh),
    ])?;
    let swath = crate::geometry::ground_swath(&spec.camera, spec.alt_agl)?;
    let params = PlanParams {
        swath,
        seed: spec.seed,
        ..spec.plan.clone()
    };
    let plan = plan_survey(&area, &params, Some(spec.origin))?;

    let placement = Placement {
        spec,
        plan: &plan,
        swath,
    };
    let mut taken = Vec::new();
    let mut animals = placement.place(&mut rng, spec.deer, &mut taken, Class::Deer)?;
    animals.extend(placement.place(&mut rng, spec.cows, &mut taken, Class::Cow)?);
    for (k, a) in animals.iter_mut().enumerate() {
        a.id = k as u32 + 1;
    }
    let mut by_transect: BTreeMap<u32, Vec<&PlantedAnimal>> = BTreeMap::new();
    for a in &animals {
        by_transect.entry(a.transect_id).or_default().push(a);
    }

    let (w, h) = (spec.camera.image_width, spec.camera.image_height);
    let gsd_w = spec.camera.sensor_width * spec.alt_agl / (spec.camera.focal_length * w as f64);
    let (body_px_l, body_px_w) = (spec.body.0 / gsd_w, spec.body.1 / gsd_w);
    let step = params.speed * spec.photo_interval;
    let transects: BTreeMap<u32, _> = plan.transects.iter().map(|t| (t.id, t)).collect();
    let observers: Vec<String> = (1..=spec.observers.pool)
        .map(|k| format!("obs-{k}"))
        .collect();

    let mut images = Vec::new();
    let mut labels = Vec::new();
    let mut detections = Vec::new();
    let mut verdicts = Vec::new();
    let mut seen = vec![false; animals.len()];
    for (route, entry) in plan.routes.iter().zip(&plan.schedule.entries) {
        let mut clock = entry.start;
        let mut pos = params.home;
        for st in &route.steps {
            let t = transects[&st.transect_id];
            let (a, b) = if st.reversed {
                (t.end, t.start)
            } else {
                (t.start, t.end)
            };
            clock += pos.distance(&a) / params.speed;
            let dir = b.sub(&a).scale(1.0 / t.length);
            let heading = heading_of(&dir);
            let shots = (t.length / step).floor() as usize;
            for k in 0..=shots {
                let s = k as f64 * step;
                let centre = a.add(&dir.scale(s));
                let from_start = if st.reversed { t.length - s } else { s };
                let pose = FlightPose {
                    position: enu_unproject(&spec.origin, &centre)?,
                    alt_agl: spec.alt_agl,
                    heading,
                    timestamp: clock + s / params.speed,
                };
                let image_id = format!("IMG_{:06}", images.len() + 1);
                let eligible = t.counts_at(from_start);
                // visible animals and their pixel boxes
                let mut visible: Vec<(Class, BBox)> = Vec::new();
                for animal in by_transect.get(&t.id).into_iter().flatten() {
                    let (px, py) =
                        ground_to_pixel(&pose, &spec.camera, &animal.position, &spec.origin)?;
                    if !(px >= 0.0 && px <= w as f64 && py >= 0.0 && py <= h as f64) {
                        continue;
                    }
                    if eligible && animal.class == Class::Deer {
                        seen[animal.id as usize - 1] = true;
                    }
                    let bx = BBox::new(
                        px - body_px_w / 2.0,
                        py - body_px_l / 2.0,
                        body_px_w,
                        body_px_l,
                    );
                    visible.push((animal.class, clip(&bx, w, h)));
                }
                for (class, bbox) in &visible {
                    labels.push(GroundTruthLabel {
                        image_id: image_id.clone(),
                        class: *class,
                        bbox: *bbox,
                        mask: Some(ellipse_mask(bbox)),
                        observers: Vec::new(),
                    });
                    if rng.random_bool(spec.detector.tp_rate) {
                        detections.push(Detection {
                            image_id: image_id.clone(),
                            class: *class,
                            bbox: jitter(&mut rng, bbox, spec.detector.jitter_px, w, h),
                            confidence: uniform(&mut rng, spec.detector.tp_confidence),
                            mask: None,
                        });
                    }
                }
                let mut fp = spec.detector.fp_per_image;
                while fp > 0.0 && rng.random_bool(fp.min(1.0)) {
                    let bx = BBox::new(
                        rng.random_range(0.0..w as f64 - body_px_w),
                        rng.random_range(0.0..h as f64 - body_px_l),
                        body_px_w,
                        body_px_l,
                    );
                    detections.push(Detection {
                        image_id: image_id.clone(),
                        class: Class::Deer,
                        bbox: bx,
                        confidence: uniform(&mut rng, spec.detector.fp_confidence),
                        mask: None,
                    });
                    fp -= 1.0;
                }
                let first = rng.random_range(0..observers.len());
                let second = (first + rng.random_range(1..observers.len())) % observers.len();
                for o in [first, second] {
                    let mut boxes = Vec::new();
                    for (class, bbox) in &visible {
                        if rng.random_bool(spec.observers.miss_rate) {
                            continue;
                        }
                        boxes.push(VerdictBox {
                            bbox: jitter(&mut rng, bbox, spec.observers.jitter_px, w, h),
                            class: *class,
                            action: BoxAction::AddManual,
                            candidate_id: None,
                        });
                    }
                    verdicts.push(Verdict {
                        verdict_id: format!("{image_id}/{}", observers[o]),
                        image_id: image_id.clone(),
                        observer_id: observers[o].clone(),
                        declared_empty: boxes.is_empty(),
                        boxes,
                        duration: uniform(&mut rng, spec.observers.seconds),
                        submitted_at: 0.0,
                    });
                }
                images.push(ImageRecord {
                    file: format!("images/{image_id}.JPG"),
                    image_id,
                    transect_id: t.id,
                    pose: Some(pose),
                    camera_id: CAMERA_ID.to_string(),
                    census_eligible: eligible,
                });
            }
            clock += t.length / params.speed;
            pos = b;
        }
    }
    Ok(Scenario {
        spec: spec.clone(),
        plan,
        images,
        labels,
        detections,
        verdicts,
        deer_count: seen.iter().filter(|&&s| s).count(),
        animals,
    })
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> SynthError + '_ {
    move |source| SynthError::Io {
        path: path.display().to_string(),
        source,
    }
}

#[derive(Serialize)]
struct SpecEcho<'a> {
    schema: &'static str,
    spec: &'a ScenarioSpec,
}

#[derive(Serialize)]
struct TaggedVerdict<'a> {
    schema: &'static str,
    #[serde(flatten)]
    verdict: &'a Verdict,
}

/// Writes `scenario.json`, `plan.json`, `manifest.jsonl`, `labels.jsonl`,
/// `detections.jsonl`, `verdicts.jsonl` and `truth.json` into `dir`.
pub fn write_scenario(dir: &Path, sc: &Scenario) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    let write = |name: &str, text: String| {
        let path = dir.join(name);
        std::fs::write(&path, text).map_err(io_err(&path))
    };
    let echo = SpecEcho {
        schema: SCENARIO_SCHEMA,
        spec: &sc.spec,
    };
    write(
        "scenario.json",
        serde_json::to_string_pretty(&echo).expect("spec serializes") + "\n",
    )?;
    write("plan.json", sc.plan.to_json())?;
    datastore::write_manifest(&dir.join("manifest.jsonl"), &sc.images)?;
    datastore::write_labels(&dir.join("labels.jsonl"), &sc.labels)?;
    datastore::write_detections(&dir.join("detections.jsonl"), &sc.detections)?;
    let mut text = String::new();
    for v in &sc.verdicts {
        let line = TaggedVerdict {
            schema: VERDICT_SCHEMA,
            verdict: v,
        };
        text.push_str(&serde_json::to_string(&line).expect("verdict serializes"));
        text.push('\n');
    }
    write("verdicts.jsonl", text)?;
    let truth = Truth {
        schema: TRUTH_SCHEMA.to_string(),
        deer_count: sc.deer_count,
        images: sc.images.len(),
        animals: sc.animals.clone(),
    };
    write(
        "truth.json",
        serde_json::to_string_pretty(&truth).expect("truth serializes") + "\n",
    )
}

/// Reads a verdict stream written by [`write_scenario`] or by the review
/// service export.
pub fn read_verdicts(path: &Path) -> Result<Vec<Verdict>> {
    #[derive(Deserialize)]
    struct Line {
        #[serde(default)]
        schema: Option<String>,
        #[serde(flatten)]
        verdict: Verdict,
    }
    let rows: Vec<(usize, Line)> = datastore::read_jsonl(path)?;
    rows.into_iter()
        .map(|(line, r)| match r.schema {
            Some(s) if s != VERDICT_SCHEMA => Err(SynthError::Data(DataError::Schema {
                line,
                found: s,
                expected: VERDICT_SCHEMA,
            })),
            _ => Ok(r.verdict),
        })
        .collect()
}

/// Image inventory with the category sizes of the published survey: 39,798
/// photographs over 575 transects, 232 with deer, 88 with cattle and 3 with
/// other animals. Poses are omitted; only split-relevant fields are filled.
pub fn published_split_corpus(seed: u64) -> (Vec<ImageRecord>, Vec<GroundTruthLabel>) {
    const IMAGES: usize = 39_798;
    const TRANSECTS: usize = 575;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let images: Vec<ImageRecord> = (0..IMAGES)
        .map(|k| ImageRecord {
            image_id: format!("IMG_{:06}", k + 1),
            file: format!("images/IMG_{:06}.JPG", k + 1),
            transect_id: (k * TRANSECTS / IMAGES) as u32 + 1,
            pose: None,
            camera_id: CAMERA_ID.to_string(),
            census_eligible: true,
        })
        .collect();
    let mut order: Vec<usize> = (0..IMAGES).collect();
    for i in (1..order.len()).rev() {
        order.swap(i, rng.random_range(0..=i));
    }
    let mut labels = Vec::new();
    let plan = [
        (Class::Deer, 232usize),
        (Class::Cow, 88),
        (Class::OtherAnimal, 3),
    ];
    let mut next = order.into_iter();
    for (class, n) in plan {
        for idx in next.by_ref().take(n) {
            let count = 1 + rng.random_range(0..3);
            for c in 0..count {
                let bbox = BBox::new(500.0 + 300.0 * c as f64, 800.0, 120.0, 60.0);
                labels.push(GroundTruthLabel {
                    image_id: images[idx].image_id.clone(),
                    class,
                    bbox,
                    mask: Some(ellipse_mask(&bbox)),
                    observers: Vec::new(),
                });
            }
        }
    }
    (images, labels)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::CameraRegistry;

    fn small(deer: usize) -> ScenarioSpec {
        ScenarioSpec {
            width: 3000.0,
            height: 3200.0,
            deer,
            plan: PlanParams {
                coverage: 0.2,
                ..PlanParams::default()
            },
            ..ScenarioSpec::default()
        }
    }

    #[test]
    fn outputs_pass_validation() {
        let sc = generate(&small(10)).unwrap();
        let ds =
            datastore::Dataset::new(sc.images.clone(), CameraRegistry::with_defaults()).unwrap();
        ds.validate_labels(&sc.labels).unwrap();
        ds.validate_detections(&sc.detections).unwrap();
        assert_eq!(sc.deer_count, 10);
        assert_eq!(sc.verdicts.len(), 2 * sc.images.len());
        // overlapping frames duplicate some animals
        assert!(sc.labels.len() > 10);
    }

    #[test]
    fn seed_deterministic() {
        let a = generate(&small(5)).unwrap();
        let b = generate(&small(5)).unwrap();
        assert_eq!(a.images, b.images);
        assert_eq!(a.detections, b.detections);
        assert_eq!(a.verdicts, b.verdicts);
    }

    #[test]
    fn zero_deer() {
        let sc = generate(&small(0)).unwrap();
        assert!(sc.labels.is_empty());
        assert_eq!(sc.deer_count, 0);
    }

    #[test]
    fn crowding_is_rejected() {
        let spec = ScenarioSpec {
            min_spacing: 500.0,
            ..small(400)
        };
        assert!(matches!(
            generate(&spec),
            Err(SynthError::InfeasibleSpacing { .. })
        ));
    }

    #[test]
    fn published_corpus_sizes() {
        let (images, labels) = published_split_corpus(1);
        assert_eq!(images.len(), 39_798);
        assert_eq!(images.last().unwrap().transect_id, 575);
        let counts = datastore::class_image_counts(&labels);
        assert_eq!(counts[&Class::Deer], 232);
        assert_eq!(counts[&Class::Cow], 88);
        assert_eq!(counts[&Class::OtherAnimal], 3);
    }
}
