//! On-disk data model: image manifests, detections, ground-truth labels and
//! train/val/test split manifests.
//!
//! All record streams are JSON-lines. Every written line carries a
//! `"schema"` tag (`wildcensus-manifest/1`, `wildcensus-detection/1`,
//! `wildcensus-label/1`); on read the tag is optional but must match when
//! present.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{CameraIntrinsics, CameraRegistry, FlightPose, Geodetic};

pub const MANIFEST_SCHEMA: &str = "wildcensus-manifest/1";
pub const DETECTION_SCHEMA: &str = "wildcensus-detection/1";
pub const LABEL_SCHEMA: &str = "wildcensus-label/1";
pub const SPLITS_SCHEMA: &str = "wildcensus-splits/1";
pub const EXPORT_SCHEMA: &str = "wildcensus-export/1";

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: parse error: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },
    #[error("record {line}: schema {found:?} does not match {expected:?}")]
    Schema {
        line: usize,
        found: String,
        expected: &'static str,
    },
    #[error("record {line}: duplicate image_id {id:?}")]
    DuplicateId { id: String, line: usize },
    #[error("record {line}: census-eligible image {id:?} has no pose")]
    MissingPose { id: String, line: usize },
    #[error("image {id:?}: unknown camera {camera:?}")]
    UnknownCamera { id: String, camera: String },
    #[error("record {line}: unknown image_id {id:?}")]
    UnknownImage { id: String, line: usize },
    #[error("record {line} ({id}): {msg}")]
    Invalid {
        id: String,
        line: usize,
        msg: String,
    },
    #[error("split {split}: need {needed} {category} images, only {available} available")]
    InsufficientImages {
        split: String,
        category: String,
        needed: usize,
        available: usize,
    },
    #[error("deer labels without mask in images: {}", image_ids.join(", "))]
    MissingMask { image_ids: Vec<String> },
}

pub type Result<T> = std::result::Result<T, DataError>;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DataError + '_ {
    move |source| DataError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Class {
    Deer,
    Cow,
    OtherAnimal,
}

impl Class {
    pub const ALL: [Class; 3] = [Class::Deer, Class::Cow, Class::OtherAnimal];

    pub fn index(self) -> usize {
        match self {
            Class::Deer => 0,
            Class::Cow => 1,
            Class::OtherAnimal => 2,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Class::Deer => "deer",
            Class::Cow => "cow",
            Class::OtherAnimal => "other_animal",
        }
    }
}

impl fmt::Display for Class {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Class {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "deer" => Ok(Class::Deer),
            "cow" => Ok(Class::Cow),
            "other_animal" | "other" => Ok(Class::OtherAnimal),
            _ => Err(format!("unknown class {s:?}")),
        }
    }
}

/// Pixel box `(x, y, w, h)` with `(x, y)` the top-left corner. Serialized as
/// a four-element array.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 4]", into = "[f64; 4]")]
pub struct BBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl From<[f64; 4]> for BBox {
    fn from([x, y, w, h]: [f64; 4]) -> Self {
        Self { x, y, w, h }
    }
}

impl From<BBox> for [f64; 4] {
    fn from(b: BBox) -> Self {
        [b.x, b.y, b.w, b.h]
    }
}

impl BBox {
    pub const fn new(x: f64, y: f64, w: f64, h: f64) -> Self {
        Self { x, y, w, h }
    }

    pub fn is_valid(&self) -> bool {
        [self.x, self.y, self.w, self.h]
            .iter()
            .all(|v| v.is_finite())
            && self.w > 0.0
            && self.h > 0.0
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    pub fn center(&self) -> (f64, f64) {
        (self.x + self.w / 2.0, self.y + self.h / 2.0)
    }

    pub fn within(&self, width: u32, height: u32) -> bool {
        self.x >= 0.0
            && self.y >= 0.0
            && self.x + self.w <= width as f64
            && self.y + self.h <= height as f64
    }
}

/// Polygon in pixel coordinates.
pub type Mask = Vec<[f64; 2]>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageRecord {
    pub image_id: String,
    pub file: String,
    pub transect_id: u32,
    pub pose: Option<FlightPose>,
    pub camera_id: String,
    pub census_eligible: bool,
}

/// Flat manifest line.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct ManifestLine {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    schema: Option<String>,
    image_id: String,
    file: String,
    transect_id: u32,
    #[serde(default)]
    lat: Option<f64>,
    #[serde(default)]
    lon: Option<f64>,
    #[serde(default)]
    alt_agl_m: Option<f64>,
    #[serde(default)]
    heading_deg: Option<f64>,
    #[serde(default)]
    timestamp_utc: Option<f64>,
    camera_id: String,
    census_eligible: bool,
}

impl ManifestLine {
    fn from_record(r: &ImageRecord) -> Self {
        Self {
            schema: Some(MANIFEST_SCHEMA.to_string()),
            image_id: r.image_id.clone(),
            file: r.file.clone(),
            transect_id: r.transect_id,
            lat: r.pose.map(|p| p.position.lat),
            lon: r.pose.map(|p| p.position.lon),
            alt_agl_m: r.pose.map(|p| p.alt_agl),
            heading_deg: r.pose.map(|p| p.heading),
            timestamp_utc: r.pose.map(|p| p.timestamp),
            camera_id: r.camera_id.clone(),
            census_eligible: r.census_eligible,
        }
    }

    fn into_record(self) -> ImageRecord {
        let pose = match (
            self.lat,
            self.lon,
            self.alt_agl_m,
            self.heading_deg,
            self.timestamp_utc,
        ) {
            (Some(lat), Some(lon), Some(alt), Some(heading), Some(ts)) => Some(FlightPose {
                position: Geodetic::new(lat, lon),
                alt_agl: alt,
                heading,
                timestamp: ts,
            }),
            _ => None,
        };
        ImageRecord {
            image_id: self.image_id,
            file: self.file,
            transect_id: self.transect_id,
            pose,
            camera_id: self.camera_id,
            census_eligible: self.census_eligible,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub image_id: String,
    pub class: Class,
    pub bbox: BBox,
    pub confidence: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask: Option<Mask>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthLabel {
    pub image_id: String,
    pub class: Class,
    pub bbox: BBox,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask: Option<Mask>,
    #[serde(default)]
    pub observers: Vec<String>,
}

/// Shared view of a record that sits on an image with a box.
pub trait BoxRecord {
    fn image_id(&self) -> &str;
    fn class(&self) -> Class;
    fn bbox(&self) -> &BBox;
    fn mask(&self) -> Option<&Mask>;
}

macro_rules! impl_box_record {
    ($t:ty) => {
        impl BoxRecord for $t {
            fn image_id(&self) -> &str {
                &self.image_id
            }
            fn class(&self) -> Class {
                self.class
            }
            fn bbox(&self) -> &BBox {
                &self.bbox
            }
            fn mask(&self) -> Option<&Mask> {
                self.mask.as_ref()
            }
        }
    };
}
impl_box_record!(Detection);
impl_box_record!(GroundTruthLabel);

#[derive(Serialize, Deserialize)]
struct Tagged<T> {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    schema: Option<String>,
    #[serde(flatten)]
    record: T,
}

fn check_schema(found: Option<String>, expected: &'static str, line: usize) -> Result<()> {
    match found {
        Some(s) if s != expected => Err(DataError::Schema {
            line,
            found: s,
            expected,
        }),
        _ => Ok(()),
    }
}

/// Reads a JSON-lines file, yielding `(line_number, record)`. Blank lines are
/// skipped.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<(usize, T)>> {
    let file = File::open(path).map_err(io_err(path))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line).map_err(|e| DataError::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            msg: e.to_string(),
        })?;
        out.push((i + 1, rec));
    }
    Ok(out)
}

/// Writes serializable records as JSON-lines.
pub fn write_jsonl<'a, T: Serialize + 'a>(
    path: &Path,
    records: impl IntoIterator<Item = &'a T>,
) -> Result<()> {
    let file = File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    for r in records {
        serde_json::to_writer(&mut w, r).map_err(|e| DataError::Io {
            path: path.to_path_buf(),
            source: e.into(),
        })?;
        w.write_all(b"\n").map_err(io_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

fn write_tagged<'a, T: Serialize + Clone + 'a>(
    path: &Path,
    schema: &'static str,
    records: impl IntoIterator<Item = &'a T>,
) -> Result<()> {
    let tagged: Vec<Tagged<&T>> = records
        .into_iter()
        .map(|r| Tagged {
            schema: Some(schema.to_string()),
            record: r,
        })
        .collect();
    write_jsonl(path, tagged.iter())
}

/// Validates manifest records: unique ids, pose present for census-eligible
/// images, and pose values in range.
pub fn validate_manifest(records: &[ImageRecord]) -> Result<()> {
    let mut seen = BTreeSet::new();
    for (i, r) in records.iter().enumerate() {
        let line = i + 1;
        if !seen.insert(r.image_id.as_str()) {
            return Err(DataError::DuplicateId {
                id: r.image_id.clone(),
                line,
            });
        }
        match &r.pose {
            None if r.census_eligible => {
                return Err(DataError::MissingPose {
                    id: r.image_id.clone(),
                    line,
                })
            }
            Some(p) => p.validate().map_err(|e| DataError::Invalid {
                id: r.image_id.clone(),
                line,
                msg: e.to_string(),
            })?,
            None => {}
        }
    }
    Ok(())
}

pub fn load_manifest(path: &Path) -> Result<Vec<ImageRecord>> {
    let mut records = Vec::new();
    let mut seen: HashMap<String, usize> = HashMap::new();
    for (line, tagged) in read_jsonl::<ManifestLine>(path)? {
        check_schema(tagged.schema.clone(), MANIFEST_SCHEMA, line)?;
        let rec = tagged.into_record();
        if seen.insert(rec.image_id.clone(), line).is_some() {
            return Err(DataError::DuplicateId {
                id: rec.image_id,
                line,
            });
        }
        if rec.census_eligible && rec.pose.is_none() {
            return Err(DataError::MissingPose {
                id: rec.image_id,
                line,
            });
        }
        if let Some(p) = &rec.pose {
            p.validate().map_err(|e| DataError::Invalid {
                id: rec.image_id.clone(),
                line,
                msg: e.to_string(),
            })?;
        }
        records.push(rec);
    }
    Ok(records)
}

pub fn write_manifest(path: &Path, records: &[ImageRecord]) -> Result<()> {
    let lines: Vec<ManifestLine> = records.iter().map(ManifestLine::from_record).collect();
    write_jsonl(path, lines.iter())
}

pub fn write_detections(path: &Path, dets: &[Detection]) -> Result<()> {
    write_tagged(path, DETECTION_SCHEMA, dets)
}

pub fn write_labels(path: &Path, labels: &[GroundTruthLabel]) -> Result<()> {
    write_tagged(path, LABEL_SCHEMA, labels)
}

/// A validated manifest plus the camera definitions its records reference.
/// Immutable once built.
#[derive(Debug, Clone)]
pub struct Dataset {
    images: Vec<ImageRecord>,
    index: HashMap<String, usize>,
    cameras: CameraRegistry,
}

impl Dataset {
    pub fn new(images: Vec<ImageRecord>, cameras: CameraRegistry) -> Result<Self> {
        validate_manifest(&images)?;
        for r in &images {
            if cameras.get(&r.camera_id).is_none() {
                return Err(DataError::UnknownCamera {
                    id: r.image_id.clone(),
                    camera: r.camera_id.clone(),
                });
            }
        }
        let index = images
            .iter()
            .enumerate()
            .map(|(i, r)| (r.image_id.clone(), i))
            .collect();
        Ok(Self {
            images,
            index,
            cameras,
        })
    }

    pub fn load(manifest: &Path, cameras: CameraRegistry) -> Result<Self> {
        Self::new(load_manifest(manifest)?, cameras)
    }

    pub fn images(&self) -> &[ImageRecord] {
        &self.images
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn position(&self, image_id: &str) -> Option<usize> {
        self.index.get(image_id).copied()
    }

    pub fn image(&self, image_id: &str) -> Option<&ImageRecord> {
        self.position(image_id).map(|i| &self.images[i])
    }

    pub fn cameras(&self) -> &CameraRegistry {
        &self.cameras
    }

    pub fn intrinsics(&self, rec: &ImageRecord) -> &CameraIntrinsics {
        self.cameras
            .get(&rec.camera_id)
            .expect("camera ids checked at construction")
    }

    pub fn image_dims(&self, rec: &ImageRecord) -> (u32, u32) {
        let c = self.intrinsics(rec);
        (c.image_width, c.image_height)
    }

    fn check_box_record<R: BoxRecord>(&self, r: &R, line: usize) -> Result<()> {
        let img = self
            .image(r.image_id())
            .ok_or_else(|| DataError::UnknownImage {
                id: r.image_id().to_string(),
                line,
            })?;
        let (w, h) = self.image_dims(img);
        let invalid = |msg: String| DataError::Invalid {
            id: r.image_id().to_string(),
            line,
            msg,
        };
        if !r.bbox().is_valid() {
            return Err(invalid(format!("degenerate bbox {:?}", r.bbox())));
        }
        if !r.bbox().within(w, h) {
            return Err(invalid(format!(
                "bbox {:?} outside image {w}x{h}",
                r.bbox()
            )));
        }
        if let Some(mask) = r.mask() {
            if mask.len() < 3 {
                return Err(invalid("mask polygon needs at least 3 vertices".into()));
            }
            if mask
                .iter()
                .any(|[x, y]| !(0.0..=w as f64).contains(x) || !(0.0..=h as f64).contains(y))
            {
                return Err(invalid("mask vertex outside image".into()));
            }
        }
        Ok(())
    }

    pub fn validate_detections(&self, dets: &[Detection]) -> Result<()> {
        for (i, d) in dets.iter().enumerate() {
            self.check_detection(d, i + 1)?;
        }
        Ok(())
    }

    fn check_detection(&self, d: &Detection, line: usize) -> Result<()> {
        if !(0.0..=1.0).contains(&d.confidence) {
            return Err(DataError::Invalid {
                id: d.image_id.clone(),
                line,
                msg: format!("confidence {} outside [0, 1]", d.confidence),
            });
        }
        self.check_box_record(d, line)
    }

    pub fn validate_labels(&self, labels: &[GroundTruthLabel]) -> Result<()> {
        for (i, l) in labels.iter().enumerate() {
            self.check_box_record(l, i + 1)?;
        }
        Ok(())
    }

    pub fn load_detections(&self, path: &Path) -> Result<Vec<Detection>> {
        let mut out = Vec::new();
        for (line, t) in read_jsonl::<Tagged<Detection>>(path)? {
            check_schema(t.schema, DETECTION_SCHEMA, line)?;
            self.check_detection(&t.record, line)?;
            out.push(t.record);
        }
        Ok(out)
    }

    pub fn load_labels(&self, path: &Path) -> Result<Vec<GroundTruthLabel>> {
        let mut out = Vec::new();
        for (line, t) in read_jsonl::<Tagged<GroundTruthLabel>>(path)? {
            check_schema(t.schema, LABEL_SCHEMA, line)?;
            self.check_box_record(&t.record, line)?;
            out.push(t.record);
        }
        Ok(out)
    }
}

/// Number of distinct images containing at least one record of each class.
pub fn class_image_counts<R: BoxRecord>(records: &[R]) -> BTreeMap<Class, usize> {
    let mut seen: BTreeMap<Class, BTreeSet<&str>> = BTreeMap::new();
    for r in records {
        seen.entry(r.class()).or_default().insert(r.image_id());
    }
    seen.into_iter().map(|(c, s)| (c, s.len())).collect()
}

// ---------------------------------------------------------------------------
// Splits

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    Deer,
    Cow,
    Other,
    Empty,
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Category::Deer => "deer",
            Category::Cow => "cow",
            Category::Other => "other",
            Category::Empty => "empty",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitName {
    Train,
    Val,
    Test,
}

impl SplitName {
    pub const ALL: [SplitName; 3] = [SplitName::Train, SplitName::Val, SplitName::Test];
}

impl fmt::Display for SplitName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SplitName::Train => "train",
            SplitName::Val => "val",
            SplitName::Test => "test",
        })
    }
}

impl std::str::FromStr for SplitName {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "train" => Ok(SplitName::Train),
            "val" => Ok(SplitName::Val),
            "test" => Ok(SplitName::Test),
            _ => Err(format!("unknown split {s:?}")),
        }
    }
}

/// Requested images per category for one split.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitCounts {
    pub deer: usize,
    pub cow: usize,
    pub other: usize,
    /// Draw one animal-free image from every transect.
    pub empty_per_transect: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train: SplitCounts,
    pub val: SplitCounts,
    pub test: SplitCounts,
    /// Allow the same empty image to be drawn for several splits.
    pub allow_empty_reuse: bool,
}

impl SplitSpec {
    /// 140/54/3 train, 46/17 val and test, one empty image per transect each.
    pub fn published() -> Self {
        let held_out = SplitCounts {
            deer: 46,
            cow: 17,
            other: 0,
            empty_per_transect: true,
        };
        Self {
            train: SplitCounts {
                deer: 140,
                cow: 54,
                other: 3,
                empty_per_transect: true,
            },
            val: held_out,
            test: held_out,
            allow_empty_reuse: false,
        }
    }

    pub fn counts(&self, split: SplitName) -> &SplitCounts {
        match split {
            SplitName::Train => &self.train,
            SplitName::Val => &self.val,
            SplitName::Test => &self.test,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitManifest {
    pub split: SplitName,
    pub deer: Vec<String>,
    pub cow: Vec<String>,
    pub other: Vec<String>,
    pub empty: Vec<String>,
}

impl SplitManifest {
    fn empty_for(split: SplitName) -> Self {
        Self {
            split,
            deer: Vec::new(),
            cow: Vec::new(),
            other: Vec::new(),
            empty: Vec::new(),
        }
    }

    pub fn ids(&self, cat: Category) -> &[String] {
        match cat {
            Category::Deer => &self.deer,
            Category::Cow => &self.cow,
            Category::Other => &self.other,
            Category::Empty => &self.empty,
        }
    }

    fn ids_mut(&mut self, cat: Category) -> &mut Vec<String> {
        match cat {
            Category::Deer => &mut self.deer,
            Category::Cow => &mut self.cow,
            Category::Other => &mut self.other,
            Category::Empty => &mut self.empty,
        }
    }

    pub fn all_ids(&self) -> impl Iterator<Item = &String> {
        self.deer
            .iter()
            .chain(&self.cow)
            .chain(&self.other)
            .chain(&self.empty)
    }

    pub fn len(&self) -> usize {
        self.deer.len() + self.cow.len() + self.other.len() + self.empty.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSet {
    pub schema: String,
    pub seed: u64,
    pub spec: SplitSpec,
    pub train: SplitManifest,
    pub val: SplitManifest,
    pub test: SplitManifest,
}

impl SplitSet {
    pub fn get(&self, split: SplitName) -> &SplitManifest {
        match split {
            SplitName::Train => &self.train,
            SplitName::Val => &self.val,
            SplitName::Test => &self.test,
        }
    }

    fn get_mut(&mut self, split: SplitName) -> &mut SplitManifest {
        match split {
            SplitName::Train => &mut self.train,
            SplitName::Val => &mut self.val,
            SplitName::Test => &mut self.test,
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        let set: Self = serde_json::from_str(&text).map_err(|e| DataError::Parse {
            path: path.to_path_buf(),
            line: e.line(),
            msg: e.to_string(),
        })?;
        check_schema(Some(set.schema.clone()), SPLITS_SCHEMA, 1)?;
        Ok(set)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("split set serializes");
        std::fs::write(path, text + "\n").map_err(io_err(path))
    }
}

/// Assigns each image in the manifest to a category from its labels: deer
/// beats cow beats other; images with no labels are empty.
pub fn categorize(
    images: &[ImageRecord],
    labels: &[GroundTruthLabel],
) -> BTreeMap<String, Category> {
    let mut best: HashMap<&str, Category> = HashMap::new();
    for l in labels {
        let cat = match l.class {
            Class::Deer => Category::Deer,
            Class::Cow => Category::Cow,
            Class::OtherAnimal => Category::Other,
        };
        let e = best.entry(l.image_id.as_str()).or_insert(cat);
        if cat < *e {
            *e = cat;
        }
    }
    images
        .iter()
        .map(|r| {
            let cat = best
                .get(r.image_id.as_str())
                .copied()
                .unwrap_or(Category::Empty);
            (r.image_id.clone(), cat)
        })
        .collect()
}

/// Seeded train/val/test partition.
///
/// Animal categories are shuffled once each and cut into consecutive
/// train, val and test blocks. Empty images are drawn per transect: one
/// distinct pick per split (or the same pick for every split when
/// `allow_empty_reuse` is set).
pub fn make_splits(
    images: &[ImageRecord],
    labels: &[GroundTruthLabel],
    spec: &SplitSpec,
    seed: u64,
) -> Result<SplitSet> {
    let cats = categorize(images, labels);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut set = SplitSet {
        schema: SPLITS_SCHEMA.to_string(),
        seed,
        spec: *spec,
        train: SplitManifest::empty_for(SplitName::Train),
        val: SplitManifest::empty_for(SplitName::Val),
        test: SplitManifest::empty_for(SplitName::Test),
    };

    for cat in [Category::Deer, Category::Cow, Category::Other] {
        // BTreeMap iteration gives a sorted, input-order independent pool
        let mut pool: Vec<&String> = cats
            .iter()
            .filter(|(_, c)| **c == cat)
            .map(|(id, _)| id)
            .collect();
        pool.shuffle(&mut rng);
        let mut cursor = 0usize;
        for split in SplitName::ALL {
            let counts = spec.counts(split);
            let need = match cat {
                Category::Deer => counts.deer,
                Category::Cow => counts.cow,
                _ => counts.other,
            };
            if cursor + need > pool.len() {
                return Err(DataError::InsufficientImages {
                    split: split.to_string(),
                    category: cat.to_string(),
                    needed: need,
                    available: pool.len() - cursor,
                });
            }
            let ids = set.get_mut(split).ids_mut(cat);
            ids.extend(pool[cursor..cursor + need].iter().map(|s| (*s).clone()));
            ids.sort();
            cursor += need;
        }
    }

    let mut empties_by_transect: BTreeMap<u32, Vec<&String>> = BTreeMap::new();
    for r in images {
        if cats.get(&r.image_id) == Some(&Category::Empty) {
            empties_by_transect
                .entry(r.transect_id)
                .or_default()
                .push(&r.image_id);
        }
    }
    let wanted: Vec<SplitName> = SplitName::ALL
        .into_iter()
        .filter(|s| spec.counts(*s).empty_per_transect)
        .collect();
    let needed_per_transect = if spec.allow_empty_reuse {
        1
    } else {
        wanted.len()
    };
    if !wanted.is_empty() {
        for pool in empties_by_transect.values_mut() {
            pool.sort();
            pool.shuffle(&mut rng);
            if pool.len() < needed_per_transect {
                return Err(DataError::InsufficientImages {
                    split: wanted[pool.len().min(wanted.len() - 1)].to_string(),
                    category: Category::Empty.to_string(),
                    needed: needed_per_transect,
                    available: pool.len(),
                });
            }
            for (k, split) in wanted.iter().enumerate() {
                let pick = if spec.allow_empty_reuse {
                    pool[0]
                } else {
                    pool[k]
                };
                set.get_mut(*split).empty.push(pick.clone());
            }
        }
        for split in &wanted {
            set.get_mut(*split).empty.sort();
        }
    }
    Ok(set)
}

// ---------------------------------------------------------------------------
// Training export

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExportSummary {
    pub schema: String,
    pub split: SplitName,
    pub classes: Vec<String>,
    /// Instances of the same class never overlap in the exported masks.
    pub no_overlap: bool,
    pub images_by_category: BTreeMap<Category, usize>,
    pub annotation_files: usize,
}

/// Normalizes pixel vertices to [0, 1] by image dimensions.
pub fn normalize_polygon(poly: &[[f64; 2]], width: u32, height: u32) -> Vec<[f64; 2]> {
    poly.iter()
        .map(|[x, y]| [x / width as f64, y / height as f64])
        .collect()
}

pub fn denormalize_polygon(poly: &[[f64; 2]], width: u32, height: u32) -> Vec<[f64; 2]> {
    poly.iter()
        .map(|[x, y]| [x * width as f64, y * height as f64])
        .collect()
}

fn bbox_polygon(b: &BBox) -> Mask {
    vec![
        [b.x, b.y],
        [b.x + b.w, b.y],
        [b.x + b.w, b.y + b.h],
        [b.x, b.y + b.h],
    ]
}

pub fn annotation_file_name(image_id: &str) -> String {
    let stem: String = image_id
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || matches!(c, '.' | '-' | '_') {
                c
            } else {
                '_'
            }
        })
        .collect();
    format!("{stem}.txt")
}

/// Parses one annotation line back into `(class index, normalized polygon)`.
pub fn parse_annotation_line(line: &str) -> Option<(usize, Vec<[f64; 2]>)> {
    let mut it = line.split_whitespace();
    let class = it.next()?.parse().ok()?;
    let vals: Vec<f64> = it.map(|v| v.parse().ok()).collect::<Option<_>>()?;
    if !vals.len().is_multiple_of(2) {
        return None;
    }
    Some((class, vals.chunks(2).map(|c| [c[0], c[1]]).collect()))
}

/// Writes one annotation file per image of `split` into `out_dir/labels/`,
/// plus `classes.txt`, `images.txt` and `export.json`.
///
/// Each annotation line is `class_index x1 y1 x2 y2 ...` with vertices
/// normalized by image size. Deer labels must carry masks; other classes
/// fall back to their box outline.
pub fn export_training_set(
    split: &SplitManifest,
    labels: &[GroundTruthLabel],
    dataset: &Dataset,
    out_dir: &Path,
) -> Result<ExportSummary> {
    let members: BTreeSet<&str> = split.all_ids().map(String::as_str).collect();
    let mut by_image: BTreeMap<&str, Vec<&GroundTruthLabel>> = BTreeMap::new();
    for l in labels {
        if members.contains(l.image_id.as_str()) {
            by_image.entry(l.image_id.as_str()).or_default().push(l);
        }
    }
    let missing: Vec<String> = by_image
        .iter()
        .filter(|(_, ls)| {
            ls.iter()
                .any(|l| l.class == Class::Deer && l.mask.is_none())
        })
        .map(|(id, _)| id.to_string())
        .collect();
    if !missing.is_empty() {
        return Err(DataError::MissingMask { image_ids: missing });
    }

    let label_dir = out_dir.join("labels");
    std::fs::create_dir_all(&label_dir).map_err(io_err(&label_dir))?;
    let mut image_list = String::new();
    let mut files = 0usize;
    for id in &members {
        let rec = dataset.image(id).ok_or_else(|| DataError::UnknownImage {
            id: id.to_string(),
            line: 0,
        })?;
        let (w, h) = dataset.image_dims(rec);
        let mut body = String::new();
        for l in by_image.get(id).map(Vec::as_slice).unwrap_or(&[]) {
            let poly = l.mask.clone().unwrap_or_else(|| bbox_polygon(&l.bbox));
            body.push_str(&l.class.index().to_string());
            for [x, y] in normalize_polygon(&poly, w, h) {
                body.push_str(&format!(" {x:.6} {y:.6}"));
            }
            body.push('\n');
        }
        let path = label_dir.join(annotation_file_name(id));
        std::fs::write(&path, body).map_err(io_err(&path))?;
        image_list.push_str(&rec.file);
        image_list.push('\n');
        files += 1;
    }

    let classes: Vec<String> = Class::ALL.iter().map(|c| c.to_string()).collect();
    let p = out_dir.join("classes.txt");
    std::fs::write(&p, classes.join("\n") + "\n").map_err(io_err(&p))?;
    let p = out_dir.join("images.txt");
    std::fs::write(&p, image_list).map_err(io_err(&p))?;

    let images_by_category = [
        Category::Deer,
        Category::Cow,
        Category::Other,
        Category::Empty,
    ]
    .into_iter()
    .map(|c| (c, split.ids(c).len()))
    .collect();
    let summary = ExportSummary {
        schema: EXPORT_SCHEMA.to_string(),
        split: split.split,
        classes,
        no_overlap: true,
        images_by_category,
        annotation_files: files,
    };
    let p = out_dir.join("export.json");
    std::fs::write(
        &p,
        serde_json::to_string_pretty(&summary).expect("summary serializes"),
    )
    .map_err(io_err(&p))?;
    Ok(summary)
}
