//! Nadir camera geometry on flat ground.
//!
//! Converts camera intrinsics and a flight pose into ground footprints, swath
//! widths, forward overlap and pixel-to-ground coordinates. Ground coordinates
//! are local East-North (ENU without the up component) in meters about a
//! geodetic origin, using an equirectangular tangent-plane approximation.
//!
//! Image axes: `x` grows to the right of the direction of travel, `y` grows
//! towards the tail (the top image row looks forward along the heading).
//! Pixel coordinates are continuous, so the four image corners are
//! `(0, 0)`, `(w, 0)`, `(w, h)` and `(0, h)`.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Meters per degree of latitude used by the tangent-plane projection.
pub const METERS_PER_DEGREE: f64 = 110_574.0;

/// Maximum |Δlat| or |Δlon| accepted by [`enu_project`].
pub const MAX_PROJECTION_SPAN_DEG: f64 = 1.0;

#[derive(Debug, Error, PartialEq)]
pub enum GeometryError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("pixel ({x}, {y}) outside image bounds {width}x{height}")]
    PixelOutOfBounds {
        x: f64,
        y: f64,
        width: u32,
        height: u32,
    },
    #[error("projection span too large: |dlat|={dlat} |dlon|={dlon} (max {MAX_PROJECTION_SPAN_DEG} deg)")]
    SpanTooLarge { dlat: f64, dlon: f64 },
    #[error("camera config: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, GeometryError>;

fn invalid(msg: impl Into<String>) -> GeometryError {
    GeometryError::InvalidInput(msg.into())
}

/// Pinhole camera intrinsics. The field of view is derived from these values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    #[serde(rename = "sensor_width_mm")]
    pub sensor_width: f64,
    #[serde(rename = "sensor_height_mm")]
    pub sensor_height: f64,
    #[serde(rename = "focal_mm")]
    pub focal_length: f64,
    #[serde(rename = "image_width_px")]
    pub image_width: u32,
    #[serde(rename = "image_height_px")]
    pub image_height: u32,
}

impl CameraIntrinsics {
    pub fn new(
        sensor_width: f64,
        sensor_height: f64,
        focal_length: f64,
        image_width: u32,
        image_height: u32,
    ) -> Result<Self> {
        let intr = Self {
            sensor_width,
            sensor_height,
            focal_length,
            image_width,
            image_height,
        };
        intr.validate()?;
        Ok(intr)
    }

    /// DJI Phantom 4 Pro class camera: 1" sensor (13.2 x 8.8 mm), 8.8 mm
    /// focal length, 5472 x 3648 px. Values are manufacturer specifications.
    pub fn phantom4pro() -> Self {
        Self {
            sensor_width: 13.2,
            sensor_height: 8.8,
            focal_length: 8.8,
            image_width: 5472,
            image_height: 3648,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |v: f64| v.is_finite() && v > 0.0;
        if !positive(self.sensor_width) || !positive(self.sensor_height) {
            return Err(invalid("sensor dimensions must be positive"));
        }
        if !positive(self.focal_length) {
            return Err(invalid("focal length must be positive"));
        }
        if self.image_width == 0 || self.image_height == 0 {
            return Err(invalid("image dimensions must be positive"));
        }
        let sensor_aspect = self.sensor_width / self.sensor_height;
        let pixel_aspect = self.image_width as f64 / self.image_height as f64;
        if ((sensor_aspect - pixel_aspect) / pixel_aspect).abs() > 0.01 {
            return Err(invalid(format!(
                "sensor aspect {sensor_aspect:.4} does not match pixel aspect {pixel_aspect:.4}"
            )));
        }
        Ok(())
    }

    /// Horizontal field of view in degrees.
    pub fn hfov_deg(&self) -> f64 {
        2.0 * (self.sensor_width / (2.0 * self.focal_length))
            .atan()
            .to_degrees()
    }

    /// Diagonal field of view in degrees.
    pub fn dfov_deg(&self) -> f64 {
        let diag = self.sensor_width.hypot(self.sensor_height);
        2.0 * (diag / (2.0 * self.focal_length)).atan().to_degrees()
    }

    /// Ground sample distance (m/px) across track at `alt_agl`.
    pub fn gsd(&self, alt_agl: f64) -> f64 {
        alt_agl * self.sensor_width / (self.image_width as f64 * self.focal_length)
    }
}

/// Named camera definitions, loaded from a flat key-value file with one
/// `[name]` section per camera.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CameraRegistry {
    cameras: BTreeMap<String, CameraIntrinsics>,
}

impl CameraRegistry {
    pub fn with_defaults() -> Self {
        let mut reg = Self::default();
        reg.insert("phantom4pro", CameraIntrinsics::phantom4pro());
        reg
    }

    pub fn parse(text: &str) -> Result<Self> {
        let reg: Self = toml::from_str(text).map_err(|e| GeometryError::Config(e.to_string()))?;
        for (name, cam) in &reg.cameras {
            cam.validate()
                .map_err(|e| GeometryError::Config(format!("camera {name:?}: {e}")))?;
        }
        Ok(reg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| GeometryError::Config(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn insert(&mut self, name: impl Into<String>, intr: CameraIntrinsics) {
        self.cameras.insert(name.into(), intr);
    }

    /// Adds every camera of `other`, replacing same-named entries.
    pub fn merge(&mut self, other: CameraRegistry) {
        self.cameras.extend(other.cameras);
    }

    pub fn get(&self, name: &str) -> Option<&CameraIntrinsics> {
        self.cameras.get(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.cameras.keys().map(String::as_str)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Geodetic {
    pub lat: f64,
    pub lon: f64,
}

impl Geodetic {
    pub fn new(lat: f64, lon: f64) -> Self {
        Self { lat, lon }
    }
}

/// Local east/north coordinates in meters.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Enu {
    pub east: f64,
    pub north: f64,
}

impl Enu {
    pub const fn new(east: f64, north: f64) -> Self {
        Self { east, north }
    }

    pub fn distance(&self, other: &Enu) -> f64 {
        (self.east - other.east).hypot(self.north - other.north)
    }

    pub fn add(&self, other: &Enu) -> Enu {
        Enu::new(self.east + other.east, self.north + other.north)
    }

    pub fn sub(&self, other: &Enu) -> Enu {
        Enu::new(self.east - other.east, self.north - other.north)
    }

    pub fn scale(&self, k: f64) -> Enu {
        Enu::new(self.east * k, self.north * k)
    }

    /// Rotate clockwise by `deg` (compass sense: north rotates towards east).
    pub fn rotate_cw(&self, deg: f64) -> Enu {
        let (s, c) = deg.to_radians().sin_cos();
        Enu::new(
            self.east * c + self.north * s,
            -self.east * s + self.north * c,
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlightPose {
    pub position: Geodetic,
    /// Meters above ground level.
    pub alt_agl: f64,
    /// Degrees clockwise from true north, in [0, 360).
    pub heading: f64,
    /// UTC seconds.
    pub timestamp: f64,
}

impl FlightPose {
    pub fn validate(&self) -> Result<()> {
        if !(self.alt_agl.is_finite() && self.alt_agl > 0.0) {
            return Err(invalid(format!(
                "altitude must be > 0, got {}",
                self.alt_agl
            )));
        }
        if !(0.0..360.0).contains(&self.heading) {
            return Err(invalid(format!(
                "heading must be in [0, 360), got {}",
                self.heading
            )));
        }
        if !self.position.lat.is_finite() || !self.position.lon.is_finite() {
            return Err(invalid("non-finite position"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundFootprint {
    /// Ground points under the image corners `(0,0)`, `(w,0)`, `(w,h)`, `(0,h)`.
    pub corners: [Enu; 4],
    pub center: Enu,
    pub swath_across: f64,
    pub extent_along: f64,
}

impl GroundFootprint {
    /// Shoelace area of the corner quadrilateral.
    pub fn area(&self) -> f64 {
        polygon_area(&self.corners).abs()
    }

    pub fn contains(&self, p: &Enu) -> bool {
        // convex quad: point must be on the same side of all edges
        let mut sign = 0.0f64;
        for i in 0..4 {
            let a = self.corners[i];
            let b = self.corners[(i + 1) % 4];
            let cross =
                (b.east - a.east) * (p.north - a.north) - (b.north - a.north) * (p.east - a.east);
            if cross.abs() < 1e-12 {
                continue;
            }
            if sign == 0.0 {
                sign = cross.signum();
            } else if cross.signum() != sign {
                return false;
            }
        }
        true
    }
}

/// Signed shoelace area (positive for counter-clockwise rings).
pub fn polygon_area(ring: &[Enu]) -> f64 {
    let n = ring.len();
    if n < 3 {
        return 0.0;
    }
    let mut acc = 0.0;
    for i in 0..n {
        let a = ring[i];
        let b = ring[(i + 1) % n];
        acc += a.east * b.north - b.east * a.north;
    }
    acc / 2.0
}

fn check_altitude(alt_agl: f64) -> Result<()> {
    if alt_agl.is_finite() && alt_agl > 0.0 {
        Ok(())
    } else {
        Err(invalid(format!("altitude must be > 0, got {alt_agl}")))
    }
}

/// Across-track ground swath in meters for a nadir camera over flat ground.
pub fn ground_swath(intr: &CameraIntrinsics, alt_agl: f64) -> Result<f64> {
    intr.validate()?;
    check_altitude(alt_agl)?;
    Ok(2.0 * alt_agl * (intr.sensor_width / (2.0 * intr.focal_length)))
}

/// Along-track ground extent in meters.
pub fn along_track_extent(intr: &CameraIntrinsics, alt_agl: f64) -> Result<f64> {
    intr.validate()?;
    check_altitude(alt_agl)?;
    Ok(2.0 * alt_agl * (intr.sensor_height / (2.0 * intr.focal_length)))
}

/// Fraction of ground shared by consecutive photographs.
pub fn forward_overlap(speed: f64, interval: f64, extent_along: f64) -> Result<f64> {
    if !(speed.is_finite() && speed >= 0.0) {
        return Err(invalid(format!("speed must be >= 0, got {speed}")));
    }
    if !(interval.is_finite() && interval > 0.0) {
        return Err(invalid(format!("interval must be > 0, got {interval}")));
    }
    if !(extent_along.is_finite() && extent_along > 0.0) {
        return Err(invalid(format!(
            "along-track extent must be > 0, got {extent_along}"
        )));
    }
    Ok(((extent_along - speed * interval) / extent_along).max(0.0))
}

/// Project `point` onto the tangent plane at `origin`.
pub fn enu_project(origin: &Geodetic, point: &Geodetic) -> Result<Enu> {
    let dlat = point.lat - origin.lat;
    let dlon = point.lon - origin.lon;
    if !(dlat.abs() < MAX_PROJECTION_SPAN_DEG && dlon.abs() < MAX_PROJECTION_SPAN_DEG) {
        return Err(GeometryError::SpanTooLarge { dlat, dlon });
    }
    let coslat = origin.lat.to_radians().cos();
    Ok(Enu::new(
        dlon * coslat * METERS_PER_DEGREE,
        dlat * METERS_PER_DEGREE,
    ))
}

/// Inverse of [`enu_project`].
pub fn enu_unproject(origin: &Geodetic, point: &Enu) -> Result<Geodetic> {
    let coslat = origin.lat.to_radians().cos();
    if coslat <= 1e-12 {
        return Err(invalid("origin at a pole"));
    }
    let dlat = point.north / METERS_PER_DEGREE;
    let dlon = point.east / (coslat * METERS_PER_DEGREE);
    if !(dlat.abs() < MAX_PROJECTION_SPAN_DEG && dlon.abs() < MAX_PROJECTION_SPAN_DEG) {
        return Err(GeometryError::SpanTooLarge { dlat, dlon });
    }
    Ok(Geodetic::new(origin.lat + dlat, origin.lon + dlon))
}

/// Maps camera-frame offsets (right, forward) onto the ground frame.
fn body_to_enu(heading: f64, right: f64, forward: f64) -> Enu {
    let (s, c) = heading.to_radians().sin_cos();
    // forward axis = (sin h, cos h); right axis = (cos h, -sin h)
    Enu::new(right * c + forward * s, -right * s + forward * c)
}

fn enu_to_body(heading: f64, d: &Enu) -> (f64, f64) {
    let (s, c) = heading.to_radians().sin_cos();
    (d.east * c - d.north * s, d.east * s + d.north * c)
}

/// Ground rectangle imaged from `pose`, expressed about `origin`.
pub fn footprint_polygon(
    pose: &FlightPose,
    intr: &CameraIntrinsics,
    origin: &Geodetic,
) -> Result<GroundFootprint> {
    pose.validate()?;
    let swath = ground_swath(intr, pose.alt_agl)?;
    let along = along_track_extent(intr, pose.alt_agl)?;
    let center = enu_project(origin, &pose.position)?;
    let (hw, hl) = (swath / 2.0, along / 2.0);
    // image corners (0,0), (w,0), (w,h), (0,h) in (right, forward)
    let body = [(-hw, hl), (hw, hl), (hw, -hl), (-hw, -hl)];
    let corners = body.map(|(r, f)| center.add(&body_to_enu(pose.heading, r, f)));
    Ok(GroundFootprint {
        corners,
        center,
        swath_across: swath,
        extent_along: along,
    })
}

/// Ground point seen at a continuous pixel coordinate.
pub fn pixel_to_ground(
    pose: &FlightPose,
    intr: &CameraIntrinsics,
    pixel: (f64, f64),
    origin: &Geodetic,
) -> Result<Enu> {
    pose.validate()?;
    intr.validate()?;
    let (px, py) = pixel;
    let (w, h) = (intr.image_width as f64, intr.image_height as f64);
    if !(px >= 0.0 && px <= w && py >= 0.0 && py <= h) {
        return Err(GeometryError::PixelOutOfBounds {
            x: px,
            y: py,
            width: intr.image_width,
            height: intr.image_height,
        });
    }
    let nadir = enu_project(origin, &pose.position)?;
    let right = pose.alt_agl * (px - w / 2.0) * (intr.sensor_width / (w * intr.focal_length));
    let forward = -pose.alt_agl * (py - h / 2.0) * (intr.sensor_height / (h * intr.focal_length));
    Ok(nadir.add(&body_to_enu(pose.heading, right, forward)))
}

/// Inverse of [`pixel_to_ground`]. The returned pixel may lie outside the
/// image; callers decide whether that means "not visible".
pub fn ground_to_pixel(
    pose: &FlightPose,
    intr: &CameraIntrinsics,
    ground: &Enu,
    origin: &Geodetic,
) -> Result<(f64, f64)> {
    pose.validate()?;
    intr.validate()?;
    let nadir = enu_project(origin, &pose.position)?;
    let (right, forward) = enu_to_body(pose.heading, &ground.sub(&nadir));
    let (w, h) = (intr.image_width as f64, intr.image_height as f64);
    let px = w / 2.0 + right * (w * intr.focal_length) / (pose.alt_agl * intr.sensor_width);
    let py = h / 2.0 - forward * (h * intr.focal_length) / (pose.alt_agl * intr.sensor_height);
    Ok((px, py))
}
