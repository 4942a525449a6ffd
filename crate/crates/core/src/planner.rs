//! Strip-transect survey planning.
//!
//! A grid of `cell_ns` x `cell_ew` cells is laid over the study area. Each
//! grid column contributes a line along the grid's north-south axis through
//! the column center; the line is clipped to the study area and cut at the
//! row boundaries, and pieces shorter than the minimum length are dropped.
//! Transects are then drawn at random until the coverage target is met,
//! packed greedily into battery-limited routes, and joined by east-west
//! connector transects where consecutive transects are far apart.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{enu_project, enu_unproject, polygon_area, Enu, Geodetic, GeometryError};

pub const PLAN_SCHEMA: &str = "wildcensus-plan/1";

#[derive(Debug, Error)]
pub enum PlanError {
    #[error("degenerate study area: {0}")]
    DegeneratePolygon(String),
    #[error("invalid parameter: {0}")]
    InvalidParam(String),
    #[error("coverage target {target} unreachable: all transects give {achievable}")]
    InsufficientTransects { target: f64, achievable: f64 },
    #[error("transect {transect_id} needs a {needed:.1} m route, budget is {budget:.1} m")]
    RouteInfeasible {
        transect_id: u32,
        needed: f64,
        budget: f64,
    },
    #[error("study area file: {0}")]
    StudyArea(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

pub type Result<T> = std::result::Result<T, PlanError>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub cell_ns: f64,
    pub cell_ew: f64,
    /// Direction of the grid's north-south axis, degrees clockwise from north.
    pub orientation: f64,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            cell_ns: 1500.0,
            cell_ew: 100.0,
            orientation: 0.0,
        }
    }
}

impl GridSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.cell_ns.is_finite()
            && self.cell_ns > 0.0
            && self.cell_ew.is_finite()
            && self.cell_ew > 0.0)
        {
            return Err(PlanError::InvalidParam(
                "grid cells must be positive".into(),
            ));
        }
        if !self.orientation.is_finite() {
            return Err(PlanError::InvalidParam(
                "grid orientation must be finite".into(),
            ));
        }
        Ok(())
    }

    /// ENU point into grid frame `(across, along)`.
    pub fn to_grid(&self, p: &Enu) -> (f64, f64) {
        let (s, c) = self.orientation.to_radians().sin_cos();
        (p.east * c - p.north * s, p.east * s + p.north * c)
    }

    pub fn from_grid(&self, across: f64, along: f64) -> Enu {
        let (s, c) = self.orientation.to_radians().sin_cos();
        Enu::new(across * c + along * s, -across * s + along * c)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransectKind {
    Primary,
    Connector,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transect {
    pub id: u32,
    pub start: Enu,
    pub end: Enu,
    pub length: f64,
    pub kind: TransectKind,
    pub census_eligible: bool,
    pub training_included: bool,
    /// Meters excluded from counting at each end.
    pub truncated_ends: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub column: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub row: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub start_geo: Option<Geodetic>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub end_geo: Option<Geodetic>,
}

impl Transect {
    /// Length over which imagery counts towards the census.
    pub fn census_length(&self) -> f64 {
        if self.census_eligible {
            (self.length - 2.0 * self.truncated_ends).max(0.0)
        } else {
            0.0
        }
    }

    /// Whether a point `distance` meters from the start lies in the counted
    /// portion.
    pub fn counts_at(&self, distance: f64) -> bool {
        self.census_eligible
            && distance >= self.truncated_ends
            && distance <= self.length - self.truncated_ends
    }
}

/// Simple polygon in ENU meters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct StudyArea {
    pub ring: Vec<Enu>,
}

fn cross(o: &Enu, a: &Enu, b: &Enu) -> f64 {
    (a.east - o.east) * (b.north - o.north) - (a.north - o.north) * (b.east - o.east)
}

fn on_segment(p: &Enu, a: &Enu, b: &Enu) -> bool {
    p.east >= a.east.min(b.east)
        && p.east <= a.east.max(b.east)
        && p.north >= a.north.min(b.north)
        && p.north <= a.north.max(b.north)
}

fn segments_intersect(a: &Enu, b: &Enu, c: &Enu, d: &Enu) -> bool {
    let d1 = cross(c, d, a);
    let d2 = cross(c, d, b);
    let d3 = cross(a, b, c);
    let d4 = cross(a, b, d);
    if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0))
        && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0))
    {
        return true;
    }
    (d1 == 0.0 && on_segment(a, c, d))
        || (d2 == 0.0 && on_segment(b, c, d))
        || (d3 == 0.0 && on_segment(c, a, b))
        || (d4 == 0.0 && on_segment(d, a, b))
}

fn point_segment_distance(p: &Enu, a: &Enu, b: &Enu) -> f64 {
    let ab = b.sub(a);
    let len2 = ab.east * ab.east + ab.north * ab.north;
    if len2 == 0.0 {
        return p.distance(a);
    }
    let t = (((p.east - a.east) * ab.east + (p.north - a.north) * ab.north) / len2).clamp(0.0, 1.0);
    p.distance(&a.add(&ab.scale(t)))
}

/// Minimum distance between two segments.
pub fn segment_distance(a: &Enu, b: &Enu, c: &Enu, d: &Enu) -> f64 {
    if segments_intersect(a, b, c, d) {
        return 0.0;
    }
    point_segment_distance(a, c, d)
        .min(point_segment_distance(b, c, d))
        .min(point_segment_distance(c, a, b))
        .min(point_segment_distance(d, a, b))
}

impl StudyArea {
    pub fn new(mut ring: Vec<Enu>) -> Result<Self> {
        if ring.len() > 1 && ring.first() == ring.last() {
            ring.pop();
        }
        let area = Self { ring };
        area.validate()?;
        Ok(area)
    }

    pub fn area(&self) -> f64 {
        polygon_area(&self.ring).abs()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.ring.len();
        if n < 3 {
            return Err(PlanError::DegeneratePolygon(format!("{n} vertices")));
        }
        if self
            .ring
            .iter()
            .any(|p| !p.east.is_finite() || !p.north.is_finite())
        {
            return Err(PlanError::DegeneratePolygon("non-finite vertex".into()));
        }
        if self.area() <= 0.0 {
            return Err(PlanError::DegeneratePolygon("zero area".into()));
        }
        for i in 0..n {
            for j in i + 1..n {
                // skip shared-vertex neighbours
                if j == i + 1 || (i == 0 && j == n - 1) {
                    continue;
                }
                let (a, b) = (&self.ring[i], &self.ring[(i + 1) % n]);
                let (c, d) = (&self.ring[j], &self.ring[(j + 1) % n]);
                if segments_intersect(a, b, c, d) {
                    return Err(PlanError::DegeneratePolygon(format!(
                        "edges {i} and {j} intersect"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn translated(&self, offset: &Enu) -> Self {
        Self {
            ring: self.ring.iter().map(|p| p.add(offset)).collect(),
        }
    }
}

/// Lays out candidate transects, ordered by (column, row).
pub fn generate_transects(
    area: &StudyArea,
    grid: &GridSpec,
    min_length: f64,
) -> Result<Vec<Transect>> {
    area.validate()?;
    grid.validate()?;
    if !(min_length.is_finite() && min_length > 0.0) {
        return Err(PlanError::InvalidParam("min_length must be > 0".into()));
    }
    let ring: Vec<(f64, f64)> = area.ring.iter().map(|p| grid.to_grid(p)).collect();
    let (mut umin, mut umax, mut vmin, mut vmax) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
    for &(u, v) in &ring {
        umin = umin.min(u);
        umax = umax.max(u);
        vmin = vmin.min(v);
        vmax = vmax.max(v);
    }

    let mut out = Vec::new();
    let mut next_id = 1u32;
    let mut col = 0u32;
    loop {
        let u = umin + grid.cell_ew * (col as f64 + 0.5);
        if u >= umax {
            break;
        }
        // scanline crossings
        let mut vs: Vec<f64> = Vec::new();
        for i in 0..ring.len() {
            let (a, b) = (ring[i], ring[(i + 1) % ring.len()]);
            if (a.0 <= u) != (b.0 <= u) {
                let t = (u - a.0) / (b.0 - a.0);
                vs.push(a.1 + t * (b.1 - a.1));
            }
        }
        vs.sort_by(f64::total_cmp);
        let intervals: Vec<(f64, f64)> = vs.chunks_exact(2).map(|c| (c[0], c[1])).collect();

        let mut row = 0u32;
        loop {
            let v0 = vmin + grid.cell_ns * row as f64;
            if v0 >= vmax {
                break;
            }
            let v1 = v0 + grid.cell_ns;
            for &(s, e) in &intervals {
                let (a, b) = (s.max(v0), e.min(v1));
                let len = b - a;
                if len > 0.0 && len >= min_length {
                    out.push(Transect {
                        id: next_id,
                        start: grid.from_grid(u, a),
                        end: grid.from_grid(u, b),
                        length: len,
                        kind: TransectKind::Primary,
                        census_eligible: true,
                        training_included: true,
                        truncated_ends: 0.0,
                        column: Some(col),
                        row: Some(row),
                        start_geo: None,
                        end_geo: None,
                    });
                    next_id += 1;
                }
            }
            row += 1;
        }
        col += 1;
    }
    Ok(out)
}

/// Draws whole transects from a seeded shuffle until the covered fraction
/// reaches `coverage_target`. The result is a prefix of the shuffle.
pub fn select_transects(
    transects: &[Transect],
    coverage_target: f64,
    swath: f64,
    study_area_m2: f64,
    seed: u64,
) -> Result<Vec<Transect>> {
    if !(0.0..=1.0).contains(&coverage_target) {
        return Err(PlanError::InvalidParam(format!(
            "coverage target {coverage_target} outside [0, 1]"
        )));
    }
    if !(swath > 0.0 && study_area_m2 > 0.0) {
        return Err(PlanError::InvalidParam(
            "swath and study area must be > 0".into(),
        ));
    }
    let needed = coverage_target * study_area_m2;
    // absorbs rounding when the target is hit exactly
    let slack = 1e-9 * study_area_m2;
    let mut order: Vec<usize> = (0..transects.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);

    let mut covered = 0.0;
    let mut picked = Vec::new();
    for idx in order {
        if covered + slack >= needed {
            break;
        }
        covered += transects[idx].length * swath;
        picked.push(transects[idx].clone());
    }
    if covered + slack < needed {
        return Err(PlanError::InsufficientTransects {
            target: coverage_target,
            achievable: covered / study_area_m2,
        });
    }
    Ok(picked)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RouteStep {
    pub transect_id: u32,
    /// Flown from `end` to `start`.
    pub reversed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Route {
    pub id: u32,
    pub steps: Vec<RouteStep>,
    /// Home legs, ferries and transects.
    pub length: f64,
}

impl Route {
    pub fn transect_ids(&self) -> impl Iterator<Item = u32> + '_ {
        self.steps.iter().map(|s| s.transect_id)
    }
}

fn step_endpoints(t: &Transect, reversed: bool) -> (Enu, Enu) {
    if reversed {
        (t.end, t.start)
    } else {
        (t.start, t.end)
    }
}

/// Total flight distance of a route from and back to `home`.
pub fn route_length(steps: &[RouteStep], transects: &BTreeMap<u32, &Transect>, home: &Enu) -> f64 {
    let mut pos = *home;
    let mut total = 0.0;
    for s in steps {
        let t = transects[&s.transect_id];
        let (entry, exit) = step_endpoints(t, s.reversed);
        total += pos.distance(&entry) + t.length;
        pos = exit;
    }
    total + pos.distance(home)
}

/// Greedy nearest-endpoint packing under a per-route length budget.
pub fn pack_routes(selected: &[Transect], max_route_length: f64, home: &Enu) -> Result<Vec<Route>> {
    if !(max_route_length.is_finite() && max_route_length > 0.0) {
        return Err(PlanError::InvalidParam(
            "max_route_length must be > 0".into(),
        ));
    }
    let mut pool: Vec<&Transect> = selected.iter().collect();
    pool.sort_by_key(|t| t.id);
    for t in &pool {
        // out-and-back is symmetric in direction
        let needed = home.distance(&t.start) + t.length + t.end.distance(home);
        if t.length > max_route_length || needed > max_route_length {
            return Err(PlanError::RouteInfeasible {
                transect_id: t.id,
                needed,
                budget: max_route_length,
            });
        }
    }

    let mut routed = vec![false; pool.len()];
    let mut remaining = pool.len();
    let mut routes = Vec::new();
    // nearest unrouted endpoint to `pos`; ties go to the lower id, then to start
    let nearest = |pos: &Enu, routed: &[bool]| -> Option<(usize, bool, f64)> {
        let mut best: Option<(usize, bool, f64)> = None;
        for (i, t) in pool.iter().enumerate() {
            if routed[i] {
                continue;
            }
            for (reversed, entry) in [(false, t.start), (true, t.end)] {
                let d = pos.distance(&entry);
                if best.is_none_or(|(_, _, bd)| d < bd) {
                    best = Some((i, reversed, d));
                }
            }
        }
        best
    };

    while remaining > 0 {
        let mut steps = Vec::new();
        let mut pos = *home;
        let mut flown = 0.0;
        while let Some((i, reversed, ferry)) = nearest(&pos, &routed) {
            let t = pool[i];
            let (_, exit) = step_endpoints(t, reversed);
            let total = flown + ferry + t.length + exit.distance(home);
            if total > max_route_length {
                break;
            }
            flown += ferry + t.length;
            pos = exit;
            routed[i] = true;
            remaining -= 1;
            steps.push(RouteStep {
                transect_id: t.id,
                reversed,
            });
        }
        debug_assert!(!steps.is_empty(), "feasibility checked above");
        routes.push(Route {
            id: routes.len() as u32 + 1,
            steps,
            length: flown + pos.distance(home),
        });
    }
    Ok(routes)
}

/// Inserts an east-west connector between consecutive transects whose exit
/// and entry points are more than `gap_threshold` apart. Connectors run
/// along the grid's across axis at the exit point's along coordinate and
/// lose `truncation` meters of census eligibility at each end. Route lengths
/// are recomputed; connector imagery stays usable for training.
pub fn add_connectors(
    routes: &mut [Route],
    transects: &mut Vec<Transect>,
    grid: &GridSpec,
    home: &Enu,
    gap_threshold: f64,
    truncation: f64,
) -> Result<usize> {
    if !(gap_threshold >= 0.0 && truncation >= 0.0) {
        return Err(PlanError::InvalidParam(
            "gap threshold and truncation must be >= 0".into(),
        ));
    }
    let mut next_id = transects.iter().map(|t| t.id).max().unwrap_or(0) + 1;
    let mut added = Vec::new();
    for route in routes.iter_mut() {
        let by_id: BTreeMap<u32, &Transect> = transects
            .iter()
            .chain(added.iter())
            .map(|t| (t.id, t))
            .collect();
        let mut steps = Vec::with_capacity(route.steps.len());
        let mut new_here = Vec::new();
        for (k, step) in route.steps.iter().enumerate() {
            steps.push(*step);
            let Some(next) = route.steps.get(k + 1) else {
                break;
            };
            let (_, exit) = step_endpoints(by_id[&step.transect_id], step.reversed);
            let (entry, _) = step_endpoints(by_id[&next.transect_id], next.reversed);
            if exit.distance(&entry) <= gap_threshold {
                continue;
            }
            let (ua, va) = grid.to_grid(&exit);
            let (ub, _) = grid.to_grid(&entry);
            let len = (ub - ua).abs();
            if len == 0.0 {
                continue;
            }
            let connector = Transect {
                id: next_id,
                start: exit,
                end: grid.from_grid(ub, va),
                length: len,
                kind: TransectKind::Connector,
                census_eligible: len > 2.0 * truncation,
                training_included: true,
                truncated_ends: truncation,
                column: None,
                row: None,
                start_geo: None,
                end_geo: None,
            };
            next_id += 1;
            steps.push(RouteStep {
                transect_id: connector.id,
                reversed: false,
            });
            new_here.push(connector);
        }
        route.steps = steps;
        added.extend(new_here);
        let by_id: BTreeMap<u32, &Transect> = transects
            .iter()
            .chain(added.iter())
            .map(|t| (t.id, t))
            .collect();
        route.length = route_length(&route.steps, &by_id, home);
    }
    let n = added.len();
    transects.extend(added);
    Ok(n)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduleEntry {
    pub route_id: u32,
    /// Seconds from the start of the survey.
    pub start: f64,
    pub speed: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub min_separation: f64,
    pub max_window: f64,
    pub entries: Vec<ScheduleEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Violation {
    Separation {
        first: u32,
        second: u32,
        distance: f64,
        required: f64,
    },
    Window {
        span: f64,
        max: f64,
    },
    Unscheduled {
        route_id: u32,
    },
    BadSpeed {
        route_id: u32,
    },
}

/// Planning parameters, echoed into the plan document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanParams {
    pub grid: GridSpec,
    pub min_transect: f64,
    pub coverage: f64,
    pub swath: f64,
    pub seed: u64,
    pub max_route_length: f64,
    pub home: Enu,
    pub speed: f64,
    /// Pause between consecutive routes (battery swap, repositioning).
    pub turnaround: f64,
    pub gap_threshold: f64,
    pub truncation: f64,
    pub min_separation: f64,
    pub max_window: f64,
}

impl Default for PlanParams {
    fn default() -> Self {
        Self {
            grid: GridSpec::default(),
            min_transect: 760.0,
            coverage: 0.10,
            swath: 67.5,
            seed: 42,
            max_route_length: 9000.0,
            home: Enu::default(),
            speed: 6.5,
            turnaround: 300.0,
            gap_threshold: 1500.0,
            truncation: 100.0,
            min_separation: 500.0,
            max_window: 3.0 * 3600.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurveyPlan {
    pub schema: String,
    pub params: PlanParams,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub origin: Option<Geodetic>,
    pub study_area: StudyArea,
    pub study_area_m2: f64,
    pub candidate_transects: usize,
    pub achieved_coverage: f64,
    pub transects: Vec<Transect>,
    pub routes: Vec<Route>,
    pub schedule: Schedule,
}

impl SurveyPlan {
    pub fn transect(&self, id: u32) -> Option<&Transect> {
        self.transects.iter().find(|t| t.id == id)
    }

    /// Area over which counts are made: census length times swath, summed over
    /// routed transects.
    pub fn surveyed_area(&self) -> f64 {
        let routed: BTreeSet<u32> = self.routes.iter().flat_map(Route::transect_ids).collect();
        self.transects
            .iter()
            .filter(|t| routed.contains(&t.id))
            .map(|t| t.census_length() * self.params.swath)
            .sum()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plan serializes") + "\n"
    }

    pub fn from_json(text: &str) -> std::result::Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }
}

fn check_params(p: &PlanParams) -> Result<()> {
    p.grid.validate()?;
    let pos = |v: f64, name: &str| {
        if v.is_finite() && v > 0.0 {
            Ok(())
        } else {
            Err(PlanError::InvalidParam(format!(
                "{name} must be > 0, got {v}"
            )))
        }
    };
    pos(p.min_transect, "min_transect")?;
    pos(p.swath, "swath")?;
    pos(p.max_route_length, "max_route_length")?;
    pos(p.speed, "speed")?;
    if !(0.0..=1.0).contains(&p.coverage) {
        return Err(PlanError::InvalidParam(format!(
            "coverage {} outside [0, 1]",
            p.coverage
        )));
    }
    Ok(())
}

/// Runs the whole planning chain: layout, selection, packing, connectors and
/// a back-to-back schedule.
pub fn plan_survey(
    area: &StudyArea,
    params: &PlanParams,
    origin: Option<Geodetic>,
) -> Result<SurveyPlan> {
    check_params(params)?;
    let candidates = generate_transects(area, &params.grid, params.min_transect)?;
    let study_area_m2 = area.area();
    let selected = select_transects(
        &candidates,
        params.coverage,
        params.swath,
        study_area_m2,
        params.seed,
    )?;
    let covered: f64 = selected.iter().map(|t| t.length * params.swath).sum();
    let mut routes = pack_routes(&selected, params.max_route_length, &params.home)?;
    let mut transects = selected;
    transects.sort_by_key(|t| t.id);
    add_connectors(
        &mut routes,
        &mut transects,
        &params.grid,
        &params.home,
        params.gap_threshold,
        params.truncation,
    )?;
    if let Some(o) = &origin {
        for t in &mut transects {
            t.start_geo = Some(enu_unproject(o, &t.start)?);
            t.end_geo = Some(enu_unproject(o, &t.end)?);
        }
    }
    let mut entries = Vec::with_capacity(routes.len());
    let mut clock = 0.0;
    for r in &routes {
        entries.push(ScheduleEntry {
            route_id: r.id,
            start: clock,
            speed: params.speed,
        });
        clock += r.length / params.speed + params.turnaround;
    }
    Ok(SurveyPlan {
        schema: PLAN_SCHEMA.to_string(),
        params: params.clone(),
        origin,
        study_area: area.clone(),
        study_area_m2,
        candidate_transects: candidates.len(),
        achieved_coverage: covered / study_area_m2,
        transects,
        routes,
        schedule: Schedule {
            min_separation: params.min_separation,
            max_window: params.max_window,
            entries,
        },
    })
}

/// Minimum distance between the transects of two routes.
pub fn route_separation(a: &Route, b: &Route, transects: &BTreeMap<u32, &Transect>) -> f64 {
    let mut best = f64::INFINITY;
    for ta in a.transect_ids() {
        for tb in b.transect_ids() {
            let (x, y) = (transects[&ta], transects[&tb]);
            best = best.min(segment_distance(&x.start, &x.end, &y.start, &y.end));
        }
    }
    best
}

/// Checks consecutive-in-time routes for lateral separation and the whole
/// schedule for its time window.
pub fn validate_schedule(plan: &SurveyPlan) -> Vec<Violation> {
    const EPS: f64 = 1e-9;
    let by_id: BTreeMap<u32, &Transect> = plan.transects.iter().map(|t| (t.id, t)).collect();
    let routes: BTreeMap<u32, &Route> = plan.routes.iter().map(|r| (r.id, r)).collect();
    let mut out = Vec::new();
    let scheduled: BTreeSet<u32> = plan.schedule.entries.iter().map(|e| e.route_id).collect();
    for r in &plan.routes {
        if !scheduled.contains(&r.id) {
            out.push(Violation::Unscheduled { route_id: r.id });
        }
    }
    let mut entries: Vec<&ScheduleEntry> = plan
        .schedule
        .entries
        .iter()
        .filter(|e| routes.contains_key(&e.route_id))
        .collect();
    entries.sort_by(|a, b| {
        a.start
            .total_cmp(&b.start)
            .then(a.route_id.cmp(&b.route_id))
    });
    for e in &entries {
        if !(e.speed.is_finite() && e.speed > 0.0) {
            out.push(Violation::BadSpeed {
                route_id: e.route_id,
            });
        }
    }
    for pair in entries.windows(2) {
        let d = route_separation(routes[&pair[0].route_id], routes[&pair[1].route_id], &by_id);
        if d + EPS < plan.schedule.min_separation {
            out.push(Violation::Separation {
                first: pair[0].route_id,
                second: pair[1].route_id,
                distance: d,
                required: plan.schedule.min_separation,
            });
        }
    }
    if let Some(first) = entries.first() {
        let end = entries
            .iter()
            .filter(|e| e.speed > 0.0)
            .map(|e| e.start + routes[&e.route_id].length / e.speed)
            .fold(f64::MIN, f64::max);
        let span = end - first.start;
        if span > plan.schedule.max_window + EPS {
            out.push(Violation::Window {
                span,
                max: plan.schedule.max_window,
            });
        }
    }
    out
}

/// Reads the outer ring of a GeoJSON Polygon (bare geometry, Feature, or the
/// first feature of a FeatureCollection) as lon/lat pairs.
pub fn parse_geojson_polygon(text: &str) -> Result<Vec<Geodetic>> {
    let v: serde_json::Value =
        serde_json::from_str(text).map_err(|e| PlanError::StudyArea(e.to_string()))?;
    let geom = match v.get("type").and_then(|t| t.as_str()) {
        Some("FeatureCollection") => v
            .get("features")
            .and_then(|f| f.get(0))
            .and_then(|f| f.get("geometry"))
            .cloned(),
        Some("Feature") => v.get("geometry").cloned(),
        Some("Polygon") => Some(v.clone()),
        other => {
            return Err(PlanError::StudyArea(format!(
                "unsupported GeoJSON type {other:?}"
            )))
        }
    }
    .ok_or_else(|| PlanError::StudyArea("missing geometry".into()))?;
    if geom.get("type").and_then(|t| t.as_str()) != Some("Polygon") {
        return Err(PlanError::StudyArea("geometry is not a Polygon".into()));
    }
    let ring = geom
        .get("coordinates")
        .and_then(|c| c.get(0))
        .and_then(|r| r.as_array())
        .ok_or_else(|| PlanError::StudyArea("missing outer ring".into()))?;
    let mut out = Vec::with_capacity(ring.len());
    for p in ring {
        let lon = p.get(0).and_then(|x| x.as_f64());
        let lat = p.get(1).and_then(|x| x.as_f64());
        match (lon, lat) {
            (Some(lon), Some(lat)) => out.push(Geodetic::new(lat, lon)),
            _ => return Err(PlanError::StudyArea(format!("bad coordinate {p}"))),
        }
    }
    if out.len() > 1 && out.first() == out.last() {
        out.pop();
    }
    Ok(out)
}

/// Projects a geodetic ring about the center of its bounding box.
pub fn project_ring(ring: &[Geodetic]) -> Result<(Geodetic, StudyArea)> {
    if ring.is_empty() {
        return Err(PlanError::DegeneratePolygon("empty ring".into()));
    }
    let (mut lat0, mut lat1, mut lon0, mut lon1) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
    for g in ring {
        lat0 = lat0.min(g.lat);
        lat1 = lat1.max(g.lat);
        lon0 = lon0.min(g.lon);
        lon1 = lon1.max(g.lon);
    }
    let origin = Geodetic::new((lat0 + lat1) / 2.0, (lon0 + lon1) / 2.0);
    let enu = ring
        .iter()
        .map(|g| enu_project(&origin, g))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    Ok((origin, StudyArea::new(enu)?))
}
