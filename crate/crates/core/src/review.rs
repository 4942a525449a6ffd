//! Event-sourced dual-observer verification.
//!
//! Every photograph becomes a [`ReviewTask`] that must collect verdicts from
//! two distinct observers. Observers lease tasks one at a time; the second
//! verdict either agrees with the first (`double_reviewed`) or opens a
//! conflict that only an adjudication can close. All state changes are
//! [`Event`]s with contiguous sequence numbers, and [`ReviewState`] is a
//! fold over them.
//!
//! [`ReviewService`] serializes commands through one mutex: each command
//! derives its events from the current state, appends them to the log and
//! only then applies them.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::datastore::{BBox, Class, Detection};
use crate::eval::iou;

pub const EVENT_SCHEMA: &str = "wildcensus-event/1";
pub const SNAPSHOT_SCHEMA: &str = "wildcensus-snapshot/1";
pub const VERDICT_SCHEMA: &str = "wildcensus-verdict/1";
/// Seconds a lease stays valid.
pub const DEFAULT_LEASE_TTL: f64 = 15.0 * 60.0;
/// IoU at which two observers' boxes are taken to be the same animal.
pub const AGREEMENT_IOU: f64 = 0.10;

#[derive(Debug, Error)]
pub enum ReviewError {
    #[error("unknown task {0:?}")]
    UnknownTask(String),
    #[error("task {0:?} already exists")]
    TaskExists(String),
    #[error("observer {observer:?} already reviewed {image_id:?}")]
    DuplicateObserver { image_id: String, observer: String },
    #[error("task {image_id:?} is leased to {holder:?} until {expires_at}")]
    StaleLease {
        image_id: String,
        holder: String,
        expires_at: f64,
    },
    #[error("task {image_id:?} is {state:?} and takes no more reviews")]
    NotReviewable { image_id: String, state: TaskState },
    #[error("task {image_id:?} is {state:?}, not in conflict")]
    NotInConflict { image_id: String, state: TaskState },
    #[error("invalid verdict: {0}")]
    InvalidVerdict(String),
    #[error("unknown image {0:?} in detections")]
    UnknownImage(String),
    #[error("event log corrupt: {0}")]
    Corrupt(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, ReviewError>;

/// Model suggestion shown to observers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub id: u32,
    pub class: Class,
    pub bbox: BBox,
    pub confidence: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoxAction {
    ConfirmModel,
    RejectModel,
    AddManual,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerdictBox {
    pub bbox: BBox,
    pub class: Class,
    pub action: BoxAction,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub candidate_id: Option<u32>,
}

impl VerdictBox {
    /// Confirmed or manually added, i.e. an animal the observer vouches for.
    pub fn is_positive(&self) -> bool {
        self.action != BoxAction::RejectModel
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    #[serde(default)]
    pub verdict_id: String,
    pub image_id: String,
    pub observer_id: String,
    #[serde(default)]
    pub boxes: Vec<VerdictBox>,
    #[serde(default)]
    pub declared_empty: bool,
    /// Seconds spent on the image.
    #[serde(default)]
    pub duration: f64,
    #[serde(default)]
    pub submitted_at: f64,
}

impl Verdict {
    pub fn positive_boxes(&self) -> impl Iterator<Item = &VerdictBox> {
        self.boxes.iter().filter(|b| b.is_positive())
    }

    pub fn count(&self, class: Class) -> usize {
        self.positive_boxes().filter(|b| b.class == class).count()
    }

    /// Checks the verdict against the task's candidates: either declared
    /// empty or at least one positive box, never both; model actions must
    /// name a known candidate at most once.
    pub fn validate(&self, candidates: &[Candidate]) -> Result<()> {
        let bad = |m: String| Err(ReviewError::InvalidVerdict(m));
        if self.observer_id.trim().is_empty() {
            return bad("missing observer id".into());
        }
        let positives = self.positive_boxes().count();
        if self.declared_empty == (positives > 0) {
            return bad(format!(
                "declared_empty={} with {positives} positive boxes",
                self.declared_empty
            ));
        }
        let mut used = HashSet::new();
        for b in &self.boxes {
            if !b.bbox.is_valid() {
                return bad(format!("degenerate box {:?}", b.bbox));
            }
            match (b.action, b.candidate_id) {
                (BoxAction::AddManual, None) => {}
                (BoxAction::AddManual, Some(_)) => {
                    return bad("manual box references a candidate".into())
                }
                (_, None) => return bad(format!("{:?} without candidate id", b.action)),
                (_, Some(id)) => {
                    if !candidates.iter().any(|c| c.id == id) {
                        return bad(format!("unknown candidate {id}"));
                    }
                    if !used.insert(id) {
                        return bad(format!("candidate {id} decided twice"));
                    }
                }
            }
        }
        if !(self.duration.is_finite() && self.duration >= 0.0) {
            return bad("duration must be >= 0".into());
        }
        Ok(())
    }
}

/// Maximum one-to-one correspondence between two box sets, linking boxes
/// with IoU `>= thresh`. Higher-IoU partners are tried first. Returns
/// `(index in a, index in b)` pairs sorted by `a`.
pub fn correspond(a: &[BBox], b: &[BBox], thresh: f64) -> Vec<(usize, usize)> {
    let adj: Vec<Vec<usize>> = a
        .iter()
        .map(|x| {
            let mut row: Vec<(usize, f64)> = b
                .iter()
                .enumerate()
                .filter_map(|(j, y)| {
                    iou(x, y)
                        .ok()
                        .filter(|&v| v >= thresh && v > 0.0)
                        .map(|v| (j, v))
                })
                .collect();
            row.sort_by(|p, q| q.1.total_cmp(&p.1).then(p.0.cmp(&q.0)));
            row.into_iter().map(|(j, _)| j).collect()
        })
        .collect();
    // Kuhn's augmenting paths
    fn augment(
        u: usize,
        adj: &[Vec<usize>],
        seen: &mut [bool],
        owner: &mut [Option<usize>],
    ) -> bool {
        for &v in &adj[u] {
            if seen[v] {
                continue;
            }
            seen[v] = true;
            if owner[v].is_none_or(|w| augment(w, adj, seen, owner)) {
                owner[v] = Some(u);
                return true;
            }
        }
        false
    }
    let mut owner = vec![None; b.len()];
    for u in 0..a.len() {
        augment(u, &adj, &mut vec![false; b.len()], &mut owner);
    }
    let mut pairs: Vec<(usize, usize)> = owner
        .iter()
        .enumerate()
        .filter_map(|(j, o)| o.map(|i| (i, j)))
        .collect();
    pairs.sort_unstable();
    pairs
}

fn class_boxes(v: &Verdict, class: Class) -> Vec<BBox> {
    v.positive_boxes()
        .filter(|x| x.class == class)
        .map(|x| x.bbox)
        .collect()
}

/// Same per-class counts and a one-to-one box correspondence at IoU
/// `>= AGREEMENT_IOU`. Symmetric in its arguments.
pub fn verdicts_agree(a: &Verdict, b: &Verdict) -> bool {
    Class::ALL.iter().all(|&class| {
        let (ba, bb) = (class_boxes(a, class), class_boxes(b, class));
        ba.len() == bb.len() && correspond(&ba, &bb, AGREEMENT_IOU).len() == ba.len()
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskState {
    Pending,
    Leased,
    SingleReviewed,
    DoubleReviewed,
    Conflict,
    Adjudicated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lease {
    pub observer_id: String,
    pub expires_at: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReviewTask {
    pub image_id: String,
    /// Position in creation order.
    pub created: u64,
    pub state: TaskState,
    pub reviews: Vec<Verdict>,
    pub lease: Option<Lease>,
    pub candidates: Vec<Candidate>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub agreement: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub adjudication: Option<Verdict>,
}

impl ReviewTask {
    /// `(observer_id, verdict_id)` of each counted review.
    pub fn completed_reviews(&self) -> Vec<(&str, &str)> {
        self.reviews
            .iter()
            .map(|v| (v.observer_id.as_str(), v.verdict_id.as_str()))
            .collect()
    }

    pub fn reviewed_by(&self, observer: &str) -> bool {
        self.reviews.iter().any(|v| v.observer_id == observer)
    }

    pub fn distinct_observers(&self) -> usize {
        self.reviews
            .iter()
            .map(|v| v.observer_id.as_str())
            .collect::<BTreeSet<_>>()
            .len()
    }

    pub fn active_lease(&self, now: f64) -> Option<&Lease> {
        self.lease.as_ref().filter(|l| l.expires_at > now)
    }

    /// Two distinct-observer reviews or an adjudication.
    pub fn census_ready(&self) -> bool {
        self.adjudication.is_some() || self.distinct_observers() >= 2
    }

    fn resting_state(&self) -> TaskState {
        match self.reviews.len() {
            0 => TaskState::Pending,
            _ => TaskState::SingleReviewed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EventKind {
    TaskCreated {
        image_id: String,
        candidates: Vec<Candidate>,
    },
    Leased {
        image_id: String,
        observer_id: String,
        expires_at: f64,
    },
    LeaseExpired {
        image_id: String,
        observer_id: String,
    },
    VerdictSubmitted {
        verdict: Verdict,
    },
    Adjudicated {
        verdict: Verdict,
    },
}

impl EventKind {
    pub fn image_id(&self) -> &str {
        match self {
            EventKind::TaskCreated { image_id, .. }
            | EventKind::Leased { image_id, .. }
            | EventKind::LeaseExpired { image_id, .. } => image_id,
            EventKind::VerdictSubmitted { verdict } | EventKind::Adjudicated { verdict } => {
                &verdict.image_id
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub seq: u64,
    /// Seconds, from the service clock.
    pub at: f64,
    #[serde(flatten)]
    pub kind: EventKind,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ReviewState {
    pub last_seq: u64,
    pub tasks: BTreeMap<String, ReviewTask>,
    #[serde(skip)]
    order: Vec<String>,
    #[serde(skip)]
    open: BTreeSet<u64>,
    #[serde(skip)]
    leased: BTreeSet<String>,
}

fn corrupt(msg: impl Into<String>) -> ReviewError {
    ReviewError::Corrupt(msg.into())
}

impl ReviewState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn task(&self, image_id: &str) -> Option<&ReviewTask> {
        self.tasks.get(image_id)
    }

    fn rebuild_indexes(&mut self) {
        let mut tasks: Vec<&ReviewTask> = self.tasks.values().collect();
        tasks.sort_by_key(|t| t.created);
        self.order = tasks.iter().map(|t| t.image_id.clone()).collect();
        self.open = tasks
            .iter()
            .filter(|t| {
                matches!(
                    t.state,
                    TaskState::Pending | TaskState::Leased | TaskState::SingleReviewed
                )
            })
            .map(|t| t.created)
            .collect();
        self.leased = tasks
            .iter()
            .filter(|t| t.lease.is_some())
            .map(|t| t.image_id.clone())
            .collect();
    }

    fn task_mut(&mut self, image_id: &str) -> Result<&mut ReviewTask> {
        self.tasks
            .get_mut(image_id)
            .ok_or_else(|| corrupt(format!("event for unknown task {image_id:?}")))
    }

    /// Applies one event. Rejects out-of-sequence events and transitions the
    /// state machine does not allow.
    pub fn apply(&mut self, ev: &Event) -> Result<()> {
        if ev.seq != self.last_seq + 1 {
            return Err(corrupt(format!(
                "expected sequence {}, found {}",
                self.last_seq + 1,
                ev.seq
            )));
        }
        match &ev.kind {
            EventKind::TaskCreated {
                image_id,
                candidates,
            } => {
                if self.tasks.contains_key(image_id) {
                    return Err(corrupt(format!("task {image_id:?} created twice")));
                }
                let created = self.order.len() as u64;
                self.tasks.insert(
                    image_id.clone(),
                    ReviewTask {
                        image_id: image_id.clone(),
                        created,
                        state: TaskState::Pending,
                        reviews: Vec::new(),
                        lease: None,
                        candidates: candidates.clone(),
                        agreement: None,
                        adjudication: None,
                    },
                );
                self.order.push(image_id.clone());
                self.open.insert(created);
            }
            EventKind::Leased {
                image_id,
                observer_id,
                expires_at,
            } => {
                let t = self.task_mut(image_id)?;
                if t.lease.is_some()
                    || !matches!(t.state, TaskState::Pending | TaskState::SingleReviewed)
                {
                    return Err(corrupt(format!(
                        "lease on {image_id:?} in state {:?}",
                        t.state
                    )));
                }
                if t.reviewed_by(observer_id) {
                    return Err(corrupt(format!(
                        "{observer_id:?} leased {image_id:?} twice"
                    )));
                }
                t.lease = Some(Lease {
                    observer_id: observer_id.clone(),
                    expires_at: *expires_at,
                });
                t.state = TaskState::Leased;
                self.leased.insert(image_id.clone());
            }
            EventKind::LeaseExpired {
                image_id,
                observer_id,
            } => {
                let t = self.task_mut(image_id)?;
                match &t.lease {
                    Some(l) if &l.observer_id == observer_id => {}
                    _ => {
                        return Err(corrupt(format!(
                            "expiry of a lease {image_id:?} does not hold"
                        )))
                    }
                }
                t.lease = None;
                t.state = t.resting_state();
                self.leased.remove(image_id);
            }
            EventKind::VerdictSubmitted { verdict } => {
                let id = verdict.image_id.clone();
                let t = self.task_mut(&id)?;
                if !matches!(
                    t.state,
                    TaskState::Pending | TaskState::Leased | TaskState::SingleReviewed
                ) {
                    return Err(corrupt(format!("verdict on {id:?} in state {:?}", t.state)));
                }
                if t.reviewed_by(&verdict.observer_id) {
                    return Err(corrupt(format!(
                        "second verdict by {:?} on {id:?}",
                        verdict.observer_id
                    )));
                }
                t.lease = None;
                t.reviews.push(verdict.clone());
                let created = t.created;
                if t.reviews.len() == 1 {
                    t.state = TaskState::SingleReviewed;
                } else {
                    let agree = verdicts_agree(&t.reviews[0], &t.reviews[1]);
                    t.agreement = Some(agree);
                    t.state = if agree {
                        TaskState::DoubleReviewed
                    } else {
                        TaskState::Conflict
                    };
                    self.open.remove(&created);
                }
                self.leased.remove(&id);
            }
            EventKind::Adjudicated { verdict } => {
                let t = self.task_mut(&verdict.image_id)?;
                if t.state != TaskState::Conflict {
                    return Err(corrupt(format!(
                        "adjudication of {:?} in state {:?}",
                        verdict.image_id, t.state
                    )));
                }
                t.adjudication = Some(verdict.clone());
                t.state = TaskState::Adjudicated;
            }
        }
        self.last_seq = ev.seq;
        Ok(())
    }

    /// Events for a new task.
    pub fn plan_create(&self, image_id: &str, candidates: Vec<Candidate>) -> Result<EventKind> {
        if self.tasks.contains_key(image_id) {
            return Err(ReviewError::TaskExists(image_id.to_string()));
        }
        Ok(EventKind::TaskCreated {
            image_id: image_id.to_string(),
            candidates,
        })
    }

    /// Events for leasing the oldest reviewable task to `observer`: expiry of
    /// stale leases, then the lease itself (if any task qualifies).
    pub fn plan_lease(&self, observer: &str, now: f64, ttl: f64) -> Vec<EventKind> {
        let mut events: Vec<EventKind> =
            self.leased
                .iter()
                .filter_map(|id| {
                    let t = &self.tasks[id];
                    t.lease.as_ref().filter(|l| l.expires_at <= now).map(|l| {
                        EventKind::LeaseExpired {
                            image_id: id.clone(),
                            observer_id: l.observer_id.clone(),
                        }
                    })
                })
                .collect();
        let pick = self.open.iter().find_map(|created| {
            let t = &self.tasks[&self.order[*created as usize]];
            let free = t.active_lease(now).is_none();
            (free && !t.reviewed_by(observer)).then_some(t)
        });
        if let Some(t) = pick {
            events.push(EventKind::Leased {
                image_id: t.image_id.clone(),
                observer_id: observer.to_string(),
                expires_at: now + ttl,
            });
        }
        events
    }

    /// Events for a verdict: expiry of a stale lease held by someone else,
    /// then the verdict.
    pub fn plan_verdict(&self, mut verdict: Verdict, now: f64) -> Result<Vec<EventKind>> {
        let t = self
            .tasks
            .get(&verdict.image_id)
            .ok_or_else(|| ReviewError::UnknownTask(verdict.image_id.clone()))?;
        verdict.validate(&t.candidates)?;
        if !matches!(
            t.state,
            TaskState::Pending | TaskState::Leased | TaskState::SingleReviewed
        ) {
            return Err(ReviewError::NotReviewable {
                image_id: t.image_id.clone(),
                state: t.state,
            });
        }
        if t.reviewed_by(&verdict.observer_id) {
            return Err(ReviewError::DuplicateObserver {
                image_id: t.image_id.clone(),
                observer: verdict.observer_id.clone(),
            });
        }
        let mut events = Vec::new();
        if let Some(l) = &t.lease {
            if l.observer_id != verdict.observer_id {
                if l.expires_at > now {
                    return Err(ReviewError::StaleLease {
                        image_id: t.image_id.clone(),
                        holder: l.observer_id.clone(),
                        expires_at: l.expires_at,
                    });
                }
                events.push(EventKind::LeaseExpired {
                    image_id: t.image_id.clone(),
                    observer_id: l.observer_id.clone(),
                });
            }
        }
        if verdict.verdict_id.is_empty() {
            verdict.verdict_id = format!("{}/{}", verdict.image_id, verdict.observer_id);
        }
        verdict.submitted_at = now;
        events.push(EventKind::VerdictSubmitted { verdict });
        Ok(events)
    }

    pub fn plan_adjudication(&self, mut verdict: Verdict, now: f64) -> Result<EventKind> {
        let t = self
            .tasks
            .get(&verdict.image_id)
            .ok_or_else(|| ReviewError::UnknownTask(verdict.image_id.clone()))?;
        if t.state != TaskState::Conflict {
            return Err(ReviewError::NotInConflict {
                image_id: t.image_id.clone(),
                state: t.state,
            });
        }
        verdict.validate(&t.candidates)?;
        if verdict.verdict_id.is_empty() {
            verdict.verdict_id = format!("{}/adjudication", verdict.image_id);
        }
        verdict.submitted_at = now;
        Ok(EventKind::Adjudicated { verdict })
    }

    pub fn stats(&self) -> ReviewStats {
        let mut s = ReviewStats::default();
        for t in self.tasks.values() {
            *s.queue.entry(t.state).or_default() += 1;
            for v in t.reviews.iter().chain(&t.adjudication) {
                let o = s.observers.entry(v.observer_id.clone()).or_default();
                o.verdicts += 1;
                o.seconds += v.duration;
                for b in &v.boxes {
                    match b.action {
                        BoxAction::ConfirmModel => s.candidates_confirmed += 1,
                        BoxAction::RejectModel => s.candidates_rejected += 1,
                        BoxAction::AddManual => s.manual_boxes += 1,
                    }
                }
            }
            match t.agreement {
                Some(true) => s.agreements += 1,
                Some(false) => s.disagreements += 1,
                None => {}
            }
        }
        s.tasks = self.tasks.len();
        let decided = s.agreements + s.disagreements;
        s.agreement_rate = (decided > 0).then(|| s.agreements as f64 / decided as f64);
        for o in s.observers.values_mut() {
            o.mean_seconds = o.seconds / o.verdicts as f64;
        }
        s
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ObserverStats {
    pub verdicts: usize,
    pub seconds: f64,
    pub mean_seconds: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ReviewStats {
    pub tasks: usize,
    pub queue: BTreeMap<TaskState, usize>,
    pub agreements: usize,
    pub disagreements: usize,
    pub agreement_rate: Option<f64>,
    pub candidates_confirmed: usize,
    pub candidates_rejected: usize,
    pub manual_boxes: usize,
    pub observers: BTreeMap<String, ObserverStats>,
}

/// Folds a complete log (sequence numbers contiguous from 1).
pub fn replay(events: &[Event]) -> Result<ReviewState> {
    replay_onto(ReviewState::new(), events)
}

/// Folds `events` onto a snapshot; events already covered by the snapshot
/// are skipped.
pub fn replay_onto(mut state: ReviewState, events: &[Event]) -> Result<ReviewState> {
    state.rebuild_indexes();
    let base = state.last_seq;
    for ev in events.iter().filter(|e| e.seq > base) {
        state.apply(ev)?;
    }
    Ok(state)
}

pub fn read_events(path: &Path) -> Result<Vec<Event>> {
    let file = match File::open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(source) => {
            return Err(ReviewError::Io {
                path: path.to_path_buf(),
                source,
            })
        }
    };
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|source| ReviewError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let ev: Event = serde_json::from_str(&line)
            .map_err(|e| corrupt(format!("{}:{}: {e}", path.display(), i + 1)))?;
        out.push(ev);
    }
    Ok(out)
}

/// Model candidates per image from detections at or above `tau`.
pub fn seed_candidates<'a>(
    dets: &[Detection],
    tau: f64,
    known_images: impl IntoIterator<Item = &'a str>,
) -> Result<BTreeMap<String, Vec<Candidate>>> {
    let mut out: BTreeMap<String, Vec<Candidate>> = known_images
        .into_iter()
        .map(|id| (id.to_string(), Vec::new()))
        .collect();
    for d in dets {
        let list = out
            .get_mut(&d.image_id)
            .ok_or_else(|| ReviewError::UnknownImage(d.image_id.clone()))?;
        if d.confidence >= tau {
            list.push(Candidate {
                id: list.len() as u32 + 1,
                class: d.class,
                bbox: d.bbox,
                confidence: d.confidence,
            });
        }
    }
    Ok(out)
}

struct Inner {
    state: ReviewState,
    log: Vec<Event>,
    file: Option<(PathBuf, BufWriter<File>)>,
}

impl Inner {
    fn commit(&mut self, kinds: Vec<EventKind>, now: f64) -> Result<()> {
        let mut seq = self.state.last_seq;
        let events: Vec<Event> = kinds
            .into_iter()
            .map(|kind| {
                seq += 1;
                Event { seq, at: now, kind }
            })
            .collect();
        if let Some((path, w)) = &mut self.file {
            let io = |source| ReviewError::Io {
                path: path.clone(),
                source,
            };
            for ev in &events {
                serde_json::to_writer(&mut *w, ev).map_err(|e| io(e.into()))?;
                w.write_all(b"\n").map_err(io)?;
            }
            w.flush().map_err(io)?;
        }
        for ev in events {
            self.state.apply(&ev)?;
            self.log.push(ev);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Snapshot {
    schema: String,
    state: ReviewState,
}

/// Single-writer review service. Safe to share across threads.
pub struct ReviewService {
    inner: Mutex<Inner>,
    lease_ttl: f64,
}

impl ReviewService {
    /// In-memory service.
    pub fn new(lease_ttl: f64) -> Self {
        Self {
            inner: Mutex::new(Inner {
                state: ReviewState::new(),
                log: Vec::new(),
                file: None,
            }),
            lease_ttl,
        }
    }

    /// Opens (or creates) a store directory holding `events.jsonl` and an
    /// optional `snapshot.json`, replaying whatever is there.
    pub fn open(dir: &Path, lease_ttl: f64) -> Result<Self> {
        let io = |path: &Path| {
            let path = path.to_path_buf();
            move |source| ReviewError::Io { path, source }
        };
        std::fs::create_dir_all(dir).map_err(io(dir))?;
        let events_path = dir.join("events.jsonl");
        let snap_path = dir.join("snapshot.json");
        let events = read_events(&events_path)?;
        let base = match std::fs::read_to_string(&snap_path) {
            Ok(text) => {
                let snap: Snapshot =
                    serde_json::from_str(&text).map_err(|e| corrupt(format!("snapshot: {e}")))?;
                if snap.schema != SNAPSHOT_SCHEMA {
                    return Err(corrupt(format!("snapshot schema {:?}", snap.schema)));
                }
                snap.state
            }
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => ReviewState::new(),
            Err(e) => return Err(io(&snap_path)(e)),
        };
        let state = replay_onto(base, &events)?;
        if events.last().is_some_and(|e| e.seq != state.last_seq) {
            return Err(corrupt("events end before the snapshot"));
        }
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&events_path)
            .map_err(io(&events_path))?;
        Ok(Self {
            inner: Mutex::new(Inner {
                state,
                log: events,
                file: Some((events_path, BufWriter::new(file))),
            }),
            lease_ttl,
        })
    }

    pub fn lease_ttl(&self) -> f64 {
        self.lease_ttl
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, Inner> {
        self.inner.lock().unwrap_or_else(|e| e.into_inner())
    }

    pub fn create_task(&self, image_id: &str, candidates: Vec<Candidate>, now: f64) -> Result<()> {
        let mut g = self.lock();
        let ev = g.state.plan_create(image_id, candidates)?;
        g.commit(vec![ev], now)
    }

    /// Creates tasks for every image not yet known, in the given order.
    pub fn create_tasks(
        &self,
        tasks: impl IntoIterator<Item = (String, Vec<Candidate>)>,
        now: f64,
    ) -> Result<usize> {
        let mut g = self.lock();
        let kinds: Vec<EventKind> = tasks
            .into_iter()
            .filter(|(id, _)| !g.state.tasks.contains_key(id))
            .map(|(image_id, candidates)| EventKind::TaskCreated {
                image_id,
                candidates,
            })
            .collect();
        let n = kinds.len();
        g.commit(kinds, now)?;
        Ok(n)
    }

    pub fn lease_next(&self, observer: &str, now: f64) -> Result<Option<ReviewTask>> {
        let mut g = self.lock();
        let kinds = g.state.plan_lease(observer, now, self.lease_ttl);
        let leased = kinds.iter().find_map(|k| match k {
            EventKind::Leased { image_id, .. } => Some(image_id.clone()),
            _ => None,
        });
        g.commit(kinds, now)?;
        Ok(leased.map(|id| g.state.tasks[&id].clone()))
    }

    pub fn submit_verdict(&self, verdict: Verdict, now: f64) -> Result<ReviewTask> {
        let mut g = self.lock();
        let id = verdict.image_id.clone();
        let kinds = g.state.plan_verdict(verdict, now)?;
        g.commit(kinds, now)?;
        Ok(g.state.tasks[&id].clone())
    }

    pub fn adjudicate(&self, verdict: Verdict, now: f64) -> Result<ReviewTask> {
        let mut g = self.lock();
        let id = verdict.image_id.clone();
        let kind = g.state.plan_adjudication(verdict, now)?;
        g.commit(vec![kind], now)?;
        Ok(g.state.tasks[&id].clone())
    }

    pub fn task(&self, image_id: &str) -> Option<ReviewTask> {
        self.lock().state.tasks.get(image_id).cloned()
    }

    pub fn stats(&self) -> ReviewStats {
        self.lock().state.stats()
    }

    /// Copy of the current state.
    pub fn state(&self) -> ReviewState {
        self.lock().state.clone()
    }

    pub fn events(&self) -> Vec<Event> {
        self.lock().log.clone()
    }

    /// Writes `snapshot.json` next to the event log (no-op in memory).
    pub fn snapshot(&self) -> Result<()> {
        let g = self.lock();
        let Some((events_path, _)) = &g.file else {
            return Ok(());
        };
        let dir = events_path.parent().unwrap_or(Path::new("."));
        let tmp = dir.join("snapshot.json.tmp");
        let snap = Snapshot {
            schema: SNAPSHOT_SCHEMA.to_string(),
            state: g.state.clone(),
        };
        let io = |source| ReviewError::Io {
            path: tmp.clone(),
            source,
        };
        std::fs::write(
            &tmp,
            serde_json::to_vec(&snap).expect("snapshot serializes"),
        )
        .map_err(io)?;
        std::fs::rename(&tmp, dir.join("snapshot.json")).map_err(io)
    }
}
