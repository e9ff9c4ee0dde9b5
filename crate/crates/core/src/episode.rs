//! Domain model: timelines, queries, ground-truth items, predictions and
//! episode validation.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;

use num_rational::Ratio;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

/// Zero-based frame index on an episode timeline.
pub type Frame = u64;

/// Fields a record carried that this crate does not interpret. Kept in
/// input order so they survive a read/write cycle unchanged.
pub type Extra = Map<String, Value>;

/// Frames per second as an exact ratio.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Fps {
    pub num: u32,
    pub den: u32,
}

impl Fps {
    pub const fn new(num: u32, den: u32) -> Self {
        Self { num, den }
    }

    pub fn is_valid(&self) -> bool {
        self.num >= 1 && self.den >= 1
    }

    pub fn as_f64(&self) -> f64 {
        f64::from(self.num) / f64::from(self.den)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Timeline {
    pub fps: Fps,
    pub num_frames: u64,
}

impl Timeline {
    pub fn new(fps: Fps, num_frames: u64) -> Self {
        Self { fps, num_frames }
    }

    /// Presentation time of `frame` in seconds, exactly.
    pub fn seconds(&self, frame: Frame) -> Ratio<u64> {
        Ratio::new(
            frame * u64::from(self.fps.den),
            u64::from(self.fps.num),
        )
    }

    /// The frame displayed at `seconds` (the last frame starting at or
    /// before that instant).
    pub fn frame_at(&self, seconds: Ratio<u64>) -> Frame {
        (seconds * Ratio::from_integer(u64::from(self.fps.num))
            / Ratio::from_integer(u64::from(self.fps.den)))
        .floor()
        .to_integer()
    }

    /// Video duration in seconds.
    pub fn duration(&self) -> Ratio<u64> {
        self.seconds(self.num_frames)
    }

    pub fn contains(&self, frame: Frame) -> bool {
        frame < self.num_frames
    }
}

/// Closed frame interval `[start, end]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(from = "[Frame; 2]", into = "[Frame; 2]")]
pub struct Interval {
    pub start: Frame,
    pub end: Frame,
}

impl Interval {
    pub const fn new(start: Frame, end: Frame) -> Self {
        Self { start, end }
    }

    pub fn contains(&self, frame: Frame) -> bool {
        self.start <= frame && frame <= self.end
    }

    pub fn overlaps(&self, other: &Interval) -> bool {
        self.start <= other.end && other.start <= self.end
    }

    pub fn len(&self) -> u64 {
        self.end.saturating_sub(self.start) + 1
    }

    pub fn is_well_formed(&self) -> bool {
        self.start <= self.end
    }
}

impl From<[Frame; 2]> for Interval {
    fn from([start, end]: [Frame; 2]) -> Self {
        Self { start, end }
    }
}

impl From<Interval> for [Frame; 2] {
    fn from(iv: Interval) -> Self {
        [iv.start, iv.end]
    }
}

impl fmt::Display for Interval {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}, {}]", self.start, self.end)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ProactiveType {
    Explicit,
    Implicit,
    Contextual,
}

impl ProactiveType {
    pub const ALL: [ProactiveType; 3] = [Self::Explicit, Self::Implicit, Self::Contextual];

    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Explicit => "Explicit",
            Self::Implicit => "Implicit",
            Self::Contextual => "Contextual",
        }
    }
}

impl fmt::Display for ProactiveType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// The fourteen benchmark task codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum TaskType {
    OR,
    AP,
    TRU,
    OL,
    OSC,
    EOL,
    EOSC,
    AR,
    OFR,
    IFR,
    NAR,
    TU,
    ORC,
    TRC,
}

impl TaskType {
    pub const ALL: [TaskType; 14] = [
        Self::OR,
        Self::AP,
        Self::TRU,
        Self::OL,
        Self::OSC,
        Self::EOL,
        Self::EOSC,
        Self::AR,
        Self::OFR,
        Self::IFR,
        Self::NAR,
        Self::TU,
        Self::ORC,
        Self::TRC,
    ];

    /// The proactive class every item of this task type must carry.
    pub fn proactive_type(&self) -> ProactiveType {
        match self {
            Self::ORC | Self::TRC => ProactiveType::Contextual,
            Self::OFR | Self::IFR | Self::NAR | Self::TU => ProactiveType::Implicit,
            _ => ProactiveType::Explicit,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Self::OR => "OR",
            Self::AP => "AP",
            Self::TRU => "TRU",
            Self::OL => "OL",
            Self::OSC => "OSC",
            Self::EOL => "EOL",
            Self::EOSC => "EOSC",
            Self::AR => "AR",
            Self::OFR => "OFR",
            Self::IFR => "IFR",
            Self::NAR => "NAR",
            Self::TU => "TU",
            Self::ORC => "ORC",
            Self::TRC => "TRC",
        }
    }

    pub fn parse(code: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|t| t.as_str() == code)
    }
}

impl fmt::Display for TaskType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Query {
    pub id: String,
    pub content: String,
    pub issue_frame: Frame,
    #[serde(default)]
    pub context_refs: Vec<String>,
    #[serde(flatten)]
    pub extra: Extra,
}

impl Query {
    pub fn new(id: impl Into<String>, content: impl Into<String>, issue_frame: Frame) -> Self {
        Self {
            id: id.into(),
            content: content.into(),
            issue_frame,
            context_refs: Vec::new(),
            extra: Extra::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthItem {
    pub id: String,
    pub query_id: String,
    pub content: String,
    pub intervals: Vec<Interval>,
    pub task_type: TaskType,
    pub proactive_type: ProactiveType,
    #[serde(flatten)]
    pub extra: Extra,
}

impl GroundTruthItem {
    /// Builds an item whose proactive type follows from the task type.
    pub fn new(
        id: impl Into<String>,
        query_id: impl Into<String>,
        content: impl Into<String>,
        intervals: Vec<Interval>,
        task_type: TaskType,
    ) -> Self {
        Self {
            id: id.into(),
            query_id: query_id.into(),
            content: content.into(),
            intervals,
            proactive_type: task_type.proactive_type(),
            task_type,
            extra: Extra::new(),
        }
    }

    /// Interval containing `frame`, preferring the earliest start.
    pub fn containing_interval(&self, frame: Frame) -> Option<Interval> {
        self.intervals
            .iter()
            .filter(|iv| iv.contains(frame))
            .min_by_key(|iv| (iv.start, iv.end))
            .copied()
    }

    pub fn first_interval(&self) -> Option<Interval> {
        self.intervals.iter().min().copied()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub id: String,
    pub query_id: String,
    pub content: String,
    pub emit_frame: Frame,
    #[serde(flatten)]
    pub extra: Extra,
}

impl Prediction {
    pub fn new(
        id: impl Into<String>,
        query_id: impl Into<String>,
        content: impl Into<String>,
        emit_frame: Frame,
    ) -> Self {
        Self {
            id: id.into(),
            query_id: query_id.into(),
            content: content.into(),
            emit_frame,
            extra: Extra::new(),
        }
    }
}

/// One streaming session.
#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub id: String,
    pub timeline: Timeline,
    pub queries: Vec<Query>,
    pub gt_items: Vec<GroundTruthItem>,
    pub frame_tokens: u64,
    pub high_res_tokens: u64,
    /// Unrecognised header fields.
    pub extra: Extra,
}

impl Episode {
    pub fn new(id: impl Into<String>, timeline: Timeline, frame_tokens: u64, high_res_tokens: u64) -> Self {
        Self {
            id: id.into(),
            timeline,
            queries: Vec::new(),
            gt_items: Vec::new(),
            frame_tokens,
            high_res_tokens,
            extra: Extra::new(),
        }
    }

    pub fn query(&self, id: &str) -> Option<&Query> {
        self.queries.iter().find(|q| q.id == id)
    }

    pub fn gt_item(&self, id: &str) -> Option<&GroundTruthItem> {
        self.gt_items.iter().find(|g| g.id == id)
    }

    /// Ground-truth items grouped by owning query, in file order.
    pub fn gt_by_query(&self) -> HashMap<&str, Vec<&GroundTruthItem>> {
        let mut map: HashMap<&str, Vec<&GroundTruthItem>> = HashMap::new();
        for gt in &self.gt_items {
            map.entry(gt.query_id.as_str()).or_default().push(gt);
        }
        map
    }

    /// Earliest query issue frame; `None` for an episode without queries.
    pub fn first_issue_frame(&self) -> Option<Frame> {
        self.queries.iter().map(|q| q.issue_frame).min()
    }

    /// The most recently issued query at `frame` (ties: later in file order).
    pub fn active_query(&self, frame: Frame) -> Option<&Query> {
        self.queries
            .iter()
            .filter(|q| q.issue_frame <= frame)
            .max_by_key(|q| q.issue_frame)
    }

    pub fn num_intervals(&self) -> usize {
        self.gt_items.iter().map(|g| g.intervals.len()).sum()
    }
}

/// A broken invariant found by [`validate_episode`].
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Violation {
    pub entity: String,
    pub rule: String,
}

impl Violation {
    fn new(entity: impl Into<String>, rule: impl Into<String>) -> Self {
        Self {
            entity: entity.into(),
            rule: rule.into(),
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.entity, self.rule)
    }
}

/// Checks every structural invariant of an episode. Returns an empty list
/// for a well-formed episode; otherwise one entry per broken rule, in a
/// deterministic order (episode header, queries, then ground truth).
pub fn validate_episode(episode: &Episode) -> Vec<Violation> {
    let mut out = Vec::new();
    let tl = &episode.timeline;
    let ep = format!("episode {}", episode.id);

    if !tl.fps.is_valid() {
        out.push(Violation::new(&ep, "fps numerator and denominator must both be >= 1"));
    }
    if episode.frame_tokens == 0 {
        out.push(Violation::new(&ep, "frame_tokens must be positive"));
    }
    if episode.high_res_tokens == 0 {
        out.push(Violation::new(&ep, "high_res_tokens must be positive"));
    }
    if episode.high_res_tokens < episode.frame_tokens {
        out.push(Violation::new(&ep, "high_res_tokens must be >= frame_tokens"));
    }

    let mut queries: BTreeMap<&str, &Query> = BTreeMap::new();
    for q in &episode.queries {
        let who = format!("query {}", q.id);
        if queries.insert(q.id.as_str(), q).is_some() {
            out.push(Violation::new(&who, "duplicate query id"));
        }
        if !tl.contains(q.issue_frame) {
            out.push(Violation::new(
                &who,
                format!("issue_frame {} outside timeline of {} frames", q.issue_frame, tl.num_frames),
            ));
        }
    }
    for q in &episode.queries {
        for r in &q.context_refs {
            match episode.query(r) {
                None => out.push(Violation::new(
                    format!("query {}", q.id),
                    format!("context_ref {r} does not name a query"),
                )),
                Some(prior) if prior.issue_frame >= q.issue_frame => out.push(Violation::new(
                    format!("query {}", q.id),
                    format!("context_ref {r} is not issued strictly earlier"),
                )),
                Some(_) => {}
            }
        }
    }

    let mut gt_ids = BTreeSet::new();
    for gt in &episode.gt_items {
        let who = format!("gt {}", gt.id);
        if !gt_ids.insert(gt.id.as_str()) {
            out.push(Violation::new(&who, "duplicate gt id"));
        }
        let query = episode.queries.iter().filter(|q| q.id == gt.query_id).count();
        if query != 1 {
            out.push(Violation::new(
                &who,
                format!("query_id {} resolves to {query} queries, expected 1", gt.query_id),
            ));
        }
        if gt.task_type.proactive_type() != gt.proactive_type {
            out.push(Violation::new(
                &who,
                format!(
                    "task_type {} requires proactive_type {}, found {}",
                    gt.task_type,
                    gt.task_type.proactive_type(),
                    gt.proactive_type
                ),
            ));
        }
        if gt.intervals.is_empty() {
            out.push(Violation::new(&who, "intervals must be non-empty"));
        }
        let issue = queries.get(gt.query_id.as_str()).map(|q| q.issue_frame);
        for iv in &gt.intervals {
            if !iv.is_well_formed() {
                out.push(Violation::new(&who, format!("interval {iv} has start > end")));
            }
            if !tl.contains(iv.end) || !tl.contains(iv.start) {
                out.push(Violation::new(
                    &who,
                    format!("interval {iv} exceeds timeline of {} frames", tl.num_frames),
                ));
            }
            if let Some(issue) = issue {
                if iv.start < issue {
                    out.push(Violation::new(
                        &who,
                        format!("interval {iv} starts before query issue_frame {issue}"),
                    ));
                }
            }
        }
        let mut sorted = gt.intervals.clone();
        sorted.sort();
        for w in sorted.windows(2) {
            if w[0].overlaps(&w[1]) {
                out.push(Violation::new(&who, format!("intervals {} and {} overlap", w[0], w[1])));
            }
        }
    }
    out
}

/// Checks predictions against the episode they are meant for.
pub fn validate_predictions(episode: &Episode, predictions: &[Prediction]) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut ids = BTreeSet::new();
    for p in predictions {
        let who = format!("pred {}", p.id);
        if !ids.insert(p.id.as_str()) {
            out.push(Violation::new(&who, "duplicate prediction id"));
        }
        match episode.query(&p.query_id) {
            None => out.push(Violation::new(&who, format!("unknown query_id {}", p.query_id))),
            Some(q) if p.emit_frame < q.issue_frame => out.push(Violation::new(
                &who,
                format!("emit_frame {} precedes query issue_frame {}", p.emit_frame, q.issue_frame),
            )),
            Some(_) => {}
        }
    }
    out
}
