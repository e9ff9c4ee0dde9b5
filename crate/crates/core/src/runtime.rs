//! Streaming decision loop and KV-cache token accounting.
//!
//! Every frame appends its low-resolution tokens to the cache. From the
//! first query onwards the policy picks one action per frame: continue,
//! respond, or fetch a high-resolution copy of the frame and then decide
//! once more between continue and respond. With compression enabled, a
//! response compacts everything before it: all pending low-resolution
//! runs (and earlier response text) collapse under one compression token,
//! while each high-resolution frame keeps a compression token of its own.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::{BufRead, Write};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::episode::{Episode, Frame, Prediction};
use crate::num::Scalar;
use crate::supervision::{ActionLabel, PolicySignal};

pub const DEFAULT_RESPONSE_TOKENS: u64 = 16;
pub const DEFAULT_RESPONSE_TEXT: &str = "response";
pub const DEFAULT_APS_TRIALS: usize = 3;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("script error at frame {frame}: {message}")]
    Script { frame: Frame, message: String },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("compression ratio undefined for an empty trace")]
    EmptyTrace,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SegmentKind {
    LowResRun,
    HighResFrame,
    ResponseText,
    CompressionToken,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub kind: SegmentKind,
    /// Uncompressed size. Zero for compression tokens, whose footprint is
    /// the ledger's `k_ct`.
    pub token_count: u64,
    pub compressed: bool,
    pub first_frame: Frame,
    pub last_frame: Frame,
}

/// Segment-structured token ledger.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheLedger {
    segments: Vec<Segment>,
    k_ct: u64,
    current_tokens: u64,
    peak_tokens: u64,
    cumulative_uncompressed_tokens: u64,
    /// Segments before this index are compressed, compression tokens, or
    /// the latest response.
    pending_from: usize,
    last_response: Option<usize>,
}

impl CacheLedger {
    pub fn new(k_ct: u64) -> Self {
        assert!(k_ct >= 1, "compression token size must be positive");
        Self {
            segments: Vec::new(),
            k_ct,
            current_tokens: 0,
            peak_tokens: 0,
            cumulative_uncompressed_tokens: 0,
            pending_from: 0,
            last_response: None,
        }
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn k_ct(&self) -> u64 {
        self.k_ct
    }

    pub fn current_tokens(&self) -> u64 {
        self.current_tokens
    }

    pub fn peak_tokens(&self) -> u64 {
        self.peak_tokens
    }

    pub fn cumulative_uncompressed_tokens(&self) -> u64 {
        self.cumulative_uncompressed_tokens
    }

    fn grow(&mut self, tokens: u64) {
        self.current_tokens += tokens;
        self.peak_tokens = self.peak_tokens.max(self.current_tokens);
    }

    fn push(&mut self, kind: SegmentKind, frame: Frame, tokens: u64) -> usize {
        self.segments.push(Segment {
            kind,
            token_count: tokens,
            compressed: false,
            first_frame: frame,
            last_frame: frame,
        });
        self.cumulative_uncompressed_tokens += tokens;
        self.grow(tokens);
        self.segments.len() - 1
    }

    /// Appends one frame's low-resolution tokens, extending the open run.
    pub fn push_low_res(&mut self, frame: Frame, tokens: u64) {
        let open = self.segments.len() > self.pending_from;
        if let Some(last) = self.segments.last_mut() {
            if open && last.kind == SegmentKind::LowResRun && !last.compressed {
                last.token_count += tokens;
                last.last_frame = frame;
                self.cumulative_uncompressed_tokens += tokens;
                self.grow(tokens);
                return;
            }
        }
        self.push(SegmentKind::LowResRun, frame, tokens);
    }

    pub fn push_high_res(&mut self, frame: Frame, tokens: u64) {
        self.push(SegmentKind::HighResFrame, frame, tokens);
    }

    pub fn push_response(&mut self, frame: Frame, tokens: u64) -> usize {
        let idx = self.push(SegmentKind::ResponseText, frame, tokens);
        self.last_response = Some(idx);
        idx
    }

    fn push_ct(&mut self, frame: Frame) {
        self.segments.push(Segment {
            kind: SegmentKind::CompressionToken,
            token_count: 0,
            compressed: false,
            first_frame: frame,
            last_frame: frame,
        });
        self.grow(self.k_ct);
    }

    /// Compresses every uncompressed segment before `response`.
    pub fn compact_before(&mut self, response: usize) {
        let mut shared = false;
        let mut high_res = Vec::new();
        let mut freed = 0;
        let frame = self.segments[response].first_frame;
        for i in self.pending_from..response {
            let seg = &mut self.segments[i];
            if seg.compressed || seg.kind == SegmentKind::CompressionToken {
                continue;
            }
            seg.compressed = true;
            freed += seg.token_count;
            match seg.kind {
                SegmentKind::HighResFrame => high_res.push(seg.first_frame),
                _ => shared = true,
            }
        }
        self.current_tokens -= freed;
        for f in high_res {
            self.push_ct(f);
        }
        if shared {
            self.push_ct(frame);
        }
        self.pending_from = response;
    }

    /// Recounts `(current, cumulative)` from the segment list.
    pub fn recount(&self) -> (u64, u64) {
        let mut current = 0;
        let mut cumulative = 0;
        for s in &self.segments {
            cumulative += s.token_count;
            if s.kind == SegmentKind::CompressionToken {
                current += self.k_ct;
            } else if !s.compressed {
                current += s.token_count;
            }
        }
        (current, cumulative)
    }

    /// Running totals agree with a full recount.
    pub fn audit(&self) -> Result<(), String> {
        let (current, cumulative) = self.recount();
        if current != self.current_tokens || cumulative != self.cumulative_uncompressed_tokens {
            return Err(format!(
                "ledger drift: running ({}, {}) vs recount ({current}, {cumulative})",
                self.current_tokens, self.cumulative_uncompressed_tokens
            ));
        }
        Ok(())
    }

    /// Uncompressed visual segments preceding the latest response.
    pub fn uncompressed_before_last_response(&self) -> usize {
        let Some(r) = self.last_response else {
            return 0;
        };
        self.segments[..r]
            .iter()
            .filter(|s| {
                !s.compressed && matches!(s.kind, SegmentKind::LowResRun | SegmentKind::HighResFrame)
            })
            .count()
    }
}

/// One scripted step. A frame may carry at most one `AskHigh`, which must
/// come before any `Respond`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptStep {
    pub frame: Frame,
    pub action: ScriptAction,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub query: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScriptAction {
    Continue,
    Respond,
    AskHigh,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Script {
    steps: BTreeMap<Frame, Vec<ScriptStep>>,
}

impl Script {
    pub fn new(steps: impl IntoIterator<Item = ScriptStep>) -> Self {
        let mut map: BTreeMap<Frame, Vec<ScriptStep>> = BTreeMap::new();
        for s in steps {
            map.entry(s.frame).or_default().push(s);
        }
        Self { steps: map }
    }

    /// Responds at each listed frame.
    pub fn responses(frames: impl IntoIterator<Item = Frame>) -> Self {
        Self::new(frames.into_iter().map(|frame| ScriptStep {
            frame,
            action: ScriptAction::Respond,
            query: None,
            text: None,
        }))
    }

    pub fn read_jsonl<R: BufRead>(reader: R) -> Result<Self, SimError> {
        let mut steps = Vec::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            steps.push(serde_json::from_str(&line).map_err(|e| SimError::Parse {
                line: i + 1,
                message: e.to_string(),
            })?);
        }
        Ok(Self::new(steps))
    }

    fn at(&self, frame: Frame) -> &[ScriptStep] {
        self.steps.get(&frame).map_or(&[], Vec::as_slice)
    }

    fn check(&self, first: Frame, num_frames: u64) -> Result<(), SimError> {
        for (&frame, steps) in &self.steps {
            let err = |message: &str| SimError::Script {
                frame,
                message: message.into(),
            };
            if frame < first || frame >= num_frames {
                return Err(err("frame outside the decision range"));
            }
            let asks = steps.iter().filter(|s| s.action == ScriptAction::AskHigh).count();
            let responds = steps.iter().filter(|s| s.action == ScriptAction::Respond).count();
            if asks > 1 {
                return Err(err("more than one AskHigh on one frame"));
            }
            if responds > 1 {
                return Err(err("more than one Respond on one frame"));
            }
            if asks == 1 && steps[0].action != ScriptAction::AskHigh {
                return Err(err("AskHigh must precede the re-decision"));
            }
        }
        Ok(())
    }
}

/// Decision policy.
#[derive(Debug, Clone, PartialEq)]
pub enum PolicySpec<T> {
    /// Respond when `p_respond >= threshold`; otherwise ask for a
    /// high-resolution frame when `p_respond` lies in `ask_band`.
    Threshold { threshold: T, ask_band: Option<(T, T)> },
    /// Reads ground truth: responds at the end of each item's first
    /// interval and asks for high resolution one frame earlier.
    Oracle,
    Scripted(Script),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub compression_on: bool,
    pub k_ct: u64,
    pub response_tokens: u64,
    pub response_text: String,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            compression_on: true,
            k_ct: 1,
            response_tokens: DEFAULT_RESPONSE_TOKENS,
            response_text: DEFAULT_RESPONSE_TEXT.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub frame: Frame,
    pub action: ActionLabel,
    /// A high-resolution frame was fetched before the final decision.
    pub high_res: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub response_text: Option<String>,
    pub cache_current: u64,
    pub cache_peak: u64,
    pub cache_uncompressed: u64,
}

/// Running sums over a trace, enough to summarise it without keeping it.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct TraceStats {
    pub decisions: u64,
    pub responses: u64,
    pub high_res_requests: u64,
    pub sum_current: u128,
    pub sum_uncompressed: u128,
    pub peak_tokens: u64,
}

impl TraceStats {
    fn observe(&mut self, r: &TraceRecord) {
        self.decisions += 1;
        if matches!(r.action, ActionLabel::Respond { .. }) {
            self.responses += 1;
        }
        if r.high_res {
            self.high_res_requests += 1;
        }
        self.sum_current += u128::from(r.cache_current);
        self.sum_uncompressed += u128::from(r.cache_uncompressed);
        self.peak_tokens = self.peak_tokens.max(r.cache_peak);
    }

    /// Time-averaged current tokens over time-averaged uncompressed tokens.
    pub fn compression_ratio(&self) -> Result<f64, SimError> {
        if self.decisions == 0 || self.sum_uncompressed == 0 {
            return Err(SimError::EmptyTrace);
        }
        Ok(self.sum_current as f64 / self.sum_uncompressed as f64)
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ActionTrace {
    pub records: Vec<TraceRecord>,
    pub stats: TraceStats,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceSummary {
    pub episode: String,
    pub decisions: u64,
    pub responses: u64,
    pub high_res_requests: u64,
    pub peak_tokens: u64,
    pub mean_current_tokens: f64,
    pub mean_uncompressed_tokens: f64,
    #[serde(default)]
    pub compression_ratio: Option<f64>,
    pub decisions_per_video_second: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub aps: Option<f64>,
}

impl TraceSummary {
    pub fn new(episode: &Episode, stats: &TraceStats) -> Self {
        let n = stats.decisions.max(1) as f64;
        Self {
            episode: episode.id.clone(),
            decisions: stats.decisions,
            responses: stats.responses,
            high_res_requests: stats.high_res_requests,
            peak_tokens: stats.peak_tokens,
            mean_current_tokens: stats.sum_current as f64 / n,
            mean_uncompressed_tokens: stats.sum_uncompressed as f64 / n,
            compression_ratio: stats.compression_ratio().ok(),
            decisions_per_video_second: decisions_per_video_second(episode, stats.decisions),
            aps: None,
        }
    }
}

fn decisions_per_video_second(episode: &Episode, decisions: u64) -> f64 {
    if episode.timeline.num_frames == 0 {
        return 0.0;
    }
    decisions as f64 * episode.timeline.fps.as_f64() / episode.timeline.num_frames as f64
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimOutput {
    pub predictions: Vec<Prediction>,
    pub trace: ActionTrace,
    pub ledger: CacheLedger,
}

enum Plan<'a, T> {
    Threshold {
        threshold: T,
        band: Option<(T, T)>,
        signals: &'a PolicySignal<T>,
    },
    Oracle {
        due: HashMap<Frame, Vec<usize>>,
        ask: BTreeSet<Frame>,
    },
    Scripted(&'a Script),
}

/// Step-wise simulator; [`simulate`] drives it to completion.
pub struct Simulator<'a, T> {
    episode: &'a Episode,
    plan: Plan<'a, T>,
    config: SimConfig,
    ledger: CacheLedger,
    next_frame: Frame,
    first_decision: Frame,
    predictions: Vec<Prediction>,
    stats: TraceStats,
}

impl<'a, T: Scalar> Simulator<'a, T> {
    pub fn new(
        episode: &'a Episode,
        policy: &'a PolicySpec<T>,
        signals: Option<&'a PolicySignal<T>>,
        config: SimConfig,
    ) -> Result<Self, SimError> {
        if config.k_ct == 0 {
            return Err(SimError::Argument("k_ct must be positive".into()));
        }
        let num_frames = episode.timeline.num_frames;
        let first_decision = episode.first_issue_frame().unwrap_or(num_frames);
        let plan = match policy {
            PolicySpec::Threshold { threshold, ask_band } => {
                let signals =
                    signals.ok_or_else(|| SimError::Argument("threshold policy requires policy signals".into()))?;
                let missing: Vec<Frame> = (first_decision..num_frames).filter(|f| signals.get(*f).is_none()).collect();
                if !missing.is_empty() {
                    return Err(SimError::Argument(format!(
                        "policy signals missing for {} frames, first {}",
                        missing.len(),
                        missing[0]
                    )));
                }
                Plan::Threshold {
                    threshold: *threshold,
                    band: *ask_band,
                    signals,
                }
            }
            PolicySpec::Oracle => {
                let mut due: HashMap<Frame, Vec<usize>> = HashMap::new();
                for (i, gt) in episode.gt_items.iter().enumerate() {
                    if let Some(iv) = gt.first_interval() {
                        if iv.end >= first_decision && iv.end < num_frames {
                            due.entry(iv.end).or_default().push(i);
                        }
                    }
                }
                let ask = due
                    .keys()
                    .filter(|&&e| e > first_decision)
                    .map(|e| e - 1)
                    .collect();
                Plan::Oracle { due, ask }
            }
            PolicySpec::Scripted(script) => {
                script.check(first_decision, num_frames)?;
                Plan::Scripted(script)
            }
        };
        Ok(Self {
            episode,
            plan,
            ledger: CacheLedger::new(config.k_ct),
            config,
            next_frame: 0,
            first_decision,
            predictions: Vec::new(),
            stats: TraceStats::default(),
        })
    }

    pub fn ledger(&self) -> &CacheLedger {
        &self.ledger
    }

    pub fn predictions(&self) -> &[Prediction] {
        &self.predictions
    }

    pub fn stats(&self) -> &TraceStats {
        &self.stats
    }

    fn emit(&mut self, frame: Frame, query_id: String, content: String) {
        let id = format!("{}-p{}", self.episode.id, self.predictions.len());
        self.predictions.push(Prediction::new(id, query_id, content, frame));
    }

    fn active_query(&self, frame: Frame) -> String {
        self.episode
            .active_query(frame)
            .map(|q| q.id.clone())
            .unwrap_or_default()
    }

    /// Advances one frame. Returns the decision record, or `None` once the
    /// episode is exhausted. Frames before the first query only feed the
    /// cache and are skipped.
    pub fn step(&mut self) -> Option<TraceRecord> {
        let num_frames = self.episode.timeline.num_frames;
        while self.next_frame < num_frames && self.next_frame < self.first_decision {
            self.ledger.push_low_res(self.next_frame, self.episode.frame_tokens);
            self.next_frame += 1;
        }
        if self.next_frame >= num_frames {
            return None;
        }
        let frame = self.next_frame;
        self.next_frame += 1;
        self.ledger.push_low_res(frame, self.episode.frame_tokens);

        let mut high_res = false;
        // (query, text) pairs to emit on respond
        let mut replies: Vec<(String, String)> = Vec::new();
        match &self.plan {
            Plan::Threshold { threshold, band, signals } => {
                let s = signals.get(frame).expect("coverage checked at construction");
                let p = s.p_respond;
                if p >= *threshold {
                    replies.push((String::new(), self.config.response_text.clone()));
                } else if band.is_some_and(|(lo, hi)| lo <= p && p <= hi) {
                    high_res = true;
                    if s.p_respond_high.unwrap_or(p) >= *threshold {
                        replies.push((String::new(), self.config.response_text.clone()));
                    }
                }
            }
            Plan::Oracle { due, ask } => {
                high_res = ask.contains(&frame);
                if let Some(items) = due.get(&frame) {
                    for &i in items {
                        let gt = &self.episode.gt_items[i];
                        replies.push((gt.query_id.clone(), gt.content.clone()));
                    }
                }
            }
            Plan::Scripted(script) => {
                for step in script.at(frame) {
                    match step.action {
                        ScriptAction::AskHigh => high_res = true,
                        ScriptAction::Respond => replies.push((
                            step.query.clone().unwrap_or_default(),
                            step.text.clone().unwrap_or_else(|| self.config.response_text.clone()),
                        )),
                        ScriptAction::Continue => {}
                    }
                }
            }
        }
        if high_res {
            self.ledger.push_high_res(frame, self.episode.high_res_tokens);
        }

        let action;
        let mut response_text = None;
        if replies.is_empty() {
            action = if high_res {
                ActionLabel::AskHigh
            } else {
                ActionLabel::Continue
            };
        } else {
            action = ActionLabel::Respond { lm_supervised: false };
            let text = replies.iter().map(|(_, t)| t.as_str()).collect::<Vec<_>>().join("\n");
            for (query, content) in replies {
                let query = if query.is_empty() { self.active_query(frame) } else { query };
                self.emit(frame, query, content);
            }
            let idx = self.ledger.push_response(frame, self.config.response_tokens);
            if self.config.compression_on {
                self.ledger.compact_before(idx);
            }
            response_text = Some(text);
        }
        let record = TraceRecord {
            frame,
            action,
            high_res,
            response_text,
            cache_current: self.ledger.current_tokens(),
            cache_peak: self.ledger.peak_tokens(),
            cache_uncompressed: self.ledger.cumulative_uncompressed_tokens(),
        };
        self.stats.observe(&record);
        Some(record)
    }

    pub fn finish(self) -> (Vec<Prediction>, TraceStats, CacheLedger) {
        (self.predictions, self.stats, self.ledger)
    }
}

/// Runs the whole episode and keeps the full trace.
pub fn simulate<T: Scalar>(
    episode: &Episode,
    policy: &PolicySpec<T>,
    signals: Option<&PolicySignal<T>>,
    config: SimConfig,
) -> Result<SimOutput, SimError> {
    let mut sim = Simulator::new(episode, policy, signals, config)?;
    let mut records = Vec::with_capacity(episode.timeline.num_frames as usize);
    while let Some(r) = sim.step() {
        records.push(r);
    }
    let (predictions, stats, ledger) = sim.finish();
    Ok(SimOutput {
        predictions,
        trace: ActionTrace { records, stats },
        ledger,
    })
}

/// Runs the episode handing each record to `sink` instead of keeping it.
pub fn simulate_streaming<T: Scalar, F>(
    episode: &Episode,
    policy: &PolicySpec<T>,
    signals: Option<&PolicySignal<T>>,
    config: SimConfig,
    mut sink: F,
) -> Result<(Vec<Prediction>, TraceStats, CacheLedger), SimError>
where
    F: FnMut(&TraceRecord) -> std::io::Result<()>,
{
    let mut sim = Simulator::new(episode, policy, signals, config)?;
    while let Some(r) = sim.step() {
        sink(&r)?;
    }
    Ok(sim.finish())
}

pub fn compression_ratio(trace: &ActionTrace) -> Result<f64, SimError> {
    trace.stats.compression_ratio()
}

pub fn write_trace_record<W: Write>(mut w: W, episode: &str, r: &TraceRecord) -> std::io::Result<()> {
    #[derive(Serialize)]
    struct Line<'a> {
        episode: &'a str,
        frame: Frame,
        action: &'a str,
        high_res: bool,
        #[serde(skip_serializing_if = "Option::is_none")]
        response_text: Option<&'a str>,
        cache_current: u64,
        cache_peak: u64,
        cache_uncompressed: u64,
    }
    let line = Line {
        episode,
        frame: r.frame,
        action: r.action.name(),
        high_res: r.high_res,
        response_text: r.response_text.as_deref(),
        cache_current: r.cache_current,
        cache_peak: r.cache_peak,
        cache_uncompressed: r.cache_uncompressed,
    };
    writeln!(w, "{}", serde_json::to_string(&line).expect("trace line serialises"))
}

/// Monotonic time source.
pub trait Clock {
    fn now(&self) -> Duration;
    fn resolution(&self) -> Duration {
        Duration::from_nanos(1)
    }
}

pub struct MonotonicClock {
    origin: Instant,
}

impl MonotonicClock {
    pub fn new() -> Self {
        Self { origin: Instant::now() }
    }
}

impl Default for MonotonicClock {
    fn default() -> Self {
        Self::new()
    }
}

impl Clock for MonotonicClock {
    fn now(&self) -> Duration {
        self.origin.elapsed()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApsMeasurement {
    /// Median decisions per wall-clock second across trials.
    pub aps: f64,
    pub trials: Vec<f64>,
    pub decisions: u64,
    pub decisions_per_video_second: f64,
    /// Some trial measured zero elapsed time and was clamped to the clock
    /// resolution.
    pub clamped: bool,
    pub empty_run: bool,
}

/// Times `trials` (at least three) full simulations and reports the median
/// decision rate.
pub fn measure_aps<T: Scalar>(
    episode: &Episode,
    policy: &PolicySpec<T>,
    signals: Option<&PolicySignal<T>>,
    config: &SimConfig,
    clock: &dyn Clock,
    trials: usize,
) -> Result<ApsMeasurement, SimError> {
    let trials = trials.max(DEFAULT_APS_TRIALS);
    let mut rates = Vec::with_capacity(trials);
    let mut decisions = 0;
    let mut clamped = false;
    for _ in 0..trials {
        let start = clock.now();
        let mut sim = Simulator::new(episode, policy, signals, config.clone())?;
        while sim.step().is_some() {}
        let mut elapsed = clock.now().saturating_sub(start);
        decisions = sim.stats().decisions;
        if elapsed.is_zero() {
            elapsed = clock.resolution();
            clamped = true;
        }
        rates.push(decisions as f64 / elapsed.as_secs_f64());
    }
    let empty_run = decisions == 0;
    let mut sorted = rates.clone();
    sorted.sort_by(f64::total_cmp);
    let aps = if empty_run { 0.0 } else { median(&sorted) };
    Ok(ApsMeasurement {
        aps,
        trials: rates,
        decisions,
        decisions_per_video_second: decisions_per_video_second(episode, decisions),
        clamped,
        empty_run,
    })
}

fn median(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::episode::{Fps, GroundTruthItem, Interval, Query, TaskType, Timeline};
    use crate::supervision::FrameSignal;
    use std::cell::Cell;

    fn episode(frames: u64, gts: &[(u64, u64, &str)]) -> Episode {
        let mut ep = Episode::new("e", Timeline::new(Fps::new(2, 1), frames), 10, 40);
        ep.queries.push(Query::new("q", "?", 0));
        for (i, (s, e, c)) in gts.iter().enumerate() {
            ep.gt_items
                .push(GroundTruthItem::new(format!("g{i}"), "q", *c, vec![Interval::new(*s, *e)], TaskType::OR));
        }
        ep
    }

    fn constant_signal(frames: u64, p: f64) -> PolicySignal<f64> {
        let mut s = PolicySignal::new();
        for f in 0..frames {
            s.insert(f, FrameSignal::new(1.0 - p, p, 0.0)).unwrap();
        }
        s
    }

    #[test]
    fn oracle_answers_at_interval_end() {
        let ep = episode(40, &[(10, 20, "red cup")]);
        let out = simulate::<f64>(&ep, &PolicySpec::Oracle, None, SimConfig::default()).unwrap();
        assert_eq!(out.predictions.len(), 1);
        assert_eq!(out.predictions[0].emit_frame, 20);
        assert_eq!(out.predictions[0].content, "red cup");
        assert!(out.trace.records[19].high_res);
        assert_eq!(out.trace.records[19].action, ActionLabel::AskHigh);
        assert_eq!(out.trace.records.len(), 40);
    }

    #[test]
    fn silent_threshold_run() {
        let ep = episode(50, &[(10, 20, "x")]);
        let sig = constant_signal(50, 0.0);
        let policy = PolicySpec::Threshold {
            threshold: 0.9,
            ask_band: None,
        };
        let cfg = SimConfig {
            compression_on: false,
            ..Default::default()
        };
        let out = simulate(&ep, &policy, Some(&sig), cfg).unwrap();
        assert!(out.predictions.is_empty());
        let cur: Vec<u64> = out.trace.records.iter().map(|r| r.cache_current).collect();
        assert!(cur.windows(2).all(|w| w[1] > w[0]));
        assert_eq!(compression_ratio(&out.trace).unwrap(), 1.0);
        assert!(matches!(
            simulate(&ep, &policy, None, SimConfig::default()),
            Err(SimError::Argument(_))
        ));
    }

    #[test]
    fn single_response_ledger_arithmetic() {
        let ep = episode(100, &[]);
        let policy = PolicySpec::<f64>::Scripted(Script::responses([50]));
        let cfg = SimConfig {
            response_tokens: 7,
            ..Default::default()
        };
        let out = simulate(&ep, &policy, None, cfg).unwrap();
        let at = &out.trace.records[50];
        // straight-line recount: 51 frames of 10 tokens, then the reply
        let uncompressed: u64 = (0..=50).map(|_| 10).sum::<u64>() + 7;
        assert_eq!(at.cache_uncompressed, uncompressed);
        assert_eq!(uncompressed, 517);
        assert_eq!(at.cache_current, 1 + 7);
        assert_eq!(out.ledger.uncompressed_before_last_response(), 0);
        out.ledger.audit().unwrap();
    }

    #[test]
    fn high_res_frames_get_their_own_token() {
        let ep = episode(20, &[]);
        let script = Script::new([
            ScriptStep {
                frame: 3,
                action: ScriptAction::AskHigh,
                query: None,
                text: None,
            },
            ScriptStep {
                frame: 5,
                action: ScriptAction::AskHigh,
                query: None,
                text: None,
            },
            ScriptStep {
                frame: 5,
                action: ScriptAction::Respond,
                query: None,
                text: Some("hi".into()),
            },
        ]);
        let policy = PolicySpec::<f64>::Scripted(script);
        let out = simulate(&ep, &policy, None, SimConfig::default()).unwrap();
        let cts = out
            .ledger
            .segments()
            .iter()
            .filter(|s| s.kind == SegmentKind::CompressionToken)
            .count();
        assert_eq!(cts, 3, "{:?}", out.ledger.segments());
        assert_eq!(out.trace.records[5].cache_current, 3 + DEFAULT_RESPONSE_TOKENS);
        assert_eq!(out.predictions[0].content, "hi");
        out.ledger.audit().unwrap();
    }

    #[test]
    fn script_errors() {
        let ep = episode(20, &[]);
        let ask = |frame| ScriptStep {
            frame,
            action: ScriptAction::AskHigh,
            query: None,
            text: None,
        };
        let policy = PolicySpec::<f64>::Scripted(Script::new([ask(4), ask(4)]));
        assert!(matches!(
            simulate(&ep, &policy, None, SimConfig::default()),
            Err(SimError::Script { frame: 4, .. })
        ));
        let policy = PolicySpec::<f64>::Scripted(Script::responses([25]));
        assert!(simulate(&ep, &policy, None, SimConfig::default()).is_err());
        let text = "{\"frame\":2,\"action\":\"respond\",\"text\":\"cup\"}\n{\"frame\":3,\"action\":\"ask_high\"}\n";
        let s = Script::read_jsonl(text.as_bytes()).unwrap();
        assert_eq!(s.at(2)[0].text.as_deref(), Some("cup"));
    }

    #[test]
    fn threshold_with_band_asks_then_redecides() {
        let ep = episode(10, &[]);
        let mut sig = PolicySignal::new();
        for f in 0..10 {
            let mut s = FrameSignal::new(0.5, 0.5, 0.0);
            if f == 4 {
                s.p_respond_high = Some(0.95);
            }
            sig.insert(f, s).unwrap();
        }
        let policy = PolicySpec::Threshold {
            threshold: 0.9,
            ask_band: Some((0.4, 0.6)),
        };
        let out = simulate(&ep, &policy, Some(&sig), SimConfig::default()).unwrap();
        assert!(out.trace.records.iter().all(|r| r.high_res));
        assert_eq!(out.predictions.len(), 1);
        assert_eq!(out.predictions[0].emit_frame, 4);
        assert_eq!(out.predictions[0].query_id, "q");
    }

    #[test]
    fn decisions_start_at_first_query() {
        let mut ep = episode(30, &[]);
        ep.queries[0].issue_frame = 10;
        let out = simulate::<f64>(&ep, &PolicySpec::Oracle, None, SimConfig::default()).unwrap();
        assert_eq!(out.trace.records.len(), 20);
        assert_eq!(out.trace.records[0].frame, 10);
        assert_eq!(out.trace.records[0].cache_uncompressed, 110);
    }

    struct FakeClock {
        t: Cell<u64>,
        step: u64,
    }

    impl Clock for FakeClock {
        fn now(&self) -> Duration {
            let v = self.t.get();
            self.t.set(v + self.step);
            Duration::from_millis(v)
        }
    }

    #[test]
    fn aps_measurement() {
        // 4 fps, 40 frames -> one decision per frame = 4 per video second
        let mut ep = episode(40, &[]);
        ep.timeline.fps = Fps::new(4, 1);
        let policy = PolicySpec::<f64>::Scripted(Script::default());
        let clock = FakeClock {
            t: Cell::new(0),
            step: 20_000,
        };
        let m = measure_aps(&ep, &policy, None, &SimConfig::default(), &clock, 3).unwrap();
        assert_eq!(m.trials.len(), 3);
        assert_eq!(m.decisions, 40);
        assert_eq!(m.aps, 2.0);
        assert_eq!(m.decisions_per_video_second, 4.0);

        let empty = Episode::new("z", Timeline::new(Fps::new(2, 1), 0), 1, 1);
        let zero = FakeClock {
            t: Cell::new(0),
            step: 0,
        };
        let m = measure_aps(&empty, &policy, None, &SimConfig::default(), &zero, 1).unwrap();
        assert!(m.empty_run && m.clamped);
        assert_eq!(m.aps, 0.0);
    }
}
