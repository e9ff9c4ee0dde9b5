//! Answer and timing credit, per-item aggregation and the soft F1.
//!
//! A matched ground-truth item earns `s = s_answer * s_time`. With
//! `S = sum of s`, the run scores
//!
//! ```text
//! precision = S / (S + FP)      recall = S / (S + FN)
//! f1        = 2S / (2S + FP + FN)
//! ```
//!
//! and `f1` is exactly the harmonic mean of the other two.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::episode::{Episode, Frame, GroundTruthItem, Interval, Prediction, ProactiveType, TaskType};
use crate::matcher::{MatchConfig, MatchResult, PairScore};
use crate::num::{Real, Scalar};

pub const DEFAULT_TIME_FLOOR: f64 = 0.3;
pub const DEFAULT_JUDGE_TIMEOUT_MS: u64 = 30_000;
pub const DEFAULT_JUDGE_IN_FLIGHT: usize = 4;

#[derive(Debug, Error)]
pub enum ScoreError {
    #[error("emit frame {frame} outside matched interval {interval}")]
    OutsideInterval { frame: Frame, interval: Interval },
    #[error("invalid scorer configuration: {0}")]
    Config(String),
    #[error("judge failed for gt {gt_id}: {message}")]
    Judge { gt_id: String, message: String },
    #[error("match result does not belong to episode {episode}: {message}")]
    Reference { episode: String, message: String },
    #[error("cannot pool reports with differing configurations: {0:?}")]
    ConfigMismatch(Vec<String>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TimeShape {
    LinearFromStart,
    Constant,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeScoreSpec<T> {
    pub floor: T,
    pub shape: TimeShape,
}

impl<T: Scalar> TimeScoreSpec<T> {
    pub fn linear(floor: T) -> Result<Self, ScoreError> {
        if floor < T::zero() || floor >= T::one() {
            return Err(ScoreError::Config(format!("time floor {floor:?} not in [0, 1)")));
        }
        Ok(Self {
            floor,
            shape: TimeShape::LinearFromStart,
        })
    }

    pub fn constant() -> Self {
        Self {
            floor: T::zero(),
            shape: TimeShape::Constant,
        }
    }

    pub fn to_f64(&self) -> TimeScoreSpec<f64> {
        TimeScoreSpec {
            floor: self.floor.to_f64_lossy(),
            shape: self.shape,
        }
    }
}

impl<T: Scalar> Default for TimeScoreSpec<T> {
    fn default() -> Self {
        Self {
            floor: T::from_f64(DEFAULT_TIME_FLOOR).expect("floor representable"),
            shape: TimeShape::LinearFromStart,
        }
    }
}

/// Timeliness credit: 1 at the interval start, falling linearly to the
/// floor at the interval end (or 1 throughout for [`TimeShape::Constant`]).
pub fn s_time<T: Scalar>(emit_frame: Frame, interval: Interval, spec: &TimeScoreSpec<T>) -> Result<T, ScoreError> {
    if !interval.contains(emit_frame) {
        return Err(ScoreError::OutsideInterval {
            frame: emit_frame,
            interval,
        });
    }
    Ok(match spec.shape {
        TimeShape::Constant => T::one(),
        TimeShape::LinearFromStart if interval.start == interval.end => T::one(),
        TimeShape::LinearFromStart => {
            let elapsed = T::from_frame(emit_frame - interval.start);
            let span = T::from_frame(interval.end - interval.start);
            spec.floor + (T::one() - spec.floor) * (T::one() - elapsed / span)
        }
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AnswerKind {
    ExactMatch,
    TokenF1,
    ExternalJudge,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AnswerScorerSpec {
    pub kind: AnswerKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub judge_endpoint: Option<String>,
    pub judge_timeout_ms: u64,
}

impl AnswerScorerSpec {
    pub fn exact() -> Self {
        Self {
            kind: AnswerKind::ExactMatch,
            judge_endpoint: None,
            judge_timeout_ms: DEFAULT_JUDGE_TIMEOUT_MS,
        }
    }

    pub fn token_f1() -> Self {
        Self {
            kind: AnswerKind::TokenF1,
            ..Self::exact()
        }
    }

    pub fn judge(endpoint: impl Into<String>, timeout_ms: u64) -> Self {
        Self {
            kind: AnswerKind::ExternalJudge,
            judge_endpoint: Some(endpoint.into()),
            judge_timeout_ms: timeout_ms,
        }
    }

    pub fn validate(&self) -> Result<(), ScoreError> {
        match (self.kind, &self.judge_endpoint) {
            (AnswerKind::ExternalJudge, None) => {
                Err(ScoreError::Config("external judge needs an endpoint".into()))
            }
            (AnswerKind::ExternalJudge, Some(_)) | (_, None) => Ok(()),
            (_, Some(_)) => Err(ScoreError::Config("judge endpoint given for a non-judge scorer".into())),
        }
    }
}

/// Lowercases, collapses whitespace and strips trailing punctuation.
pub fn normalize_answer(text: &str) -> String {
    let collapsed = text.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase();
    collapsed
        .trim_end_matches(|c: char| c.is_ascii_punctuation() || c.is_whitespace())
        .to_string()
}

pub fn exact_match<T: Scalar>(prediction: &str, reference: &str) -> T {
    if normalize_answer(prediction) == normalize_answer(reference) {
        T::one()
    } else {
        T::zero()
    }
}

/// Unigram F1 over normalised whitespace tokens (multiset overlap).
pub fn token_f1<T: Scalar>(prediction: &str, reference: &str) -> T {
    let p = normalize_answer(prediction);
    let r = normalize_answer(reference);
    let p: Vec<&str> = p.split_whitespace().collect();
    let r: Vec<&str> = r.split_whitespace().collect();
    match (p.is_empty(), r.is_empty()) {
        (true, true) => return T::one(),
        (true, false) | (false, true) => return T::zero(),
        _ => {}
    }
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for t in &r {
        *counts.entry(t).or_default() += 1;
    }
    let mut common = 0usize;
    for t in &p {
        if let Some(c) = counts.get_mut(t) {
            if *c > 0 {
                *c -= 1;
                common += 1;
            }
        }
    }
    T::from_count(2 * common) / T::from_count(p.len() + r.len())
}

/// External answer-correctness judge. Returns the raw score; clamping is
/// applied by the caller.
pub trait AnswerJudge: Send + Sync {
    fn judge(&self, prediction: &str, reference: &str) -> Result<f64, String>;
}

/// JSON-over-HTTP judge: POST `{"prediction", "reference"}` and read
/// `{"score": number}`.
pub struct HttpJudge {
    endpoint: String,
    client: reqwest::blocking::Client,
}

impl HttpJudge {
    pub fn new(endpoint: impl Into<String>, timeout: Duration) -> Result<Self, ScoreError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| ScoreError::Config(e.to_string()))?;
        Ok(Self {
            endpoint: endpoint.into(),
            client,
        })
    }
}

#[derive(Serialize)]
struct JudgeRequest<'a> {
    prediction: &'a str,
    reference: &'a str,
}

impl AnswerJudge for HttpJudge {
    fn judge(&self, prediction: &str, reference: &str) -> Result<f64, String> {
        let resp = self
            .client
            .post(&self.endpoint)
            .json(&JudgeRequest { prediction, reference })
            .send()
            .map_err(|e| e.to_string())?;
        if !resp.status().is_success() {
            return Err(format!("judge returned HTTP {}", resp.status()));
        }
        let body: serde_json::Value = resp.json().map_err(|e| e.to_string())?;
        match body.get("score").and_then(serde_json::Value::as_f64) {
            Some(s) if s.is_finite() => Ok(s),
            _ => Err(format!("non-numeric judge reply: {body}")),
        }
    }
}

enum AnswerBackend {
    Exact,
    TokenF1,
    Judge(Box<dyn AnswerJudge>),
}

#[derive(Debug, Clone, Copy)]
struct AnswerScore {
    value: f64,
    clamped: bool,
}

fn answer_with(
    backend: &AnswerBackend,
    cache: &Mutex<HashMap<(String, String), AnswerScore>>,
    gt: &GroundTruthItem,
    pred: &Prediction,
) -> Result<AnswerScore, ScoreError> {
    match backend {
        AnswerBackend::Exact => Ok(AnswerScore {
            value: exact_match(&pred.content, &gt.content),
            clamped: false,
        }),
        AnswerBackend::TokenF1 => Ok(AnswerScore {
            value: token_f1(&pred.content, &gt.content),
            clamped: false,
        }),
        AnswerBackend::Judge(judge) => {
            let key = (pred.content.clone(), gt.content.clone());
            if let Some(hit) = cache.lock().expect("cache lock").get(&key) {
                return Ok(*hit);
            }
            let raw = judge.judge(&pred.content, &gt.content).map_err(|message| ScoreError::Judge {
                gt_id: gt.id.clone(),
                message,
            })?;
            let score = AnswerScore {
                value: raw.clamp(0.0, 1.0),
                clamped: !(0.0..=1.0).contains(&raw),
            };
            cache.lock().expect("cache lock").insert(key, score);
            Ok(score)
        }
    }
}

/// Answer scorer plus timing spec, shared by optimal matching and
/// aggregation. Judge replies are cached per (prediction, reference) text.
pub struct Scorer<T> {
    spec: AnswerScorerSpec,
    backend: AnswerBackend,
    time: TimeScoreSpec<T>,
    in_flight: usize,
    cache: Mutex<HashMap<(String, String), AnswerScore>>,
}

impl<T: Real> Scorer<T> {
    pub fn new(spec: AnswerScorerSpec, time: TimeScoreSpec<T>) -> Result<Self, ScoreError> {
        spec.validate()?;
        let backend = match spec.kind {
            AnswerKind::ExactMatch => AnswerBackend::Exact,
            AnswerKind::TokenF1 => AnswerBackend::TokenF1,
            AnswerKind::ExternalJudge => {
                let url = spec.judge_endpoint.clone().unwrap_or_default();
                AnswerBackend::Judge(Box::new(HttpJudge::new(
                    url,
                    Duration::from_millis(spec.judge_timeout_ms),
                )?))
            }
        };
        Ok(Self::with_backend(spec, backend, time))
    }

    /// Uses a caller-supplied judge; `spec` is only recorded in reports.
    pub fn with_judge(spec: AnswerScorerSpec, judge: Box<dyn AnswerJudge>, time: TimeScoreSpec<T>) -> Self {
        Self::with_backend(spec, AnswerBackend::Judge(judge), time)
    }

    fn with_backend(spec: AnswerScorerSpec, backend: AnswerBackend, time: TimeScoreSpec<T>) -> Self {
        Self {
            spec,
            backend,
            time,
            in_flight: DEFAULT_JUDGE_IN_FLIGHT,
            cache: Mutex::new(HashMap::new()),
        }
    }

    /// Maximum concurrent judge requests during aggregation.
    pub fn with_in_flight(mut self, cap: usize) -> Self {
        self.in_flight = cap.max(1);
        self
    }

    pub fn answer_spec(&self) -> &AnswerScorerSpec {
        &self.spec
    }

    pub fn time_spec(&self) -> &TimeScoreSpec<T> {
        &self.time
    }

    fn answer(&self, gt: &GroundTruthItem, pred: &Prediction) -> Result<AnswerScore, ScoreError> {
        answer_with(&self.backend, &self.cache, gt, pred)
    }

    /// Answer credit in `[0, 1]`.
    pub fn s_answer(&self, gt: &GroundTruthItem, pred: &Prediction) -> Result<T, ScoreError> {
        Ok(T::from_f64(self.answer(gt, pred)?.value).unwrap_or_else(T::zero))
    }

    /// `(s_answer, s_time, s)` for one matched pair.
    pub fn pair(&self, gt: &GroundTruthItem, pred: &Prediction, interval: Interval) -> Result<(T, T, T), ScoreError> {
        let st = s_time(pred.emit_frame, interval, &self.time)?;
        let sa = self.s_answer(gt, pred)?;
        Ok((sa, st, sa * st))
    }

    /// Issues judge calls for `pairs` concurrently, at most `in_flight` at
    /// a time. Results land in the cache; completion order is irrelevant.
    fn prefetch(&self, pairs: &[(&GroundTruthItem, &Prediction)]) -> Result<(), ScoreError> {
        if !matches!(self.backend, AnswerBackend::Judge(_)) || pairs.len() < 2 {
            return Ok(());
        }
        for chunk in pairs.chunks(self.in_flight) {
            let results: Vec<Result<AnswerScore, ScoreError>> = std::thread::scope(|s| {
                let handles: Vec<_> = chunk
                    .iter()
                    .map(|(g, p)| {
                        let (backend, cache) = (&self.backend, &self.cache);
                        s.spawn(move || answer_with(backend, cache, g, p))
                    })
                    .collect();
                handles.into_iter().map(|h| h.join().expect("judge thread")).collect()
            });
            for r in results {
                r?;
            }
        }
        Ok(())
    }
}

impl<T: Real> PairScore for Scorer<T> {
    fn pair_score(&self, gt: &GroundTruthItem, pred: &Prediction, interval: Interval) -> Result<f64, String> {
        self.pair(gt, pred, interval)
            .map(|(_, _, s)| s.to_f64_lossy())
            .map_err(|e| e.to_string())
    }
}

/// Pooled counts and the metrics derived from them.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aggregate<T> {
    pub sum_s: T,
    pub fp_count: usize,
    pub fn_count: usize,
    pub precision: T,
    pub recall: T,
    pub estp_f1: T,
}

impl<T: Scalar> Aggregate<T> {
    pub fn from_components(sum_s: T, fp_count: usize, fn_count: usize) -> Self {
        Self {
            sum_s,
            fp_count,
            fn_count,
            precision: ratio_or_one(sum_s, fp_count),
            recall: ratio_or_one(sum_s, fn_count),
            estp_f1: estp_f1(sum_s, fp_count, fn_count),
        }
    }

    pub fn empty() -> Self {
        Self::from_components(T::zero(), 0, 0)
    }

    /// Sums the raw components and re-derives the metrics.
    pub fn pool(&self, other: &Self) -> Self {
        Self::from_components(
            self.sum_s + other.sum_s,
            self.fp_count + other.fp_count,
            self.fn_count + other.fn_count,
        )
    }
}

fn ratio_or_one<T: Scalar>(s: T, misses: usize) -> T {
    let den = s + T::from_count(misses);
    if den == T::zero() {
        T::one()
    } else {
        s / den
    }
}

/// `2S / (2S + FP + FN)`, or 0 when the denominator vanishes.
pub fn estp_f1<T: Scalar>(sum_s: T, fp_count: usize, fn_count: usize) -> T {
    let two_s = sum_s + sum_s;
    let den = two_s + T::from_count(fp_count + fn_count);
    if den == T::zero() {
        T::zero()
    } else {
        two_s / den
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GtScore<T> {
    pub matched: bool,
    pub s_answer: T,
    pub s_time: T,
    pub s: T,
}

/// Everything that determines how a run is scored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreConfig {
    pub matcher: MatchConfig,
    pub answer: AnswerScorerSpec,
    pub time: TimeScoreSpec<f64>,
}

impl ScoreConfig {
    /// First 16 hex digits of the SHA-256 of the canonical JSON encoding.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serialises");
        let digest = Sha256::digest(json.as_bytes());
        hex::encode(&digest[..8])
    }
}

/// How false positives are attributed to task and proactive classes.
pub const FP_ATTRIBUTION: &str = "an unmatched prediction counts once in every class held by the ground-truth items of its query; predictions on queries without ground truth count only overall";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport<T> {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    pub episodes: Vec<String>,
    pub config: ScoreConfig,
    pub config_hash: String,
    #[serde(flatten)]
    pub totals: Aggregate<T>,
    pub per_gt: BTreeMap<String, GtScore<T>>,
    pub per_task: BTreeMap<TaskType, Aggregate<T>>,
    pub per_proactive: BTreeMap<ProactiveType, Aggregate<T>>,
    /// Unmatched predictions on queries without ground truth.
    pub fp_unattributed: usize,
    pub ignored_duplicates: usize,
    /// Judge replies outside `[0, 1]` that were clamped.
    pub judge_clamped: usize,
    pub fp_attribution: String,
}

impl<T: Scalar> ScoreReport<T> {
    /// Micro-averages several reports: counts and credit are summed per
    /// cell before the metrics are recomputed.
    pub fn pool(reports: &[ScoreReport<T>]) -> Result<Option<ScoreReport<T>>, ScoreError> {
        let Some(first) = reports.first() else {
            return Ok(None);
        };
        let hashes: BTreeSet<&str> = reports.iter().map(|r| r.config_hash.as_str()).collect();
        if hashes.len() > 1 {
            return Err(ScoreError::ConfigMismatch(hashes.into_iter().map(String::from).collect()));
        }
        let mut out = first.clone();
        for r in &reports[1..] {
            out.episodes.extend(r.episodes.iter().cloned());
            out.totals = out.totals.pool(&r.totals);
            out.per_gt.extend(r.per_gt.iter().map(|(k, v)| (k.clone(), *v)));
            for (k, v) in &r.per_task {
                let cell = out.per_task.entry(*k).or_insert_with(Aggregate::empty);
                *cell = cell.pool(v);
            }
            for (k, v) in &r.per_proactive {
                let cell = out.per_proactive.entry(*k).or_insert_with(Aggregate::empty);
                *cell = cell.pool(v);
            }
            out.fp_unattributed += r.fp_unattributed;
            out.ignored_duplicates += r.ignored_duplicates;
            out.judge_clamped += r.judge_clamped;
        }
        Ok(Some(out))
    }
}

struct Cell<T> {
    sum_s: T,
    fp: usize,
    fn_: usize,
}

impl<T: Scalar> Cell<T> {
    fn new() -> Self {
        Cell {
            sum_s: T::zero(),
            fp: 0,
            fn_: 0,
        }
    }

    fn finish(&self) -> Aggregate<T> {
        Aggregate::from_components(self.sum_s, self.fp, self.fn_)
    }
}

/// Scores one episode's match result.
pub fn aggregate<T: Real>(
    episode: &Episode,
    predictions: &[Prediction],
    result: &MatchResult,
    scorer: &Scorer<T>,
) -> Result<ScoreReport<T>, ScoreError> {
    let reference = |message: String| ScoreError::Reference {
        episode: episode.id.clone(),
        message,
    };
    let preds: HashMap<&str, &Prediction> = predictions.iter().map(|p| (p.id.as_str(), p)).collect();
    let mut matched = Vec::with_capacity(result.pairs.len());
    for pair in &result.pairs {
        let gt = episode
            .gt_item(&pair.gt_id)
            .ok_or_else(|| reference(format!("unknown gt {}", pair.gt_id)))?;
        let pred = preds
            .get(pair.pred_id.as_str())
            .ok_or_else(|| reference(format!("unknown prediction {}", pair.pred_id)))?;
        if !gt.intervals.contains(&pair.interval) {
            return Err(reference(format!("interval {} not owned by gt {}", pair.interval, gt.id)));
        }
        matched.push((gt, *pred, pair.interval));
    }
    for id in &result.false_negatives {
        if episode.gt_item(id).is_none() {
            return Err(reference(format!("unknown gt {id}")));
        }
    }
    for id in result.false_positives.iter().chain(&result.ignored_duplicates) {
        if !preds.contains_key(id.as_str()) {
            return Err(reference(format!("unknown prediction {id}")));
        }
    }
    if matched.len() + result.false_negatives.len() != episode.gt_items.len() {
        return Err(reference("pairs and false negatives do not cover the ground truth".into()));
    }

    let jobs: Vec<(&GroundTruthItem, &Prediction)> = matched.iter().map(|(g, p, _)| (*g, *p)).collect();
    scorer.prefetch(&jobs)?;

    let mut per_gt = BTreeMap::new();
    let mut task_cells: BTreeMap<TaskType, Cell<T>> = BTreeMap::new();
    let mut class_cells: BTreeMap<ProactiveType, Cell<T>> = BTreeMap::new();
    for gt in &episode.gt_items {
        task_cells.entry(gt.task_type).or_insert_with(Cell::new);
        class_cells.entry(gt.proactive_type).or_insert_with(Cell::new);
    }
    let mut sum_s = T::zero();
    let mut judge_clamped = 0;
    for (gt, pred, interval) in &matched {
        let (sa, st, s) = scorer.pair(gt, pred, *interval)?;
        if let AnswerBackend::Judge(_) = scorer.backend {
            if scorer.answer(gt, pred)?.clamped {
                judge_clamped += 1;
            }
        }
        sum_s = sum_s + s;
        let c = task_cells.get_mut(&gt.task_type).expect("cell");
        c.sum_s = c.sum_s + s;
        let c = class_cells.get_mut(&gt.proactive_type).expect("cell");
        c.sum_s = c.sum_s + s;
        per_gt.insert(
            gt.id.clone(),
            GtScore {
                matched: true,
                s_answer: sa,
                s_time: st,
                s,
            },
        );
    }
    for id in &result.false_negatives {
        let gt = episode.gt_item(id).expect("checked above");
        task_cells.get_mut(&gt.task_type).expect("cell").fn_ += 1;
        class_cells.get_mut(&gt.proactive_type).expect("cell").fn_ += 1;
        per_gt.insert(
            gt.id.clone(),
            GtScore {
                matched: false,
                s_answer: T::zero(),
                s_time: T::zero(),
                s: T::zero(),
            },
        );
    }
    let mut fp_unattributed = 0;
    for id in &result.false_positives {
        let pred = preds[id.as_str()];
        let owners: Vec<&GroundTruthItem> =
            episode.gt_items.iter().filter(|g| g.query_id == pred.query_id).collect();
        if owners.is_empty() {
            fp_unattributed += 1;
        }
        let tasks: BTreeSet<TaskType> = owners.iter().map(|g| g.task_type).collect();
        let classes: BTreeSet<ProactiveType> = owners.iter().map(|g| g.proactive_type).collect();
        for t in tasks {
            task_cells.get_mut(&t).expect("cell").fp += 1;
        }
        for c in classes {
            class_cells.get_mut(&c).expect("cell").fp += 1;
        }
    }

    let config = ScoreConfig {
        matcher: result.config,
        answer: scorer.spec.clone(),
        time: scorer.time.to_f64(),
    };
    Ok(ScoreReport {
        label: None,
        episodes: vec![episode.id.clone()],
        config_hash: config.hash(),
        config,
        totals: Aggregate::from_components(sum_s, result.false_positives.len(), result.false_negatives.len()),
        per_gt,
        per_task: task_cells.iter().map(|(k, c)| (*k, c.finish())).collect(),
        per_proactive: class_cells.iter().map(|(k, c)| (*k, c.finish())).collect(),
        fp_unattributed,
        ignored_duplicates: result.ignored_duplicates.len(),
        judge_clamped,
        fp_attribution: FP_ATTRIBUTION.to_string(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::episode::{Fps, Query, Timeline};
    use crate::matcher::{match_predictions, MatchConfig};
    use num_rational::Rational64;

    fn lerp(a: f64, b: f64, t: f64) -> f64 {
        a * (1.0 - t) + b * t
    }

    #[test]
    fn s_time_examples() {
        let iv = Interval::new(10, 20);
        let zero = TimeScoreSpec::linear(0.0).unwrap();
        assert_eq!(s_time(10, iv, &zero).unwrap(), 1.0);
        assert_eq!(s_time(20, iv, &zero).unwrap(), 0.0);
        let spec = TimeScoreSpec::linear(0.2).unwrap();
        let got: f64 = s_time(15, iv, &spec).unwrap();
        // independent route: interpolate from (start, 1) to (end, floor)
        let oracle = lerp(1.0, 0.2, 0.5);
        assert!((got - oracle).abs() < 1e-15 && (got - 0.6).abs() < 1e-15);
        let exact = TimeScoreSpec::linear(Rational64::new(1, 5)).unwrap();
        assert_eq!(s_time(15, iv, &exact).unwrap(), Rational64::new(3, 5));
    }

    #[test]
    fn s_time_edges() {
        let spec = TimeScoreSpec::<f64>::default();
        assert_eq!(s_time(7, Interval::new(7, 7), &spec).unwrap(), 1.0);
        assert_eq!(s_time(13, Interval::new(10, 20), &TimeScoreSpec::<f64>::constant()).unwrap(), 1.0);
        assert!(matches!(
            s_time(21, Interval::new(10, 20), &spec),
            Err(ScoreError::OutsideInterval { .. })
        ));
        assert!(TimeScoreSpec::linear(1.0).is_err());
    }

    #[test]
    fn answer_examples() {
        assert_eq!(exact_match::<f64>("a red cup", "A red cup."), 1.0);
        assert_eq!(exact_match::<f64>("a red  cup", "a blue cup"), 0.0);
        // precision 2/2, recall 2/5 -> 2*0.4/1.4
        let by_hand = 2.0 * (1.0 * 0.4) / (1.0 + 0.4);
        let got: f64 = token_f1("red cup", "red cup on the left");
        assert!((got - by_hand).abs() < 1e-12);
        assert_eq!(token_f1::<Rational64>("red cup", "red cup on the left"), Rational64::new(4, 7));
        assert_eq!(token_f1::<f64>("", "red cup"), 0.0);
        assert_eq!(token_f1::<f64>("", "  "), 1.0);
        assert_eq!(token_f1::<f64>("cup cup", "cup"), 2.0 / 3.0);
    }

    #[test]
    fn spec_validation() {
        assert!(AnswerScorerSpec::judge("http://x", 10).validate().is_ok());
        let mut bad = AnswerScorerSpec::exact();
        bad.judge_endpoint = Some("http://x".into());
        assert!(bad.validate().is_err());
        bad.kind = AnswerKind::ExternalJudge;
        bad.judge_endpoint = None;
        assert!(bad.validate().is_err());
    }

    #[test]
    fn f1_worked_example_exact() {
        // M = 2, one matched with S = 1/2, one FN, one FP
        let agg = Aggregate::from_components(Rational64::new(1, 2), 1, 1);
        assert_eq!(agg.estp_f1, Rational64::new(1, 3));
        let f = Aggregate::from_components(0.5f64, 1, 1);
        assert!((f.estp_f1 - 2.0 * 0.5 / (2.0 * 0.5 + 1.0 + 1.0)).abs() < 1e-15);
        let silent = Aggregate::from_components(0.0f64, 0, 3);
        assert_eq!((silent.estp_f1, silent.recall), (0.0, 0.0));
        let empty = Aggregate::<f64>::empty();
        assert_eq!((empty.precision, empty.recall, empty.estp_f1), (1.0, 1.0, 0.0));
    }

    struct FixedJudge(f64);

    impl AnswerJudge for FixedJudge {
        fn judge(&self, _: &str, _: &str) -> Result<f64, String> {
            if self.0.is_nan() {
                Err("timeout".into())
            } else {
                Ok(self.0)
            }
        }
    }

    fn two_gt_episode() -> Episode {
        let mut ep = Episode::new("e", Timeline::new(Fps::new(1, 1), 100), 1, 1);
        ep.queries.push(Query::new("q", "?", 0));
        ep.queries.push(Query::new("q2", "?", 0));
        ep.gt_items.push(GroundTruthItem::new("g0", "q", "red cup", vec![Interval::new(10, 20)], TaskType::OR));
        ep.gt_items.push(GroundTruthItem::new("g1", "q", "blue cup", vec![Interval::new(40, 50)], TaskType::OFR));
        ep
    }

    #[test]
    fn aggregate_worked_example() {
        let ep = two_gt_episode();
        let preds = vec![
            Prediction::new("p0", "q", "red cup", 15),
            Prediction::new("p1", "q", "nothing", 80),
            Prediction::new("p2", "q2", "nothing", 80),
        ];
        let scorer = Scorer::new(AnswerScorerSpec::exact(), TimeScoreSpec::linear(0.0).unwrap()).unwrap();
        let m = match_predictions(&ep, &preds[..2], MatchConfig::default(), None).unwrap();
        let r = aggregate(&ep, &preds, &m, &scorer).unwrap();
        assert_eq!(r.totals.sum_s, 0.5);
        assert!((r.totals.estp_f1 - 1.0_f64 / 3.0).abs() < 1e-15);
        assert_eq!(r.per_gt["g1"].s, 0.0);
        // FP on query q counts in both OR and OFR classes
        assert_eq!(r.per_task[&TaskType::OR].fp_count, 1);
        assert_eq!(r.per_task[&TaskType::OFR].fp_count, 1);
        assert_eq!(r.per_task[&TaskType::OFR].fn_count, 1);
        assert_eq!(r.per_proactive[&ProactiveType::Implicit].fn_count, 1);

        let m = match_predictions(&ep, &preds, MatchConfig::default(), None).unwrap();
        let r = aggregate(&ep, &preds, &m, &scorer).unwrap();
        assert_eq!(r.fp_unattributed, 1);
        assert_eq!(r.totals.fp_count, 2);
    }

    #[test]
    fn perfect_and_silent_runs() {
        let ep = two_gt_episode();
        let scorer = Scorer::<f64>::new(AnswerScorerSpec::exact(), TimeScoreSpec::constant()).unwrap();
        let preds = vec![
            Prediction::new("a", "q", "red cup", 20),
            Prediction::new("b", "q", "blue cup.", 40),
        ];
        let m = match_predictions(&ep, &preds, MatchConfig::default(), None).unwrap();
        let r = aggregate(&ep, &preds, &m, &scorer).unwrap();
        assert_eq!((r.totals.estp_f1, r.totals.precision, r.totals.recall), (1.0, 1.0, 1.0));

        let m = match_predictions(&ep, &[], MatchConfig::default(), None).unwrap();
        let r = aggregate(&ep, &[], &m, &scorer).unwrap();
        assert_eq!((r.totals.estp_f1, r.totals.fn_count), (0.0, 2));
    }

    #[test]
    fn judge_clamps_and_errors() {
        let ep = two_gt_episode();
        let preds = vec![Prediction::new("a", "q", "red", 10), Prediction::new("b", "q", "blue", 45)];
        let m = match_predictions(&ep, &preds, MatchConfig::default(), None).unwrap();
        let spec = AnswerScorerSpec::judge("mock", 10);
        let scorer = Scorer::with_judge(spec.clone(), Box::new(FixedJudge(1.7)), TimeScoreSpec::<f64>::constant());
        let r = aggregate(&ep, &preds, &m, &scorer).unwrap();
        assert_eq!(r.judge_clamped, 2);
        assert_eq!(r.totals.sum_s, 2.0);

        let scorer = Scorer::with_judge(spec, Box::new(FixedJudge(f64::NAN)), TimeScoreSpec::<f64>::constant());
        match aggregate(&ep, &preds, &m, &scorer) {
            Err(ScoreError::Judge { gt_id, .. }) => assert!(gt_id == "g0" || gt_id == "g1"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn mismatched_result_is_reference_error() {
        let ep = two_gt_episode();
        let scorer = Scorer::<f64>::new(AnswerScorerSpec::exact(), TimeScoreSpec::constant()).unwrap();
        let mut m = match_predictions(&ep, &[], MatchConfig::default(), None).unwrap();
        m.false_negatives.push("ghost".into());
        assert!(matches!(aggregate(&ep, &[], &m, &scorer), Err(ScoreError::Reference { .. })));
    }

    #[test]
    fn config_hash_is_stable_and_sensitive() {
        let a = ScoreConfig {
            matcher: MatchConfig::default(),
            answer: AnswerScorerSpec::exact(),
            time: TimeScoreSpec::default(),
        };
        let mut b = a.clone();
        assert_eq!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 16);
        b.time.floor = 0.25;
        assert_ne!(a.hash(), b.hash());
    }
}
