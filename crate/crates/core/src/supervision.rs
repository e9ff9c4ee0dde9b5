//! Per-frame action targets for staged training and the matching losses.
//!
//! Targets cover every frame from the first query's issue frame to the
//! end of the episode. Response frames for the binary stages are the end
//! frames of ground-truth intervals. The interval-weighted stage scales
//! the response probability by
//!
//! ```text
//! f(x) = w_min + (1 - w_min) * (1 - x),   x = |t - e| / |s - e|
//! ```
//!
//! so supervision is weakest at the interval start and full at its end.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::episode::{Episode, Frame, Interval};
use crate::num::{Real, Scalar};

pub const DEFAULT_W_MIN: f64 = 0.1;
pub const DEFAULT_BAND: (f64, f64) = (0.3, 0.7);
/// Allowed deviation of a frame's action probabilities from summing to 1.
pub const PROBABILITY_SUM_TOL: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum SupervisionError {
    #[error("frame {frame} outside interval {interval}")]
    OutsideInterval { frame: Frame, interval: Interval },
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("no policy signal for frames {0:?}")]
    Coverage(Vec<Frame>),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ActionLabel {
    Continue,
    /// `lm_supervised`: the language-modelling loss applies at this frame.
    Respond { lm_supervised: bool },
    AskHigh,
}

impl ActionLabel {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Continue => "continue",
            Self::Respond { .. } => "respond",
            Self::AskHigh => "ask_high",
        }
    }

    pub fn is_lm_supervised(&self) -> bool {
        matches!(self, Self::Respond { lm_supervised: true })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Stage {
    Stage0,
    Stage1,
    Stage2,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stream {
    Main,
    AskHigh,
    Determine,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SupervisionTarget<T> {
    pub frame: Frame,
    pub label: ActionLabel,
    pub weight: T,
    pub stage: Stage,
    pub stream: Stream,
}

impl<T: Scalar> SupervisionTarget<T> {
    fn new(frame: Frame, label: ActionLabel, weight: T, stage: Stage, stream: Stream) -> Self {
        Self {
            frame,
            label,
            weight,
            stage,
            stream,
        }
    }

    /// Same frame, label and weight, ignoring the stage and stream tags.
    pub fn same_supervision(&self, other: &Self) -> bool {
        self.frame == other.frame && self.label == other.label && self.weight == other.weight
    }
}

#[derive(Serialize, Deserialize)]
struct TargetRecord {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    episode: Option<String>,
    frame: Frame,
    label: String,
    weight: f64,
    stage: Stage,
    stream: Stream,
    lm: bool,
}

/// `{"episode"?, "frame", "label", "weight", "stage", "stream", "lm"}`.
pub fn target_line<T: Scalar>(episode: Option<&str>, t: &SupervisionTarget<T>) -> String {
    serde_json::to_string(&TargetRecord {
        episode: episode.map(String::from),
        frame: t.frame,
        label: t.label.name().into(),
        weight: t.weight.to_f64_lossy(),
        stage: t.stage,
        stream: t.stream,
        lm: t.label.is_lm_supervised(),
    })
    .expect("target serialises")
}

pub fn write_targets_jsonl<W: Write, T: Scalar>(
    mut w: W,
    episode: Option<&str>,
    targets: &[SupervisionTarget<T>],
) -> std::io::Result<()> {
    for t in targets {
        writeln!(w, "{}", target_line(episode, t))?;
    }
    Ok(())
}

fn supervised_frames(episode: &Episode) -> std::ops::Range<Frame> {
    match episode.first_issue_frame() {
        Some(first) => first..episode.timeline.num_frames,
        None => 0..0,
    }
}

fn response_frames(episode: &Episode) -> BTreeSet<Frame> {
    episode
        .gt_items
        .iter()
        .flat_map(|g| g.intervals.iter().map(|iv| iv.end))
        .collect()
}

fn binary_targets<T: Scalar>(episode: &Episode, stage: Stage, stream: Stream) -> Vec<SupervisionTarget<T>> {
    let respond = response_frames(episode);
    supervised_frames(episode)
        .map(|t| {
            let label = if respond.contains(&t) {
                ActionLabel::Respond { lm_supervised: true }
            } else {
                ActionLabel::Continue
            };
            SupervisionTarget::new(t, label, T::one(), stage, stream)
        })
        .collect()
}

/// Binary response supervision: respond at interval end frames, continue
/// elsewhere.
pub fn stage0_targets<T: Scalar>(episode: &Episode) -> Vec<SupervisionTarget<T>> {
    binary_targets(episode, Stage::Stage0, Stream::Main)
}

fn check_w_min<T: Scalar>(w_min: T) -> Result<(), SupervisionError> {
    if w_min <= T::zero() || w_min > T::one() {
        return Err(SupervisionError::Argument(format!("w_min {w_min:?} not in (0, 1]")));
    }
    Ok(())
}

/// Interval weight for frame `t` in `[s, e]`: `w_min` at `s`, 1 at `e`.
/// A single-frame interval weighs 1.
pub fn stage1_weight<T: Scalar>(t: Frame, interval: Interval, w_min: T) -> Result<T, SupervisionError> {
    if !interval.contains(t) {
        return Err(SupervisionError::OutsideInterval { frame: t, interval });
    }
    // endpoints are returned directly so they hold exactly under rounding
    if t == interval.end {
        return Ok(T::one());
    }
    if t == interval.start {
        return Ok(w_min);
    }
    let x = T::from_frame(interval.end - t) / T::from_frame(interval.end - interval.start);
    let f = w_min + (T::one() - w_min) * (T::one() - x);
    Ok(if f > T::one() { T::one() } else { f })
}

/// The interval that supplies the weight at `t`: among all containing
/// intervals of the episode, the one ending soonest (ties: earliest start).
fn weighting_interval(episode: &Episode, t: Frame) -> Option<Interval> {
    episode
        .gt_items
        .iter()
        .flat_map(|g| g.intervals.iter())
        .filter(|iv| iv.contains(t))
        .min_by_key(|iv| (iv.end, iv.start))
        .copied()
}

/// Interval-weighted response supervision.
pub fn stage1_targets<T: Scalar>(episode: &Episode, w_min: T) -> Result<Vec<SupervisionTarget<T>>, SupervisionError> {
    check_w_min(w_min)?;
    supervised_frames(episode)
        .map(|t| match weighting_interval(episode, t) {
            Some(iv) => Ok(SupervisionTarget::new(
                t,
                ActionLabel::Respond { lm_supervised: true },
                stage1_weight(t, iv, w_min)?,
                Stage::Stage1,
                Stream::Main,
            )),
            None => Ok(SupervisionTarget::new(
                t,
                ActionLabel::Continue,
                T::one(),
                Stage::Stage1,
                Stream::Main,
            )),
        })
        .collect()
}

/// How uncertain frames are chosen for high-resolution requests.
#[derive(Debug, Clone, PartialEq)]
pub enum UncertainSpec<T> {
    ExplicitSet(BTreeSet<Frame>),
    /// Frames whose `p_respond` lies in `[lo, hi]`.
    ProbabilityBand { lo: T, hi: T },
}

impl<T: Scalar> UncertainSpec<T> {
    pub fn band(lo: T, hi: T) -> Result<Self, SupervisionError> {
        if !(T::zero() < lo && lo < hi && hi < T::one()) {
            return Err(SupervisionError::Argument(format!(
                "band [{lo:?}, {hi:?}] must satisfy 0 < lo < hi < 1"
            )));
        }
        Ok(Self::ProbabilityBand { lo, hi })
    }

    pub fn default_band() -> Self {
        Self::ProbabilityBand {
            lo: T::from_f64(DEFAULT_BAND.0).expect("band"),
            hi: T::from_f64(DEFAULT_BAND.1).expect("band"),
        }
    }
}

/// Ask-high targets followed by determine targets, each covering every
/// supervised frame.
pub fn stage2_targets<T: Scalar>(
    episode: &Episode,
    uncertain: &UncertainSpec<T>,
    signals: Option<&PolicySignal<T>>,
    w_min: T,
) -> Result<Vec<SupervisionTarget<T>>, SupervisionError> {
    check_w_min(w_min)?;
    let frames = supervised_frames(episode);
    let uncertain_frames: BTreeSet<Frame> = match uncertain {
        UncertainSpec::ExplicitSet(set) => set.clone(),
        UncertainSpec::ProbabilityBand { lo, hi } => {
            let signals = signals.ok_or_else(|| {
                SupervisionError::Argument("probability band needs policy signals".into())
            })?;
            frames
                .clone()
                .filter(|t| {
                    signals
                        .get(*t)
                        .is_some_and(|s| *lo <= s.p_respond && s.p_respond <= *hi)
                })
                .collect()
        }
    };
    let mut out = Vec::with_capacity(2 * (frames.end - frames.start) as usize);
    for t in frames {
        let target = if uncertain_frames.contains(&t) {
            let weight = match weighting_interval(episode, t) {
                Some(iv) => stage1_weight(t, iv, w_min)?,
                None => T::one(),
            };
            SupervisionTarget::new(t, ActionLabel::AskHigh, weight, Stage::Stage2, Stream::AskHigh)
        } else {
            SupervisionTarget::new(t, ActionLabel::Continue, T::one(), Stage::Stage2, Stream::AskHigh)
        };
        out.push(target);
    }
    out.extend(binary_targets(episode, Stage::Stage2, Stream::Determine));
    Ok(out)
}

/// Model outputs at one frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound(deserialize = "T: Scalar + Deserialize<'de>"))]
pub struct FrameSignal<T> {
    pub p_continue: T,
    pub p_respond: T,
    pub p_ask_high: T,
    /// Language-modelling loss at this frame (zero when not supplied).
    #[serde(default = "zero")]
    pub lm_loss: T,
    /// Response probability after a high-resolution frame was fetched.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p_respond_high: Option<T>,
}

fn zero<T: Scalar>() -> T {
    T::zero()
}

impl<T: Scalar> FrameSignal<T> {
    pub fn new(p_continue: T, p_respond: T, p_ask_high: T) -> Self {
        Self {
            p_continue,
            p_respond,
            p_ask_high,
            lm_loss: T::zero(),
            p_respond_high: None,
        }
    }

    fn probability(&self, label: ActionLabel) -> T {
        match label {
            ActionLabel::Continue => self.p_continue,
            ActionLabel::Respond { .. } => self.p_respond,
            ActionLabel::AskHigh => self.p_ask_high,
        }
    }

    fn check(&self) -> Result<(), String> {
        let unit = |p: T| T::zero() <= p && p <= T::one();
        if !(unit(self.p_continue) && unit(self.p_respond) && unit(self.p_ask_high)) {
            return Err("probabilities must lie in [0, 1]".into());
        }
        let sum = (self.p_continue + self.p_respond + self.p_ask_high).to_f64_lossy();
        if (sum - 1.0).abs() > PROBABILITY_SUM_TOL {
            return Err(format!("probabilities sum to {sum}"));
        }
        if self.lm_loss < T::zero() {
            return Err("lm_loss must be >= 0".into());
        }
        if let Some(p) = self.p_respond_high {
            if !unit(p) {
                return Err("p_respond_high must lie in [0, 1]".into());
            }
        }
        Ok(())
    }
}

/// Per-frame model outputs for one episode.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PolicySignal<T> {
    frames: BTreeMap<Frame, FrameSignal<T>>,
}

impl<T: Scalar> PolicySignal<T> {
    pub fn new() -> Self {
        Self { frames: BTreeMap::new() }
    }

    /// Inserts a validated frame signal.
    pub fn insert(&mut self, frame: Frame, signal: FrameSignal<T>) -> Result<(), SupervisionError> {
        signal
            .check()
            .map_err(|m| SupervisionError::Argument(format!("frame {frame}: {m}")))?;
        self.frames.insert(frame, signal);
        Ok(())
    }

    /// Inserts without the probability checks. Used for transformed
    /// scores that are compared but never treated as probabilities.
    pub fn insert_unchecked(&mut self, frame: Frame, signal: FrameSignal<T>) {
        self.frames.insert(frame, signal);
    }

    pub fn get(&self, frame: Frame) -> Option<&FrameSignal<T>> {
        self.frames.get(&frame)
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (Frame, &FrameSignal<T>)> {
        self.frames.iter().map(|(f, s)| (*f, s))
    }
}

#[derive(Deserialize)]
#[serde(bound(deserialize = "T: Scalar + Deserialize<'de>"))]
struct SignalRecord<T> {
    #[serde(default)]
    episode: Option<String>,
    frame: Frame,
    #[serde(flatten)]
    signal: FrameSignal<T>,
}

/// Reads `{"episode"?, "frame", "p_continue", "p_respond", "p_ask_high",
/// "lm_loss"?, "p_respond_high"?}` lines, grouped by episode id (records
/// without an id go under the empty string).
pub fn read_signals_jsonl<R: BufRead>(reader: R) -> Result<BTreeMap<String, PolicySignal<f64>>, SupervisionError> {
    let mut out: BTreeMap<String, PolicySignal<f64>> = BTreeMap::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: SignalRecord<f64> = serde_json::from_str(&line).map_err(|e| SupervisionError::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        out.entry(rec.episode.unwrap_or_default())
            .or_default()
            .insert(rec.frame, rec.signal)
            .map_err(|e| SupervisionError::Parse {
                line: i + 1,
                message: e.to_string(),
            })?;
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FrameLoss<T> {
    pub frame: Frame,
    pub stream: Stream,
    pub loss: T,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LossReport<T> {
    pub per_frame: Vec<FrameLoss<T>>,
    pub per_stream: BTreeMap<Stream, T>,
    /// Sum over every target; for ask-high plus determine streams this is
    /// the per-frame sum of both losses accumulated over frames.
    pub total: T,
    pub non_finite: bool,
}

/// Cross-entropy of each target under `signals`:
/// `-ln(weight * p_label)`, plus `omega * lm_loss` at LM-supervised
/// response frames. A zero probability yields an infinite loss (flagged
/// in `non_finite`), not an error.
pub fn eval_loss<T: Real>(
    targets: &[SupervisionTarget<T>],
    signals: &PolicySignal<T>,
    omega: T,
) -> Result<LossReport<T>, SupervisionError> {
    if omega < T::zero() {
        return Err(SupervisionError::Argument("omega must be >= 0".into()));
    }
    let missing: BTreeSet<Frame> = targets
        .iter()
        .filter(|t| signals.get(t.frame).is_none())
        .map(|t| t.frame)
        .collect();
    if !missing.is_empty() {
        return Err(SupervisionError::Coverage(missing.into_iter().collect()));
    }
    let mut per_frame = Vec::with_capacity(targets.len());
    let mut per_stream: BTreeMap<Stream, T> = BTreeMap::new();
    let mut total = T::zero();
    for t in targets {
        let s = signals.get(t.frame).expect("coverage checked");
        let mut loss = -(t.weight * s.probability(t.label)).ln();
        if t.label.is_lm_supervised() {
            loss = loss + omega * s.lm_loss;
        }
        total = total + loss;
        let acc = per_stream.entry(t.stream).or_insert_with(T::zero);
        *acc = *acc + loss;
        per_frame.push(FrameLoss {
            frame: t.frame,
            stream: t.stream,
            loss,
        });
    }
    Ok(LossReport {
        non_finite: !total.is_finite(),
        per_frame,
        per_stream,
        total,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::episode::{Fps, GroundTruthItem, Query, TaskType, Timeline};
    use num_rational::Rational64;

    fn episode(intervals: &[&[(u64, u64)]], issue: u64, frames: u64) -> Episode {
        let mut ep = Episode::new("e", Timeline::new(Fps::new(2, 1), frames), 10, 40);
        ep.queries.push(Query::new("q", "?", issue));
        for (i, ivs) in intervals.iter().enumerate() {
            ep.gt_items.push(GroundTruthItem::new(
                format!("g{i}"),
                "q",
                "a",
                ivs.iter().map(|&(s, e)| Interval::new(s, e)).collect(),
                TaskType::OR,
            ));
        }
        ep
    }

    fn lerp(a: f64, b: f64, t: f64) -> f64 {
        a + (b - a) * t
    }

    #[test]
    fn stage0_examples() {
        let ep = episode(&[&[(10, 20)]], 0, 50);
        let ts = stage0_targets::<f64>(&ep);
        assert_eq!(ts.len(), 50);
        for t in &ts {
            assert_eq!(t.label.is_lm_supervised(), t.frame == 20, "frame {}", t.frame);
        }
        let ep = episode(&[], 0, 30);
        assert!(stage0_targets::<f64>(&ep).iter().all(|t| t.label == ActionLabel::Continue));

        let ep = episode(&[&[(10, 20)], &[(30, 40)]], 0, 50);
        let respond: Vec<Frame> = stage0_targets::<f64>(&ep)
            .iter()
            .filter(|t| t.label != ActionLabel::Continue)
            .map(|t| t.frame)
            .collect();
        let by_scan: Vec<Frame> = (0..50).filter(|f| *f == 20 || *f == 40).collect();
        assert_eq!(respond, by_scan);
    }

    #[test]
    fn stage1_weight_examples() {
        let iv = Interval::new(10, 20);
        assert_eq!(stage1_weight(20, iv, 0.1).unwrap(), 1.0);
        assert_eq!(stage1_weight(10, iv, 0.1).unwrap(), 0.1);
        let w: f64 = stage1_weight(15, iv, 0.1).unwrap();
        assert!((w - lerp(0.1, 1.0, 0.5)).abs() < 1e-15);
        assert_eq!(
            stage1_weight(15, iv, Rational64::new(1, 10)).unwrap(),
            Rational64::new(11, 20)
        );
        assert_eq!(stage1_weight(7, Interval::new(7, 7), 0.1).unwrap(), 1.0);
        assert!(stage1_weight(21, iv, 0.1).is_err());
    }

    #[test]
    fn stage1_target_examples() {
        let ep = episode(&[&[(10, 12)]], 5, 20);
        let ts = stage1_targets(&ep, Rational64::new(1, 10)).unwrap();
        assert_eq!(ts[0].frame, 5, "no targets before the query");
        let w: Vec<Rational64> = ts.iter().filter(|t| (10..=12).contains(&t.frame)).map(|t| t.weight).collect();
        assert_eq!(w, vec![Rational64::new(1, 10), Rational64::new(11, 20), Rational64::from_integer(1)]);
        assert!(ts
            .iter()
            .filter(|t| !(10..=12).contains(&t.frame))
            .all(|t| t.label == ActionLabel::Continue && t.weight == Rational64::from_integer(1)));

        let ep = episode(&[&[(7, 7)]], 0, 10);
        let ts = stage1_targets(&ep, 0.1).unwrap();
        assert_eq!(ts[7].weight, 1.0);
        assert!(stage1_targets(&ep, 0.0).is_err());
    }

    #[test]
    fn stage1_overlap_uses_nearest_end() {
        let ep = episode(&[&[(10, 30)], &[(15, 20)]], 0, 40);
        let ts = stage1_targets(&ep, 0.1).unwrap();
        // frame 18: [15,20] ends first
        let expect = stage1_weight(18, Interval::new(15, 20), 0.1).unwrap();
        assert_eq!(ts[18].weight, expect);
        let expect = stage1_weight(25, Interval::new(10, 30), 0.1).unwrap();
        assert_eq!(ts[25].weight, expect);
    }

    #[test]
    fn stage2_explicit_set() {
        let ep = episode(&[&[(10, 20)]], 0, 30);
        let set = UncertainSpec::ExplicitSet([14, 15].into_iter().collect());
        let ts = stage2_targets(&ep, &set, None, 0.1).unwrap();
        let ask: Vec<_> = ts
            .iter()
            .filter(|t| t.stream == Stream::AskHigh && t.label == ActionLabel::AskHigh)
            .collect();
        assert_eq!(ask.len(), 2);
        assert!((ask[0].weight - 0.46_f64).abs() < 1e-12 && ask[0].frame == 14);
        assert!((ask[1].weight - 0.55_f64).abs() < 1e-12 && ask[1].frame == 15);
    }

    #[test]
    fn stage2_empty_set_degenerates_to_stage0() {
        let ep = episode(&[&[(10, 20), (25, 27)]], 3, 30);
        let ts = stage2_targets(&ep, &UncertainSpec::ExplicitSet(BTreeSet::new()), None, 0.1).unwrap();
        assert!(ts
            .iter()
            .filter(|t| t.stream == Stream::AskHigh)
            .all(|t| t.label == ActionLabel::Continue));
        let det: Vec<_> = ts.iter().filter(|t| t.stream == Stream::Determine).collect();
        let s0 = stage0_targets::<f64>(&ep);
        assert_eq!(det.len(), s0.len());
        assert!(det.iter().zip(&s0).all(|(a, b)| a.same_supervision(b)));
    }

    #[test]
    fn stage2_band_needs_signals_and_hits() {
        let ep = episode(&[&[(10, 20)]], 0, 30);
        let band = UncertainSpec::band(0.4, 0.6).unwrap();
        assert!(matches!(
            stage2_targets(&ep, &band, None, 0.1),
            Err(SupervisionError::Argument(_))
        ));
        let mut sig = PolicySignal::new();
        for f in 0..30 {
            let p = if f == 12 { 0.5 } else { 0.1 };
            sig.insert(f, FrameSignal::new(1.0 - p, p, 0.0)).unwrap();
        }
        let ts = stage2_targets(&ep, &band, Some(&sig), 0.1).unwrap();
        let hits: Vec<Frame> = ts.iter().filter(|t| t.label == ActionLabel::AskHigh).map(|t| t.frame).collect();
        assert_eq!(hits, vec![12]);
        assert!(UncertainSpec::band(0.6, 0.4).is_err());
    }

    fn target(frame: Frame, label: ActionLabel, weight: f64) -> SupervisionTarget<f64> {
        SupervisionTarget::new(frame, label, weight, Stage::Stage1, Stream::Main)
    }

    #[test]
    fn loss_examples() {
        let mut sig = PolicySignal::new();
        sig.insert(0, FrameSignal::new(1.0, 0.0, 0.0)).unwrap();
        sig.insert(1, FrameSignal::new(0.2, 0.8, 0.0)).unwrap();
        let mut s2 = FrameSignal::new(0.0, 1.0, 0.0);
        s2.lm_loss = 2.0;
        sig.insert(2, s2).unwrap();

        let r = eval_loss(&[target(0, ActionLabel::Continue, 1.0)], &sig, 0.0).unwrap();
        assert_eq!(r.total, 0.0);

        let r = eval_loss(&[target(1, ActionLabel::Respond { lm_supervised: false }, 0.5)], &sig, 0.0).unwrap();
        // -ln(0.4) by series-free route: ln(0.4) = ln 2 - ln 5
        let oracle = -(std::f64::consts::LN_2 - 5f64.ln());
        assert!((r.total - oracle).abs() < 1e-12 && (r.total - 0.9163).abs() < 1e-4);

        let r = eval_loss(&[target(2, ActionLabel::Respond { lm_supervised: true }, 1.0)], &sig, 0.5).unwrap();
        assert_eq!(r.total, 1.0);

        let r = eval_loss(&[target(0, ActionLabel::AskHigh, 1.0)], &sig, 0.0).unwrap();
        assert!(r.non_finite && r.total.is_infinite());

        match eval_loss(&[target(9, ActionLabel::Continue, 1.0), target(7, ActionLabel::Continue, 1.0)], &sig, 0.0) {
            Err(SupervisionError::Coverage(f)) => assert_eq!(f, vec![7, 9]),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn signal_validation_and_parsing() {
        let mut sig = PolicySignal::new();
        assert!(sig.insert(0, FrameSignal::new(0.5, 0.5, 0.1)).is_err());
        assert!(sig.insert(0, FrameSignal::new(1.2, -0.2, 0.0)).is_err());
        let text = "{\"frame\":3,\"p_continue\":0.7,\"p_respond\":0.3,\"p_ask_high\":0.0}\n\n{\"episode\":\"x\",\"frame\":4,\"p_continue\":0.1,\"p_respond\":0.9,\"p_ask_high\":0.0,\"lm_loss\":1.5}\n";
        let parsed = read_signals_jsonl(text.as_bytes()).unwrap();
        assert_eq!(parsed[""].get(3).unwrap().p_respond, 0.3);
        assert_eq!(parsed["x"].get(4).unwrap().lm_loss, 1.5);
        let bad = "{\"frame\":3,\"p_continue\":0.7,\"p_respond\":0.7,\"p_ask_high\":0.0}\n";
        assert!(matches!(read_signals_jsonl(bad.as_bytes()), Err(SupervisionError::Parse { line: 1, .. })));
    }

    #[test]
    fn target_line_shape() {
        let t = target(20, ActionLabel::Respond { lm_supervised: true }, 1.0);
        assert_eq!(
            target_line(None, &t),
            r#"{"frame":20,"label":"respond","weight":1.0,"stage":"Stage1","stream":"main","lm":true}"#
        );
    }
}
