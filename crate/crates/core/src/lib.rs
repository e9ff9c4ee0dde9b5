//! Evaluation, simulation and supervision tooling for proactive question
//! answering over streaming video timelines.
//!
//! - [`episode`] / [`jsonl`]: the timeline data model and its interchange format.
//! - [`matcher`] / [`scoring`]: prediction-to-answer assignment and the soft F1.
//! - [`supervision`]: per-frame action targets and their losses.
//! - [`runtime`]: the streaming decision loop with KV-cache accounting.
//! - [`datagen`]: seeded synthetic episodes and the QA generation pipeline.
//! - [`report`]: pooled tables and plot series.
//!
//! Metric and loss code is generic over the scalar type (see [`num`]); the
//! aliases below fix it to `f64`, or to exact rationals where noted.

pub mod datagen;
pub mod episode;
pub mod jsonl;
pub mod matcher;
pub mod num;
pub mod report;
pub mod runtime;
pub mod scoring;
pub mod supervision;

pub use episode::{
    validate_episode, Episode, Fps, Frame, GroundTruthItem, Interval, Prediction, ProactiveType, Query, TaskType,
    Timeline, Violation,
};
pub use matcher::{match_predictions, DuplicatePolicy, MatchConfig, MatchResult, MatchStrategy};
pub use num::{Real, Scalar};

pub type ScoreReport = scoring::ScoreReport<f64>;
pub type Aggregate = scoring::Aggregate<f64>;
/// Exact soft-F1 arithmetic over rationals.
pub type ExactAggregate = scoring::Aggregate<num_rational::Rational64>;
pub type Scorer = scoring::Scorer<f64>;
pub type TimeScoreSpec = scoring::TimeScoreSpec<f64>;
pub type SupervisionTarget = supervision::SupervisionTarget<f64>;
pub type PolicySignal = supervision::PolicySignal<f64>;
pub type FrameSignal = supervision::FrameSignal<f64>;
pub type LossReport = supervision::LossReport<f64>;
pub type PolicySpec = runtime::PolicySpec<f64>;
