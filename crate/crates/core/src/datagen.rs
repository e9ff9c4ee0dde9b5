//! Seeded synthetic episodes and the caption-to-QA generation pipeline.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::BufRead;
use std::time::Duration;

use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::episode::{validate_episode, Episode, Fps, Frame, GroundTruthItem, Interval, Query, TaskType, Timeline};
use crate::scoring::normalize_answer;

/// Endpoint value that selects [`MockGenClient`].
pub const MOCK_ENDPOINT: &str = "mock";

#[derive(Debug, Error)]
pub enum GenError {
    #[error("invalid parameters: {0}")]
    Params(String),
    #[error("infeasible: {0}")]
    Infeasible(String),
    #[error("{stage} failed on record {record}: {message}")]
    Pipeline {
        stage: &'static str,
        record: String,
        message: String,
    },
    #[error("generated episode is invalid: {0}")]
    Invalid(String),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthParams {
    pub seed: u64,
    pub episode_id: String,
    pub num_frames: u64,
    pub fps_num: u32,
    pub fps_den: u32,
    pub queries_per_episode: usize,
    pub gt_per_query_min: usize,
    pub gt_per_query_max: usize,
    /// Interval counts are drawn uniformly from `[min, max]`.
    pub intervals_per_gt_min: usize,
    pub intervals_per_gt_max: usize,
    /// Probability that a query after the first links to an earlier one.
    pub contextual_fraction: f64,
    /// Weights over the fourteen task types, in [`TaskType::ALL`] order.
    pub task_mix: Vec<f64>,
    pub frame_tokens: u64,
    pub high_res_tokens: u64,
}

impl Default for SynthParams {
    fn default() -> Self {
        Self {
            seed: 0,
            episode_id: "synth".into(),
            num_frames: 600,
            fps_num: 2,
            fps_den: 1,
            queries_per_episode: 3,
            gt_per_query_min: 1,
            gt_per_query_max: 2,
            intervals_per_gt_min: 1,
            intervals_per_gt_max: 7,
            contextual_fraction: 0.46,
            task_mix: vec![1.0; TaskType::ALL.len()],
            frame_tokens: 10,
            high_res_tokens: 40,
        }
    }
}

impl SynthParams {
    pub fn validate(&self) -> Result<(), GenError> {
        let bad = |m: &str| Err(GenError::Params(m.into()));
        if self.fps_num == 0 || self.fps_den == 0 {
            return bad("fps numerator and denominator must be >= 1");
        }
        if self.task_mix.len() != TaskType::ALL.len() {
            return bad("task_mix needs one weight per task type");
        }
        if self.task_mix.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return bad("task_mix weights must be finite and non-negative");
        }
        if self.task_mix.iter().all(|w| *w == 0.0) {
            return bad("task_mix weights are all zero");
        }
        if !(0.0..=1.0).contains(&self.contextual_fraction) {
            return bad("contextual_fraction must lie in [0, 1]");
        }
        if self.intervals_per_gt_min == 0 || self.intervals_per_gt_min > self.intervals_per_gt_max {
            return bad("need 1 <= intervals_per_gt_min <= intervals_per_gt_max");
        }
        if self.gt_per_query_min == 0 || self.gt_per_query_min > self.gt_per_query_max {
            return bad("need 1 <= gt_per_query_min <= gt_per_query_max");
        }
        if self.frame_tokens == 0 || self.high_res_tokens < self.frame_tokens {
            return bad("need 0 < frame_tokens <= high_res_tokens");
        }
        Ok(())
    }

    pub fn mean_intervals_per_gt(&self) -> f64 {
        (self.intervals_per_gt_min + self.intervals_per_gt_max) as f64 / 2.0
    }
}

const OBJECTS: [&str; 12] = [
    "cup", "knife", "pan", "phone", "towel", "bowl", "kettle", "bottle", "plate", "spoon", "key", "box",
];
const PLACES: [&str; 8] = ["counter", "sink", "table", "shelf", "drawer", "stove", "fridge", "floor"];

/// Generates one episode. Identical parameters give identical episodes.
pub fn synth_episode(params: &SynthParams) -> Result<Episode, GenError> {
    params.validate()?;
    let q = params.queries_per_episode as u64;
    // each gt needs 2k distinct frames after its query; queries need distinct issue frames
    let max_points = 2 * params.intervals_per_gt_max as u64;
    if params.num_frames < max_points + q {
        return Err(GenError::Infeasible(format!(
            "{} frames cannot hold {} queries with up to {} intervals per item",
            params.num_frames, q, params.intervals_per_gt_max
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let timeline = Timeline::new(Fps::new(params.fps_num, params.fps_den), params.num_frames);
    let mut ep = Episode::new(
        params.episode_id.clone(),
        timeline,
        params.frame_tokens,
        params.high_res_tokens,
    );

    // distinct issue frames, leaving room for the widest item after the last
    let latest_issue = params.num_frames - max_points;
    let mut issues: Vec<Frame> = rand::seq::index::sample(&mut rng, latest_issue as usize + 1, q as usize)
        .into_iter()
        .map(|i| i as Frame)
        .collect();
    issues.sort_unstable();

    let plain: Vec<(TaskType, f64)> = TaskType::ALL
        .iter()
        .zip(&params.task_mix)
        .filter(|(t, _)| t.proactive_type() != crate::episode::ProactiveType::Contextual)
        .map(|(t, w)| (*t, *w))
        .collect();
    let contextual: Vec<(TaskType, f64)> = TaskType::ALL
        .iter()
        .zip(&params.task_mix)
        .filter(|(t, _)| t.proactive_type() == crate::episode::ProactiveType::Contextual)
        .map(|(t, w)| (*t, *w))
        .collect();
    let pick = |rng: &mut ChaCha8Rng, table: &[(TaskType, f64)]| -> TaskType {
        match WeightedIndex::new(table.iter().map(|(_, w)| *w)) {
            Ok(dist) => table[dist.sample(rng)].0,
            Err(_) => table[rng.gen_range(0..table.len())].0,
        }
    };

    for (qi, &issue) in issues.iter().enumerate() {
        let linked = qi > 0 && issues[qi - 1] < issue && rng.gen_bool(params.contextual_fraction);
        let object = OBJECTS[rng.gen_range(0..OBJECTS.len())];
        let mut query = Query::new(format!("q{qi}"), format!("Tell me when the {object} moves."), issue);
        if linked {
            let earlier: Vec<usize> = (0..qi).filter(|&j| issues[j] < issue).collect();
            let j = earlier[rng.gen_range(0..earlier.len())];
            query.context_refs.push(format!("q{j}"));
            query.content = format!("After that, where does the {object} go?");
        }
        let n_gt = rng.gen_range(params.gt_per_query_min..=params.gt_per_query_max);
        for gi in 0..n_gt {
            let task = if linked {
                pick(&mut rng, &contextual)
            } else {
                pick(&mut rng, &plain)
            };
            let k = rng.gen_range(params.intervals_per_gt_min..=params.intervals_per_gt_max);
            let room = (params.num_frames - issue) as usize;
            let mut points: Vec<Frame> = rand::seq::index::sample(&mut rng, room, 2 * k)
                .into_iter()
                .map(|i| issue + i as Frame)
                .collect();
            points.sort_unstable();
            let intervals = points.chunks(2).map(|c| Interval::new(c[0], c[1])).collect();
            let place = PLACES[rng.gen_range(0..PLACES.len())];
            ep.gt_items.push(GroundTruthItem::new(
                format!("q{qi}g{gi}"),
                query.id.clone(),
                format!("the {object} is on the {place}"),
                intervals,
                task,
            ));
        }
        ep.queries.push(query);
    }
    let violations = validate_episode(&ep);
    if !violations.is_empty() {
        return Err(GenError::Invalid(format!("{violations:?}")));
    }
    Ok(ep)
}

/// A caption over a frame span.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Caption {
    pub span: Interval,
    pub text: String,
}

pub fn read_captions_jsonl<R: BufRead>(reader: R) -> Result<Vec<Caption>, GenError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let c: Caption = serde_json::from_str(&line).map_err(|e| GenError::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        if !c.span.is_well_formed() {
            return Err(GenError::Parse {
                line: i + 1,
                message: format!("span {} has start > end", c.span),
            });
        }
        out.push(c);
    }
    Ok(out)
}

/// Text-generation backend: `{"task", "input"}` in, `{"output"}` out.
pub trait GenClient: Sync {
    fn call(&self, task: &str, input: &Value) -> Result<Value, String>;
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenClientSpec {
    pub endpoint: String,
    pub timeout_ms: u64,
    pub retries: u32,
}

impl GenClientSpec {
    pub fn new(endpoint: impl Into<String>) -> Self {
        Self {
            endpoint: endpoint.into(),
            timeout_ms: 30_000,
            retries: 2,
        }
    }

    /// The mock client for [`MOCK_ENDPOINT`], otherwise an HTTP client.
    pub fn build(&self) -> Result<Box<dyn GenClient>, GenError> {
        if self.endpoint == MOCK_ENDPOINT {
            return Ok(Box::new(MockGenClient::echo()));
        }
        Ok(Box::new(HttpGenClient::new(self)?))
    }
}

pub struct HttpGenClient {
    endpoint: String,
    retries: u32,
    client: reqwest::blocking::Client,
}

impl HttpGenClient {
    pub fn new(spec: &GenClientSpec) -> Result<Self, GenError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_millis(spec.timeout_ms))
            .build()
            .map_err(|e| GenError::Params(e.to_string()))?;
        Ok(Self {
            endpoint: spec.endpoint.clone(),
            retries: spec.retries,
            client,
        })
    }

    fn once(&self, task: &str, input: &Value) -> Result<Value, String> {
        let resp = self
            .client
            .post(&self.endpoint)
            .json(&json!({"task": task, "input": input}))
            .send()
            .map_err(|e| e.to_string())?;
        if !resp.status().is_success() {
            return Err(format!("HTTP {}", resp.status()));
        }
        let mut body: Value = resp.json().map_err(|e| e.to_string())?;
        body.get_mut("output")
            .map(Value::take)
            .ok_or_else(|| "reply has no \"output\" field".to_string())
    }
}

impl GenClient for HttpGenClient {
    fn call(&self, task: &str, input: &Value) -> Result<Value, String> {
        let mut last = String::new();
        for _ in 0..=self.retries {
            match self.once(task, input) {
                Ok(v) => return Ok(v),
                Err(e) => last = e,
            }
        }
        Err(format!("after {} attempts: {last}", self.retries + 1))
    }
}

/// Deterministic stand-in for a captioning model.
pub struct MockGenClient {
    fixed: Option<(String, String)>,
}

impl MockGenClient {
    /// Asks about the caption and answers with its text.
    pub fn echo() -> Self {
        Self { fixed: None }
    }

    /// Returns the same question and answer for every caption.
    pub fn fixed(question: impl Into<String>, answer: impl Into<String>) -> Self {
        Self {
            fixed: Some((question.into(), answer.into())),
        }
    }
}

impl GenClient for MockGenClient {
    fn call(&self, task: &str, input: &Value) -> Result<Value, String> {
        if task != STAGE_ONE_TO_ONE {
            return Err(format!("mock client does not handle task {task}"));
        }
        let text = input.get("text").and_then(Value::as_str).unwrap_or_default();
        let (q, a) = match &self.fixed {
            Some((q, a)) => (q.clone(), a.clone()),
            None => (format!("Tell me when this happens: {text}"), text.to_string()),
        };
        Ok(json!({"question": q, "answer": a}))
    }
}

pub const STAGE_ONE_TO_ONE: &str = "one_to_one";
pub const STAGE_ONE_TO_MANY: &str = "one_to_many";
pub const STAGE_MANY_TO_MANY: &str = "many_to_many";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QaPair {
    pub id: String,
    pub question: String,
    pub answer: String,
    /// Sorted, pairwise disjoint.
    pub intervals: Vec<Interval>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub task_type: Option<TaskType>,
}

impl QaPair {
    fn first_start(&self) -> Frame {
        self.intervals.first().map_or(0, |iv| iv.start)
    }
}

/// Stage one: one QA pair per caption, answered within that caption's span.
pub fn pipeline_one_to_one(captions: &[Caption], client: &dyn GenClient) -> Result<Vec<QaPair>, GenError> {
    let mut out = Vec::with_capacity(captions.len());
    for (i, c) in captions.iter().enumerate() {
        let record = format!("caption{i}");
        let fail = |message: String| GenError::Pipeline {
            stage: STAGE_ONE_TO_ONE,
            record: record.clone(),
            message,
        };
        let reply = client
            .call(STAGE_ONE_TO_ONE, &json!({"span": c.span, "text": c.text}))
            .map_err(fail)?;
        let field = |name: &str| {
            reply
                .get(name)
                .and_then(Value::as_str)
                .map(String::from)
                .ok_or_else(|| fail(format!("reply lacks string field {name:?}")))
        };
        let task_type = match reply.get("task_type").and_then(Value::as_str) {
            Some(code) => Some(TaskType::parse(code).ok_or_else(|| fail(format!("unknown task type {code}")))?),
            None => None,
        };
        out.push(QaPair {
            id: format!("qa{i}"),
            question: field("question")?,
            answer: field("answer")?,
            intervals: vec![c.span],
            task_type,
        });
    }
    Ok(out)
}

fn tokens(text: &str) -> Vec<String> {
    normalize_answer(text)
        .split_whitespace()
        .map(|t| t.trim_matches(|c: char| c.is_ascii_punctuation()).to_string())
        .filter(|t| !t.is_empty())
        .collect()
}

fn contains_phrase(haystack: &[String], needle: &[String]) -> bool {
    !needle.is_empty() && haystack.windows(needle.len()).any(|w| w == needle)
}

/// Stage two: adds the span of every caption whose text contains the
/// answer's token sequence, skipping spans that overlap an interval the
/// pair already has.
pub fn pipeline_one_to_many(pairs: &[QaPair], captions: &[Caption]) -> Vec<QaPair> {
    let index: Vec<(Interval, Vec<String>)> = captions.iter().map(|c| (c.span, tokens(&c.text))).collect();
    pairs
        .iter()
        .map(|p| {
            let needle = tokens(&p.answer);
            let mut intervals = p.intervals.clone();
            for (span, hay) in &index {
                if contains_phrase(hay, &needle) && !intervals.iter().any(|iv| iv.overlaps(span)) {
                    intervals.push(*span);
                }
            }
            intervals.sort();
            QaPair {
                intervals,
                ..p.clone()
            }
        })
        .collect()
}

const STOPWORDS: [&str; 40] = [
    "a", "an", "the", "is", "are", "was", "were", "be", "on", "in", "at", "of", "to", "from", "with", "and", "or",
    "it", "its", "this", "that", "there", "here", "into", "onto", "up", "down", "by", "for", "as", "i", "you", "he",
    "she", "they", "we", "my", "your", "his", "her",
];

/// Entity tokens of an answer: normalised tokens minus stopwords.
pub fn entities(text: &str) -> BTreeSet<String> {
    tokens(text)
        .into_iter()
        .filter(|t| !STOPWORDS.contains(&t.as_str()))
        .collect()
}

/// A multi-turn question group, ordered by first answer frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QaGroup {
    pub pairs: Vec<QaPair>,
}

/// Stage three: pairs whose answers share an entity (transitively) form
/// one group. Groups are ordered by their first pair; within a group pairs
/// are ordered by first interval start, then id.
pub fn pipeline_many_to_many(pairs: &[QaPair]) -> Vec<QaGroup> {
    let n = pairs.len();
    let mut parent: Vec<usize> = (0..n).collect();
    fn root(parent: &mut [usize], mut i: usize) -> usize {
        while parent[i] != i {
            parent[i] = parent[parent[i]];
            i = parent[i];
        }
        i
    }
    let mut owner: HashMap<String, usize> = HashMap::new();
    for (i, p) in pairs.iter().enumerate() {
        for e in entities(&p.answer) {
            match owner.get(&e) {
                Some(&j) => {
                    let (a, b) = (root(&mut parent, i), root(&mut parent, j));
                    parent[a.max(b)] = a.min(b);
                }
                None => {
                    owner.insert(e, i);
                }
            }
        }
    }
    let mut groups: BTreeMap<usize, Vec<&QaPair>> = BTreeMap::new();
    for i in 0..n {
        let r = root(&mut parent, i);
        groups.entry(r).or_default().push(&pairs[i]);
    }
    let mut out: Vec<QaGroup> = groups
        .into_values()
        .map(|mut g| {
            g.sort_by(|a, b| (a.first_start(), &a.id).cmp(&(b.first_start(), &b.id)));
            QaGroup {
                pairs: g.into_iter().cloned().collect(),
            }
        })
        .collect();
    out.sort_by(|a, b| {
        let ka = (a.pairs[0].first_start(), &a.pairs[0].id);
        let kb = (b.pairs[0].first_start(), &b.pairs[0].id);
        ka.cmp(&kb)
    });
    out
}

/// Turns groups into an episode. Each pair becomes a query issued at its
/// first answer frame with one ground-truth item; later turns of a group
/// reference the previous turn when it was issued strictly earlier.
pub fn assemble_episode(
    id: &str,
    timeline: Timeline,
    frame_tokens: u64,
    high_res_tokens: u64,
    groups: &[QaGroup],
) -> Result<Episode, GenError> {
    let mut ep = Episode::new(id, timeline, frame_tokens, high_res_tokens);
    for group in groups {
        let mut prev: Option<(String, Frame)> = None;
        for p in &group.pairs {
            let issue = p.first_start();
            let mut q = Query::new(format!("{}-q", p.id), p.question.clone(), issue);
            let linked = match &prev {
                Some((pid, pissue)) if *pissue < issue => {
                    q.context_refs.push(pid.clone());
                    true
                }
                _ => false,
            };
            let task = if linked {
                TaskType::ORC
            } else {
                match p.task_type {
                    Some(t) if t.proactive_type() != crate::episode::ProactiveType::Contextual => t,
                    _ => TaskType::OR,
                }
            };
            ep.gt_items.push(GroundTruthItem::new(
                format!("{}-g", p.id),
                q.id.clone(),
                p.answer.clone(),
                p.intervals.clone(),
                task,
            ));
            prev = Some((q.id.clone(), issue));
            ep.queries.push(q);
        }
    }
    let violations = validate_episode(&ep);
    if !violations.is_empty() {
        return Err(GenError::Invalid(
            violations.iter().map(ToString::to_string).collect::<Vec<_>>().join("; "),
        ));
    }
    Ok(ep)
}

/// Runs all three stages over one caption stream.
pub fn run_pipeline(
    id: &str,
    timeline: Timeline,
    frame_tokens: u64,
    high_res_tokens: u64,
    captions: &[Caption],
    client: &dyn GenClient,
) -> Result<Episode, GenError> {
    let pairs = pipeline_one_to_one(captions, client)?;
    let expanded = pipeline_one_to_many(&pairs, captions);
    let groups = pipeline_many_to_many(&expanded);
    assemble_episode(id, timeline, frame_tokens, high_res_tokens, &groups)
}
