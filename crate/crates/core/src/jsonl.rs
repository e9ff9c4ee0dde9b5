//! Line-oriented JSON interchange for episodes and predictions.
//!
//! An episode is a header line (`"kind":"episode"`) followed by its
//! `"query"` and `"gt"` lines. A file may hold several episodes back to
//! back. Predictions are one `"pred"` line each. Known fields are written
//! in a fixed order, unknown fields follow in the order they were read.

use std::collections::HashSet;
use std::io::{BufRead, Write};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

use crate::episode::{Episode, Extra, Fps, GroundTruthItem, Prediction, Query, Timeline};

#[derive(Debug, Error)]
pub enum JsonlError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: malformed JSON: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: {message}")]
    Schema { line: usize, message: String },
    #[error("line {line}: {kind} record before any episode header")]
    MissingHeader { line: usize, kind: String },
    #[error("line {line}: gt {gt_id} references unknown query {query_id}")]
    DanglingReference {
        line: usize,
        gt_id: String,
        query_id: String,
    },
    #[error("expected exactly one episode, found {0}")]
    EpisodeCount(usize),
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    id: String,
    fps_num: u32,
    fps_den: u32,
    num_frames: u64,
    frame_tokens: u64,
    high_res_tokens: u64,
    #[serde(flatten)]
    extra: Extra,
}

/// Serialises `record` as a single JSON object line with `kind` first.
pub fn to_tagged_line<T: Serialize>(kind: &str, record: &T) -> String {
    let mut obj = Map::new();
    obj.insert("kind".into(), Value::String(kind.into()));
    match serde_json::to_value(record).expect("record serialises") {
        Value::Object(fields) => obj.extend(fields),
        other => panic!("record for kind {kind} is not an object: {other}"),
    }
    Value::Object(obj).to_string()
}

fn split_kind(line_no: usize, text: &str) -> Result<(String, Map<String, Value>), JsonlError> {
    let mut obj: Map<String, Value> = serde_json::from_str(text).map_err(|e| JsonlError::Parse {
        line: line_no,
        message: e.to_string(),
    })?;
    match obj.shift_remove("kind") {
        Some(Value::String(kind)) => Ok((kind, obj)),
        _ => Err(JsonlError::Schema {
            line: line_no,
            message: "missing string field \"kind\"".into(),
        }),
    }
}

fn decode<T: DeserializeOwned>(line_no: usize, obj: Map<String, Value>) -> Result<T, JsonlError> {
    serde_json::from_value(Value::Object(obj)).map_err(|e| JsonlError::Schema {
        line: line_no,
        message: e.to_string(),
    })
}

fn nonblank_lines<R: BufRead>(reader: R) -> impl Iterator<Item = Result<(usize, String), JsonlError>> {
    reader
        .lines()
        .enumerate()
        .map(|(i, l)| l.map(|l| (i + 1, l)).map_err(JsonlError::from))
        .filter(|r| !matches!(r, Ok((_, l)) if l.trim().is_empty()))
}

struct EpisodeBuilder {
    episode: Episode,
    query_ids: HashSet<String>,
    pending_gt: Vec<(usize, GroundTruthItem)>,
}

impl EpisodeBuilder {
    fn finish(self) -> Result<Episode, JsonlError> {
        let mut episode = self.episode;
        for (line, gt) in self.pending_gt {
            if !self.query_ids.contains(&gt.query_id) {
                return Err(JsonlError::DanglingReference {
                    line,
                    gt_id: gt.id,
                    query_id: gt.query_id,
                });
            }
            episode.gt_items.push(gt);
        }
        Ok(episode)
    }
}

/// Reads every episode in the stream.
pub fn read_episodes_jsonl<R: BufRead>(reader: R) -> Result<Vec<Episode>, JsonlError> {
    let mut done = Vec::new();
    let mut current: Option<EpisodeBuilder> = None;
    for item in nonblank_lines(reader) {
        let (line_no, text) = item?;
        let (kind, obj) = split_kind(line_no, &text)?;
        match kind.as_str() {
            "episode" => {
                if let Some(b) = current.take() {
                    done.push(b.finish()?);
                }
                let h: Header = decode(line_no, obj)?;
                let mut episode = Episode::new(
                    h.id,
                    Timeline::new(Fps::new(h.fps_num, h.fps_den), h.num_frames),
                    h.frame_tokens,
                    h.high_res_tokens,
                );
                episode.extra = h.extra;
                current = Some(EpisodeBuilder {
                    episode,
                    query_ids: HashSet::new(),
                    pending_gt: Vec::new(),
                });
            }
            "query" | "gt" => {
                let b = current.as_mut().ok_or_else(|| JsonlError::MissingHeader {
                    line: line_no,
                    kind: kind.clone(),
                })?;
                if kind == "query" {
                    let q: Query = decode(line_no, obj)?;
                    b.query_ids.insert(q.id.clone());
                    b.episode.queries.push(q);
                } else {
                    let gt: GroundTruthItem = decode(line_no, obj)?;
                    b.pending_gt.push((line_no, gt));
                }
            }
            other => {
                return Err(JsonlError::Schema {
                    line: line_no,
                    message: format!("unexpected record kind {other:?} in episode stream"),
                })
            }
        }
    }
    if let Some(b) = current.take() {
        done.push(b.finish()?);
    }
    Ok(done)
}

/// Reads a stream holding exactly one episode.
pub fn read_episode_jsonl<R: BufRead>(reader: R) -> Result<Episode, JsonlError> {
    let mut all = read_episodes_jsonl(reader)?;
    if all.len() != 1 {
        return Err(JsonlError::EpisodeCount(all.len()));
    }
    Ok(all.remove(0))
}

/// Lines of one episode: header, queries, then ground-truth items.
pub fn episode_lines(episode: &Episode) -> Vec<String> {
    let header = Header {
        id: episode.id.clone(),
        fps_num: episode.timeline.fps.num,
        fps_den: episode.timeline.fps.den,
        num_frames: episode.timeline.num_frames,
        frame_tokens: episode.frame_tokens,
        high_res_tokens: episode.high_res_tokens,
        extra: episode.extra.clone(),
    };
    let mut lines = Vec::with_capacity(1 + episode.queries.len() + episode.gt_items.len());
    lines.push(to_tagged_line("episode", &header));
    lines.extend(episode.queries.iter().map(|q| to_tagged_line("query", q)));
    lines.extend(episode.gt_items.iter().map(|g| to_tagged_line("gt", g)));
    lines
}

pub fn write_episode_jsonl<W: Write>(mut writer: W, episode: &Episode) -> std::io::Result<()> {
    for line in episode_lines(episode) {
        writeln!(writer, "{line}")?;
    }
    Ok(())
}

pub fn write_episodes_jsonl<W: Write>(mut writer: W, episodes: &[Episode]) -> std::io::Result<()> {
    for ep in episodes {
        write_episode_jsonl(&mut writer, ep)?;
    }
    Ok(())
}

pub fn read_predictions_jsonl<R: BufRead>(reader: R) -> Result<Vec<Prediction>, JsonlError> {
    let mut out = Vec::new();
    for item in nonblank_lines(reader) {
        let (line_no, text) = item?;
        let (kind, obj) = split_kind(line_no, &text)?;
        if kind != "pred" {
            return Err(JsonlError::Schema {
                line: line_no,
                message: format!("expected kind \"pred\", found {kind:?}"),
            });
        }
        out.push(decode(line_no, obj)?);
    }
    Ok(out)
}

pub fn prediction_line(p: &Prediction) -> String {
    to_tagged_line("pred", p)
}

pub fn write_predictions_jsonl<W: Write>(mut writer: W, predictions: &[Prediction]) -> std::io::Result<()> {
    for p in predictions {
        writeln!(writer, "{}", prediction_line(p))?;
    }
    Ok(())
}
