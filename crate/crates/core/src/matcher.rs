//! Assignment of predictions to ground-truth items.
//!
//! A prediction can only match a ground-truth item of its own query, and
//! only if its emit frame lies inside one of that item's intervals. Each
//! item and each prediction is used at most once.

use std::cmp::Ordering;
use std::collections::{BTreeSet, HashMap};
use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::episode::{Episode, GroundTruthItem, Interval, Prediction};

/// Largest per-query (and, for the brute-force oracle, per-episode)
/// problem the exhaustive optimiser accepts.
pub const MAX_EXHAUSTIVE: usize = 12;

/// Two objective totals closer than this are treated as equal.
pub const SCORE_TIE_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub enum MatchStrategy {
    #[default]
    GreedyEarliest,
    OptimalAssignment,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub enum DuplicatePolicy {
    #[default]
    DuplicatesAreFP,
    IgnoreDuplicates,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct MatchConfig {
    pub strategy: MatchStrategy,
    pub duplicate_policy: DuplicatePolicy,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatchPair {
    pub gt_id: String,
    pub pred_id: String,
    pub interval: Interval,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct MatchResult {
    pub config: MatchConfig,
    pub pairs: Vec<MatchPair>,
    pub false_positives: Vec<String>,
    pub false_negatives: Vec<String>,
    /// Duplicates dropped under [`DuplicatePolicy::IgnoreDuplicates`].
    #[serde(default)]
    pub ignored_duplicates: Vec<String>,
}

impl MatchResult {
    pub fn pair_for_gt(&self, gt_id: &str) -> Option<&MatchPair> {
        self.pairs.iter().find(|p| p.gt_id == gt_id)
    }

    /// `{"kind":"pair"|"fp"|"fn", ...}` lines.
    pub fn jsonl_lines(&self) -> Vec<String> {
        let mut out = Vec::new();
        for p in &self.pairs {
            out.push(
                serde_json::json!({"kind": "pair", "gt": p.gt_id, "pred": p.pred_id, "interval": p.interval})
                    .to_string(),
            );
        }
        for id in &self.false_positives {
            out.push(serde_json::json!({"kind": "fp", "pred": id}).to_string());
        }
        for id in &self.false_negatives {
            out.push(serde_json::json!({"kind": "fn", "gt": id}).to_string());
        }
        out
    }

    pub fn write_jsonl<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        for l in self.jsonl_lines() {
            writeln!(w, "{l}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum MatchError {
    #[error("prediction {pred_id} references unknown query {query_id}")]
    UnknownQuery { pred_id: String, query_id: String },
    #[error("optimal assignment requires a pair scorer")]
    MissingScorer,
    #[error("exhaustive search bound exceeded: {predictions} predictions and {gt_items} gt items (max {MAX_EXHAUSTIVE} each)")]
    Capacity { predictions: usize, gt_items: usize },
    #[error("scoring pair (gt {gt_id}, pred {pred_id}) failed: {message}")]
    Scorer {
        gt_id: String,
        pred_id: String,
        message: String,
    },
}

/// Credit for matching `pred` to `gt` inside `interval`, in `[0, 1]`.
pub trait PairScore {
    fn pair_score(&self, gt: &GroundTruthItem, pred: &Prediction, interval: Interval) -> Result<f64, String>;
}

impl<F> PairScore for F
where
    F: Fn(&GroundTruthItem, &Prediction, Interval) -> f64,
{
    fn pair_score(&self, gt: &GroundTruthItem, pred: &Prediction, interval: Interval) -> Result<f64, String> {
        Ok(self(gt, pred, interval))
    }
}

fn check_queries(episode: &Episode, predictions: &[Prediction]) -> Result<(), MatchError> {
    for p in predictions {
        if episode.query(&p.query_id).is_none() {
            return Err(MatchError::UnknownQuery {
                pred_id: p.id.clone(),
                query_id: p.query_id.clone(),
            });
        }
    }
    Ok(())
}

/// Splits unmatched predictions into false positives and ignored
/// duplicates, and lists unmatched gt items, all in input order.
fn finish(
    episode: &Episode,
    predictions: &[Prediction],
    config: MatchConfig,
    mut pairs: Vec<MatchPair>,
) -> MatchResult {
    let matched_gt: BTreeSet<&str> = pairs.iter().map(|p| p.gt_id.as_str()).collect();
    let matched_pred: BTreeSet<&str> = pairs.iter().map(|p| p.pred_id.as_str()).collect();
    let mut false_positives = Vec::new();
    let mut ignored_duplicates = Vec::new();
    for p in predictions.iter().filter(|p| !matched_pred.contains(p.id.as_str())) {
        let duplicate = episode.gt_items.iter().any(|g| {
            g.query_id == p.query_id
                && matched_gt.contains(g.id.as_str())
                && g.containing_interval(p.emit_frame).is_some()
        });
        if duplicate && config.duplicate_policy == DuplicatePolicy::IgnoreDuplicates {
            ignored_duplicates.push(p.id.clone());
        } else {
            false_positives.push(p.id.clone());
        }
    }
    let false_negatives = episode
        .gt_items
        .iter()
        .filter(|g| !matched_gt.contains(g.id.as_str()))
        .map(|g| g.id.clone())
        .collect();
    pairs.sort_by(|a, b| (&a.gt_id, &a.pred_id).cmp(&(&b.gt_id, &b.pred_id)));
    MatchResult {
        config,
        pairs,
        false_positives,
        false_negatives,
        ignored_duplicates,
    }
}

/// Matches predictions to ground truth. `scorer` is only consulted by
/// [`MatchStrategy::OptimalAssignment`].
pub fn match_predictions(
    episode: &Episode,
    predictions: &[Prediction],
    config: MatchConfig,
    scorer: Option<&dyn PairScore>,
) -> Result<MatchResult, MatchError> {
    check_queries(episode, predictions)?;
    let pairs = match config.strategy {
        MatchStrategy::GreedyEarliest => greedy_pairs(episode, predictions),
        MatchStrategy::OptimalAssignment => {
            let scorer = scorer.ok_or(MatchError::MissingScorer)?;
            optimal_pairs(episode, predictions, scorer)?
        }
    };
    Ok(finish(episode, predictions, config, pairs))
}

fn greedy_pairs(episode: &Episode, predictions: &[Prediction]) -> Vec<MatchPair> {
    let mut order: Vec<&Prediction> = predictions.iter().collect();
    order.sort_by(|a, b| a.emit_frame.cmp(&b.emit_frame).then_with(|| a.id.cmp(&b.id)));
    let by_query = episode.gt_by_query();
    let mut used: BTreeSet<&str> = BTreeSet::new();
    let mut pairs = Vec::new();
    for p in order {
        let Some(items) = by_query.get(p.query_id.as_str()) else {
            continue;
        };
        let best = items
            .iter()
            .filter(|g| !used.contains(g.id.as_str()))
            .filter_map(|g| g.containing_interval(p.emit_frame).map(|iv| (iv, *g)))
            .min_by(|(ia, ga), (ib, gb)| ia.start.cmp(&ib.start).then_with(|| ga.id.cmp(&gb.id)));
        if let Some((interval, g)) = best {
            used.insert(g.id.as_str());
            pairs.push(MatchPair {
                gt_id: g.id.clone(),
                pred_id: p.id.clone(),
                interval,
            });
        }
    }
    pairs
}

/// Objective of an assignment: total credit first, then number of pairs
/// (each extra pair removes one FP and one FN).
#[derive(Debug, Clone, Copy)]
struct Objective {
    score: f64,
    pairs: usize,
}

impl Objective {
    const NONE: Objective = Objective { score: 0.0, pairs: 0 };

    fn add(self, score: f64) -> Self {
        Objective {
            score: self.score + score,
            pairs: self.pairs + 1,
        }
    }

    fn cmp(&self, other: &Self) -> Ordering {
        if (self.score - other.score).abs() > SCORE_TIE_EPS {
            self.score.partial_cmp(&other.score).unwrap_or(Ordering::Equal)
        } else {
            self.pairs.cmp(&other.pairs)
        }
    }
}

struct Candidate {
    pred: usize,
    interval: Interval,
    score: f64,
}

fn score_pair(
    scorer: &dyn PairScore,
    g: &GroundTruthItem,
    p: &Prediction,
    iv: Interval,
) -> Result<f64, MatchError> {
    scorer.pair_score(g, p, iv).map_err(|message| MatchError::Scorer {
        gt_id: g.id.clone(),
        pred_id: p.id.clone(),
        message,
    })
}

/// Per-query exact optimisation. Items are taken in id order; a
/// memoised search over the set of still-free predictions gives the best
/// achievable objective, and the assignment is rebuilt forwards choosing,
/// among optimal options, the smallest prediction id (matching before
/// skipping), which yields the lexicographically smallest pair list.
fn optimal_pairs(
    episode: &Episode,
    predictions: &[Prediction],
    scorer: &dyn PairScore,
) -> Result<Vec<MatchPair>, MatchError> {
    let mut pairs = Vec::new();
    let by_query = episode.gt_by_query();
    let mut query_ids: Vec<&str> = by_query.keys().copied().collect();
    query_ids.sort_unstable();
    for qid in query_ids {
        let mut items = by_query[qid].clone();
        items.sort_by(|a, b| a.id.cmp(&b.id));
        let mut preds: Vec<&Prediction> = predictions.iter().filter(|p| p.query_id == qid).collect();
        preds.sort_by(|a, b| a.id.cmp(&b.id));
        if preds.is_empty() {
            continue;
        }
        if preds.len() > MAX_EXHAUSTIVE || items.len() > MAX_EXHAUSTIVE {
            return Err(MatchError::Capacity {
                predictions: preds.len(),
                gt_items: items.len(),
            });
        }
        let mut candidates: Vec<Vec<Candidate>> = Vec::with_capacity(items.len());
        for g in &items {
            let mut row = Vec::new();
            for (pi, p) in preds.iter().enumerate() {
                if let Some(iv) = g.containing_interval(p.emit_frame) {
                    let score = score_pair(scorer, g, p, iv)?;
                    row.push(Candidate {
                        pred: pi,
                        interval: iv,
                        score,
                    });
                }
            }
            candidates.push(row);
        }
        let mut memo: HashMap<(usize, u32), Objective> = HashMap::new();
        let mut free: u32 = (1u32 << preds.len()) - 1;
        for (gi, row) in candidates.iter().enumerate() {
            let skip = best_from(gi + 1, free, &candidates, &mut memo);
            let mut best: Option<(&Candidate, Objective)> = None;
            for c in row.iter().filter(|c| free & (1 << c.pred) != 0) {
                let with = best_from(gi + 1, free & !(1 << c.pred), &candidates, &mut memo).add(c.score);
                if best.map_or(true, |(_, b)| with.cmp(&b) == Ordering::Greater) {
                    best = Some((c, with));
                }
            }
            if let Some((c, obj)) = best {
                if obj.cmp(&skip) != Ordering::Less {
                    free &= !(1 << c.pred);
                    pairs.push(MatchPair {
                        gt_id: items[gi].id.clone(),
                        pred_id: preds[c.pred].id.clone(),
                        interval: c.interval,
                    });
                }
            }
        }
    }
    Ok(pairs)
}

fn best_from(
    gi: usize,
    free: u32,
    candidates: &[Vec<Candidate>],
    memo: &mut HashMap<(usize, u32), Objective>,
) -> Objective {
    if gi == candidates.len() || free == 0 {
        return Objective::NONE;
    }
    if let Some(o) = memo.get(&(gi, free)) {
        return *o;
    }
    let mut best = best_from(gi + 1, free, candidates, memo);
    for c in candidates[gi].iter().filter(|c| free & (1 << c.pred) != 0) {
        let with = best_from(gi + 1, free & !(1 << c.pred), candidates, memo).add(c.score);
        if with.cmp(&best) == Ordering::Greater {
            best = with;
        }
    }
    memo.insert((gi, free), best);
    best
}

/// Exhaustive reference matcher: enumerates every one-to-one assignment
/// across the whole episode and keeps the best one under the same
/// objective as [`MatchStrategy::OptimalAssignment`] (total credit, then
/// pair count, then lexicographically smallest sorted `(gt_id, pred_id)`
/// list). Duplicates count as false positives.
pub fn brute_force_match(
    episode: &Episode,
    predictions: &[Prediction],
    scorer: &dyn PairScore,
) -> Result<MatchResult, MatchError> {
    if predictions.len() > MAX_EXHAUSTIVE || episode.gt_items.len() > MAX_EXHAUSTIVE {
        return Err(MatchError::Capacity {
            predictions: predictions.len(),
            gt_items: episode.gt_items.len(),
        });
    }
    check_queries(episode, predictions)?;

    // feasible[g] = list of (pred index, interval, score)
    let mut feasible: Vec<Vec<(usize, Interval, f64)>> = Vec::new();
    for g in &episode.gt_items {
        let mut row = Vec::new();
        for (pi, p) in predictions.iter().enumerate() {
            if p.query_id != g.query_id {
                continue;
            }
            if let Some(iv) = g.intervals.iter().filter(|iv| iv.contains(p.emit_frame)).min().copied() {
                row.push((pi, iv, score_pair(scorer, g, p, iv)?));
            }
        }
        feasible.push(row);
    }

    struct Search<'a> {
        feasible: &'a [Vec<(usize, Interval, f64)>],
        episode: &'a Episode,
        predictions: &'a [Prediction],
        used: Vec<bool>,
        current: Vec<(usize, usize, Interval, f64)>,
        best: Option<(f64, usize, Vec<(String, String)>, Vec<(usize, usize, Interval)>)>,
    }

    impl Search<'_> {
        fn run(&mut self, gi: usize) {
            if gi == self.feasible.len() {
                self.consider();
                return;
            }
            self.run(gi + 1);
            for k in 0..self.feasible[gi].len() {
                let (pi, iv, s) = self.feasible[gi][k];
                if self.used[pi] {
                    continue;
                }
                self.used[pi] = true;
                self.current.push((gi, pi, iv, s));
                self.run(gi + 1);
                self.current.pop();
                self.used[pi] = false;
            }
        }

        fn consider(&mut self) {
            let total: f64 = self.current.iter().map(|c| c.3).sum();
            let n = self.current.len();
            let mut key: Vec<(String, String)> = self
                .current
                .iter()
                .map(|&(gi, pi, _, _)| {
                    (self.episode.gt_items[gi].id.clone(), self.predictions[pi].id.clone())
                })
                .collect();
            key.sort();
            let better = match &self.best {
                None => true,
                Some((bs, bn, bkey, _)) => {
                    if (total - bs).abs() > SCORE_TIE_EPS {
                        total > *bs
                    } else if n != *bn {
                        n > *bn
                    } else {
                        key < *bkey
                    }
                }
            };
            if better {
                let chosen = self.current.iter().map(|&(g, p, iv, _)| (g, p, iv)).collect();
                self.best = Some((total, n, key, chosen));
            }
        }
    }

    let mut search = Search {
        feasible: &feasible,
        episode,
        predictions,
        used: vec![false; predictions.len()],
        current: Vec::new(),
        best: None,
    };
    search.run(0);
    let chosen = search.best.map(|b| b.3).unwrap_or_default();
    let pairs = chosen
        .into_iter()
        .map(|(gi, pi, interval)| MatchPair {
            gt_id: episode.gt_items[gi].id.clone(),
            pred_id: predictions[pi].id.clone(),
            interval,
        })
        .collect();
    let config = MatchConfig {
        strategy: MatchStrategy::OptimalAssignment,
        duplicate_policy: DuplicatePolicy::DuplicatesAreFP,
    };
    Ok(finish(episode, predictions, config, pairs))
}
