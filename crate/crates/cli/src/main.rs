//! `estp`: score, simulate, supervise, generate and report.

mod error;
mod output;

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{ArgGroup, Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde_json::{json, Value};

use estp_core::datagen::{self, Caption, GenClientSpec, SynthParams};
use estp_core::episode::{validate_predictions, Episode, Fps, Frame, Prediction, Timeline};
use estp_core::jsonl;
use estp_core::matcher::{match_predictions, DuplicatePolicy, MatchConfig, MatchStrategy};
use estp_core::report;
use estp_core::runtime::{
    self, measure_aps, MonotonicClock, PolicySpec, Script, SimConfig, TraceStats, TraceSummary,
};
use estp_core::scoring::{aggregate, AnswerScorerSpec, ScoreReport, Scorer, TimeScoreSpec, DEFAULT_JUDGE_TIMEOUT_MS};
use estp_core::supervision::{
    eval_loss, read_signals_jsonl, stage0_targets, stage1_targets, stage2_targets, target_line, LossReport,
    PolicySignal, SupervisionTarget, UncertainSpec, DEFAULT_W_MIN,
};
use estp_core::validate_episode;

use error::CliError;
use output::{open, read_json, with_meta, write_atomic, write_json_doc, write_out};

/// Environment variable naming the default judge endpoint.
const JUDGE_URL_ENV: &str = "ESTP_JUDGE_URL";

#[derive(Debug, Parser)]
#[command(name = "estp", version, about = "Proactive streaming QA evaluation toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Match predictions to ground truth and write a score report.
    Score(ScoreArgs),
    /// Run a decision policy over episodes with KV-cache accounting.
    Simulate(SimulateArgs),
    /// Emit per-frame supervision targets and, optionally, their losses.
    Supervise(SuperviseArgs),
    /// Generate episodes from synthetic parameters or captions.
    Gen(GenArgs),
    /// Turn score reports into tables and plot series.
    Report(ReportArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum MatcherArg {
    Greedy,
    Optimal,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum DuplicatesArg {
    Fp,
    Ignore,
}

#[derive(Debug, Args)]
struct ScoreArgs {
    /// Episodes JSONL (one or more episodes).
    #[arg(long)]
    episodes: PathBuf,
    /// Predictions JSONL.
    #[arg(long)]
    predictions: PathBuf,
    #[arg(long, value_enum, default_value = "greedy")]
    matcher: MatcherArg,
    /// Whether extra predictions on an answered item count as false positives.
    #[arg(long, value_enum, default_value = "fp")]
    duplicates: DuplicatesArg,
    /// exact | token-f1 | judge | judge:URL (bare `judge` reads ESTP_JUDGE_URL).
    #[arg(long, default_value = "exact")]
    answer: String,
    #[arg(long, default_value_t = DEFAULT_JUDGE_TIMEOUT_MS)]
    judge_timeout_ms: u64,
    /// Maximum concurrent judge requests.
    #[arg(long, default_value_t = estp_core::scoring::DEFAULT_JUDGE_IN_FLIGHT)]
    judge_in_flight: usize,
    /// linear | linear:FLOOR | constant.
    #[arg(long, default_value = "linear")]
    time: String,
    /// Label carried into the report (used by report --pr and --aps).
    #[arg(long)]
    label: Option<String>,
    /// Output path; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads for per-episode scoring (0 = all cores).
    #[arg(long, default_value_t = 0)]
    jobs: usize,
    /// Omit the generation timestamp block.
    #[arg(long)]
    no_meta: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum OnOff {
    On,
    Off,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    #[arg(long)]
    episodes: PathBuf,
    /// threshold:T | threshold:T:LO,HI | oracle | silence | script:PATH.
    #[arg(long)]
    policy: String,
    /// Per-frame policy signals JSONL (required by threshold policies).
    #[arg(long)]
    signals: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "on")]
    compress: OnOff,
    /// Cost of one compression token.
    #[arg(long, default_value_t = 1)]
    k_ct: u64,
    /// Tokens appended per response.
    #[arg(long, default_value_t = runtime::DEFAULT_RESPONSE_TOKENS)]
    response_tokens: u64,
    /// Prediction text for policies that do not supply their own.
    #[arg(long, default_value = runtime::DEFAULT_RESPONSE_TEXT)]
    response_text: String,
    /// Time N repeated runs per episode and record the median decision rate.
    #[arg(long, value_name = "N")]
    measure_aps: Option<usize>,
    /// Writes PREFIX.predictions.jsonl, PREFIX.trace.jsonl and PREFIX.summary.json.
    #[arg(long)]
    out_prefix: PathBuf,
    #[arg(long, default_value_t = 0)]
    jobs: usize,
    #[arg(long)]
    no_meta: bool,
}

#[derive(Debug, Args)]
struct SuperviseArgs {
    #[arg(long)]
    episodes: PathBuf,
    #[arg(long, value_parser = clap::value_parser!(u8).range(0..=2))]
    stage: u8,
    #[arg(long, default_value_t = DEFAULT_W_MIN)]
    w_min: f64,
    /// Stage 2 uncertainty band on p_respond, as LO,HI.
    #[arg(long, conflicts_with = "uncertain")]
    band: Option<String>,
    /// Stage 2 uncertain frames, as a comma-separated list.
    #[arg(long)]
    uncertain: Option<String>,
    /// Per-frame policy signals JSONL.
    #[arg(long)]
    signals: Option<PathBuf>,
    /// Weight of the language-modelling loss.
    #[arg(long, default_value_t = 1.0)]
    omega: f64,
    /// Write a loss report evaluated against --signals.
    #[arg(long, requires = "signals")]
    loss_out: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    no_meta: bool,
}

#[derive(Debug, Args)]
#[command(group(ArgGroup::new("source").required(true).args(["synth", "pipeline"])))]
struct GenArgs {
    /// Synthetic episode parameters (JSON).
    #[arg(long)]
    synth: Option<PathBuf>,
    /// Caption JSONL to run through the QA generation pipeline.
    #[arg(long, requires = "client")]
    pipeline: Option<PathBuf>,
    /// Generation endpoint URL, or `mock`.
    #[arg(long)]
    client: Option<String>,
    #[arg(long, default_value_t = 30_000)]
    client_timeout_ms: u64,
    #[arg(long, default_value_t = 2)]
    client_retries: u32,
    /// Overrides the seed in the synthetic parameters.
    #[arg(long)]
    seed: Option<u64>,
    /// Episode id for pipeline output (synthetic episodes take it from the parameters).
    #[arg(long, default_value = "gen")]
    episode_id: String,
    /// Frame rate of the caption timeline, as NUM/DEN.
    #[arg(long, default_value = "2/1")]
    fps: String,
    /// Timeline length for pipeline output; defaults to one past the last caption.
    #[arg(long)]
    num_frames: Option<u64>,
    #[arg(long, default_value_t = 10)]
    frame_tokens: u64,
    #[arg(long, default_value_t = 40)]
    high_res_tokens: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Debug, Args)]
#[command(group(ArgGroup::new("kind").required(true).args(["table", "pr", "aps"])))]
struct ReportArgs {
    /// Score report JSON files.
    #[arg(long = "in", num_args = 0..)]
    inputs: Vec<PathBuf>,
    /// Per-task table micro-averaged over all inputs.
    #[arg(long)]
    table: bool,
    /// Recall/precision series, one point per input.
    #[arg(long)]
    pr: bool,
    /// APS versus ESTP-F1 series; needs one --summaries file per input.
    #[arg(long, requires = "summaries")]
    aps: bool,
    /// Simulation summary files, paired with --in by position.
    #[arg(long, num_args = 1..)]
    summaries: Vec<PathBuf>,
    #[arg(long, value_enum, default_value = "csv")]
    format: Format,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    no_meta: bool,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(error::EXIT_USAGE as u8),
            };
        }
    };
    let result = match cli.command {
        Command::Score(a) => score(a),
        Command::Simulate(a) => simulate(a),
        Command::Supervise(a) => supervise(a),
        Command::Gen(a) => gen(a),
        Command::Report(a) => report_cmd(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code as u8)
        }
    }
}

fn pool(jobs: usize) -> Result<rayon::ThreadPool, CliError> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| CliError::usage(e.to_string()))
}

/// Reads and validates every episode; prints all violations before failing.
fn load_episodes(path: &Path) -> Result<Vec<Episode>, CliError> {
    let episodes = jsonl::read_episodes_jsonl(open(path)?)?;
    let mut bad = 0;
    for ep in &episodes {
        for v in validate_episode(ep) {
            eprintln!("episode {}: {v}", ep.id);
            bad += 1;
        }
    }
    let mut owner: HashMap<&str, &str> = HashMap::new();
    for ep in &episodes {
        for q in &ep.queries {
            if let Some(other) = owner.insert(&q.id, &ep.id) {
                if other != ep.id {
                    eprintln!("query {} appears in episodes {other} and {}", q.id, ep.id);
                    bad += 1;
                }
            }
        }
    }
    if bad > 0 {
        return Err(CliError::validation(format!("{bad} validation violation(s) in {}", path.display())));
    }
    Ok(episodes)
}

fn parse_answer(spec: &str, timeout_ms: u64) -> Result<AnswerScorerSpec, CliError> {
    let parsed = match spec {
        "exact" => AnswerScorerSpec::exact(),
        "token-f1" => AnswerScorerSpec::token_f1(),
        "judge" => match std::env::var(JUDGE_URL_ENV) {
            Ok(url) if !url.is_empty() => AnswerScorerSpec::judge(url, timeout_ms),
            _ => return Err(CliError::usage(format!("--answer judge needs {JUDGE_URL_ENV} or judge:URL"))),
        },
        other => match other.strip_prefix("judge:") {
            Some(url) => AnswerScorerSpec::judge(url, timeout_ms),
            None => return Err(CliError::usage(format!("unknown answer scorer {other:?}"))),
        },
    };
    parsed.validate()?;
    Ok(parsed)
}

fn parse_time(spec: &str) -> Result<TimeScoreSpec<f64>, CliError> {
    match spec {
        "constant" => Ok(TimeScoreSpec::constant()),
        "linear" => Ok(TimeScoreSpec::default()),
        other => {
            let floor = other
                .strip_prefix("linear:")
                .and_then(|f| f.parse::<f64>().ok())
                .ok_or_else(|| CliError::usage(format!("unknown time spec {other:?}")))?;
            Ok(TimeScoreSpec::linear(floor)?)
        }
    }
}

/// Splits predictions by the episode that owns their query.
fn route_predictions(episodes: &[Episode], preds: Vec<Prediction>) -> Result<Vec<Vec<Prediction>>, CliError> {
    let owner: HashMap<&str, usize> = episodes
        .iter()
        .enumerate()
        .flat_map(|(i, ep)| ep.queries.iter().map(move |q| (q.id.as_str(), i)))
        .collect();
    let mut routed = vec![Vec::new(); episodes.len()];
    let mut unknown = 0;
    for p in preds {
        match owner.get(p.query_id.as_str()) {
            Some(&i) => routed[i].push(p),
            None => {
                eprintln!("prediction {}: unknown query {}", p.id, p.query_id);
                unknown += 1;
            }
        }
    }
    let mut bad = unknown;
    for (ep, ps) in episodes.iter().zip(&routed) {
        for v in validate_predictions(ep, ps) {
            eprintln!("episode {}: {v}", ep.id);
            bad += 1;
        }
    }
    if bad > 0 {
        return Err(CliError::validation(format!("{bad} invalid prediction(s)")));
    }
    Ok(routed)
}

fn score(a: ScoreArgs) -> Result<(), CliError> {
    let answer = parse_answer(&a.answer, a.judge_timeout_ms)?;
    let time = parse_time(&a.time)?;
    let config = MatchConfig {
        strategy: match a.matcher {
            MatcherArg::Greedy => MatchStrategy::GreedyEarliest,
            MatcherArg::Optimal => MatchStrategy::OptimalAssignment,
        },
        duplicate_policy: match a.duplicates {
            DuplicatesArg::Fp => DuplicatePolicy::DuplicatesAreFP,
            DuplicatesArg::Ignore => DuplicatePolicy::IgnoreDuplicates,
        },
    };
    let episodes = load_episodes(&a.episodes)?;
    let preds = jsonl::read_predictions_jsonl(open(&a.predictions)?)?;
    let routed = route_predictions(&episodes, preds)?;
    let scorer = Scorer::new(answer, time)?.with_in_flight(a.judge_in_flight);

    let reports: Vec<ScoreReport<f64>> = pool(a.jobs)?.install(|| {
        episodes
            .par_iter()
            .zip(routed.par_iter())
            .map(|(ep, ps)| {
                let m = match_predictions(ep, ps, config, Some(&scorer))?;
                Ok(aggregate(ep, ps, &m, &scorer)?)
            })
            .collect::<Result<Vec<_>, CliError>>()
    })?;
    let mut pooled = ScoreReport::pool(&reports)?
        .ok_or_else(|| CliError::validation(format!("{} holds no episodes", a.episodes.display())))?;
    pooled.label = a.label;
    check_report(&pooled)?;
    let doc = serde_json::to_value(&pooled).map_err(|e| CliError::invariant(e.to_string()))?;
    let doc = with_meta(doc, a.no_meta);
    write_out(a.out.as_deref(), |w| write_json_doc(w, &doc))
}

/// Cross-checks the identities every report must satisfy.
fn check_report(r: &ScoreReport<f64>) -> Result<(), CliError> {
    let t = &r.totals;
    let pr = t.precision + t.recall;
    let defined = t.sum_s > 0.0 && pr > 0.0;
    if defined && (2.0 * t.precision * t.recall / pr - t.estp_f1).abs() > 1e-9 {
        return Err(CliError::invariant(format!(
            "F1 {} disagrees with precision {} and recall {}",
            t.estp_f1, t.precision, t.recall
        )));
    }
    if !(0.0..=1.0).contains(&t.estp_f1) {
        return Err(CliError::invariant(format!("F1 {} outside [0, 1]", t.estp_f1)));
    }
    Ok(())
}

fn parse_pair(s: &str, what: &str) -> Result<(f64, f64), CliError> {
    let bad = || CliError::usage(format!("{what} must be LO,HI, got {s:?}"));
    let (lo, hi) = s.split_once(',').ok_or_else(bad)?;
    Ok((lo.trim().parse().map_err(|_| bad())?, hi.trim().parse().map_err(|_| bad())?))
}

fn parse_policy(spec: &str) -> Result<PolicySpec<f64>, CliError> {
    match spec {
        "oracle" => return Ok(PolicySpec::Oracle),
        "silence" => return Ok(PolicySpec::Scripted(Script::default())),
        _ => {}
    }
    if let Some(path) = spec.strip_prefix("script:") {
        return Ok(PolicySpec::Scripted(Script::read_jsonl(open(Path::new(path))?)?));
    }
    if let Some(rest) = spec.strip_prefix("threshold:") {
        let (t, band) = match rest.split_once(':') {
            Some((t, band)) => (t, Some(parse_pair(band, "ask band")?)),
            None => (rest, None),
        };
        let threshold: f64 = t
            .parse()
            .map_err(|_| CliError::usage(format!("bad threshold {t:?}")))?;
        if !(0.0..=1.0).contains(&threshold) {
            return Err(CliError::usage("threshold must lie in [0, 1]"));
        }
        if let Some((lo, hi)) = band {
            if !(0.0 <= lo && lo <= hi && hi <= 1.0) {
                return Err(CliError::usage("ask band must satisfy 0 <= LO <= HI <= 1"));
            }
        }
        return Ok(PolicySpec::Threshold {
            threshold,
            ask_band: band,
        });
    }
    Err(CliError::usage(format!("unknown policy {spec:?}")))
}

fn load_signals(path: Option<&Path>) -> Result<BTreeMap<String, PolicySignal<f64>>, CliError> {
    match path {
        Some(p) => Ok(read_signals_jsonl(open(p)?)?),
        None => Ok(BTreeMap::new()),
    }
}

/// Signals keyed by this episode's id, else the unkeyed set.
fn signals_for<'a>(all: &'a BTreeMap<String, PolicySignal<f64>>, ep: &Episode) -> Option<&'a PolicySignal<f64>> {
    all.get(&ep.id).or_else(|| all.get(""))
}

struct EpisodeRun {
    predictions: Vec<Prediction>,
    trace: Vec<u8>,
    stats: TraceStats,
    summary: TraceSummary,
    video_seconds: f64,
}

fn video_seconds(ep: &Episode) -> f64 {
    let d = ep.timeline.duration();
    *d.numer() as f64 / *d.denom() as f64
}

fn total_summary(episodes: &[Episode], runs: &[EpisodeRun]) -> TraceSummary {
    let mut stats = TraceStats::default();
    let mut seconds = 0.0;
    let mut timed = 0.0;
    let mut all_timed = true;
    for r in runs {
        stats.decisions += r.stats.decisions;
        stats.responses += r.stats.responses;
        stats.high_res_requests += r.stats.high_res_requests;
        stats.sum_current += r.stats.sum_current;
        stats.sum_uncompressed += r.stats.sum_uncompressed;
        stats.peak_tokens = stats.peak_tokens.max(r.stats.peak_tokens);
        seconds += r.video_seconds;
        match r.summary.aps {
            Some(aps) if aps > 0.0 => timed += r.stats.decisions as f64 / aps,
            Some(_) => {}
            None => all_timed = false,
        }
    }
    let n = stats.decisions.max(1) as f64;
    TraceSummary {
        episode: episodes.iter().map(|e| e.id.as_str()).collect::<Vec<_>>().join("+"),
        decisions: stats.decisions,
        responses: stats.responses,
        high_res_requests: stats.high_res_requests,
        peak_tokens: stats.peak_tokens,
        mean_current_tokens: stats.sum_current as f64 / n,
        mean_uncompressed_tokens: stats.sum_uncompressed as f64 / n,
        compression_ratio: stats.compression_ratio().ok(),
        decisions_per_video_second: if seconds > 0.0 { stats.decisions as f64 / seconds } else { 0.0 },
        aps: match (all_timed, timed > 0.0) {
            (true, true) => Some(stats.decisions as f64 / timed),
            (true, false) => Some(0.0),
            _ => None,
        },
    }
}

fn simulate(a: SimulateArgs) -> Result<(), CliError> {
    let episodes = load_episodes(&a.episodes)?;
    let policy = parse_policy(&a.policy)?;
    let signals = load_signals(a.signals.as_deref())?;
    let config = SimConfig {
        compression_on: a.compress == OnOff::On,
        k_ct: a.k_ct,
        response_tokens: a.response_tokens,
        response_text: a.response_text.clone(),
    };
    if config.k_ct == 0 {
        return Err(CliError::usage("--k-ct must be positive"));
    }
    let runs: Vec<EpisodeRun> = pool(a.jobs)?.install(|| {
        episodes
            .par_iter()
            .map(|ep| {
                let sig = signals_for(&signals, ep);
                let out = runtime::simulate(ep, &policy, sig, config.clone())?;
                out.ledger
                    .audit()
                    .map_err(|m| CliError::invariant(format!("episode {}: ledger audit failed: {m}", ep.id)))?;
                let mut trace = Vec::new();
                for r in &out.trace.records {
                    runtime::write_trace_record(&mut trace, &ep.id, r).map_err(|e| CliError::usage(e.to_string()))?;
                }
                let mut summary = TraceSummary::new(ep, &out.trace.stats);
                if let Some(trials) = a.measure_aps {
                    let m = measure_aps(ep, &policy, sig, &config, &MonotonicClock::new(), trials)?;
                    summary.aps = Some(m.aps);
                }
                Ok(EpisodeRun {
                    predictions: out.predictions,
                    trace,
                    stats: out.trace.stats,
                    summary,
                    video_seconds: video_seconds(ep),
                })
            })
            .collect::<Result<Vec<_>, CliError>>()
    })?;

    let prefix = a.out_prefix.as_os_str().to_string_lossy().into_owned();
    let path = |suffix: &str| PathBuf::from(format!("{prefix}.{suffix}"));
    write_atomic(&path("predictions.jsonl"), |w| {
        for r in &runs {
            jsonl::write_predictions_jsonl(&mut *w, &r.predictions)?;
        }
        Ok(())
    })?;
    write_atomic(&path("trace.jsonl"), |w| {
        for r in &runs {
            w.write_all(&r.trace)?;
        }
        Ok(())
    })?;
    let doc = json!({
        "policy": a.policy,
        "sim_config": config,
        "runs": runs.iter().map(|r| &r.summary).collect::<Vec<_>>(),
        "total": total_summary(&episodes, &runs),
    });
    let doc = with_meta(doc, a.no_meta);
    write_atomic(&path("summary.json"), |w| write_json_doc(w, &doc))
}

fn parse_frames(s: &str) -> Result<std::collections::BTreeSet<Frame>, CliError> {
    s.split(',')
        .filter(|t| !t.trim().is_empty())
        .map(|t| {
            t.trim()
                .parse::<Frame>()
                .map_err(|_| CliError::usage(format!("bad frame {t:?} in --uncertain")))
        })
        .collect()
}

fn supervise(a: SuperviseArgs) -> Result<(), CliError> {
    let episodes = load_episodes(&a.episodes)?;
    let signals = load_signals(a.signals.as_deref())?;
    let uncertain = match (&a.uncertain, &a.band) {
        (Some(frames), _) => UncertainSpec::ExplicitSet(parse_frames(frames)?),
        (None, Some(band)) => {
            let (lo, hi) = parse_pair(band, "--band")?;
            UncertainSpec::band(lo, hi)?
        }
        (None, None) => UncertainSpec::default_band(),
    };
    let mut all: Vec<(&Episode, Vec<SupervisionTarget<f64>>)> = Vec::with_capacity(episodes.len());
    for ep in &episodes {
        let targets = match a.stage {
            0 => stage0_targets(ep),
            1 => stage1_targets(ep, a.w_min)?,
            _ => stage2_targets(ep, &uncertain, signals_for(&signals, ep), a.w_min)?,
        };
        all.push((ep, targets));
    }
    write_out(a.out.as_deref(), |w| {
        for (ep, targets) in &all {
            for t in targets {
                writeln!(w, "{}", target_line(Some(&ep.id), t))?;
            }
        }
        Ok(())
    })?;
    if let Some(loss_path) = &a.loss_out {
        let mut per_episode: BTreeMap<&str, LossReport<f64>> = BTreeMap::new();
        let mut total = 0.0;
        let mut non_finite = false;
        for (ep, targets) in &all {
            let sig = signals_for(&signals, ep)
                .ok_or_else(|| CliError::validation(format!("no signals for episode {}", ep.id)))?;
            let r = eval_loss(targets, sig, a.omega)?;
            total += r.total;
            non_finite |= r.non_finite;
            per_episode.insert(&ep.id, r);
        }
        let doc = json!({
            "stage": a.stage,
            "w_min": a.w_min,
            "omega": a.omega,
            "total": total,
            "non_finite": non_finite,
            "episodes": per_episode,
        });
        let doc = with_meta(doc, a.no_meta);
        write_atomic(loss_path, |w| write_json_doc(w, &doc))?;
    }
    Ok(())
}

fn parse_fps(s: &str) -> Result<Fps, CliError> {
    let bad = || CliError::usage(format!("--fps must be NUM/DEN with both >= 1, got {s:?}"));
    let (n, d) = s.split_once('/').unwrap_or((s, "1"));
    let fps = Fps::new(n.trim().parse().map_err(|_| bad())?, d.trim().parse().map_err(|_| bad())?);
    if !fps.is_valid() {
        return Err(bad());
    }
    Ok(fps)
}

fn gen(a: GenArgs) -> Result<(), CliError> {
    let episode = if let Some(params_path) = &a.synth {
        let mut params: SynthParams = read_json(params_path)?;
        if let Some(seed) = a.seed {
            params.seed = seed;
        }
        datagen::synth_episode(&params)?
    } else {
        let captions_path = a.pipeline.as_ref().expect("clap enforces a source");
        let captions: Vec<Caption> = datagen::read_captions_jsonl(open(captions_path)?)?;
        let num_frames = a
            .num_frames
            .unwrap_or_else(|| captions.iter().map(|c| c.span.end + 1).max().unwrap_or(0));
        let timeline = Timeline::new(parse_fps(&a.fps)?, num_frames);
        let mut spec = GenClientSpec::new(a.client.clone().expect("clap enforces --client"));
        spec.timeout_ms = a.client_timeout_ms;
        spec.retries = a.client_retries;
        let client = spec.build()?;
        datagen::run_pipeline(
            &a.episode_id,
            timeline,
            a.frame_tokens,
            a.high_res_tokens,
            &captions,
            client.as_ref(),
        )?
    };
    write_out(a.out.as_deref(), |w| jsonl::write_episode_jsonl(w, &episode))
}

fn report_cmd(a: ReportArgs) -> Result<(), CliError> {
    let reports: Vec<ScoreReport<f64>> = a.inputs.iter().map(|p| read_json(p)).collect::<Result<_, _>>()?;
    let mut buf: Vec<u8> = Vec::new();
    let io = |e: std::io::Error| CliError::usage(e.to_string());
    if a.table {
        let table = report::table_by_task(&reports)?;
        match a.format {
            Format::Csv => table.write_csv(&mut buf).map_err(io)?,
            Format::Json => {
                let doc = with_meta(serde_json::to_value(&table).map_err(|e| CliError::invariant(e.to_string()))?, a.no_meta);
                write_json_doc(&mut buf, &doc).map_err(io)?;
            }
        }
    } else if a.pr {
        let points = report::pr_points(&reports)?;
        match a.format {
            Format::Csv => report::write_pr_csv(&mut buf, &points).map_err(io)?,
            Format::Json => write_json_doc(&mut buf, &json!({ "points": points })).map_err(io)?,
        }
    } else {
        if a.summaries.len() != reports.len() {
            return Err(CliError::usage(format!(
                "--aps pairs inputs with summaries: got {} reports and {} summaries",
                reports.len(),
                a.summaries.len()
            )));
        }
        let mut runs = Vec::with_capacity(reports.len());
        for (path, r) in a.summaries.iter().zip(reports) {
            let doc: Value = read_json(path)?;
            let total: TraceSummary = serde_json::from_value(doc.get("total").cloned().unwrap_or(Value::Null))
                .map_err(|e| CliError::validation(format!("{}: {e}", path.display())))?;
            runs.push((total, r));
        }
        let points = report::aps_points(&runs)?;
        match a.format {
            Format::Csv => report::write_aps_csv(&mut buf, &points).map_err(io)?,
            Format::Json => write_json_doc(&mut buf, &json!({ "points": points })).map_err(io)?,
        }
    }
    write_out(a.out.as_deref(), |w| w.write_all(&buf))
}
