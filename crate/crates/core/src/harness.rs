//! Experiment harness: executes a configured run into a logical trace,
//! attaches wall-clock timings via the network simulator, and reduces
//! timelines into CSV reports.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::baselines::{fedavg_round, make_naive_gossip_config, FedAvgState};
use crate::config::{Mode, RunConfig, Target, TargetMetric};
use crate::error::{CoreError, Result};
use crate::gossip::Federation;
use crate::ids::WorkerId;
use crate::netsim::{fedavg_timing, simulate, InFlow, LogicalTrace, NetConfig};
use crate::params::make_scheme;
use crate::rng::{self, Purpose};
use crate::tasks::{RoundModels, SgdTrainer, Task};
use crate::trace::{
    write_trace, JoinRecord, TraceHeader, TraceLine, TraceRecord, TRACE_VERSION,
};
use crate::ModelParams;

pub const TIMELINE_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, Default)]
pub struct ExecOptions {
    /// Record every gradient-evaluation point (feeds the empirical
    /// gradient-divergence meter; memory-heavy on long runs).
    pub collect_iterates: bool,
}

/// In-memory result of one executed run.
pub struct RunResult {
    pub header: TraceHeader,
    pub lines: Vec<TraceLine>,
    /// Per training round: the aggregation inputs and outputs, for the
    /// aggregation-divergence meter.
    pub round_models: Vec<RoundModels>,
    /// Gradient-evaluation points (when requested).
    pub visited: Vec<Vec<f64>>,
    pub task: Task,
    /// Set when the run aborted on numeric failure; the trace is then
    /// truncated at the last completed round.
    pub error: Option<String>,
}

fn model_checkpoint(m: &ModelParams) -> u64 {
    rng::fingerprint(m.values().iter().flat_map(|v| v.to_le_bytes()))
}

fn merge_flows(contributions: impl IntoIterator<Item = (WorkerId, u64)>) -> Vec<InFlow> {
    let mut by_src: BTreeMap<WorkerId, u64> = BTreeMap::new();
    for (src, bytes) in contributions {
        *by_src.entry(src).or_default() += bytes;
    }
    by_src
        .into_iter()
        .map(|(src, bytes)| InFlow { src, bytes })
        .collect()
}

/// Resolves the effective configuration: naive gossip becomes the S=1
/// special case, and a FedAvg run without an explicit server gets one
/// picked deterministically from the seed.
pub fn effective_config(config: &RunConfig) -> Result<RunConfig> {
    config.validate()?;
    let mut cfg = if config.mode == Mode::Gossip {
        make_naive_gossip_config(config)
    } else {
        config.clone()
    };
    if cfg.mode == Mode::Fedavg && cfg.server.is_none() {
        let mut r = rng::derive(cfg.seed, Purpose::ServerPick, rng::GLOBAL, 0);
        cfg.server = Some(WorkerId(r.gen_range(0..cfg.n)));
    }
    Ok(cfg)
}

/// Runs the configured experiment and produces its logical trace.
pub fn execute(config: &RunConfig, opts: &ExecOptions) -> Result<RunResult> {
    let cfg = effective_config(config)?;
    let task = cfg.build_task()?;
    let weights = cfg.worker_weights()?;

    let mut init_rng = rng::derive(cfg.seed, Purpose::InitModel, rng::GLOBAL, 0);
    let w0 = ModelParams::new(
        (0..cfg.dim)
            .map(|_| StandardNormal.sample(&mut init_rng))
            .collect(),
    )?;

    let header = TraceHeader {
        version: TRACE_VERSION,
        config: cfg.clone(),
    };
    let mut lines: Vec<TraceLine> = Vec::new();
    let record_models = cfg.record_models;

    // Round 0: the shared initial model, one record per initial worker.
    let init_metrics = task.evaluate(&w0)?;
    for i in 0..cfg.n {
        lines.push(TraceLine::Record(TraceRecord {
            round: 0,
            worker: WorkerId(i),
            loss: init_metrics.loss,
            accuracy: init_metrics.accuracy,
            suboptimality: init_metrics.suboptimality,
            providers: vec![],
            flow_bytes: vec![],
            warnings: vec![],
            rng_checkpoint: model_checkpoint(&w0),
            model: record_models.then(|| w0.values().to_vec()),
            model_post_update: None,
            dist_to_oracle: None,
        }));
    }

    let mut trainer = SgdTrainer::new(&task, cfg.sgd, cfg.seed);
    trainer.collect_iterates = opts.collect_iterates;
    let mut round_models: Vec<RoundModels> = Vec::new();
    let mut error: Option<String> = None;

    match cfg.mode {
        Mode::Combo | Mode::Gossip => {
            let scheme = make_scheme(cfg.dim, cfg.segments)?;
            let bpp = cfg.net.bytes_per_parameter;
            let members: Vec<(WorkerId, u64)> = (0..cfg.n)
                .map(|i| (WorkerId(i), weights[i as usize]))
                .collect();
            let mut fed =
                Federation::new(scheme.clone(), cfg.replicas, cfg.seed, w0.clone(), &members)?;
            let mut churn_idx = 0;

            for r in 1..=cfg.rounds {
                // An event at round k takes effect at the boundary after
                // round k, i.e. before round k+1 executes.
                while churn_idx < cfg.churn.len() && cfg.churn[churn_idx].round < r {
                    let ev = &cfg.churn[churn_idx];
                    if let Some(join) = fed.apply_churn(ev)? {
                        let weight = fed.workers[&join.worker].weight;
                        lines.push(TraceLine::Join(JoinRecord {
                            round: r,
                            worker: join.worker,
                            weight,
                            providers: join.providers,
                            model: record_models.then(|| join.model.values().to_vec()),
                        }));
                    }
                    churn_idx += 1;
                }

                let outcomes = match fed.step_round(&mut trainer) {
                    Ok(o) => o,
                    Err(CoreError::NumericFailure(msg)) => {
                        error = Some(format!("round {r}: {msg}"));
                        break;
                    }
                    Err(e) => return Err(e),
                };

                let inputs: Vec<(u64, ModelParams)> = outcomes
                    .iter()
                    .map(|o| (fed.workers[&o.worker].weight, o.post_update.clone()))
                    .collect();
                let refs: Vec<(u64, &ModelParams)> =
                    inputs.iter().map(|(w, m)| (*w, m)).collect();
                let oracle = crate::aggregation::global_average_oracle(&refs)?;

                for o in &outcomes {
                    let metrics = task.evaluate(&o.post_aggregation)?;
                    let flow_bytes = merge_flows(o.providers.iter().map(|p| {
                        (p.provider, scheme.segment_len(p.segment) as u64 * bpp)
                    }));
                    lines.push(TraceLine::Record(TraceRecord {
                        round: r,
                        worker: o.worker,
                        loss: metrics.loss,
                        accuracy: metrics.accuracy,
                        suboptimality: metrics.suboptimality,
                        providers: o.providers.clone(),
                        flow_bytes,
                        warnings: o.warnings.clone(),
                        rng_checkpoint: model_checkpoint(&o.post_aggregation),
                        model: record_models.then(|| o.post_aggregation.values().to_vec()),
                        model_post_update: record_models
                            .then(|| o.post_update.values().to_vec()),
                        dist_to_oracle: Some(o.post_aggregation.distance(&oracle)),
                    }));
                }
                round_models.push(RoundModels {
                    post_update: inputs,
                    post_aggregation: outcomes
                        .iter()
                        .map(|o| o.post_aggregation.clone())
                        .collect(),
                });
            }
        }
        Mode::Fedavg => {
            let server = cfg.server.expect("resolved above");
            let members: Vec<(WorkerId, u64)> = (0..cfg.n)
                .map(|i| (WorkerId(i), weights[i as usize]))
                .collect();
            let mut state = FedAvgState::new(server, w0.clone(), &members)?;
            let model_bytes = cfg.dim as u64 * cfg.net.bytes_per_parameter;

            for r in 1..=cfg.rounds {
                let post_update = match fedavg_round(&mut state, &mut trainer) {
                    Ok(p) => p,
                    Err(CoreError::NumericFailure(msg)) => {
                        error = Some(format!("round {r}: {msg}"));
                        break;
                    }
                    Err(e) => return Err(e),
                };
                let global = state.models[&server].clone();
                let metrics = task.evaluate(&global)?;
                for &(id, _) in &members {
                    let flow_bytes = if id == server {
                        merge_flows(
                            members
                                .iter()
                                .filter(|&&(p, _)| p != server)
                                .map(|&(p, _)| (p, model_bytes)),
                        )
                    } else {
                        vec![InFlow {
                            src: server,
                            bytes: model_bytes,
                        }]
                    };
                    lines.push(TraceLine::Record(TraceRecord {
                        round: r,
                        worker: id,
                        loss: metrics.loss,
                        accuracy: metrics.accuracy,
                        suboptimality: metrics.suboptimality,
                        providers: vec![],
                        flow_bytes,
                        warnings: vec![],
                        rng_checkpoint: model_checkpoint(&global),
                        model: record_models.then(|| global.values().to_vec()),
                        model_post_update: record_models
                            .then(|| post_update[&id].values().to_vec()),
                        dist_to_oracle: Some(0.0),
                    }));
                }
                round_models.push(RoundModels {
                    post_update: members
                        .iter()
                        .map(|&(id, w)| (w, post_update[&id].clone()))
                        .collect(),
                    post_aggregation: vec![global; members.len()],
                });
            }
        }
    }

    let visited = std::mem::take(&mut trainer.visited);
    Ok(RunResult {
        header,
        lines,
        round_models,
        visited,
        task,
        error,
    })
}

/// Executes a run and writes its trace file. A numeric failure still
/// produces the partial trace, and is reported as the error.
pub fn run_to_file(config: &RunConfig, out: impl AsRef<Path>) -> Result<RunResult> {
    let result = execute(config, &ExecOptions::default())?;
    write_trace(out, &result.header, &result.lines)?;
    if let Some(msg) = &result.error {
        return Err(CoreError::NumericFailure(format!(
            "{msg} (partial trace written)"
        )));
    }
    Ok(result)
}

/// One row of a timeline file: the timing of a (round, worker) cell
/// joined with its learning metrics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimedRecord {
    pub round: u64,
    pub worker: WorkerId,
    pub update_start: f64,
    pub update_end: f64,
    pub agg_time: f64,
    pub sync_time: f64,
    pub loss: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub accuracy: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub suboptimality: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimelineHeader {
    pub version: u32,
    /// The run's configuration with the network parameters that were
    /// actually used for timing.
    pub config: RunConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum TimelineLine {
    Header(TimelineHeader),
    Row(TimedRecord),
}

pub fn write_timeline(
    path: impl AsRef<Path>,
    header: &TimelineHeader,
    rows: &[TimedRecord],
) -> Result<()> {
    let file = std::fs::File::create(path)?;
    let mut out = BufWriter::new(file);
    serde_json::to_writer(&mut out, &TimelineLine::Header(header.clone()))?;
    out.write_all(b"\n")?;
    for row in rows {
        serde_json::to_writer(&mut out, &TimelineLine::Row(row.clone()))?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_timeline(path: impl AsRef<Path>) -> Result<(TimelineHeader, Vec<TimedRecord>)> {
    let file = std::fs::File::open(&path)?;
    let reader = BufReader::new(file);
    let mut header: Option<TimelineHeader> = None;
    let mut rows = Vec::new();
    for (idx, raw) in reader.lines().enumerate() {
        let raw = raw?;
        if raw.trim().is_empty() {
            continue;
        }
        let line: TimelineLine = serde_json::from_str(&raw)
            .map_err(|e| CoreError::Trace(format!("line {}: {e}", idx + 1)))?;
        match line {
            TimelineLine::Header(h) => {
                if header.is_some() {
                    return Err(CoreError::Trace(format!(
                        "line {}: duplicate header",
                        idx + 1
                    )));
                }
                if h.version != TIMELINE_VERSION {
                    return Err(CoreError::Trace(format!(
                        "unsupported timeline version {}, expected {TIMELINE_VERSION}",
                        h.version
                    )));
                }
                header = Some(h);
            }
            TimelineLine::Row(r) => {
                if header.is_none() {
                    return Err(CoreError::Trace(
                        "timeline does not start with a header".into(),
                    ));
                }
                rows.push(r);
            }
        }
    }
    let header = header.ok_or_else(|| CoreError::Trace("empty timeline file".into()))?;
    Ok((header, rows))
}

/// Attaches wall-clock timings to a logical trace: gossip modes run the
/// flow-level simulator over the recorded transfers; FedAvg runs the
/// upload/broadcast schedule. `net_override` replaces the network
/// parameters recorded in the trace.
pub fn attach_times(
    header: &TraceHeader,
    lines: &[TraceLine],
    net_override: Option<&NetConfig>,
) -> Result<(TimelineHeader, Vec<TimedRecord>)> {
    let mut cfg = header.config.clone();
    if let Some(net) = net_override {
        net.validate()?;
        cfg.net = net.clone();
    }

    let mut records: BTreeMap<(u64, WorkerId), &TraceRecord> = BTreeMap::new();
    let mut joins: Vec<&JoinRecord> = Vec::new();
    let mut max_round = 0;
    for line in lines {
        match line {
            TraceLine::Record(rec) => {
                max_round = max_round.max(rec.round);
                if records.insert((rec.round, rec.worker), rec).is_some() {
                    return Err(CoreError::Trace(format!(
                        "duplicate record for round {} worker {}",
                        rec.round, rec.worker
                    )));
                }
            }
            TraceLine::Join(j) => joins.push(j),
            TraceLine::Header(_) => {
                return Err(CoreError::Trace("unexpected extra header".into()))
            }
        }
    }

    let timeline = match cfg.mode {
        Mode::Combo | Mode::Gossip => {
            let scheme = make_scheme(cfg.dim, cfg.segments)?;
            let bpp = cfg.net.bytes_per_parameter;
            let mut rounds: Vec<BTreeMap<WorkerId, Vec<InFlow>>> =
                vec![BTreeMap::new(); max_round as usize];
            for (&(round, worker), rec) in &records {
                if round == 0 {
                    continue;
                }
                rounds[round as usize - 1].insert(worker, rec.flow_bytes.clone());
            }
            // A joiner's bootstrap pull travels alongside its first
            // round's regular transfers.
            for j in &joins {
                if j.round == 0 || j.round > max_round {
                    return Err(CoreError::Trace(format!(
                        "join record for {} has round {} outside the trace",
                        j.worker, j.round
                    )));
                }
                let slot = rounds[j.round as usize - 1].entry(j.worker).or_default();
                let extra = merge_flows(
                    slot.iter()
                        .map(|f| (f.src, f.bytes))
                        .chain(j.providers.iter().map(|p| {
                            (p.provider, scheme.segment_len(p.segment) as u64 * bpp)
                        })),
                );
                *slot = extra;
            }
            let trace = LogicalTrace {
                sgd_steps: cfg.sgd.tau,
                rounds,
            };
            simulate(&trace, &cfg.net)?
        }
        Mode::Fedavg => {
            let server = cfg.server.ok_or_else(|| {
                CoreError::Trace("fedavg trace is missing the resolved server".into())
            })?;
            let workers: Vec<WorkerId> = (0..cfg.n).map(WorkerId).collect();
            let model_bytes = cfg.dim as u64 * cfg.net.bytes_per_parameter;
            fedavg_timing(
                &workers,
                server,
                max_round as usize,
                cfg.sgd.tau,
                model_bytes,
                &cfg.net,
            )?
        }
    };

    let mut rows: Vec<TimedRecord> = Vec::new();
    for (&(round, worker), rec) in &records {
        if round == 0 {
            rows.push(TimedRecord {
                round: 0,
                worker,
                update_start: 0.0,
                update_end: 0.0,
                agg_time: 0.0,
                sync_time: 0.0,
                loss: rec.loss,
                accuracy: rec.accuracy,
                suboptimality: rec.suboptimality,
            });
        }
    }
    for row in &timeline.rows {
        let round = row.round + 1; // simulator rounds are 0-based
        let rec = records.get(&(round, row.worker)).ok_or_else(|| {
            CoreError::Trace(format!(
                "simulator produced round {round} worker {} with no trace record",
                row.worker
            ))
        })?;
        rows.push(TimedRecord {
            round,
            worker: row.worker,
            update_start: row.update_start,
            update_end: row.update_end,
            agg_time: row.agg_time,
            sync_time: row.sync_time,
            loss: rec.loss,
            accuracy: rec.accuracy,
            suboptimality: rec.suboptimality,
        });
    }
    rows.sort_by(|a, b| (a.round, a.worker).cmp(&(b.round, b.worker)));

    Ok((
        TimelineHeader {
            version: TIMELINE_VERSION,
            config: cfg,
        },
        rows,
    ))
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x}")).unwrap_or_default()
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let v: Vec<f64> = values.collect();
    if v.is_empty() {
        None
    } else {
        Some(v.iter().sum::<f64>() / v.len() as f64)
    }
}

struct LoadedTimeline {
    label: String,
    header: TimelineHeader,
    rows: Vec<TimedRecord>,
}

/// Per-round summary: completion time and mean metrics over workers.
struct RoundSummary {
    round: u64,
    time: f64,
    loss: f64,
    accuracy: Option<f64>,
    suboptimality: Option<f64>,
    mean_sync: f64,
}

fn summarize_rounds(rows: &[TimedRecord]) -> Vec<RoundSummary> {
    let mut rounds: Vec<u64> = rows.iter().map(|r| r.round).collect();
    rounds.sort_unstable();
    rounds.dedup();
    rounds
        .into_iter()
        .map(|round| {
            let of_round: Vec<&TimedRecord> =
                rows.iter().filter(|r| r.round == round).collect();
            RoundSummary {
                round,
                time: of_round.iter().map(|r| r.agg_time).fold(0.0, f64::max),
                loss: of_round.iter().map(|r| r.loss).sum::<f64>() / of_round.len() as f64,
                accuracy: mean(of_round.iter().filter_map(|r| r.accuracy)),
                suboptimality: mean(of_round.iter().filter_map(|r| r.suboptimality)),
                mean_sync: of_round.iter().map(|r| r.sync_time).sum::<f64>()
                    / of_round.len() as f64,
            }
        })
        .collect()
}

fn metric_of(s: &RoundSummary, metric: TargetMetric) -> Option<f64> {
    match metric {
        TargetMetric::Loss => Some(s.loss),
        TargetMetric::Accuracy => s.accuracy,
        TargetMetric::Suboptimality => s.suboptimality,
    }
}

/// Simulated seconds until the mean metric first reaches the target;
/// `None` when the run never gets there.
pub fn time_to_target(rows: &[TimedRecord], target: &Target) -> Option<f64> {
    for s in summarize_rounds(rows) {
        let value = metric_of(&s, target.metric)?;
        let reached = match target.metric {
            TargetMetric::Accuracy => value >= target.value,
            TargetMetric::Loss | TargetMetric::Suboptimality => value <= target.value,
        };
        if reached {
            return Some(s.time);
        }
    }
    None
}

pub struct ReportPaths {
    pub curves: PathBuf,
    pub time_to_target: PathBuf,
    pub sync_time_vs_s: PathBuf,
    pub time_to_target_vs_r: PathBuf,
}

/// Reduces timeline files into the four report CSVs. The target comes
/// from `target_override`, falling back to each run's configured one.
pub fn report(
    timelines: &[PathBuf],
    target_override: Option<Target>,
    out_dir: impl AsRef<Path>,
) -> Result<ReportPaths> {
    if timelines.is_empty() {
        return Err(CoreError::InvalidConfig("no timeline files given".into()));
    }
    let out_dir = out_dir.as_ref();
    std::fs::create_dir_all(out_dir)?;

    let mut loaded = Vec::new();
    for path in timelines {
        let (header, rows) = read_timeline(path)?;
        let label = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| path.to_string_lossy().into_owned());
        loaded.push(LoadedTimeline {
            label,
            header,
            rows,
        });
    }

    let mode_name = |m: Mode| match m {
        Mode::Combo => "combo",
        Mode::Gossip => "gossip",
        Mode::Fedavg => "fedavg",
    };

    let curves = out_dir.join("curves.csv");
    {
        let mut out = String::from(
            "label,mode,segments,replicas,n,seed,round,worker,time,loss,accuracy,suboptimality\n",
        );
        for t in &loaded {
            let c = &t.header.config;
            let prefix = format!(
                "{},{},{},{},{},{}",
                t.label,
                mode_name(c.mode),
                c.segments,
                c.replicas,
                c.n,
                c.seed
            );
            for r in &t.rows {
                out.push_str(&format!(
                    "{prefix},{},{},{},{},{},{}\n",
                    r.round,
                    r.worker,
                    r.agg_time,
                    r.loss,
                    fmt_opt(r.accuracy),
                    fmt_opt(r.suboptimality)
                ));
            }
            for s in summarize_rounds(&t.rows) {
                out.push_str(&format!(
                    "{prefix},{},mean,{},{},{},{}\n",
                    s.round,
                    s.time,
                    s.loss,
                    fmt_opt(s.accuracy),
                    fmt_opt(s.suboptimality)
                ));
            }
        }
        std::fs::write(&curves, out)?;
    }

    let ttt = out_dir.join("time_to_target.csv");
    let ttt_of = |t: &LoadedTimeline| -> Option<(Target, Option<f64>)> {
        let target = target_override.or(t.header.config.target)?;
        Some((target, time_to_target(&t.rows, &target)))
    };
    {
        let mut out = String::from("label,mode,segments,replicas,n,seed,metric,target,time\n");
        for t in &loaded {
            let c = &t.header.config;
            let Some((target, time)) = ttt_of(t) else {
                continue;
            };
            let metric = match target.metric {
                TargetMetric::Loss => "loss",
                TargetMetric::Accuracy => "accuracy",
                TargetMetric::Suboptimality => "suboptimality",
            };
            let time = time
                .map(|v| format!("{v}"))
                .unwrap_or_else(|| "unreached".into());
            out.push_str(&format!(
                "{},{},{},{},{},{},{metric},{},{time}\n",
                t.label,
                mode_name(c.mode),
                c.segments,
                c.replicas,
                c.n,
                c.seed,
                target.value
            ));
        }
        std::fs::write(&ttt, out)?;
    }

    let svs = out_dir.join("sync_time_vs_s.csv");
    {
        let mut out = String::from("label,segments,replicas,mean_sync_time\n");
        for t in &loaded {
            let c = &t.header.config;
            let sync = mean(
                summarize_rounds(&t.rows)
                    .iter()
                    .filter(|s| s.round >= 1)
                    .map(|s| s.mean_sync),
            )
            .unwrap_or(0.0);
            out.push_str(&format!(
                "{},{},{},{sync}\n",
                t.label, c.segments, c.replicas
            ));
        }
        std::fs::write(&svs, out)?;
    }

    let tvr = out_dir.join("time_to_target_vs_r.csv");
    {
        let mut out = String::from("label,replicas,time\n");
        for t in &loaded {
            let Some((_, time)) = ttt_of(t) else { continue };
            let time = time
                .map(|v| format!("{v}"))
                .unwrap_or_else(|| "unreached".into());
            out.push_str(&format!(
                "{},{},{time}\n",
                t.label, t.header.config.replicas
            ));
        }
        std::fs::write(&tvr, out)?;
    }

    Ok(ReportPaths {
        curves,
        time_to_target: ttt,
        sync_time_vs_s: svs,
        time_to_target_vs_r: tvr,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepKey {
    Segments,
    Replicas,
    Workers,
    Seed,
    Tau,
}

/// Parses a sweep spec like `S=1,2,5,10`. Keys: S (segments),
/// R (replicas), n (workers), seed, tau.
pub fn parse_sweep(spec: &str) -> Result<(SweepKey, Vec<u64>)> {
    let (key, values) = spec.split_once('=').ok_or_else(|| {
        CoreError::InvalidConfig(format!("sweep spec `{spec}` is not KEY=v1,v2,..."))
    })?;
    let key = match key.trim() {
        "S" => SweepKey::Segments,
        "R" => SweepKey::Replicas,
        "n" => SweepKey::Workers,
        "seed" => SweepKey::Seed,
        "tau" => SweepKey::Tau,
        other => {
            return Err(CoreError::InvalidConfig(format!(
                "unknown sweep key `{other}` (expected S, R, n, seed, or tau)"
            )))
        }
    };
    let mut parsed = Vec::new();
    for v in values.split(',') {
        let v = v.trim();
        let value: u64 = v.parse().map_err(|_| {
            CoreError::InvalidConfig(format!("sweep value `{v}` is not an integer"))
        })?;
        parsed.push(value);
    }
    if parsed.is_empty() {
        return Err(CoreError::InvalidConfig("empty sweep value list".into()));
    }
    Ok((key, parsed))
}

fn apply_sweep(base: &RunConfig, key: SweepKey, value: u64) -> Result<RunConfig> {
    let mut cfg = base.clone();
    match key {
        SweepKey::Segments => cfg.segments = value as usize,
        SweepKey::Replicas => cfg.replicas = value as usize,
        SweepKey::Workers => cfg.n = u32::try_from(value).map_err(|_| {
            CoreError::InvalidConfig(format!("n={value} out of range"))
        })?,
        SweepKey::Seed => cfg.seed = value,
        SweepKey::Tau => cfg.sgd.tau = value,
    }
    cfg.validate()?;
    Ok(cfg)
}

pub struct SweepOutput {
    pub traces: Vec<PathBuf>,
    pub timelines: Vec<PathBuf>,
    pub report: ReportPaths,
}

/// Runs the config once per sweep value, attaches timings, and reports
/// across the resulting timelines.
pub fn sweep(base: &RunConfig, spec: &str, out_dir: impl AsRef<Path>) -> Result<SweepOutput> {
    let out_dir = out_dir.as_ref();
    std::fs::create_dir_all(out_dir)?;
    let (key, values) = parse_sweep(spec)?;
    let key_name = match key {
        SweepKey::Segments => "S",
        SweepKey::Replicas => "R",
        SweepKey::Workers => "n",
        SweepKey::Seed => "seed",
        SweepKey::Tau => "tau",
    };

    let mut traces = Vec::new();
    let mut timelines = Vec::new();
    for &value in &values {
        let cfg = apply_sweep(base, key, value)?;
        let result = execute(&cfg, &ExecOptions::default())?;
        if let Some(msg) = &result.error {
            return Err(CoreError::NumericFailure(format!(
                "{key_name}={value}: {msg}"
            )));
        }
        let trace_path = out_dir.join(format!("{key_name}_{value}.trace.jsonl"));
        write_trace(&trace_path, &result.header, &result.lines)?;
        let (theader, rows) = attach_times(&result.header, &result.lines, None)?;
        let timeline_path = out_dir.join(format!("{key_name}_{value}.timeline.jsonl"));
        write_timeline(&timeline_path, &theader, &rows)?;
        traces.push(trace_path);
        timelines.push(timeline_path);
    }
    let report = report(&timelines, None, out_dir)?;
    Ok(SweepOutput {
        traces,
        timelines,
        report,
    })
}
