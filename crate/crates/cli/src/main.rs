use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use combo_core::config::{RunConfig, Target, TargetMetric};
use combo_core::harness::{attach_times, report, run_to_file, sweep, write_timeline};
use combo_core::netsim::NetConfig;
use combo_core::trace::read_trace;

/// Experiment harness: runs segmented-gossip / gossip / FedAvg training,
/// attaches simulated network timings, and reduces results to CSV.
#[derive(Parser)]
#[command(name = "combo", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Execute a run config and write its trace (JSONL).
    Run {
        /// Run configuration (JSON).
        config: PathBuf,
        /// Trace output path [default: <config stem>.trace.jsonl].
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// Attach wall-clock timings to a trace via the network simulator.
    AttachTimes {
        /// Trace file produced by `run`.
        trace: PathBuf,
        /// Network parameters (JSON); omit to reuse the trace's own.
        netconfig: Option<PathBuf>,
        /// Timeline output path [default: <trace stem>.timeline.jsonl].
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// Reduce timeline files into CSV reports.
    Report {
        /// Timeline files produced by `attach-times`.
        #[arg(required = true)]
        timelines: Vec<PathBuf>,
        /// Target metric value, overriding the configs' targets.
        #[arg(long)]
        target: Option<f64>,
        /// Metric the target applies to.
        #[arg(long, value_parser = parse_metric, default_value = "loss")]
        metric: TargetMetric,
        /// Output directory for the CSVs.
        #[arg(short, long, default_value = "report")]
        out_dir: PathBuf,
    },
    /// Run a config once per value of a swept parameter and report.
    Sweep {
        /// Base run configuration (JSON).
        config: PathBuf,
        /// Sweep spec, e.g. `S=1,2,5,10` (keys: S, R, n, seed, tau).
        #[arg(long)]
        vary: String,
        /// Output directory for traces, timelines, and CSVs.
        #[arg(short, long, default_value = "sweep")]
        out_dir: PathBuf,
    },
}

fn parse_metric(s: &str) -> std::result::Result<TargetMetric, String> {
    match s {
        "loss" => Ok(TargetMetric::Loss),
        "accuracy" => Ok(TargetMetric::Accuracy),
        "suboptimality" => Ok(TargetMetric::Suboptimality),
        other => Err(format!(
            "unknown metric `{other}` (expected loss, accuracy, or suboptimality)"
        )),
    }
}

fn with_suffix(path: &PathBuf, suffix: &str) -> PathBuf {
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "out".into());
    path.with_file_name(format!("{stem}.{suffix}"))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run { config, out } => {
            let cfg = RunConfig::from_file(&config)
                .with_context(|| format!("loading config {}", config.display()))?;
            let out = out.unwrap_or_else(|| with_suffix(&config, "trace.jsonl"));
            run_to_file(&cfg, &out).with_context(|| "executing run")?;
            eprintln!("wrote {}", out.display());
        }
        Command::AttachTimes {
            trace,
            netconfig,
            out,
        } => {
            let (header, lines) = read_trace(&trace)
                .with_context(|| format!("reading trace {}", trace.display()))?;
            let net: Option<NetConfig> = match netconfig {
                Some(path) => {
                    let text = std::fs::read_to_string(&path)
                        .with_context(|| format!("reading netconfig {}", path.display()))?;
                    let net: NetConfig = serde_json::from_str(&text)
                        .with_context(|| format!("parsing netconfig {}", path.display()))?;
                    Some(net)
                }
                None => None,
            };
            let (theader, rows) = attach_times(&header, &lines, net.as_ref())
                .with_context(|| "attaching timings")?;
            let out = out.unwrap_or_else(|| {
                let stem = trace
                    .file_stem()
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_else(|| "out".into());
                let stem = stem.strip_suffix(".trace").unwrap_or(&stem).to_owned();
                trace.with_file_name(format!("{stem}.timeline.jsonl"))
            });
            write_timeline(&out, &theader, &rows)?;
            eprintln!("wrote {}", out.display());
        }
        Command::Report {
            timelines,
            target,
            metric,
            out_dir,
        } => {
            let target = target.map(|value| Target { metric, value });
            let paths = report(&timelines, target, &out_dir)
                .with_context(|| "building report")?;
            for p in [
                &paths.curves,
                &paths.time_to_target,
                &paths.sync_time_vs_s,
                &paths.time_to_target_vs_r,
            ] {
                eprintln!("wrote {}", p.display());
            }
        }
        Command::Sweep {
            config,
            vary,
            out_dir,
        } => {
            let cfg = RunConfig::from_file(&config)
                .with_context(|| format!("loading config {}", config.display()))?;
            let out = sweep(&cfg, &vary, &out_dir).with_context(|| "running sweep")?;
            for p in out.timelines.iter().chain(out.traces.iter()) {
                eprintln!("wrote {}", p.display());
            }
            eprintln!("wrote {}", out.report.curves.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
