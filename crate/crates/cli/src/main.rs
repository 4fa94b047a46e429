use std::collections::BTreeMap;
use std::io::Write;
use std::net::{SocketAddr, TcpListener};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand, ValueEnum};
use scenediag_core::analysis::{run_report, EdgeFilter, OutlierRule, ReportOptions, RunData};
use scenediag_core::config::ExperimentConfig;
use scenediag_core::dashboard::{serve_blocking, RunSource};
use scenediag_core::demo::write_demo;
use scenediag_core::experiment::Experiment;
use scenediag_core::orchestrator::{dry_run, run_experiment, run_worker, RunOptions, WorkerOptions};
use scenediag_core::protocol::serve_render_requests;

/// Exit code for runs that finished with errored items.
const EXIT_PARTIAL: u8 = 2;
/// Exit code for failures before any work: bad config, no workers,
/// unreachable orchestrator.
const EXIT_STARTUP: u8 = 3;

#[derive(Parser)]
#[command(name = "scenediag", version, about = "Diagnose vision-model failures by rendering controlled scene variations")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment described by a TOML config.
    Run {
        config: PathBuf,
        /// Spawn this many in-process workers.
        #[arg(long, default_value_t = 0)]
        local_workers: usize,
        /// Concurrent items per local worker.
        #[arg(long, default_value_t = 1)]
        slots: u32,
        /// Local workers answer instantly without rendering.
        #[arg(long)]
        dummy: bool,
        /// Print the number of proposals and exit.
        #[arg(long)]
        dry_run: bool,
        /// Orchestrator listen address (overrides config and SCENEDIAG_BIND).
        #[arg(long)]
        bind: Option<String>,
        /// Run directory (overrides config and SCENEDIAG_OUTPUT_DIR).
        #[arg(long)]
        output_dir: Option<PathBuf>,
    },
    /// Connect to an orchestrator and process items until it is done.
    Worker {
        #[arg(long)]
        connect: String,
        #[arg(long)]
        dummy: bool,
        #[arg(long, default_value_t = 1)]
        slots: u32,
        #[arg(long, default_value = "worker")]
        name: String,
        /// Render through an external renderer at this address.
        #[arg(long)]
        renderer: Option<String>,
    },
    /// Compute reports from a run directory.
    Analyze {
        run_dir: PathBuf,
        /// Report name, optionally `name=argument`; repeatable.
        #[arg(long = "report", required = true)]
        reports: Vec<String>,
        /// Bin edges for a numeric key, e.g. `camera.zoom=0.5,1,2`; repeatable.
        #[arg(long = "bins")]
        bins: Vec<String>,
        #[arg(long, value_enum, default_value_t = OutlierArg::Quartiles)]
        outlier_rule: OutlierArg,
        #[arg(long, value_enum, default_value_t = EdgeArg::ForwardDifference)]
        edge_filter: EdgeArg,
        /// Where to write report files; defaults to `<run-dir>/reports`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Serve the dashboard API over one run or a directory of runs.
    Serve {
        #[arg(long, conflicts_with = "data_dir", required_unless_present = "data_dir")]
        run_dir: Option<PathBuf>,
        #[arg(long)]
        data_dir: Option<PathBuf>,
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
    },
    /// Write the demo experiment into a directory and run it.
    Demo {
        #[arg(long, default_value = "scenediag-demo")]
        dir: PathBuf,
        #[arg(long, default_value_t = 2)]
        local_workers: usize,
    },
    /// Serve the built-in rasterizer, loaded with a config's assets, as an
    /// external renderer.
    RenderServer {
        config: PathBuf,
        #[arg(long, default_value = "127.0.0.1:9100")]
        bind: String,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum OutlierArg {
    Quartiles,
    Median,
}

#[derive(Clone, Copy, ValueEnum)]
enum EdgeArg {
    ForwardDifference,
    Sobel,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_STARTUP)
        }
    }
}

fn dispatch(cmd: Command) -> anyhow::Result<u8> {
    match cmd {
        Command::Run { config, local_workers, slots, dummy, dry_run, bind, output_dir } => {
            let mut cfg = ExperimentConfig::load(&config)?;
            if let Some(dir) = output_dir {
                cfg.output.dir = Some(dir);
            }
            run(cfg, RunOptions { local_workers, slots, dummy, bind, ..Default::default() }, dry_run)
        }
        Command::Worker { connect, dummy, slots, name, renderer } => {
            let opts = WorkerOptions { name, slots, dummy, renderer, ..Default::default() };
            match run_worker(&connect, opts) {
                Ok(report) => {
                    println!("processed {} items", report.processed);
                    Ok(0)
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    Ok(e.exit_code() as u8)
                }
            }
        }
        Command::Analyze { run_dir, reports, bins, outlier_rule, edge_filter, out } => {
            let opts = ReportOptions {
                bins: parse_bins(&bins)?,
                outlier_rule: match outlier_rule {
                    OutlierArg::Quartiles => OutlierRule::Quartiles,
                    OutlierArg::Median => OutlierRule::Median,
                },
                edge_filter: match edge_filter {
                    EdgeArg::ForwardDifference => EdgeFilter::ForwardDifference,
                    EdgeArg::Sobel => EdgeFilter::Sobel,
                },
            };
            analyze(&run_dir, &reports, &opts, out.as_deref())
        }
        Command::Serve { run_dir, data_dir, port, host } => {
            let source = match (run_dir, data_dir) {
                (Some(r), _) => RunSource::Run(r),
                (None, Some(d)) => RunSource::DataDir(d),
                (None, None) => unreachable!("clap requires one"),
            };
            let addr: SocketAddr = format!("{host}:{port}").parse().context("invalid host/port")?;
            serve_blocking(source, addr, |bound| {
                println!("listening on http://{bound}");
                let _ = std::io::stdout().flush();
            })?;
            Ok(0)
        }
        Command::Demo { dir, local_workers } => {
            let path = write_demo(&dir, None)?;
            println!("wrote {}", path.display());
            let cfg = ExperimentConfig::load(&path)?;
            run(cfg, RunOptions { local_workers: local_workers.max(1), ..Default::default() }, false)
        }
        Command::RenderServer { config, bind } => {
            let exp = Experiment::from_config(ExperimentConfig::load(&config)?)?;
            let listener = TcpListener::bind(&bind).with_context(|| format!("binding {bind}"))?;
            println!("rendering on {}", listener.local_addr()?);
            let _ = std::io::stdout().flush();
            serve_render_requests(listener, exp.builtin_backend())?;
            Ok(0)
        }
    }
}

fn run(cfg: ExperimentConfig, mut opts: RunOptions, dry: bool) -> anyhow::Result<u8> {
    let exp = Arc::new(Experiment::from_config(cfg)?);
    if dry {
        let counts = dry_run(&exp)?;
        for (pair, n) in exp.pairs.iter().zip(&counts) {
            eprintln!("{} / {}: {n}", pair.mesh, pair.environment);
        }
        println!("{}", counts.iter().sum::<u64>());
        return Ok(0);
    }
    opts.on_listening = Some(Box::new(|addr| eprintln!("orchestrator listening on {addr}")));
    match run_experiment(exp, opts) {
        Ok(summary) => {
            let t = &summary.manifest.totals;
            println!(
                "{}: {} completed, {} errored, status {:?}{}",
                summary.manifest.name,
                t.completed,
                t.errored,
                summary.manifest.status,
                summary.output_dir.as_ref().map(|d| format!(" -> {}", d.display())).unwrap_or_default()
            );
            Ok(if summary.exit_code() == 0 { 0 } else { EXIT_PARTIAL })
        }
        Err(e) => {
            eprintln!("error: {e}");
            Ok(e.exit_code() as u8)
        }
    }
}

fn parse_bins(specs: &[String]) -> anyhow::Result<BTreeMap<String, Vec<f64>>> {
    let mut out = BTreeMap::new();
    for s in specs {
        let Some((key, edges)) = s.split_once('=') else { bail!("--bins expects key=e1,e2,..., got '{s}'") };
        let edges: Vec<f64> = edges
            .split(',')
            .map(|e| e.trim().parse::<f64>().with_context(|| format!("bin edge '{e}' in '{s}'")))
            .collect::<anyhow::Result<_>>()?;
        out.insert(key.trim().to_string(), edges);
    }
    Ok(out)
}

fn analyze(run_dir: &Path, reports: &[String], opts: &ReportOptions, out: Option<&Path>) -> anyhow::Result<u8> {
    let data = RunData::load(run_dir)?;
    if data.truncated_tail {
        eprintln!("warning: the log ends in a partial line, which was skipped");
    }
    let out = out.map_or_else(|| run_dir.join("reports"), Path::to_path_buf);
    for spec in reports {
        let report = run_report(&data, spec, opts)?;
        println!("{}", serde_json::to_string_pretty(&report.json)?);
        for p in report.write(&out)? {
            eprintln!("wrote {}", p.display());
        }
    }
    Ok(0)
}
