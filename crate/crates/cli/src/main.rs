//! `tasksumma`: run, verify and benchmark task-based SUMMA on a simulated mesh.

mod commands;
mod spec;
mod svg;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use tasksumma::{LatencyModel, Mode};

use spec::{Blocking, ExperimentSpec, GridSpec, LatencySpec, UsageError};

#[derive(Parser)]
#[command(name = "tasksumma", version, about = "Task-based 2D SUMMA on a simulated process mesh")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Multiply repeatedly and write metrics.
    Run(CommonArgs),
    /// Multiply once and compare against the serial oracle.
    Verify(CommonArgs),
    /// Run a series of experiments and write a combined CSV.
    Bench(BenchArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Baseline,
    Task,
}

#[derive(Args, Clone)]
struct CommonArgs {
    /// JSON experiment manifest; flags override its fields.
    #[arg(long)]
    spec: Option<PathBuf>,
    /// Matrix dimension N (all operands are N x N) [default: 1024]
    #[arg(long)]
    size: Option<usize>,
    /// Uniform block size [default: 128]
    #[arg(long)]
    block: Option<usize>,
    /// Use this many random-size blocks per dimension instead.
    #[arg(long)]
    nonuniform_blocks: Option<usize>,
    /// Seed for operand values and nonuniform tilings [default: 1]
    #[arg(long)]
    seed: Option<u64>,
    /// Process grid as RxC [default: 1x1]
    #[arg(long)]
    grid: Option<GridSpec>,
    /// [default: task]
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    /// [default: 5]
    #[arg(long)]
    repeats: Option<usize>,
    /// Accumulate each result block in ascending k order (bitwise reproducible).
    #[arg(long)]
    deterministic: bool,
    /// Iterations in flight per node (task mode) [default: from grid shape]
    #[arg(long)]
    issue_limit: Option<usize>,
    /// zero | fixed:US | perbyte:US:US_PER_BYTE [default: zero]
    #[arg(long)]
    latency: Option<LatencyModel>,
    /// Compute slots per simulated node [default: 2]
    #[arg(long)]
    workers: Option<usize>,
    /// Cut blocks into up to this many slabs per dimension (task mode) [default: 1]
    #[arg(long)]
    split: Option<usize>,
    /// OS threads for block kernels.
    #[arg(long, env = "TASKSUMMA_THREADS", default_value_t = 1)]
    threads: usize,
    #[arg(long, default_value = "tasksumma-out")]
    out_dir: PathBuf,
    /// Use the identity for A.
    #[arg(long)]
    identity: bool,
    /// Write the last repeat's task timeline as JSON lines.
    #[arg(long)]
    timeline: bool,
    #[arg(long, hide = true)]
    inject_fault: bool,
}

#[derive(Args)]
struct BenchArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// JSON array of experiment manifests.
    #[arg(long, conflicts_with = "grids")]
    series: Option<PathBuf>,
    /// Comma-separated grids, each run with the base settings.
    #[arg(long, value_delimiter = ',', num_args = 0..)]
    grids: Option<Vec<String>>,
    /// Run every grid with both uniform (--block) and nonuniform
    /// (--nonuniform-blocks) tilings.
    #[arg(long)]
    paired: bool,
    /// Also write SVG plots of rate and efficiency against node count.
    #[arg(long)]
    svg: bool,
}

impl CommonArgs {
    fn base_spec(&self) -> Result<ExperimentSpec, UsageError> {
        let mut spec = match &self.spec {
            Some(path) => ExperimentSpec::load(path)?,
            None => ExperimentSpec::default(),
        };
        if let Some(v) = self.size {
            spec.size = v;
        }
        if let Some(v) = self.seed {
            spec.seed = v;
        }
        if let Some(v) = self.grid {
            spec.grid = v;
        }
        if let Some(v) = self.mode {
            spec.mode = match v {
                ModeArg::Baseline => Mode::Baseline,
                ModeArg::Task => Mode::Task,
            };
        }
        if let Some(v) = self.repeats {
            spec.repeats = v;
        }
        if self.deterministic {
            spec.deterministic = true;
        }
        if self.issue_limit.is_some() {
            spec.issue_limit = self.issue_limit;
        }
        if let Some(v) = self.latency {
            spec.latency = LatencySpec(v);
        }
        if let Some(v) = self.workers {
            spec.workers = v;
        }
        if let Some(v) = self.split {
            spec.split = v;
        }
        if self.identity {
            spec.identity = true;
        }
        Ok(spec)
    }

    /// Base spec with the blocking flags applied; both blocking flags
    /// together are an error.
    fn spec(&self) -> Result<ExperimentSpec, UsageError> {
        let mut spec = self.base_spec()?;
        match (self.block, self.nonuniform_blocks) {
            (Some(_), Some(_)) => {
                return Err(UsageError("--block and --nonuniform-blocks are mutually exclusive".into()))
            }
            (Some(b), None) => spec.blocking = Blocking::Uniform { block_size: b },
            (None, Some(n)) => spec.blocking = Blocking::Nonuniform { block_count: n, seed: spec.seed },
            (None, None) => {}
        }
        spec.validate()?;
        Ok(spec)
    }

    fn options(&self) -> commands::Options {
        commands::Options {
            threads: self.threads,
            out_dir: self.out_dir.clone(),
            timeline: self.timeline,
            inject_fault: self.inject_fault,
        }
    }
}

impl BenchArgs {
    fn series(&self) -> Result<Vec<ExperimentSpec>, UsageError> {
        if let Some(path) = &self.series {
            let series = ExperimentSpec::load_series(path)?;
            for s in &series {
                s.validate()?;
            }
            return Ok(series);
        }
        let base = if self.paired {
            self.common.base_spec()?
        } else {
            self.common.spec()?
        };
        let grids: Vec<GridSpec> = match &self.grids {
            Some(list) => list
                .iter()
                .filter(|g| !g.trim().is_empty())
                .map(|g| g.parse().map_err(UsageError))
                .collect::<Result<_, _>>()?,
            None => vec![base.grid],
        };
        let blockings = if self.paired {
            let block = self.common.block.unwrap_or(match base.blocking {
                Blocking::Uniform { block_size } => block_size,
                Blocking::Nonuniform { .. } => 128,
            });
            let count = self
                .common
                .nonuniform_blocks
                .unwrap_or_else(|| base.size.div_ceil(block.max(1)));
            vec![
                Blocking::Uniform { block_size: block },
                Blocking::Nonuniform {
                    block_count: count,
                    seed: base.seed,
                },
            ]
        } else {
            vec![base.blocking]
        };
        let mut series = Vec::new();
        for grid in grids {
            for &blocking in &blockings {
                let spec = ExperimentSpec {
                    grid,
                    blocking,
                    ..base.clone()
                };
                spec.validate()?;
                series.push(spec);
            }
        }
        Ok(series)
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match &cli.command {
        Command::Run(args) => args.spec().map(|s| commands::run(&s, &args.options())),
        Command::Verify(args) => args.spec().map(|s| commands::verify(&s, &args.options())),
        Command::Bench(args) => args.series().and_then(|series| {
            if series.is_empty() {
                Err(UsageError("bench series is empty".into()))
            } else {
                Ok(commands::bench(&series, &args.common.options(), args.paired, args.svg))
            }
        }),
    };
    match outcome {
        Ok(Ok(())) => ExitCode::SUCCESS,
        Ok(Err(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("usage error: {e}");
            ExitCode::from(2)
        }
    }
}
