use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use mlrp::gridmodel::SourceSpec;
use mlrp::harness::commands::{self, RunKind, Runtime, Target};
use mlrp::harness::{logs, ExperimentConfig, HarnessError, Threads};

#[derive(Parser)]
#[command(name = "mlrp", version, about = "Meta-learned low-rank PINNs for scattered Helmholtz wavefields")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args, Clone)]
struct Common {
    /// Experiment config (`section.key = value` lines).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed; overrides `seeds.master`.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(clap::Args, Clone)]
struct TargetArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    freq: f64,
    /// Source x in km; defaults to `tasks.source_x`.
    #[arg(long)]
    xs: Option<f64>,
    /// Source z in km; defaults to `tasks.source_z`.
    #[arg(long)]
    zs: Option<f64>,
    /// FD reference for the accuracy log; solved on the fly when omitted.
    #[arg(long)]
    reference: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum BaselineMode {
    Vanilla,
    RandomLr,
}

#[derive(Subcommand)]
enum Command {
    /// Generate layered models and a task manifest.
    GenTasks {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
    },
    /// Solve for the scattered-field FD reference of one model.
    FdReference {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        freq: f64,
        #[arg(long)]
        xs: Option<f64>,
        #[arg(long)]
        zs: Option<f64>,
        /// Output wavefield (`.wfc`, or `.csv` for text).
        #[arg(long)]
        out: PathBuf,
    },
    /// Meta-train the shared initialization.
    MetaTrain {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        tasks: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fine-tune a meta-trained checkpoint on one task.
    MetaTest {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        ckpt: PathBuf,
        #[command(flatten)]
        target: TargetArgs,
        /// Keep the hypernetwork in the graph instead of pruning it.
        #[arg(long)]
        retain_feh: bool,
        /// Fraction of singular values to keep before fine-tuning.
        #[arg(long)]
        rank_keep: Option<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train a baseline from a fresh initialization.
    Baseline {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        mode: BaselineMode,
        #[command(flatten)]
        target: TargetArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score a run directory against an FD reference.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        reference: PathBuf,
    },
    /// Meta-test at several rank retention ratios.
    RankSweep {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        ckpt: PathBuf,
        #[command(flatten)]
        target: TargetArgs,
        #[arg(long, value_delimiter = ',', default_value = "1.0,0.5,0.25,0.1")]
        keeps: Vec<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn runtime(common: &Common, threads: Threads) -> Result<Runtime, HarnessError> {
    let config = match &common.config {
        Some(p) => ExperimentConfig::parse(&logs::read(p)?)?,
        None => ExperimentConfig::default(),
    };
    Ok(Runtime::new(config, common.seed, threads.deterministic))
}

fn source(rt: &Runtime, xs: Option<f64>, zs: Option<f64>) -> SourceSpec {
    SourceSpec::new(xs.unwrap_or(rt.config.tasks.source_x), zs.unwrap_or(rt.config.tasks.source_z))
}

fn target(rt: &Runtime, t: &TargetArgs) -> Target {
    Target { model: t.model.clone(), source: source(rt, t.xs, t.zs), freq: t.freq, reference: t.reference.clone() }
}

fn out_dir(rt: &Runtime, out: Option<PathBuf>, name: &str) -> PathBuf {
    out.unwrap_or_else(|| rt.config.output_dir.join(name))
}

fn report_run(dir: &Path, summary: &commands::RunSummary) {
    let last = summary.final_loss();
    match summary.final_accuracy() {
        Some(a) => println!("{}: epoch {} total {:e} mse {:e}", dir.display(), last.epoch, last.total, a.mse),
        None => println!("{}: epoch {} total {:e}", dir.display(), last.epoch, last.total),
    }
}

fn run(command: Command, threads: Threads) -> Result<(), HarnessError> {
    match command {
        Command::GenTasks { common, out } => {
            let rt = runtime(&common, threads)?;
            let specs = commands::gen_tasks(&rt, &out)?;
            println!("{}: {} tasks", out.display(), specs.len());
        }
        Command::FdReference { common, model, freq, xs, zs, out } => {
            let rt = runtime(&common, threads)?;
            let src = source(&rt, xs, zs);
            let grid = commands::fd_reference(&rt, &model, src, freq, &out)?;
            println!("{}: {} x {} at {} Hz", out.display(), grid.nx, grid.nz, grid.freq);
        }
        Command::MetaTrain { common, tasks, out } => {
            let rt = runtime(&common, threads)?;
            let result = commands::meta_train_cmd(&rt, &tasks, &out)?;
            let last = result.log.last().expect("log covers epoch 0");
            println!("{}: epoch {} total {:e}", out.display(), last.epoch, last.total);
        }
        Command::MetaTest { common, ckpt, target: t, retain_feh, rank_keep, out } => {
            let rt = runtime(&common, threads)?;
            let dir = out_dir(&rt, out, "meta-test");
            let kind = RunKind::Meta { ckpt, retain_feh, rank_keep };
            let summary = commands::fine_tune_run(&rt, &kind, &target(&rt, &t), &dir)?;
            report_run(&dir, &summary);
        }
        Command::Baseline { common, mode, target: t, out } => {
            let rt = runtime(&common, threads)?;
            let (kind, name) = match mode {
                BaselineMode::Vanilla => (RunKind::Vanilla, "baseline-vanilla"),
                BaselineMode::RandomLr => (RunKind::RandomLr, "baseline-random-lr"),
            };
            let dir = out_dir(&rt, out, name);
            let summary = commands::fine_tune_run(&rt, &kind, &target(&rt, &t), &dir)?;
            report_run(&dir, &summary);
        }
        Command::Evaluate { common, run, reference } => {
            let rt = runtime(&common, threads)?;
            let r = commands::evaluate_run(&rt, &run, &reference)?;
            println!("{}: epoch {} mse {:e} over {} points", run.display(), r.epoch, r.mse, r.n_points);
        }
        Command::RankSweep { common, ckpt, target: t, keeps, out } => {
            let rt = runtime(&common, threads)?;
            let dir = out_dir(&rt, out, "rank-sweep");
            for r in commands::rank_sweep(&rt, &ckpt, &target(&rt, &t), &keeps, &dir)? {
                println!("keep {} rank {} total {:e} mse {:e}", r.keep, r.rank, r.total, r.mse);
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let msg = e.to_string();
            let detail: Vec<&str> = msg
                .lines()
                .map(str::trim)
                .take_while(|l| !l.starts_with("Usage:"))
                .filter(|l| !l.is_empty())
                .collect();
            let detail = detail.join(" ");
            eprintln!("{}", HarnessError::Usage(detail.trim_start_matches("error: ").to_string()).one_line());
            return ExitCode::from(2);
        }
    };
    let result = Threads::from_env().and_then(|threads| threads.pool()?.install(|| run(cli.command, threads)));
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.one_line());
            ExitCode::FAILURE
        }
    }
}
