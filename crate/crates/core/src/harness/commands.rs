//! The work behind each CLI command.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use super::accuracy::{AccuracyReport, EvalGrid};
use super::config::ExperimentConfig;
use super::logs::{
    self, accuracy_csv, check_run_dir, loss_csv, sidecar, ACCURACY_FILE, CHECKPOINT_FILE, CONFIG_FILE, LOSS_FILE,
    TASK_FILE,
};
use super::HarnessError;
use crate::diffnet::{Checkpoint, Component, MetaParams, NetConfig};
use crate::fdsolver::{solve_scattered, PmlSpec, WavefieldGrid};
use crate::gridmodel::{
    generate_layered_model_with, load_model, load_tasks, parse_manifest, save_model, write_manifest, LayeredModelSpec,
    SourceSpec, Task, TaskSpec, VelocityModel,
};
use crate::meta::{
    derive_seed, meta_test, meta_train, random_init_baseline, vanilla_baseline, AdaptOutput, Adapted, FehMode,
    LossRow, MetaError, MetaTrainOutput, RankReductionSpec,
};

pub const MANIFEST_FILE: &str = "manifest.txt";
pub const EVALUATION_FILE: &str = "evaluation.csv";
pub const SUMMARY_FILE: &str = "summary.csv";

const MODEL_STREAM: u64 = 0x6d6f_6465;

/// Settings shared by every command.
#[derive(Debug, Clone)]
pub struct Runtime {
    pub config: ExperimentConfig,
    pub seed: u64,
    /// Single-threaded mode: wall times are written as 0 so logs compare equal.
    pub deterministic: bool,
}

impl Runtime {
    pub fn new(mut config: ExperimentConfig, seed: Option<u64>, deterministic: bool) -> Self {
        let seed = seed.unwrap_or(config.seed);
        config.seed = seed;
        Self { config, seed, deterministic }
    }

    fn wall_time(&self) -> bool {
        !self.deterministic
    }
}

/// The model, source and frequency a fine-tuning run adapts to.
#[derive(Debug, Clone)]
pub struct Target {
    pub model: PathBuf,
    pub source: SourceSpec,
    pub freq: f64,
    /// FD reference for the accuracy log; solved on the fly when absent.
    pub reference: Option<PathBuf>,
}

/// How the network of a fine-tuning run is initialized.
#[derive(Debug, Clone, PartialEq)]
pub enum RunKind {
    Meta { ckpt: PathBuf, retain_feh: bool, rank_keep: Option<f64> },
    RandomLr,
    Vanilla,
}

#[derive(Debug, Clone)]
pub struct RunSummary {
    pub params: Adapted,
    pub net: NetConfig,
    pub log: Vec<LossRow>,
    pub accuracy: Vec<AccuracyReport>,
}

impl RunSummary {
    pub fn final_loss(&self) -> &LossRow {
        self.log.last().expect("runs log at least epoch 0")
    }

    pub fn final_accuracy(&self) -> Option<&AccuracyReport> {
        self.accuracy.last()
    }
}

/// Draws `tasks.n_models` layered models and writes them with a manifest
/// pairing each model with every configured frequency.
pub fn gen_tasks(rt: &Runtime, out: &Path) -> Result<Vec<TaskSpec>, HarnessError> {
    let t = &rt.config.tasks;
    logs::create_dir(out)?;
    let mut specs = Vec::new();
    for i in 0..t.n_models {
        let seed = derive_seed(rt.seed, &[MODEL_STREAM, i as u64]);
        let n_layers = t.min_layers + (seed % (t.max_layers - t.min_layers + 1) as u64) as usize;
        let spec = LayeredModelSpec { extent: (t.extent_x, t.extent_z), n_layers, spacing: t.spacing, velocities: None };
        let model = generate_layered_model_with(seed, &spec)?;
        let name = format!("model_{i:03}.wvm");
        save_model(&model, out.join(&name))?;
        let source = SourceSpec::new(t.source_x, t.source_z);
        source.validate(&model)?;
        for &freq in &t.freqs {
            specs.push(TaskSpec { model: PathBuf::from(&name), source, freq });
        }
    }
    let mut manifest = Vec::new();
    write_manifest(&specs, &mut manifest).map_err(|source| HarnessError::Io { path: out.join(MANIFEST_FILE), source })?;
    logs::write(&out.join(MANIFEST_FILE), manifest)?;
    logs::write(&out.join(CONFIG_FILE), rt.config.dump())?;
    Ok(specs)
}

/// Scattered-field FD reference on the model grid.
pub fn reference_field(
    rt: &Runtime,
    model: &VelocityModel,
    source: SourceSpec,
    freq: f64,
) -> Result<WavefieldGrid, HarnessError> {
    Ok(solve_scattered(model, source, 2.0 * PI * freq, &PmlSpec::with_thickness(rt.config.eval.pml_cells))?)
}

pub fn fd_reference(
    rt: &Runtime,
    model_path: &Path,
    source: SourceSpec,
    freq: f64,
    out: &Path,
) -> Result<WavefieldGrid, HarnessError> {
    let model = load_model(model_path)?;
    let grid = reference_field(rt, &model, source, freq)?;
    if out.extension().is_some_and(|e| e == "csv") {
        let mut buf = Vec::new();
        grid.write_csv(&mut buf).map_err(|source| HarnessError::Io { path: out.to_path_buf(), source })?;
        logs::write(out, buf)?;
    } else {
        if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
            logs::create_dir(dir)?;
        }
        grid.save(out)?;
    }
    Ok(grid)
}

pub fn load_task_dir(dir: &Path) -> Result<Vec<Task>, HarnessError> {
    let specs = parse_manifest(&logs::read(&dir.join(MANIFEST_FILE))?)?;
    Ok(load_tasks(&specs, dir)?)
}

/// Network config for `tasks`, normalized to their common domain.
pub fn task_net_config(config: &ExperimentConfig, tasks: &[Task]) -> Result<NetConfig, HarnessError> {
    let first = tasks.first().ok_or(HarnessError::Meta(MetaError::NoTasks))?;
    let bounds = first.model.bounds();
    if tasks.iter().any(|t| t.model.bounds() != bounds) {
        return Err(HarnessError::Config("task models must share one domain".into()));
    }
    Ok(config.net_config(bounds))
}

/// Meta-trains on the tasks in `tasks_dir` and writes the checkpoint together
/// with `<ckpt>.losses.csv` and `<ckpt>.config.txt`.
pub fn meta_train_cmd(rt: &Runtime, tasks_dir: &Path, out: &Path) -> Result<MetaTrainOutput, HarnessError> {
    let tasks = load_task_dir(tasks_dir)?;
    let net = task_net_config(&rt.config, &tasks)?;
    let cfg = rt.config.meta_config(rt.wall_time())?;
    let result = meta_train(&tasks, &net, &cfg, &rt.config.objective(), rt.seed, None)?;
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        logs::create_dir(dir)?;
    }
    Checkpoint::meta(net, result.params.lr.clone(), result.params.feh.clone()).save(out)?;
    logs::write(&sidecar(out, ".losses.csv"), loss_csv(&result.log))?;
    logs::write(&sidecar(out, ".config.txt"), rt.config.dump())?;
    Ok(result)
}

fn load_meta_checkpoint(rt: &Runtime, ckpt: &Path) -> Result<(NetConfig, MetaParams), HarnessError> {
    let ck = Checkpoint::load(ckpt)?;
    if ck.component()? != Component::Both {
        return Err(HarnessError::Config(format!("{} does not hold a network and hypernetwork", ckpt.display())));
    }
    let net = ck.config.clone();
    if rt.config.is_explicit("network.rank") && rt.config.network.rank != net.rank {
        return Err(MetaError::RankMismatch { checkpoint: net.rank, config: rt.config.network.rank }.into());
    }
    let (Some(lr), Some(feh)) = (ck.lr, ck.feh) else {
        return Err(HarnessError::Config(format!("{} lacks tensors", ckpt.display())));
    };
    Ok((net, MetaParams { lr, feh }))
}

/// Model, task and evaluation grid of a target.
pub struct PreparedTarget {
    pub model_path: PathBuf,
    pub task: Task,
    pub grid: EvalGrid,
}

pub fn prepare_target(rt: &Runtime, target: &Target) -> Result<PreparedTarget, HarnessError> {
    let model = Arc::new(load_model(&target.model)?);
    let task = Task::new(Arc::clone(&model), target.source, target.freq)?;
    let reference = match &target.reference {
        Some(p) => WavefieldGrid::load(p)?,
        None => reference_field(rt, &model, target.source, target.freq)?,
    };
    if (reference.freq - target.freq).abs() > 1e-9 * target.freq {
        return Err(HarnessError::Invariant(format!(
            "reference is at {} Hz but the run is at {} Hz",
            reference.freq, target.freq
        )));
    }
    let grid = EvalGrid::new(&model, target.source, &reference, rt.config.eval.source_cells)?;
    let model_path = std::fs::canonicalize(&target.model).unwrap_or_else(|_| target.model.clone());
    Ok(PreparedTarget { model_path, task, grid })
}

/// Fine-tunes on a prepared target without writing anything.
pub fn run_prepared(rt: &Runtime, kind: &RunKind, target: &PreparedTarget) -> Result<RunSummary, HarnessError> {
    let mut accuracy = Vec::new();
    let grid = &target.grid;
    let mut hook = |epoch: usize, predict: &crate::meta::Predictor| -> Result<(), MetaError> {
        let pred = predict(&grid.points())?;
        accuracy.push(grid.report(epoch, &pred).map_err(|e| MetaError::Config(e.to_string()))?);
        Ok(())
    };
    let obj = rt.config.objective();
    let task = &target.task;
    let (net, out): (NetConfig, AdaptOutput) = match kind {
        RunKind::Meta { ckpt, retain_feh, rank_keep } => {
            let (net, init) = load_meta_checkpoint(rt, ckpt)?;
            let mode = if *retain_feh { FehMode::Retained } else { FehMode::Pruned };
            let mut cfg = rt.config.adapt_config(mode, rt.wall_time())?;
            cfg.rank = rank_keep.map(RankReductionSpec::new).transpose()?;
            let out = meta_test(init, task, &net, &cfg, &obj, rt.seed, Some(&mut hook))?;
            (net, out)
        }
        RunKind::RandomLr => {
            let net = rt.config.net_config(task.model.bounds());
            let cfg = rt.config.adapt_config(FehMode::Pruned, rt.wall_time())?;
            let out = random_init_baseline(task, &net, &cfg, &obj, rt.seed, Some(&mut hook))?;
            (net, out)
        }
        RunKind::Vanilla => {
            let net = rt.config.net_config(task.model.bounds());
            let cfg = rt.config.adapt_config(FehMode::Pruned, rt.wall_time())?;
            let out = vanilla_baseline(task, &net, &cfg, &obj, rt.seed, Some(&mut hook))?;
            (net, out)
        }
    };
    Ok(RunSummary { params: out.params, net, log: out.log, accuracy })
}

/// Fine-tunes on `target` and writes a complete run directory.
pub fn fine_tune_run(rt: &Runtime, kind: &RunKind, target: &Target, out: &Path) -> Result<RunSummary, HarnessError> {
    let prepared = prepare_target(rt, target)?;
    let summary = run_prepared(rt, kind, &prepared)?;
    write_run_dir(rt, &prepared, &summary, out)?;
    Ok(summary)
}

pub fn write_run_dir(rt: &Runtime, target: &PreparedTarget, summary: &RunSummary, out: &Path) -> Result<(), HarnessError> {
    logs::create_dir(out)?;
    logs::write(&out.join(CONFIG_FILE), rt.config.dump())?;
    logs::write(&out.join(LOSS_FILE), loss_csv(&summary.log))?;
    logs::write(&out.join(ACCURACY_FILE), accuracy_csv(&summary.accuracy))?;
    summary.params.checkpoint(&summary.net).save(out.join(CHECKPOINT_FILE))?;
    let spec = TaskSpec { model: target.model_path.clone(), source: target.task.source, freq: target.task.freq };
    logs::write(&out.join(TASK_FILE), format!("{spec}\n"))?;
    check_run_dir(out)
}

/// Scores the final checkpoint of a run directory against `reference` and
/// writes `evaluation.csv` into the run.
pub fn evaluate_run(rt: &Runtime, run: &Path, reference: &Path) -> Result<AccuracyReport, HarnessError> {
    let (net, params) = Adapted::from_checkpoint(Checkpoint::load(run.join(CHECKPOINT_FILE))?)?;
    let specs = parse_manifest(&logs::read(&run.join(TASK_FILE))?)?;
    let [spec] = specs.as_slice() else {
        return Err(HarnessError::Invariant(format!("{} must hold one task", run.join(TASK_FILE).display())));
    };
    let epoch = logs::read_loss_csv(&run.join(LOSS_FILE))?.last().map_or(0, |r| r.epoch);
    let model = load_model(&spec.model)?;
    let reference = WavefieldGrid::load(reference)?;
    let grid = EvalGrid::new(&model, spec.source, &reference, rt.config.eval.source_cells)?;
    let pred = params.predict(&grid.points(), &net, spec.freq)?;
    let report = grid.report(epoch, &pred)?;
    logs::write(&run.join(EVALUATION_FILE), accuracy_csv(&[report]))?;
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepRow {
    pub keep: f64,
    pub rank: usize,
    pub total: f64,
    pub mse: f64,
}

/// Meta-tests once per retention ratio; each run goes to `out/keep_<r>`.
pub fn rank_sweep(
    rt: &Runtime,
    ckpt: &Path,
    target: &Target,
    keeps: &[f64],
    out: &Path,
) -> Result<Vec<SweepRow>, HarnessError> {
    if keeps.is_empty() {
        return Err(HarnessError::Usage("rank-sweep needs at least one keep ratio".into()));
    }
    let prepared = prepare_target(rt, target)?;
    let mut rows = Vec::with_capacity(keeps.len());
    for &keep in keeps {
        let kind = RunKind::Meta { ckpt: ckpt.to_path_buf(), retain_feh: false, rank_keep: Some(keep) };
        let summary = run_prepared(rt, &kind, &prepared)?;
        write_run_dir(rt, &prepared, &summary, &out.join(format!("keep_{keep}")))?;
        rows.push(SweepRow {
            keep,
            rank: summary.params.config(&summary.net).rank,
            total: summary.final_loss().total,
            mse: summary.final_accuracy().map_or(f64::NAN, |a| a.mse),
        });
    }
    let mut csv = String::from("keep,rank,total,mse\n");
    for r in &rows {
        let _ = writeln!(csv, "{},{},{:e},{:e}", r.keep, r.rank, r.total, r.mse);
    }
    logs::write(&out.join(SUMMARY_FILE), csv)?;
    logs::write(&out.join(CONFIG_FILE), rt.config.dump())?;
    Ok(rows)
}
