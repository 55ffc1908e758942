//! Fine-tuning a trained or fresh initialization on a single task.

use std::str::FromStr;
use std::time::Instant;

use ndarray::Array2;

use super::objective::{ObjectiveConfig, Trainable};
use super::rank::{layer_indices, reduce_feh, reduce_lr, RankReductionSpec};
use super::{adam_step, derive_seed, LossRow, MetaError};
use crate::diffnet::params::fill;
use crate::diffnet::{
    feh_forward, init_params, init_vanilla, Checkpoint, Component, MetaParams, NetConfig, Points, SingularValues, TunedParams,
    VanillaParams,
};
use crate::gridmodel::{sample_collocation, Task};
use crate::optim::{AdamW, AdamWConfig, LrSchedule};

const BATCH_STREAM: u64 = 0x6261_7463;
const RANDOM_INIT_STREAM: u64 = 0x7261_6e64;

/// What happens to the hypernetwork during fine-tuning.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FehMode {
    /// The singular values are predicted once and then trained directly; the
    /// hypernetwork is discarded.
    Pruned,
    /// The hypernetwork stays in the graph and is trained with the network.
    Retained,
}

impl FromStr for FehMode {
    type Err = MetaError;

    fn from_str(s: &str) -> Result<Self, MetaError> {
        match s {
            "pruned" => Ok(Self::Pruned),
            "retained" => Ok(Self::Retained),
            other => Err(MetaError::Config(format!("unknown feh mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdaptConfig {
    pub epochs: usize,
    pub lr: f64,
    /// Defaults to [`LrSchedule::meta_test`].
    pub schedule: Option<LrSchedule>,
    pub feh_mode: FehMode,
    pub rank: Option<RankReductionSpec>,
    pub batch_points: usize,
    pub exclusion_radius: f64,
    /// Draw a fresh batch every epoch instead of reusing the first one.
    pub resample: bool,
    /// Calls the evaluation hook every `eval_interval` epochs and at the end.
    pub eval_interval: usize,
    pub record_wall_time: bool,
    /// Overwrite the discarded hypernetwork with NaN once the singular values
    /// have been read, so any later use shows up as a non-finite loss.
    pub poison_pruned_feh: bool,
    /// Optimizer settings; the learning rate comes from the schedule.
    pub optimizer: AdamWConfig,
}

impl Default for AdaptConfig {
    fn default() -> Self {
        Self {
            epochs: 1000,
            lr: 1e-3,
            schedule: None,
            feh_mode: FehMode::Pruned,
            rank: None,
            batch_points: 1000,
            exclusion_radius: super::DEFAULT_EXCLUSION_RADIUS,
            resample: true,
            eval_interval: 50,
            record_wall_time: true,
            poison_pruned_feh: false,
            optimizer: AdamWConfig::default(),
        }
    }
}

impl AdaptConfig {
    pub fn validate(&self) -> Result<(), MetaError> {
        if self.batch_points == 0 || self.eval_interval == 0 {
            return Err(MetaError::Config("batch_points and eval_interval must be positive".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(MetaError::Config(format!("bad learning rate {}", self.lr)));
        }
        Ok(())
    }

    pub fn schedule(&self) -> LrSchedule {
        self.schedule.clone().unwrap_or_else(|| LrSchedule::meta_test(self.lr))
    }
}

/// Network values at the given points.
pub type Predictor<'a> = dyn Fn(&Points) -> Result<Array2<f64>, MetaError> + 'a;

/// Called with the epoch and a predictor for the current parameters.
pub type EvalHook<'a> = dyn FnMut(usize, &Predictor) -> Result<(), MetaError> + 'a;

/// The parameters that result from fine-tuning.
#[derive(Debug, Clone, PartialEq)]
pub enum Adapted {
    Tuned(TunedParams),
    Retained(MetaParams),
    Vanilla(VanillaParams),
}

impl Adapted {
    /// Parameters able to produce a wavefield, with the config they were
    /// saved under. A bare hypernetwork checkpoint is rejected.
    pub fn from_checkpoint(ck: Checkpoint) -> Result<(NetConfig, Self), MetaError> {
        let component = ck.component()?;
        let params = match (component, ck.lr, ck.sigma, ck.feh, ck.vanilla) {
            (Component::LrPinn, Some(lr), Some(sigma), _, _) => {
                Self::Tuned(TunedParams { lr, sigma: SingularValues::learnable(sigma) })
            }
            (Component::Both, Some(lr), _, Some(feh), _) => Self::Retained(MetaParams { lr, feh }),
            (Component::Vanilla, _, _, _, Some(v)) => Self::Vanilla(v),
            _ => return Err(MetaError::Config("checkpoint cannot produce a wavefield".into())),
        };
        Ok((ck.config, params))
    }

    pub fn predict(&self, points: &Points, net: &NetConfig, freq: f64) -> Result<Array2<f64>, MetaError> {
        match self {
            Self::Tuned(p) => p.predict(points, net, freq),
            Self::Retained(p) => p.predict(points, net, freq),
            Self::Vanilla(p) => p.predict(points, net, freq),
        }
    }

    /// Network config describing these parameters; the rank follows any reduction.
    pub fn config(&self, net: &NetConfig) -> NetConfig {
        let mut cfg = net.clone();
        match self {
            Self::Tuned(p) => cfg.rank = p.lr.ranks().first().copied().unwrap_or(cfg.rank),
            Self::Retained(p) => cfg.rank = p.lr.ranks().first().copied().unwrap_or(cfg.rank),
            Self::Vanilla(_) => {}
        }
        cfg
    }

    pub fn checkpoint(&self, net: &NetConfig) -> Checkpoint {
        let cfg = self.config(net);
        match self {
            Self::Tuned(p) => Checkpoint::lrpinn(cfg, p.lr.clone(), p.sigma.sigma.clone()),
            Self::Retained(p) => Checkpoint::meta(cfg, p.lr.clone(), p.feh.clone()),
            Self::Vanilla(p) => Checkpoint::vanilla(cfg, p.clone()),
        }
    }
}

#[derive(Debug, Clone)]
pub struct AdaptOutput {
    pub params: Adapted,
    /// Rows for epochs `0..=epochs`, each measured before that epoch's update.
    pub log: Vec<LossRow>,
}

/// Seed of the collocation batch drawn at `epoch`.
pub fn batch_seed(seed: u64, epoch: usize, resample: bool) -> u64 {
    derive_seed(seed, &[BATCH_STREAM, if resample { epoch as u64 } else { 0 }])
}

/// Trains `params` on `task` with AdamW and returns the final parameters and
/// the loss log.
pub fn fine_tune<P: Trainable>(
    mut params: P,
    task: &Task,
    net: &NetConfig,
    cfg: &AdaptConfig,
    obj: &ObjectiveConfig,
    seed: u64,
    mut hook: Option<&mut EvalHook>,
) -> Result<(P, Vec<LossRow>), MetaError> {
    cfg.validate()?;
    obj.weights.validate()?;
    let schedule = cfg.schedule();
    let mut opt = AdamW::new(AdamWConfig { lr: cfg.lr, ..cfg.optimizer })?;
    let mut log = Vec::with_capacity(cfg.epochs + 1);
    let mut fixed = None;
    for epoch in 0..=cfg.epochs {
        let start = Instant::now();
        let batch = match (&fixed, cfg.resample) {
            (Some(b), false) => std::borrow::Cow::Borrowed(b),
            _ => {
                let b = sample_collocation(
                    &task.model,
                    task.source,
                    task.freq,
                    cfg.batch_points,
                    batch_seed(seed, epoch, cfg.resample),
                    cfg.exclusion_radius,
                )?;
                if cfg.resample {
                    std::borrow::Cow::Owned(b)
                } else {
                    fixed = Some(b);
                    std::borrow::Cow::Borrowed(fixed.as_ref().expect("just stored"))
                }
            }
        };
        let (loss, grad) = params
            .evaluate(&batch, net, obj)
            .map_err(|e| MetaError::Training { epoch, task: 0, source: Box::new(e) })?;
        if let Some(h) = hook.as_deref_mut() {
            if epoch % cfg.eval_interval == 0 || epoch == cfg.epochs {
                let freq = task.freq;
                let current = &params;
                h(epoch, &|pts: &Points| current.predict(pts, net, freq))?;
            }
        }
        let lr = schedule.lr_at(epoch as u64);
        if epoch < cfg.epochs {
            opt.set_lr(lr);
            adam_step(&mut opt, &mut params, &grad)?;
        }
        let wall_ms = if cfg.record_wall_time { start.elapsed().as_millis() as u64 } else { 0 };
        log.push(LossRow::new(epoch, &loss, lr, wall_ms));
    }
    Ok((params, log))
}

/// Fine-tunes a meta-trained initialization on one task.
pub fn meta_test(
    init: MetaParams,
    task: &Task,
    net: &NetConfig,
    cfg: &AdaptConfig,
    obj: &ObjectiveConfig,
    seed: u64,
    hook: Option<&mut EvalHook>,
) -> Result<AdaptOutput, MetaError> {
    let ranks = init.lr.ranks();
    if ranks.iter().any(|&k| k != net.rank) || init.feh.head_w.iter().any(|w| w.nrows() != net.rank) {
        return Err(MetaError::RankMismatch { checkpoint: ranks.first().copied().unwrap_or(0), config: net.rank });
    }
    let sigma = feh_forward(&init.feh, task.freq)?;
    let indices = cfg.rank.map(|spec| layer_indices(&sigma.sigma, spec)).transpose()?;
    let mut run_net = net.clone();
    if let Some(idx) = &indices {
        run_net.rank = idx.first().map_or(net.rank, Vec::len);
    }
    match cfg.feh_mode {
        FehMode::Pruned => {
            let MetaParams { lr, mut feh } = init;
            let (lr, sigma) = match &indices {
                Some(idx) => {
                    let s = sigma.sigma.iter().zip(idx).map(|(s, i)| s.select(ndarray::Axis(0), i)).collect();
                    (reduce_lr(&lr, idx)?, s)
                }
                None => (lr, sigma.sigma),
            };
            if cfg.poison_pruned_feh {
                fill(&mut feh, f64::NAN);
            }
            let tuned = TunedParams { lr, sigma: SingularValues::learnable(sigma) };
            let (params, log) = fine_tune(tuned, task, &run_net, cfg, obj, seed, hook)?;
            // The poisoned hypernetwork lives until training is over.
            drop(feh);
            Ok(AdaptOutput { params: Adapted::Tuned(params), log })
        }
        FehMode::Retained => {
            let params = match &indices {
                Some(idx) => MetaParams { lr: reduce_lr(&init.lr, idx)?, feh: reduce_feh(&init.feh, idx)? },
                None => init,
            };
            let (params, log) = fine_tune(params, task, &run_net, cfg, obj, seed, hook)?;
            Ok(AdaptOutput { params: Adapted::Retained(params), log })
        }
    }
}

/// The same fine-tuning path as [`meta_test`] from an untrained initialization.
pub fn random_init_baseline(
    task: &Task,
    net: &NetConfig,
    cfg: &AdaptConfig,
    obj: &ObjectiveConfig,
    seed: u64,
    hook: Option<&mut EvalHook>,
) -> Result<AdaptOutput, MetaError> {
    let (lr, feh) = init_params(derive_seed(seed, &[RANDOM_INIT_STREAM]), net)?;
    meta_test(MetaParams { lr, feh }, task, net, cfg, obj, seed, hook)
}

/// A dense network of the same depth and width trained from scratch.
pub fn vanilla_baseline(
    task: &Task,
    net: &NetConfig,
    cfg: &AdaptConfig,
    obj: &ObjectiveConfig,
    seed: u64,
    hook: Option<&mut EvalHook>,
) -> Result<AdaptOutput, MetaError> {
    let init = init_vanilla(derive_seed(seed, &[RANDOM_INIT_STREAM]), net)?;
    let (params, log) = fine_tune(init, task, net, cfg, obj, seed, hook)?;
    Ok(AdaptOutput { params: Adapted::Vanilla(params), log })
}
