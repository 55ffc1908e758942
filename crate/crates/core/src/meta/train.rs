//! Meta-training of the shared initialization.

use std::str::FromStr;
use std::time::Instant;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::objective::{ObjectiveConfig, Trainable};
use super::{adam_step, derive_seed, LossRow, MetaError};
use crate::diffnet::params::axpy;
use crate::diffnet::{init_params, MetaParams, NetConfig};
use crate::gridmodel::{sample_collocation, CollocationBatch, Task};
use crate::losses::LossBreakdown;
use crate::optim::{AdamW, AdamWConfig, LrSchedule};

const PAIR_STREAM: u64 = 0x7061_6972;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MetaGradientMode {
    /// Drops second-order terms; the query gradient at the adapted parameters
    /// is used directly.
    FirstOrder,
    /// Back-propagates through the inner steps with Hessian-vector products.
    Exact,
}

impl FromStr for MetaGradientMode {
    type Err = MetaError;

    fn from_str(s: &str) -> Result<Self, MetaError> {
        match s {
            "first_order" => Ok(Self::FirstOrder),
            "exact" => Ok(Self::Exact),
            other => Err(MetaError::Config(format!("unknown meta gradient mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetaConfig {
    pub tasks_per_epoch: usize,
    pub inner_steps: usize,
    pub lr_inner: f64,
    pub lr_meta: f64,
    pub epochs: usize,
    /// Defaults to [`LrSchedule::meta_train`] over `epochs`.
    pub schedule: Option<LrSchedule>,
    pub gradient_mode: MetaGradientMode,
    pub batch_points: usize,
    pub exclusion_radius: f64,
    /// Query on a different frequency of the same model when one exists.
    pub cross_frequency: bool,
    pub record_wall_time: bool,
    /// Outer optimizer settings; the learning rate comes from the schedule.
    pub optimizer: AdamWConfig,
}

impl Default for MetaConfig {
    fn default() -> Self {
        Self {
            tasks_per_epoch: 5,
            inner_steps: 1,
            lr_inner: 2e-3,
            lr_meta: 1e-3,
            epochs: 2000,
            schedule: None,
            gradient_mode: MetaGradientMode::FirstOrder,
            batch_points: 1000,
            exclusion_radius: super::DEFAULT_EXCLUSION_RADIUS,
            cross_frequency: false,
            record_wall_time: true,
            optimizer: AdamWConfig::default(),
        }
    }
}

impl MetaConfig {
    pub fn validate(&self) -> Result<(), MetaError> {
        if self.tasks_per_epoch == 0 || self.inner_steps == 0 || self.batch_points == 0 {
            return Err(MetaError::Config("tasks_per_epoch, inner_steps and batch_points must be positive".into()));
        }
        if !(self.lr_inner >= 0.0 && self.lr_inner.is_finite()) {
            return Err(MetaError::Config(format!("bad inner learning rate {}", self.lr_inner)));
        }
        if !(self.lr_meta > 0.0 && self.lr_meta.is_finite()) {
            return Err(MetaError::Config(format!("bad meta learning rate {}", self.lr_meta)));
        }
        Ok(())
    }

    pub fn schedule(&self) -> LrSchedule {
        self.schedule.clone().unwrap_or_else(|| LrSchedule::meta_train(self.lr_meta, self.epochs as u64))
    }
}

/// One support/query pair with its batch seeds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct PairSpec {
    pub support: usize,
    pub query: usize,
    pub support_seed: u64,
    pub query_seed: u64,
}

/// Pairs for one epoch. Tasks are drawn without replacement while there are
/// enough of them.
pub fn sample_pairs(tasks: &[Task], cfg: &MetaConfig, seed: u64, epoch: usize) -> Vec<PairSpec> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[PAIR_STREAM, epoch as u64]));
    let picks: Vec<usize> = if cfg.tasks_per_epoch <= tasks.len() {
        sample(&mut rng, tasks.len(), cfg.tasks_per_epoch).into_vec()
    } else {
        (0..cfg.tasks_per_epoch).map(|_| rng.random_range(0..tasks.len())).collect()
    };
    picks
        .into_iter()
        .enumerate()
        .map(|(slot, support)| {
            let query = if cfg.cross_frequency {
                let siblings: Vec<usize> = (0..tasks.len())
                    .filter(|&j| {
                        std::sync::Arc::ptr_eq(&tasks[j].model, &tasks[support].model)
                            && tasks[j].source == tasks[support].source
                            && tasks[j].freq != tasks[support].freq
                    })
                    .collect();
                if siblings.is_empty() {
                    support
                } else {
                    siblings[rng.random_range(0..siblings.len())]
                }
            } else {
                support
            };
            let base = [epoch as u64, slot as u64];
            PairSpec {
                support,
                query,
                support_seed: derive_seed(seed, &[base[0], base[1], 0]),
                query_seed: derive_seed(seed, &[base[0], base[1], 1]),
            }
        })
        .collect()
}

fn batch(task: &Task, cfg: &MetaConfig, seed: u64) -> Result<CollocationBatch, MetaError> {
    Ok(sample_collocation(&task.model, task.source, task.freq, cfg.batch_points, seed, cfg.exclusion_radius)?)
}

/// Query loss and meta-gradient of one pair.
fn pair_gradient<P: Trainable>(
    theta: &P,
    tasks: &[Task],
    pair: &PairSpec,
    net: &NetConfig,
    cfg: &MetaConfig,
    obj: &ObjectiveConfig,
) -> Result<(LossBreakdown, P), MetaError> {
    let support = batch(&tasks[pair.support], cfg, pair.support_seed)?;
    let query = batch(&tasks[pair.query], cfg, pair.query_seed)?;
    let mut trajectory = Vec::with_capacity(cfg.inner_steps);
    let mut phi = theta.clone();
    for _ in 0..cfg.inner_steps {
        let (_, g) = phi.evaluate(&support, net, obj)?;
        let next = {
            let mut p = phi.clone();
            axpy(&mut p, -cfg.lr_inner, &g);
            p
        };
        trajectory.push(phi);
        phi = next;
    }
    let (loss, mut grad) = phi.evaluate(&query, net, obj)?;
    if cfg.gradient_mode == MetaGradientMode::Exact {
        // Each inner step maps phi to phi - a g(phi); its Jacobian-transpose
        // applied to v is v - a H(phi) v.
        for p in trajectory.iter().rev() {
            let hv = p.hvp(&grad, &support, net, obj)?;
            axpy(&mut grad, -cfg.lr_inner, &hv);
        }
    }
    Ok((loss, grad))
}

/// Mean query loss and meta-gradient over `pairs`. Contributions are summed in
/// sorted pair order, so the result does not depend on the order of `pairs`.
pub fn meta_gradient<P: Trainable>(
    theta: &P,
    tasks: &[Task],
    pairs: &[PairSpec],
    net: &NetConfig,
    cfg: &MetaConfig,
    obj: &ObjectiveConfig,
) -> Result<(LossBreakdown, P), (usize, MetaError)> {
    if tasks.is_empty() || pairs.is_empty() {
        return Err((0, MetaError::NoTasks));
    }
    let mut sorted = pairs.to_vec();
    sorted.sort_unstable();
    let results: Vec<Result<(LossBreakdown, P), (usize, MetaError)>> = sorted
        .par_iter()
        .map(|pair| {
            let r = pair_gradient(theta, tasks, pair, net, cfg, obj).map_err(|e| (pair.support, e))?;
            if r.0.total.is_finite() {
                Ok(r)
            } else {
                Err((pair.support, MetaError::NonFiniteLoss))
            }
        })
        .collect();
    let n = sorted.len() as f64;
    let mut total = LossBreakdown { physics: 0.0, ortho: 0.0, reg: 0.0, total: 0.0, weights: obj.weights };
    let mut grad: Option<P> = None;
    for r in results {
        let (loss, g) = r?;
        total.physics += loss.physics / n;
        total.ortho += loss.ortho / n;
        total.reg += loss.reg / n;
        total.total += loss.total / n;
        match grad.as_mut() {
            None => {
                let mut g = g;
                super::scale(&mut g, 1.0 / n);
                grad = Some(g);
            }
            Some(acc) => axpy(acc, 1.0 / n, &g),
        }
    }
    Ok((total, grad.expect("at least one pair")))
}

#[derive(Debug, Clone)]
pub struct MetaTrainOutput {
    pub params: MetaParams,
    /// Rows for epochs `0..=epochs`; row `e` is measured before update `e`,
    /// and the last row is evaluation only.
    pub log: Vec<LossRow>,
}

/// Meta-trains from `init`, or from a fresh initialization seeded by `seed`.
pub fn meta_train(
    tasks: &[Task],
    net: &NetConfig,
    cfg: &MetaConfig,
    obj: &ObjectiveConfig,
    seed: u64,
    init: Option<MetaParams>,
) -> Result<MetaTrainOutput, MetaError> {
    cfg.validate()?;
    net.validate()?;
    obj.weights.validate()?;
    match tasks.len() {
        0 => return Err(MetaError::NoTasks),
        1 => return Err(MetaError::Config("meta-training needs at least two tasks".into())),
        _ => {}
    }
    let mut theta = match init {
        Some(p) => p,
        None => {
            let (lr, feh) = init_params(seed, net)?;
            MetaParams { lr, feh }
        }
    };
    let schedule = cfg.schedule();
    let mut opt = AdamW::new(AdamWConfig { lr: cfg.lr_meta, ..cfg.optimizer })?;
    let mut log = Vec::with_capacity(cfg.epochs + 1);
    for epoch in 0..=cfg.epochs {
        let start = Instant::now();
        let pairs = sample_pairs(tasks, cfg, seed, epoch);
        let (loss, grad) = meta_gradient(&theta, tasks, &pairs, net, cfg, obj)
            .map_err(|(task, e)| MetaError::Training { epoch, task, source: Box::new(e) })?;
        let lr = schedule.lr_at(epoch as u64);
        if epoch < cfg.epochs {
            opt.set_lr(lr);
            adam_step(&mut opt, &mut theta, &grad)?;
        }
        let wall_ms = if cfg.record_wall_time { start.elapsed().as_millis() as u64 } else { 0 };
        log.push(LossRow::new(epoch, &loss, lr, wall_ms));
    }
    Ok(MetaTrainOutput { params: theta, log })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gridmodel::{generate_layered_model, SourceSpec};
    use std::sync::Arc;

    fn tasks() -> Vec<Task> {
        let src = SourceSpec::new(0.2, 0.02);
        let mut out = Vec::new();
        for seed in 0..3 {
            let m = Arc::new(generate_layered_model(seed, (0.4, 0.4), 2).unwrap());
            for f in [2.0, 3.0] {
                out.push(Task::new(m.clone(), src, f).unwrap());
            }
        }
        out
    }

    #[test]
    fn pairs_without_replacement_when_enough_tasks() {
        let tasks = tasks();
        let cfg = MetaConfig { tasks_per_epoch: 4, ..MetaConfig::default() };
        for epoch in 0..20 {
            let pairs = sample_pairs(&tasks, &cfg, 1, epoch);
            let mut support: Vec<usize> = pairs.iter().map(|p| p.support).collect();
            support.sort_unstable();
            support.dedup();
            assert_eq!(support.len(), 4);
            assert!(pairs.iter().all(|p| p.query == p.support && p.support_seed != p.query_seed));
        }
        assert_eq!(sample_pairs(&tasks, &cfg, 1, 3), sample_pairs(&tasks, &cfg, 1, 3));
        assert_ne!(sample_pairs(&tasks, &cfg, 1, 3), sample_pairs(&tasks, &cfg, 1, 4));
    }

    #[test]
    fn oversubscribed_epochs_draw_with_replacement() {
        let tasks = tasks();
        let cfg = MetaConfig { tasks_per_epoch: 10, ..MetaConfig::default() };
        let pairs = sample_pairs(&tasks, &cfg, 2, 0);
        assert_eq!(pairs.len(), 10);
        assert!(pairs.iter().all(|p| p.support < tasks.len()));
    }

    #[test]
    fn cross_frequency_queries_stay_on_the_model() {
        let tasks = tasks();
        let cfg = MetaConfig { tasks_per_epoch: 6, cross_frequency: true, ..MetaConfig::default() };
        for epoch in 0..5 {
            for p in sample_pairs(&tasks, &cfg, 3, epoch) {
                assert!(Arc::ptr_eq(&tasks[p.support].model, &tasks[p.query].model));
                assert_ne!(tasks[p.support].freq, tasks[p.query].freq);
            }
        }
    }

    #[test]
    fn config_validation_and_modes() {
        assert!(MetaConfig::default().validate().is_ok());
        assert!(MetaConfig { inner_steps: 0, ..MetaConfig::default() }.validate().is_err());
        assert!(MetaConfig { lr_inner: -1.0, ..MetaConfig::default() }.validate().is_err());
        assert!(MetaConfig { lr_meta: f64::NAN, ..MetaConfig::default() }.validate().is_err());
        assert_eq!("exact".parse::<MetaGradientMode>().unwrap(), MetaGradientMode::Exact);
        assert_eq!("first_order".parse::<MetaGradientMode>().unwrap(), MetaGradientMode::FirstOrder);
        assert!("second".parse::<MetaGradientMode>().is_err());
    }
}
