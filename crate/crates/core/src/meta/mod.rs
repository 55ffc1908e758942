//! Meta-learning of the shared initialization, single-task fine-tuning and the
//! baselines it is compared against.

pub mod adapt;
pub mod objective;
pub mod rank;
pub mod train;

pub use adapt::{
    batch_seed, fine_tune, meta_test, random_init_baseline, vanilla_baseline, AdaptConfig, AdaptOutput, Adapted,
    EvalHook, FehMode, Predictor,
};
pub use objective::{ObjectiveConfig, Trainable};
pub use rank::{reduce_rank, retained_indices, retained_threshold, RankReductionSpec};
pub use train::{meta_gradient, meta_train, sample_pairs, MetaConfig, MetaGradientMode, MetaTrainOutput, PairSpec};

use crate::diffnet::{DiffnetError, ParamTensors};
use crate::gridmodel::ModelError;
use crate::losses::{LossBreakdown, LossError};
use crate::optim::{AdamW, OptimError};

/// Radius in km of the disk around the source kept free of collocation points.
pub const DEFAULT_EXCLUSION_RADIUS: f64 = 0.02;

#[derive(Debug, thiserror::Error)]
pub enum MetaError {
    #[error(transparent)]
    Diffnet(#[from] DiffnetError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Optim(#[from] OptimError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("{0}")]
    Config(String),
    #[error("no tasks to train on")]
    NoTasks,
    #[error("non-finite loss")]
    NonFiniteLoss,
    #[error("epoch {epoch}, task {task}: {source}")]
    Training { epoch: usize, task: usize, source: Box<MetaError> },
    #[error("checkpoint rank {checkpoint} does not match configured rank {config}")]
    RankMismatch { checkpoint: usize, config: usize },
}

/// One line of a loss log.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossRow {
    pub epoch: usize,
    pub physics: f64,
    pub ortho: f64,
    pub reg: f64,
    pub total: f64,
    pub lr: f64,
    pub wall_ms: u64,
}

impl LossRow {
    pub fn new(epoch: usize, loss: &LossBreakdown, lr: f64, wall_ms: u64) -> Self {
        Self { epoch, physics: loss.physics, ortho: loss.ortho, reg: loss.reg, total: loss.total, lr, wall_ms }
    }
}

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Deterministic child seed of `master` for the path `parts`.
pub fn derive_seed(master: u64, parts: &[u64]) -> u64 {
    parts.iter().fold(splitmix(master), |h, &p| splitmix(h ^ splitmix(p)))
}

pub(crate) fn scale<P: ParamTensors<f64>>(p: &mut P, c: f64) {
    for s in p.tensors_mut() {
        for x in s {
            *x *= c;
        }
    }
}

pub(crate) fn adam_step<P: ParamTensors<f64>>(opt: &mut AdamW, p: &mut P, g: &P) -> Result<(), OptimError> {
    let grads: Vec<&[f64]> = g.tensors().into_iter().map(|t| t.2).collect();
    let mut params = p.tensors_mut();
    opt.step(&mut params, &grads)
}
