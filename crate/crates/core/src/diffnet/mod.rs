//! Differentiable network core: the low-rank PINN, its frequency hypernetwork,
//! a dense baseline, jet propagation and hand-derived reverse accumulation.

use std::path::PathBuf;

pub mod checkpoint;
pub mod feh;
pub mod net;
pub mod params;
pub mod scalar;

pub use checkpoint::{Checkpoint, Component};
pub use feh::{feh_backward, feh_forward, feh_tape, FehTape};
pub use net::{
    lrpinn_backward, lrpinn_forward, lrpinn_forward_jet, lrpinn_tape, vanilla_backward, vanilla_forward,
    vanilla_forward_jet, vanilla_tape, JetBatch, Points, Stream, Tape, STREAMS,
};
pub use params::{
    compose_weight, init_params, init_vanilla, FehParams, LrPinnParams, MetaParams, NetConfig, ParamTensors,
    SigmaSource, SingularValues, TunedParams, VanillaParams,
};
pub use scalar::{Dual, Real};

#[derive(Debug, thiserror::Error)]
pub enum DiffnetError {
    #[error("invalid network config: {0}")]
    Config(String),
    #[error("shape mismatch in {what}: expected {expected}, found {found}")]
    Shape { what: String, expected: usize, found: usize },
    #[error("non-finite values after layer {layer}")]
    NonFinite { layer: String },
    #[error("frequency must be positive, got {freq}")]
    Frequency { freq: f64 },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}
