//! Residual network: architecture, He initialisation, forward and backward
//! passes, checkpoints.

mod checkpoint;
pub(crate) mod layers;
mod network;
mod spec;

pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use network::{
    build_network, count_params, BatchStats, Gradients, Mode, NetworkParams, Param, ParamInfo, ParamKind, TrainStep,
};
pub use spec::{ArchitectureSpec, Downsample, Shortcut, StageSpec, StemSpec, RESNET34_STAGES};
