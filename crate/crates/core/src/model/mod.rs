//! The detector network, its configuration and checkpoint format.

mod checkpoint;
mod config;
pub(crate) mod kernels;
mod net;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, Moments};
pub use config::{Activation, DownsamplingMode, ModelConfig};
pub use net::{class_probabilities, ForwardOutput, Gradients, Mode, Model, Parameter, SampleOutput, Tape};

/// Randomly initialized model reproducible from `seed`.
pub fn init_model(config: ModelConfig, seed: u64) -> crate::Result<Model> {
    Model::init(config, seed)
}

/// Total scalar parameter count.
pub fn count_parameters(model: &Model) -> usize {
    model.count_parameters()
}
