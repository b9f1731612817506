//! Small temporal-convolution encoder with hand-written backpropagation,
//! dropout and layer-drop, plus optimizers and checkpoints.

mod checkpoint;
mod encoder;
mod optim;
mod params;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use encoder::{backward, forward, EncoderConfig, Mode, Tape};
pub use optim::{clip_global_norm, Adam, AdamConfig, Optimizer, Sgd};
pub use params::{NamedTensor, ParameterSet};
