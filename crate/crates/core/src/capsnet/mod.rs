//! Vector capsule network with routing-by-agreement and a reconstruction decoder.

mod checkpoint;
mod config;
mod loss;
mod model;
mod routing;
mod train;

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, load_checkpoint_for, save_checkpoint, CHECKPOINT_MAGIC,
    CHECKPOINT_VERSION,
};
pub use config::{Architecture, CapsNetConfig};
pub use loss::{margin_loss, margin_loss_from_lengths, MarginParams};
pub use model::{CapsNetModel, ForwardOutput, LossTerms, Mask, INIT_STD, PARAM_NAMES};
pub use routing::{dynamic_routing, pose_transform, squash, DigitCaps, RoutingState};
pub use train::{train, train_with_progress, BatchProgress, TrainLog, TrainOptions};
