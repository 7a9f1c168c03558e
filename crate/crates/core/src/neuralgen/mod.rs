//! Self-contained neural-network stack for the convolutional VAE: tensors,
//! layers with hand-written reverse-mode gradients, Adam training, and
//! checkpointing.

mod checkpoint;
mod layer;
mod network;
mod tensor;
mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use layer::{Activation, Layer, LayerGrads, LayerKind, LayerParams, LayerSpec, Mode};
pub use network::{
    bce_loss, kl_divergence, reparameterize, total_loss, BatchSample, DeskWidths, DropoutMasks,
    NetworkGrads, VaeNetwork, BCE_EPS,
};
pub use tensor::Tensor;
pub use train::{history_to_csv, reconstruction_accuracy, train, EpochStats, TrainConfig};
