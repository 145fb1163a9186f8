//! Affect probing over a frozen backbone: interleaved sequence construction,
//! the backbone stub, the latent probe head and its hybrid regression loss.

pub mod backbone;
pub mod head;
pub mod loss;
pub mod sequence;
pub mod train;

pub use backbone::{BackboneConfig, FrameHidden, FrozenBackbone};
pub use head::ProbeHead;
pub use loss::{emo_loss, emo_loss_with_grad};
pub use sequence::{build_interleaved_sequence, InterleavedSequence};
pub use train::{train_probe, ProbeConfig, TrainedProbe};
