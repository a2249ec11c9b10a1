//! The endmember-guided two-stream network.
//!
//! The endmember stream (E-Net) maps bundle signatures to their pseudo-labels;
//! the unmixing stream (UR-Net) encodes pixels into softmax abundances and
//! decodes them back into spectra. Encoder blocks of the two streams alias the
//! same parameters (all four for `pw`, the last two for `ss`), so the joint
//! loss `L_E + L_UR` trains them together.

mod checkpoint;
mod loss;
mod network;
mod train;

pub use checkpoint::{
    load_checkpoint, save_checkpoint, CheckpointHeader, CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};
pub use loss::{loss_e, loss_ur, CLAMP};
pub use network::{
    build_network, Ablation, LossParts, Network, NetworkConfig, Terms, Variant, Widths,
};
pub use train::{bundle_tensors, infer_abundances, train, train_network, EpochLog, TrainConfig};
