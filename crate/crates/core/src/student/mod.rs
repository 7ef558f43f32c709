//! History-aware diffusion transformer student.
//!
//! Every trajectory state is tokenised by one shared patch embedder, gets the
//! shared positional table plus a token-wise time embedding marking its
//! origin step, and is processed by adaLN-modulated transformer blocks. The
//! lower `n_history` blocks may attend to earlier trajectory states according
//! to the mask option; the upper blocks only see the current state.

mod cache;
mod config;
mod mask;
mod model;
mod params;
mod target;

pub use cache::KVCache;
pub use config::{MaskOption, PredictionTarget, StudentConfig};
pub use mask::{allowed_steps, build_mask, effective_option, train_mask};
pub use model::{
    forward_step, forward_train, forward_train_tape, forward_train_with_attention, patch_embed, patchify, unpatchify,
    StepOutput, TrainForward,
};
pub use params::{LayerLayout, Layout, StudentParams};
pub use target::target_transform;
