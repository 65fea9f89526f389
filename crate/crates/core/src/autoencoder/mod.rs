//! Shallow masked autoencoder: mask generation, forward/backward passes,
//! Adam training, and extraction of the scaled encoder/decoder pair used by
//! the manifold solvers.

mod mask;
mod network;
mod train;

pub use mask::{build_mask_1d, build_mask_2d, MaskMatrix};
pub use network::{
    autoencoder_forward, autoencoder_loss_grads, compute_aic, decoder_forward,
    decoder_forward_batch, decoder_jacobian, encoder_forward, extract_scaled_maps,
    nonlinear_projection_error, reconstruction_loss, Activation, AutoencoderParams, Gradients,
    MaskedMatrix, ScaledDecoder, ScaledEncoder,
};
pub use train::{
    adam_update, normalize_columns, split_indices, train_autoencoder, AdamState, EpochRecord,
    TrainingConfig, TrainingResult, ADAM_BETA1, ADAM_BETA2, ADAM_EPS, STAGNATION_RTOL,
};
