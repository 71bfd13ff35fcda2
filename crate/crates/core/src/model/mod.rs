//! The fusion model: tokenization of a scan group, attention encoder with
//! per-base-record Gaussian latents, pointwise and set decoders, the ELBO,
//! training and whole-dataset reconstruction.

mod checkpoint;
mod config;
mod network;
mod normalize;
mod reconstruct;
mod train;

pub use checkpoint::{ElboTerms, LatentEncoding, ModelCheckpoint, MODEL_FORMAT_VERSION, MODEL_KIND};
pub use config::ModelConfig;
pub use network::{ElboVars, EncodedGroup, FusionNet, SetDecoder, SIGMA_FLOOR};
pub use normalize::Standardizer;
pub use reconstruct::{reconstruct_dataset, reconstruct_group, GroupOutput, Reconstruction};
pub use train::{draw_noise, moving_average, train, train_with, StepRecord, TrainOutcome};

/// Closed-form `KL(N(mu, sigma^2) || N(0, I))` for one diagonal Gaussian.
pub fn gaussian_kl(mu: &[f64], sigma: &[f64]) -> f64 {
    mu.iter()
        .zip(sigma)
        .map(|(m, s)| 0.5 * (m * m + s * s - 1.0 - (s * s).ln()))
        .sum()
}
