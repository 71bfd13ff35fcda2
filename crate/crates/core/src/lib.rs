//! Nested Fusion: per-point latent distributions for nested multi-resolution
//! measurement datasets.
//!
//! A [`MultiScaleDataset`] stacks scales from coarsest to finest, with nesting
//! maps linking every coarse record to the finer records covering the same
//! physical area. The model encodes each coarsest-scale record together with
//! its nested descendants as one token sequence and returns a diagonal
//! Gaussian latent for every finest-scale member. A pointwise decoder
//! reconstructs finest-scale records; order-invariant set decoders
//! reconstruct every coarser record from the latents it covers.
//!
//! Modules:
//! - [`dataset`]: data model, nesting algebra, validation, synthetic oracle, file I/O.
//! - [`diff`]: reverse-mode differentiation over dense matrices, layers, optimizers.
//! - [`model`]: tokenization, encoder, decoders, ELBO, training, reconstruction.
//! - [`baselines`]: joint and concatenative flattenings with PCA and VAE models.
//! - [`eval`]: R², Wasserstein separations, heatmaps, spatial colour export.

pub mod baselines;
pub mod container;
pub mod dataset;
pub mod diff;
pub mod error;
pub mod eval;
pub mod model;

pub use dataset::{DataScale, MultiScaleDataset, NestingMap, ScanGroup};
pub use error::{Error, Result};
