//! Reference detectors: LSTM autoencoder, variational autoencoder and
//! k-means over flattened windows. All produce one non-negative score per
//! window and plug into the same thresholding as the diffusion detector.

mod autoencoder;
mod kmeans;

pub use autoencoder::{gaussian_kl, SeqAutoencoder};
pub use kmeans::{kmeans_fit, kmeans_score, KMeansModel};
