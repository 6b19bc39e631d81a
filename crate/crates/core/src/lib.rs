//! Topographic independent component analysis on image patches.
//!
//! The pipeline runs bottom-up through the modules:
//!
//! - [`image`]: grayscale images, frame sequences, normalization and patches
//! - [`whitening`]: PCA reduction and whitening (`z = V x`) and its inverse
//! - [`topography`]: the torus lattice and its neighborhood function
//! - [`estimation`]: gradient training of orthonormal filters `W`, basis `A`
//! - [`activation`]: activations `s = W V x`, energies `s²`, reconstructions
//! - [`stimulus`]: moving bars, basis probes, synthetic scenes and pans
//! - [`analysis`]: autocorrelation, adjacent energy correlation, locality,
//!   permutation tests
//!
//! Every persisted artifact uses the formats in [`matrix_io`].

pub mod activation;
pub mod analysis;
pub mod error;
pub mod estimation;
pub mod image;
mod linalg;
pub mod matrix_io;
pub mod stimulus;
pub mod topography;
pub mod whitening;

pub use nalgebra;

pub use activation::{
    compute_activation, reconstruct, relabel_trace, shuffle_frames, ActivationTrace,
};
pub use analysis::{
    adjacent_correlation, autocorrelation, autocorrelation_with, cluster_locality,
    permutation_test, AdjacencyReport, AutocorrOptions, AutocorrReport, Quantity,
};
pub use error::{Error, Result};
pub use estimation::{
    ica_train, symmetric_orthonormalize, tica_gradient, tica_objective, train, BasisModel,
    ModelKind, TrainConfig,
};
pub use image::{FrameSequence, GrayImage, PatchSet};
pub use linalg::orthonormality_error;
pub use topography::{build_topography, shuffle_topography, Topography};
pub use whitening::{dewhiten, fit_whitening, whiten, WhiteningModel};
