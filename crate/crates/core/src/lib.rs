//! Reduced order modeling of parametric wave propagation.
//!
//! The pipeline runs in two phases. Offline, a Gaussian-process driven
//! Bayesian optimization loop picks training parameters while an incremental
//! SVD compresses their high-fidelity snapshots into one linear basis; a
//! convolutional autoencoder, an LSTM and a feed-forward network are then
//! trained on the projected data. Online, the trained bundle predicts full
//! fields for new parameters, which feed Monte Carlo uncertainty propagation,
//! damage indices and Sobol sensitivity analysis.

pub mod bo;
pub mod gpr;
pub mod hfm;
pub mod io;
pub mod nn;
pub mod reduce;
pub mod rom;
pub mod seed;
pub mod uq;
