//! Spectral measurement toolkit for gradient-based explanations.
//!
//! This crate trains small image classifiers from scratch, produces saliency
//! maps for them with the common gradient-based attribution methods, and
//! measures how much high-frequency content those maps carry. The central
//! quantity is the expected frequency of a map's radially averaged power
//! spectrum: smooth maps score low, noisy ones score high, and the difference
//! between a method's score and the raw-gradient score quantifies how much
//! smoothing the method buys. A kernel workbench reproduces the same story
//! analytically for Laplace and Gaussian kernels and for empirical neural
//! tangent kernels.
//!
//! # Layout
//!
//! * [`tensor`], [`conv`], [`rng`]: flat `f64` tensors, cross-correlation,
//!   and counter-based random streams. Everything else builds on these.
//! * [`net`]: a declarative layer vocabulary (dense, conv, pooling, batch
//!   norm, skip blocks) with softplus activations whose sharpness `beta`
//!   interpolates up to exact ReLU, plus hand-written forward and backward
//!   passes and a binary checkpoint format.
//! * [`train`]: minibatch training with an accuracy cap used as an early
//!   stopping rule, so models of different smoothness are compared at matched
//!   validation accuracy rather than matched epochs.
//! * [`explain`]: vanilla gradients, SmoothGrad, integrated gradients, guided
//!   backprop, and Grad-CAM, all emitting `H x W` saliency maps.
//! * [`spectral`]: rank normalization, 2-D power spectra, radial averaging,
//!   expected frequency, and slope fitting.
//! * [`kernellab`]: closed-form kernel spectra, covariance shifts under input
//!   smoothing, empirical NTK Grams and their eigenvalue decay, trajectory
//!   gradient spectra, and the band-limited gap scaling experiment.
//! * [`data`]: Gaussian random field synthesis, IDX image archives, binary
//!   saliency rasters, and CSV reports.
//!
//! # Conventions
//!
//! Images and activations are `[C, H, W]`, saliency maps are `[H, W]`, and
//! frequencies are in cycles per pixel on `[0, 0.5]`. All fallible operations
//! return [`error::Result`]; functions only panic on internal invariant
//! violations, never on bad user input. Randomness always flows through
//! [`rng::RngStream`] so that every result is reproducible from a seed and
//! independent of thread count.

pub mod conv;
pub mod data;
pub mod error;
pub mod explain;
pub mod kernellab;
pub mod net;
pub mod rng;
pub mod spectral;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::Tensor;
