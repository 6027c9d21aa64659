//! Kernel-first blind deconvolution.
//!
//! The crate covers a 1D study of joint versus kernel-first estimation
//! ([`toy1d`]), the 2D blur model and kernel synthesis ([`blur`]), a
//! differentiable Wiener non-blind solver ([`nonblind`]), DDPM machinery and
//! the guided kernel sampler ([`diffusion`]), a small conditional noise
//! predictor with hand-written gradients ([`denoiser`]) and evaluation
//! metrics ([`metrics`]).

pub mod error;
pub mod fft;
pub mod image;
pub mod metrics;
pub mod rng;
pub mod sampler;
pub mod blur;
pub mod csv;
pub mod denoiser;
pub mod diffusion;
pub mod nonblind;
pub mod scenes;
pub mod toy1d;

pub use error::{Error, Result};
pub use image::{Image, Kernel};
