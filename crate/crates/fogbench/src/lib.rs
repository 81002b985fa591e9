//! Desk-scale workbench for weather-adversarial attacks on steering-angle
//! regression models.
//!
//! Procedurally generated road scenes with known steering angles stand in
//! for clean driving footage (domain A), and a parametric scattering model
//! produces the foggy domain (domain B). An unpaired image-to-image
//! generator is trained against a frozen steering predictor to emit fog
//! that forces a minimum deviation in the predicted angle. Evaluation
//! covers deviation statistics, objective image quality (MSE/PSNR/SSIM),
//! hyperparameter ablations, and an adversarial-training defense.

pub mod cli;
pub mod data;
pub mod error;
pub mod eval;
pub mod iqa;
pub mod losses;
pub mod manifest;
pub mod models;
pub mod ppm;
pub mod rng;
pub mod scenes;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
