//! Soil-temperature forecasting with transformer-family models (vanilla,
//! Reformer, Informer, Autoformer, ETSformer) and CNN/LSTM baselines, built
//! on a small reverse-mode autodiff engine.

pub mod attention;
pub mod autodiff;
pub mod checks;
pub mod data;
pub mod error;
pub mod fft;
pub mod models;
pub mod nn;
pub mod reversible;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::Tensor;
