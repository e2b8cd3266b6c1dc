//! Quantized CNN-LSTM time-series classification: fixed-point arithmetic,
//! synthetic data, training, and a cycle-counting accelerator model.
#![no_std]
extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod analysis;
pub mod datagen;
pub mod error;
pub mod estimate;
pub mod fsm;
pub mod fxp;
pub mod model;
pub mod quant;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
