//! Weight-pool compression and bit-serial lookup-table inference for
//! convolutional networks, with a flash/SRAM access-count cost model.
//!
//! The pipeline: [`pooler::compress_model`] clusters channel-axis weight
//! vectors into a shared pool, [`quant::build_lut`] turns the pool into a
//! one-bit dot-product table, and [`engine::run_network`] executes the
//! network bit-serially while counting modeled memory traffic.

pub(crate) mod codec;
pub mod costmodel;
pub mod engine;
pub mod error;
pub mod fixtures;
pub mod model;
pub mod pooler;
pub mod quant;
pub mod tensor;

pub use error::{Error, ErrorCategory, Result};
pub use tensor::Tensor;
