//! Attention-based recurrent sequence generator.
//!
//! A small reverse-mode differentiation core ([`tape`]) carries a stacked
//! bidirectional GRU encoder ([`cells`]), content-based and location-aware
//! attention ([`attention`]) and the generator itself ([`model`]). Training
//! uses AdaDelta with a staged schedule ([`training`]); decoding is beam search
//! ([`decoding`]). A synthetic transduction task ([`data`]) and symbol error
//! rate and alignment metrics ([`eval`]) make the whole thing testable on a
//! desk.

pub mod attention;
pub mod cells;
pub mod checkpoint;
pub mod config;
pub mod data;
pub mod decoding;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod model;
pub mod params;
pub mod pipeline;
pub mod tape;
pub mod tensor;
pub mod training;

#[cfg(test)]
mod testutil;

pub use error::{Error, Result};
pub use params::{Gradients, ParamSet, Parameter};
pub use tape::{Tape, Var};
pub use tensor::Tensor;
