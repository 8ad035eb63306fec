//! Semantic text communication between two transceivers whose training
//! corpora differ, with periodic INT8-quantized parameter exchange and
//! data-size-weighted aggregation, plus the self-trained and classic
//! (Huffman + Reed-Solomon + 16-QAM) baselines.

pub mod channel;
pub mod classic;
pub mod coop;
pub mod corpus;
pub mod error;
pub mod harness;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod quant;
pub(crate) mod util;

pub use error::*;
