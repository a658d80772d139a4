//! Filtering, spectral and statistical primitives.

pub mod filter;
pub mod spectrum;
pub mod stats;

pub use filter::{Biquad, Sos};
