//! Joint generative forecasting of chaotic systems.
//!
//! A generative model learns the joint law of short windows of consecutive
//! states. Forecasts come from sieving samples whose older states match the
//! observed history, and the spread of the matched samples yields
//! uncertainty estimates that need no ground truth.

pub mod dynamics;
pub mod error;
pub mod eval;
mod format;
pub mod genmodel;
pub mod inference;
pub mod linalg;
pub mod rng;
pub mod transport;
pub mod uq;
pub mod windows;

pub use error::{Error, Result};
