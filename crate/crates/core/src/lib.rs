//! Risk-aware stock ranking via split variational adversarial training.
//!
//! The crate is self-contained: a reverse-mode autodiff tape over dense f64
//! tensors, market-data ingestion and synthesis, a ranking backbone, a
//! variational perturbation generator, the return-weighted adversarial
//! training loop, ranking-entropy risk quantification and a daily top-k
//! backtester.

pub mod adam;
pub mod backtest;
pub mod checkpoint;
pub mod data;
pub mod entropy;
pub mod error;
pub mod losses;
pub mod model;
pub mod params;
pub mod ranker;
pub mod tape;
pub mod tensor;
pub mod trainer;
pub mod verify;
pub mod vpg;

pub use error::{Result, SvatError};
