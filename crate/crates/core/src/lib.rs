//! Core algorithms for forecasting a data-scarce target epidemic with
//! knowledge transferred from a related source disease.
//!
//! The crate is `no_std` (it needs `alloc`) and performs no IO. It covers:
//!
//! - [`simcore`]: chain-binomial SIRD simulation and the target-disease grid,
//! - [`datasets`]: lagged windows, warm-up alignment, cutoffs and splits,
//! - [`forest`]: a weighted random-forest regressor,
//! - [`neural`]: a small feed-forward regression network with layer freezing,
//! - [`transfer`]: the five modelling regimes, including TrAdaBoost,
//! - [`evaluate`]: percent MAE, best-model counts and similarity maps.
//!
//! File formats, configuration and the command line live in the `xferepi`
//! crate. The `runtime-simd` feature lets the network kernels select
//! AVX/FMA code paths at run time, which needs `std` in a dependency.
#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod datasets;
pub mod error;
pub mod evaluate;
pub mod forest;
pub mod neural;
pub mod rng;
pub mod simcore;
pub mod stats;
pub mod transfer;

pub use error::{Error, Result, Warning};
