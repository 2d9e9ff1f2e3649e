//! Continuous-time multivariate time-series forecasting.
//!
//! The model encodes a window of `N` exogenous series plus the target with a
//! tensorized GRU (one hidden row per variable), summarizes the hidden states
//! with tandem temporal/variable attention, maps the resulting context vector
//! to a Gaussian posterior over an initial latent state, and integrates a
//! GRU-shaped vector field from that state to any set of positive (possibly
//! fractional) time offsets. A linear readout turns each latent point into a
//! target prediction.
//!
//! Everything is differentiated with the small tape engine in [`tape`],
//! including every step taken by the ODE solver.

pub mod attention;
pub mod checkpoint;
pub mod config;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod latent;
pub mod model;
pub mod odenet;
pub mod synthetic;
pub mod tape;
pub mod tensor;
pub mod tgru;
pub mod training;

pub use config::{ModelConfig, SolverConfig, SolverMethod, Variant};
pub use error::{Error, Result};
pub use gradcheck::grad_check;
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;
