//! Structural estimation toolkit.
//!
//! State-space filtering, global optimizers, segmentation, a two-segment
//! diffusion model, Dirichlet-process mixed logit, a regret-based auction
//! demand model, counterfactual simulators and synthetic data generators.

pub mod auction;
pub mod clustering;
pub mod counterfactual;
pub mod designs;
pub mod diffusion;
pub mod dpmix;
pub mod error;
pub mod factors;
pub mod kalman;
pub mod linalg;
pub mod optim;
pub mod par;
pub mod quad;
pub mod rng;
pub mod stats;
pub mod synth;

pub use error::{Error, Result};
