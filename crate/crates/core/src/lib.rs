//! A small laboratory for energy-based adversarial training.
//!
//! The crate bundles everything needed to train and study an energy-based
//! GAN at desk scale: a reverse-mode autodiff engine ([`tensor`]), MLP
//! generators and auto-encoder discriminators ([`nets`]), the hinge and
//! pull-away objectives ([`objectives`]), alternating training
//! ([`trainer`]), an exact oracle for the equilibrium theory on finite
//! sample spaces ([`equilibrium`]), evaluation metrics ([`metrics`]),
//! datasets and image files ([`data`]), and a grid-search harness
//! ([`harness`]).

pub mod config;
pub mod data;
pub mod equilibrium;
pub mod error;
pub mod harness;
pub mod metrics;
pub mod nets;
pub mod objectives;
pub mod rng;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
pub use tensor::{Graph, Tensor, Var};
