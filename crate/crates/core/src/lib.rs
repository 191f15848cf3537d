//! Learning from noisy multi-task labels by adversarial joint-distribution
//! matching, at desk scale.
//!
//! The library couples three pieces:
//!
//! * an encoder that maps inputs to a latent vector plus one prediction per
//!   label task (discrete classes or continuous targets),
//! * a decoder that maps (prior noise, noisy labels) back to the input space,
//! * a multi-stream discriminator that scores the joint tuple and each
//!   marginal, trained with hinge losses against the encoder/decoder pair.
//!
//! Supporting modules provide a small reverse-mode autodiff engine
//! ([`autodiff`]), label-noise synthesis ([`noisegen`]), procedural datasets
//! ([`datagen`]), training loops with the standard baselines ([`trainer`]),
//! and a sweep harness for the distribution-matching weight ([`lambdastudy`]).

pub mod autodiff;
pub mod datagen;
pub mod error;
pub mod lambdastudy;
pub mod models;
pub mod noisegen;
pub mod objectives;
pub mod rng;
pub mod trainer;

pub use error::{Error, Result};
