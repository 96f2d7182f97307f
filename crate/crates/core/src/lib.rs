//! Speaker-adaptive multimodal acoustic modelling.
//!
//! A linguistic encoder and an acoustic encoder map text or speech frames to
//! a Gaussian latent embedding; a speaker-adaptive decoder maps that latent
//! back to acoustic frames. Speaker identity lives in small per-layer scaling
//! and bias components which can be re-estimated for unseen speakers from
//! transcribed (text-to-speech stack) or untranscribed (speech-to-speech
//! stack) data.
//!
//! The crate is `no_std` and only needs `alloc`; file formats and the CLI live
//! in the companion crate.
#![no_std]

extern crate alloc;
#[cfg(any(test, feature = "std"))]
extern crate std;

pub mod error;
pub mod layers;
pub mod network;
pub mod numcore;
pub mod objectives;
pub mod rng;
pub mod strategies;
pub mod synthcorpus;
pub mod trainer;

pub use error::{Error, Result};
