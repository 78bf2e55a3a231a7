//! Latent fingerprint segmentation.
//!
//! A small anchor-based detector finds fingermarks and examiner attention
//! regions; every fingermark box is segmented by a mask head that reads
//! aspect-preserving, zero-padded RoI features. Results from several
//! grayscale renderings of the input are fused by per-pixel voting.

pub mod attention;
pub mod cli;
pub mod config;
pub mod detector;
pub mod error;
pub mod fusion;
pub mod imaging;
pub mod losses;
pub mod mask;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod overlay;
pub mod seghead;
pub mod synthdata;
pub mod trainer;

pub use error::{Error, Result};
