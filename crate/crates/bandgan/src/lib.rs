//! Unpaired speech enhancement in log-Mel feature space.
//!
//! Two generators map noisy features to clean features and back; on the
//! clean side a bank of discriminators each judges one contiguous band of
//! mel bins, and generator banks can be split per metadata subset
//! (gender, noise type). Everything is CPU-only and bitwise deterministic
//! given a seed, so the whole pipeline is verifiable at desk scale.
//!
//! Run `cargo run --example <name>` for a tour of each capability, or use
//! the `bandgan` binary for the end-to-end pipeline
//! (`synth`, `extract`, `train`, `enhance`, `eval`, `render`, `gradcheck`).

pub mod autodiff;
pub mod checkpoint;
pub mod corpus;
pub mod enhance;
pub mod error;
pub mod features;
pub mod losses;
pub mod models;
pub mod render;
pub mod rng;
pub mod routing;
pub mod training;
pub mod verify;
pub mod wav;

pub use error::{Error, Result};
