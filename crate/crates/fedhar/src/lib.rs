//! Deterministic simulator of catastrophic forgetting in federated learning
//! for smartphone human-activity recognition.
//!
//! The crate trains a small 1-D CNN (196 conv filters, 4-wide max pooling,
//! 1024 dense units, softmax over six activities) on UCI-HAR-style inertial
//! windows, then replays two experiment scenarios: a lone client fine-tuning
//! on a stream of single-activity tasks, and the same client embedded in a
//! synchronous FedAvg federation next to a generalized client standing in for
//! the remaining participants. Per-round, per-class accuracy logs plus PCA and
//! t-SNE projections of the learned feature space are written as CSV and SVG.
//!
//! Everything is seeded: one root seed drives data splits, sampling, weight
//! initialization, dropout and shuffling through a splittable generator, so
//! any run can be reproduced byte for byte.

pub mod analysis;
pub mod checkpoint;
pub mod cli;
pub mod dataset;
pub mod fedsim;
pub mod fmt;
pub mod model;
pub mod rng;
pub mod synth;
pub mod tensor;
