//! Task embeddings for goal-based reinforcement-learning environments.
//!
//! Two tasks are similar when observing whether a randomly drawn agent from
//! a diverse population solves one of them tells you a lot about whether it
//! solves the other. This crate measures that with a plug-in mutual
//! information estimate over binary success outcomes, turns the estimates
//! into ordinal triplet and pair constraints, and fits an embedding network
//! under a Bradley-Terry-Luce likelihood so that inner products track
//! similarity and norms track difficulty.

pub mod error;
pub mod envs;
pub mod numcore;
pub mod population;
pub mod similarity;
pub mod embedding;
pub mod benchmarks;

pub use error::{Error, Result};
