//! Energy-based reasoning over latent trajectories.
//!
//! An encoder maps a problem to a context vector `h`, a planner minimizes a learned energy
//! `E(h, z)` over a `d x T` latent trajectory `z`, and a decoder reads the answer from the last
//! trajectory column. The crate covers the three synthetic tasks (shortest-path node labels,
//! arithmetic expression values, planted 3-SAT), training, planning and the diagnostics used to
//! study when planning helps or hurts.

pub mod nn;
pub mod rng;
pub mod tasks;
pub mod model;
pub mod planner;
pub mod metrics;
pub mod config;
pub mod training;
pub mod experiments;
pub mod diagnostics;
