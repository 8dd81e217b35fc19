//! Cooperative herding of repulsion-driven evaders with backstepping control barrier functions.
//!
//! Herders steer evaders into a circular goal region while keeping evader pairs
//! apart. Each herder projects a nominal control onto the half-planes produced by
//! the goal and pairwise barriers.

pub mod barrier;
pub mod controller;
pub mod dynamics;
pub mod model;
pub mod qp;
pub mod sim;
