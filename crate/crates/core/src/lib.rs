//! Zero-shot STL planning on variable binary maze maps.
//!
//! The pipeline decomposes a specification into disjunction-free branches,
//! picks one with a cheap structural/map heuristic, grounds its sub-tasks in
//! time with a learned step predictor, synthesizes a nominal trajectory with a
//! map-conditioned autoregressive generator and verifies a closed-loop
//! rollout under double-integrator or unicycle dynamics.

pub mod checkpoint;
pub mod dnf;
pub mod dynamics;
mod float_serde;
pub mod generator;
pub mod heuristic;
pub mod maze;
pub mod nn;
pub mod pipeline;
pub mod stl;
pub mod time_predictor;
