//! Map-aware human trajectory and pose forecasting with a follow-ahead
//! robot controller, evaluated in a deterministic 2D grid simulator.
//!
//! The crate is organized as a pipeline:
//!
//! - [`grid`] — occupancy grids, local-map extraction, visibility masking,
//!   collision and line-of-sight queries.
//! - [`encode`] — skeleton sequences, trajectory heatmaps, soft-argmax
//!   decoding and the pixel/world georeferencing they share.
//! - [`nn`] — a minimal dense-tensor reverse-mode autodiff kernel with
//!   gradient verification and SGD/Adam optimizers.
//! - [`pathnet`] — convolutional encoder/decoder trajectory predictor over
//!   occupancy + trajectory maps, trained with a four-term loss.
//! - [`posenet`] — GRU pose completion conditioned on the predicted
//!   trajectory.
//! - [`control`] — unicycle model, viewing-quality costs, finite-horizon
//!   dynamic-programming planner, greedy EKF baseline and oracle planner.
//! - [`sim`] — map generators, scripted skeleton walkers, dataset
//!   synthesis, closed-loop rollouts and evaluation metrics.

pub mod control;
pub mod encode;
pub mod geo;
pub mod grid;
pub mod nn;
pub mod pathnet;
pub mod posenet;
pub mod sim;

pub use geo::{MapGeo, Vec2};
pub use grid::{ActorFrame, OccupancyGrid};
