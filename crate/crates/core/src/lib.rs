//! Bundle adjustment for scenes with articulated moving objects.
//!
//! Camera poses, static landmarks, per-frame dynamic points, rigid segment
//! lengths and per-part object motions are estimated jointly by
//! Levenberg-Marquardt over a [`graph::FactorGraph`].

pub mod geometry;
pub mod graph;
pub mod metrics;
pub mod numfmt;
pub mod simulation;
pub mod solver;
