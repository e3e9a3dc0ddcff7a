//! Active learning of a library of probabilistic movement primitives (ProMPs).
//!
//! A teacher demonstrates trajectories for task instances the learner picks.
//! Each demonstration is encoded as basis-function weights and either folded
//! into an existing primitive or used to seed a new one. The learner scores
//! candidate task instances with an uncertainty measure and asks for the most
//! uncertain one next.
//!
//! Module map:
//!
//! - [`basis`]: normalized radial basis features on a phase variable.
//! - [`promp`]: a single primitive (fit, marginal, conditioning, sampling).
//! - [`mixture`]: the incrementally learned library and demonstration routing.
//! - [`context`]: planar object poses, grasp offsets and task likelihoods.
//! - [`sampler`]: uncertainty scores and query selection.
//! - [`feasibility`]: the two-class feasible / infeasible extension.
//! - [`simworld`]: a planar grasp world that plays the teacher.
//! - [`experiment`]: seeded trials, strategy comparison and heatmaps.
//! - [`persist`]: JSON library files and trajectory CSVs.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod basis;
pub mod context;
pub mod error;
pub mod experiment;
pub mod feasibility;
pub mod gmm;
pub mod linalg;
pub mod mixture;
pub mod persist;
pub mod promp;
pub mod sampler;
pub mod simworld;

pub use error::{Error, Result};
