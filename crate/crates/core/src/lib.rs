//! Leave-one-out scoring-rule estimation for Gaussian Markov random fields.
//!
//! The crate is organised bottom up: [`scoring`] evaluates proper scoring
//! rules on Gaussian predictives, [`linalg`] provides the sparse and dense
//! kernels, [`gmrf`] builds and samples lattice fields, [`estimators`] fits
//! parameters, and [`experiments`] drives the simulation studies.

pub mod estimators;
pub mod experiments;
pub mod gmrf;
pub mod linalg;
pub mod par;
pub mod rng;
pub mod scoring;
