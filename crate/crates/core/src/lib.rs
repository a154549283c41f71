//! Hessian-preconditioned coreset selection and training on weighted subsets.
//!
//! Selection represents every training example by a (curvature-scaled)
//! gradient proxy, greedily picks medoids that cover those vectors under a
//! facility-location loss, and weights each medoid by the number of examples
//! it represents. Training then runs first- or second-order updates on the
//! weighted subset.

pub mod coreset;
pub mod curvature;
pub mod data;
pub mod error;
pub mod harness;
pub mod models;
pub mod numerics;
pub mod optim;

pub use error::{Error, Result};
