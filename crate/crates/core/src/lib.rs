//! Optimistic online convex optimization: learners, predictors and
//! network resource-management environments.

pub mod caching;
pub mod constrained;
pub mod environments;
pub mod error;
pub mod experts;
pub mod fairness;
pub mod harness;
pub mod learners;
pub mod memory;
pub mod optimistic;
pub mod predictors;
pub mod sets;
pub mod solver;

pub use error::{Error, Result};
pub use learners::OnlineLearner;
pub use sets::{BregmanKind, DenseVector, FeasibleSet, NormKind};
