//! Construction, optimization, analysis and simulation of multilevel best
//! linear unbiased estimators for the expectation of a parametric model
//! family: plain and multilevel Monte Carlo, extrapolated telescopes,
//! weighted telescopes, and the sample-allocation-optimal estimator found
//! by convex optimization over group sample counts.

pub mod allocation;
pub mod analysis;
pub mod blue;
pub mod error;
pub mod extrapolation;
pub mod family;
pub mod groups;
pub mod linalg;
pub mod num;
mod rng;
pub mod simulation;

pub use blue::{Allocation, EstimatorScheme};
pub use error::{Error, Result};
pub use family::{CostModel, ExpansionFamily, MomentData, PathRecord, RateVector};
pub use groups::{GroupSystem, ModelGroup};
pub use linalg::Matrix;
pub use num::{Real, DD};
