//! Encoded ensembles of diffusion models for training-data attribution.
//!
//! Training items receive constant-weight bit codes; model `i` of the
//! ensemble trains on the items whose code has a 1 at position `i`. Dropping
//! the models that saw an item removes that item's influence without
//! retraining, and regenerating a sample from the same exogenous noise gives
//! its counterfactual. A forward-mode Jacobian of the sample with respect to
//! the ensemble weights approximates every counterfactual at once.

pub mod codebook;
pub mod diffusion;
pub mod ensemble;
pub mod error;
pub mod experiments;
pub mod influence;
pub mod manifest;
pub mod numerics;
pub mod study;
pub mod theory_oracle;

pub use error::{Error, Result};
