//! Temporal cross-media subspace learning.
//!
//! Two projection networks map image features and tf-idf text vectors into a
//! shared unit-sphere subspace. Training minimizes a bidirectional margin
//! ranking loss smoothed by temporal soft constraints that pull together
//! temporally correlated same-category instances and push apart uncorrelated
//! ones. Retrieval ranks the opposite modality by dot product.

pub(crate) mod codec;
pub mod config;
pub mod corpus;
pub mod error;
pub mod objective;
pub mod projection;
pub mod retrieval;
pub mod scalar;
pub mod synth;
pub mod temporal;
pub mod train;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Double-precision projection model used for training and checkpoints.
pub type ProjectionModel = projection::ProjectionModel<f64>;
pub type Network = projection::Network<f64>;
pub type ModelGrads = projection::ModelGrads<f64>;
pub type Sgd = projection::Sgd<f64>;
