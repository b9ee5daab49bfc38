//! Spatially aggregated Gaussian processes.
//!
//! Infers continuous multivariate spatial fields from observations that are
//! aggregated over regions of mixed granularity. Outputs are linear mixtures
//! of latent squared-exponential processes; region integrals are evaluated on
//! a regular grid with a distance-histogram cache.

pub mod aggregation;
pub mod cli;
mod error;
pub mod evaluation;
pub mod geometry;
pub mod io;
pub mod kernel;
pub mod linalg;
pub mod model;
pub mod optim;
pub mod synth;

pub use error::{Error, Result};
pub use geometry::{AggregationScheme, GridSpec, Partition, PolygonGeometry, Region};
pub use kernel::HyperParams;
pub use model::{DomainData, FittedModel, ModelConfig};
