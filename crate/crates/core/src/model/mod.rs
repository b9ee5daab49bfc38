//! The aggregated multi-output GP: data, likelihood, fitting and posterior.

mod data;
pub mod fit;
pub mod likelihood;
pub mod posterior;

pub use data::{denormalize, Dataset, DomainData, NormStats};
pub use fit::{
    fit, fit_from, FitDiagnostics, FittedDomain, FittedModel, InitStrategy, ModelConfig,
};
pub use likelihood::{gradient, log_marginal_likelihood, Objective};
pub use posterior::{posterior_point, predict_region, PosteriorGP, RegionPrediction};
