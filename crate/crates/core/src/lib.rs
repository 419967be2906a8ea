//! Quantile regression with calibrated monotonic lattice models.
//!
//! A [`QuantileModel`] predicts the conditional τ-quantile `f(x, τ)` for every
//! `τ` at once. It is trained on the pinball loss averaged over a random
//! quantile (see [`loss`]), kept non-crossing by projecting onto monotonicity
//! constraints after every step, and can be pushed toward target quantile
//! rates on data subsets (see [`rates`]).

pub mod data;
pub mod error;
pub mod eval;
pub mod lattice;
pub mod loss;
pub mod model;
pub mod rates;
pub mod train;

pub use data::{Dataset, Examples, Schema};
pub use error::{Error, Result};
pub use lattice::{Grid, LatticeParams, MonotoneSpec, PiecewiseLinearFn};
pub use loss::{pinball, TauDistribution, TauSampler};
pub use model::{FeatureSpec, ModelConfig, QuantileModel};
pub use eval::{MetricReport, QuantilePredictor};
pub use rates::{BoundConstraint, RateConstraintSpec, SubsetSelector};
pub use train::{fit, FitResult, TrainConfig, ValidationMetric};
