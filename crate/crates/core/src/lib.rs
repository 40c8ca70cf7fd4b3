//! Bayesian isotonic logistic regression for serve advantage in
//! pair-comparison data.
//!
//! Each server gets a B-spline curve over rally length whose coefficients are
//! constrained to be non-increasing past a threshold, and every player gets a
//! rally ability that enters as a Bradley–Terry difference. Posterior
//! inference is by Metropolis-within-Gibbs.

pub mod cells;
pub mod data;
pub mod diagnostics;
pub mod error;
pub mod metrics;
pub mod model;
pub mod posterior;
pub mod report;
pub mod sampler;
pub mod simulate;
pub mod splines;

pub use error::{Error, Result};
pub use cells::CellTable;
pub use data::{AggregatedPoint, Court, Dataset};
pub use model::{HyperParams, ModelConfig, Params, ServerParams, Variant};
pub use posterior::PosteriorDraws;
pub use sampler::{run_chain, ChainConfig};
pub use splines::{ControlPolygon, SplineSpec};
