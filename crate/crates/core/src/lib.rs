//! Estimation and correction of selection-induced bias in leave-one-out
//! cross-validation model selection.
//!
//! The statistical kernels ([`gpd`], [`psisloo`], [`orderstats`],
//! [`weights`]) are generic over [`Real`]; the regression engine, forward
//! search and simulation harness work in `f64`. Concrete `f64` aliases of the
//! generic types are exported at the crate root.

pub mod conjlm;
pub mod error;
pub mod gpd;
pub mod io;
pub mod orderstats;
pub mod psisloo;
pub mod scalar;
pub mod search;
pub mod sim;
pub mod special;
pub mod weights;

pub use error::{Error, Result};
pub use scalar::Real;

pub type GpdFit = gpd::GpdFit<f64>;
pub type LogLikMatrix = psisloo::LogLikMatrix<f64>;
pub type ElpdEstimate = psisloo::ElpdEstimate<f64>;
pub type ElpdDiff = psisloo::ElpdDiff<f64>;
pub type ElpdComparison = orderstats::ElpdComparison<f64>;
pub type WeightReport = weights::WeightReport<f64>;

pub use conjlm::{Dataset, NigPrior, PosteriorFit, PriorConfig};
pub use search::{SearchPath, StopVerdicts};

/// Version string embedded in report provenance.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
