//! Probability measures rescaled to Kac's sphere `{x ∈ ℝ^N : |x|² = N}` and
//! estimators for their chaoticity.

pub mod alip;
pub mod chaos;
pub mod density;
pub mod error;
pub mod estimate;
pub mod quadrature;
pub mod rates;
pub mod rescaled;
pub mod rng;
pub mod sphere;
pub mod stats;

pub use density::{DensityModel, DensitySpec, Family};
pub use error::{Error, Result};
pub use estimate::{EstimateWithError, Method, Welford};
pub use rng::StreamKey;
