//! Finite-token and mean-field self-attention statistics.
//!
//! The crate evaluates discrete softmax attention (naive and tiled), its
//! infinite-token Gaussian closed form, the convergence-rate bounds that
//! relate the two, and a Monte Carlo engine that estimates empirical
//! convergence exponents for attention maps, means, and covariances —
//! including the hardmax extreme-value regime.

pub mod attention;
pub mod bounds;
pub mod error;
pub mod fastexp;
pub mod generate;
pub mod hardmax;
pub mod ingest;
pub mod linalg;
pub mod montecarlo;
pub mod ratefit;
pub mod rng;

pub use error::{Error, Result};
pub use linalg::Mat;
