//! Physics-informed neural network solver with residual-quantile adjusted
//! adaptive weighting.
//!
//! The solution of a PDE on the unit ball is approximated by a cubic-ReLU
//! network trained on a weighted least-squares collocation loss. Point weights
//! follow the residuals (`w ∝ r^{p−2}`), and the long tail of the weight
//! distribution is clipped at an empirical quantile.
//!
//! - [`ad`]: exact space-time derivatives of scalar fields
//! - [`network`]: the solution network and its batched jet forward/reverse passes
//! - [`geometry`]: seeded samplers for ball, sphere and initial slice
//! - [`problems`]: benchmark PDEs with manufactured sources
//! - [`weighting`]: uniform, `L_p`, binary and quantile-adjusted weights
//! - [`trainer`]: the optimization loop
//! - [`metrics`]: relative test-set errors
//! - [`bench`]: config files, single runs, sweeps and CSV output

pub mod ad;
pub mod bench;
pub mod error;
pub mod geometry;
pub mod metrics;
pub mod network;
pub mod problems;
pub mod trainer;
pub mod weighting;

pub use error::{Result, RqaError};
