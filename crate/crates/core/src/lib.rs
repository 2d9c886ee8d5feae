//! Sampling-based model predictive control for a quadrotor with a learned
//! probabilistic constraint layer.
//!
//! * [`dynamics`]: rigid-body quadrotor model and RK4 integration.
//! * [`mppi`]: MPPI sampling, rollout costs, importance weights and the
//!   receding-horizon controller.
//! * [`constraints`]: spherical obstacles, L1 margins and step penalties.
//! * [`surrogate`]: deep-ensemble regressor predicting a constraint score
//!   with uncertainty, and the Gaussian feasibility probability.
//! * [`bc`]: feasibility-weighted MPPI built on the surrogate.
//! * [`sim`]: scenarios, closed-loop episodes, datasets, metrics and sweeps.

pub mod bc;
pub mod constraints;
pub mod dynamics;
pub mod error;
pub mod mppi;
pub mod sim;
pub mod surrogate;

pub use error::{Error, Result};
