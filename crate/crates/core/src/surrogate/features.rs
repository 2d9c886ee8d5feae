use serde::{Deserialize, Serialize};

use crate::dynamics::{State, NUM_ROTORS, STATE_DIM};
use crate::error::{Error, Result};
use crate::mppi::{ControlPlan, DEFAULT_HORIZON};

/// Horizon steps encoded in a feature vector.
pub const FEATURE_HORIZON: usize = DEFAULT_HORIZON;

/// 13 state components followed by 25 × 4 thrusts.
pub const FEATURE_DIM: usize = STATE_DIM + FEATURE_HORIZON * NUM_ROTORS;

/// Surrogate input: initial state then the thrust plan, row-major over
/// steps and rotors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector(Vec<f64>);

impl FeatureVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.len() != FEATURE_DIM {
            return Err(Error::LengthMismatch {
                expected: FEATURE_DIM,
                actual: values.len(),
            });
        }
        Ok(Self(values))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    /// Recovers the state and plan the vector was built from.
    pub fn unpack(&self, dt: f64) -> Result<(State, ControlPlan)> {
        let state = State::from_slice(&self.0[..STATE_DIM])?;
        let plan = ControlPlan::from_flat(&self.0[STATE_DIM..], dt)?;
        Ok((state, plan))
    }
}

pub fn features_from_rollout(initial: &State, plan: &ControlPlan) -> Result<FeatureVector> {
    if plan.horizon() != FEATURE_HORIZON {
        return Err(Error::HorizonMismatch {
            expected: FEATURE_HORIZON,
            actual: plan.horizon(),
        });
    }
    let mut values = Vec::with_capacity(FEATURE_DIM);
    values.extend_from_slice(&initial.to_array());
    values.extend(plan.theta.iter().flatten());
    Ok(FeatureVector(values))
}
