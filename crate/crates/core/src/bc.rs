//! Feasibility-weighted MPPI.
//!
//! Each candidate plan is scored by one or more feasibility models. The
//! product of their probabilities multiplies the sample's exponentiated-cost
//! weight, so unlikely-feasible plans lose influence but stay in the pool.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::State;
use crate::error::{Error, Result};
use crate::mppi::{MppiController, StepOutcome};
use crate::surrogate::{
    features_from_rollout, FeatureVector, SurrogateEnsemble, SurrogatePrediction,
};

/// Probability that a (state, plan) feature row satisfies the constraint.
pub trait FeasibilityModel: Sync {
    fn probability(&self, features: &[f64]) -> Result<f64>;

    /// Probabilities for many rows, fanned out over the current rayon pool
    /// and returned in row order.
    fn probabilities(&self, rows: &[FeatureVector]) -> Result<Vec<f64>> {
        rows.par_iter()
            .map(|r| self.probability(r.values()))
            .collect()
    }
}

impl FeasibilityModel for SurrogateEnsemble {
    fn probability(&self, features: &[f64]) -> Result<f64> {
        Ok(self.predict(features)?.feasibility_probability)
    }
}

/// Joint feasibility of several independent constraints.
impl<M: FeasibilityModel> FeasibilityModel for [M] {
    fn probability(&self, features: &[f64]) -> Result<f64> {
        if self.is_empty() {
            return Err(Error::ModelNotLoaded);
        }
        self.iter()
            .try_fold(1.0, |acc, m| Ok(acc * m.probability(features)?))
    }
}

impl<M: FeasibilityModel> FeasibilityModel for Vec<M> {
    fn probability(&self, features: &[f64]) -> Result<f64> {
        self.as_slice().probability(features)
    }
}

/// Same probability for every input.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConstantFeasibility(pub f64);

impl FeasibilityModel for ConstantFeasibility {
    fn probability(&self, _features: &[f64]) -> Result<f64> {
        Ok(self.0)
    }
}

/// Wraps a closure as a feasibility model.
pub struct FnFeasibility<F>(pub F);

impl<F: Fn(&[f64]) -> f64 + Sync> FeasibilityModel for FnFeasibility<F> {
    fn probability(&self, features: &[f64]) -> Result<f64> {
        Ok((self.0)(features))
    }
}

/// Product of per-constraint feasibility probabilities.
pub fn feasibility_factor(predictions: &[SurrogatePrediction]) -> f64 {
    debug_assert!(!predictions.is_empty());
    predictions
        .iter()
        .map(|p| p.feasibility_probability)
        .product()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeasibilityReport {
    pub per_sample_probability: Vec<f64>,
    pub mean_probability: f64,
    pub min_probability: f64,
}

impl FeasibilityReport {
    pub fn new(per_sample_probability: Vec<f64>) -> Self {
        let n = per_sample_probability.len().max(1) as f64;
        let mean_probability = per_sample_probability.iter().sum::<f64>() / n;
        let min_probability = per_sample_probability
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min);
        Self {
            per_sample_probability,
            mean_probability,
            min_probability,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BcStepOutcome {
    pub outcome: StepOutcome,
    pub feasibility: FeasibilityReport,
}

/// One BC-MPPI replanning step: classic MPPI with every sample's weight
/// scaled by `model`'s feasibility probability for its plan.
pub fn bc_controller_step<M: FeasibilityModel + ?Sized>(
    controller: &mut MppiController,
    measured: &State,
    clock: f64,
    model: &M,
) -> Result<BcStepOutcome> {
    let outcome = controller.step_with_feasibility(measured, clock, |plans| {
        let rows = plans
            .iter()
            .map(|p| features_from_rollout(measured, p))
            .collect::<Result<Vec<_>>>()?;
        let probs = model.probabilities(&rows)?;
        if let Some(p) = probs.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(Error::Model(format!(
                "feasibility probability {p} outside [0, 1]"
            )));
        }
        Ok(probs)
    })?;
    let probs = outcome.evaluations.iter().map(|e| e.feasibility).collect();
    let feasibility = FeasibilityReport::new(probs);
    log::trace!(
        "step {}: feasibility mean {:.4} min {:.4}",
        controller.steps_taken(),
        feasibility.mean_probability,
        feasibility.min_probability
    );
    Ok(BcStepOutcome {
        outcome,
        feasibility,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{QuadrotorParams, STATE_DIM};
    use crate::mppi::{compute_weights, update_plan, CostMode, CostSpec, MppiConfig};
    use approx::assert_relative_eq;
    use nalgebra::Vector3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn controller(samples: usize, seed: u64) -> MppiController {
        let config = MppiConfig {
            num_samples: samples,
            seed,
            ..MppiConfig::default()
        };
        let cost = CostSpec::default().with_target([1.0, 0.5, 1.5]);
        MppiController::new(
            config,
            cost,
            QuadrotorParams::default(),
            CostMode::Tracking,
            vec![],
            2,
        )
        .unwrap()
    }

    fn prediction(p: f64) -> SurrogatePrediction {
        SurrogatePrediction {
            mean: 0.0,
            std: 1.0,
            feasibility_probability: p,
        }
    }

    #[test]
    fn factor_examples() {
        assert_eq!(feasibility_factor(&[prediction(1.0)]), 1.0);
        assert_eq!(
            feasibility_factor(&[prediction(0.5), prediction(0.5)]),
            0.25
        );
        assert_eq!(feasibility_factor(&[prediction(0.7), prediction(0.0)]), 0.0);
    }

    #[test]
    fn unit_feasibility_matches_classic_steps() {
        let mut classic = controller(64, 11);
        let mut bc = controller(64, 11);
        let params = QuadrotorParams::default();
        let (mut xa, mut xb) = (State::default(), State::default());
        for i in 0..20 {
            let t = i as f64 * 0.02;
            let a = classic.receding_horizon_step(&xa, t);
            let b = bc_controller_step(&mut bc, &xb, t, &ConstantFeasibility(1.0)).unwrap();
            assert_eq!(a, b.outcome);
            assert_eq!(b.feasibility.min_probability, 1.0);
            xa = crate::dynamics::step(&xa, &a.input, 0.02, &params).unwrap();
            xb = crate::dynamics::step(&xb, &b.outcome.input, 0.02, &params).unwrap();
        }
        assert_eq!(xa, xb);
    }

    #[test]
    fn thrust_threshold_stub_keeps_only_low_thrust_samples() {
        let params = QuadrotorParams::default();
        let hover = params.hover_thrust();
        let stub = FnFeasibility(move |f: &[f64]| {
            let plan = &f[STATE_DIM..];
            let mean = plan.iter().sum::<f64>() / plan.len() as f64;
            if mean > hover {
                0.0
            } else {
                1.0
            }
        });
        let mut c = controller(200, 3);
        let nominal = c.nominal().clone();
        let x = State::at_rest(Vector3::new(0.0, 0.0, 1.0));
        let out = bc_controller_step(&mut c, &x, 0.0, &stub).unwrap();
        let evals = &out.outcome.evaluations;
        assert_eq!(evals.len(), 200);
        assert!(!out.outcome.all_infeasible);

        let config = c.config().clone();
        let perturbations = crate::mppi::sample_perturbations(&config, 0);
        let mut kept = 0;
        for (k, (e, d)) in evals.iter().zip(&perturbations).enumerate() {
            let plan = nominal.perturbed(d, params.u_max);
            let above = plan.mean_thrust() > hover;
            assert_eq!(e.feasibility, if above { 0.0 } else { 1.0 }, "sample {k}");
            if above {
                assert_eq!(e.normalized_weight, 0.0);
            } else {
                kept += 1;
            }
        }
        assert!(kept > 0 && kept < 200);

        let costs: Vec<f64> = evals.iter().map(|e| e.cost).collect();
        let feas: Vec<f64> = evals.iter().map(|e| e.feasibility).collect();
        let w = compute_weights(
            &costs,
            config.temperature,
            &feas,
            config.rejection_epsilon(),
        )
        .unwrap();
        let expected = update_plan(&nominal, &perturbations, &w.normalized(), params.u_max);
        assert_eq!(out.outcome.input, expected.input(0));
    }

    #[test]
    fn one_feasible_sample_drives_the_update() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let costs = vec![3.0; 6];
        let perturbations: Vec<_> = (0..6)
            .map(|_| {
                (0..25)
                    .map(|_| [(); 4].map(|_| rng.gen_range(-0.2..0.2)))
                    .collect()
            })
            .collect::<Vec<Vec<[f64; 4]>>>();
        let mut feas = vec![0.0; 6];
        feas[4] = 1.0;
        let w = compute_weights(&costs, 1.0, &feas, 0.0).unwrap();
        let nominal = crate::mppi::ControlPlan::hover(&QuadrotorParams::default(), 25, 0.02);
        let updated = update_plan(&nominal, &perturbations, &w.normalized(), 6.0);
        let expected = nominal.perturbed(&perturbations[4], 6.0);
        for (a, b) in updated.theta.iter().zip(&expected.theta) {
            for r in 0..4 {
                assert_relative_eq!(a[r], b[r], epsilon = 1e-15);
            }
        }
    }

    #[test]
    fn lowering_feasibility_never_raises_weight() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..200 {
            let k = rng.gen_range(2..40);
            let costs: Vec<f64> = (0..k).map(|_| rng.gen_range(0.0..20.0)).collect();
            let mut feas: Vec<f64> = (0..k).map(|_| rng.gen_range(0.0..1.0)).collect();
            let i = rng.gen_range(0..k);
            let before = compute_weights(&costs, 2.0, &feas, 0.0)
                .unwrap()
                .normalized()[i];
            feas[i] *= rng.gen_range(0.0..1.0);
            let after = compute_weights(&costs, 2.0, &feas, 0.0)
                .unwrap()
                .normalized()[i];
            assert!(after <= before + 1e-15, "{after} > {before}");
        }
    }

    #[test]
    fn common_scale_leaves_weights_unchanged() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let costs: Vec<f64> = (0..50).map(|_| rng.gen_range(0.0..10.0)).collect();
        let feas: Vec<f64> = (0..50).map(|_| rng.gen_range(0.05..1.0)).collect();
        let base = compute_weights(&costs, 1.0, &feas, 0.0)
            .unwrap()
            .normalized();
        for c in [1.0, 0.5, 1e-3] {
            let scaled: Vec<f64> = feas.iter().map(|f| f * c).collect();
            let w = compute_weights(&costs, 1.0, &scaled, 0.0)
                .unwrap()
                .normalized();
            for (a, b) in base.iter().zip(&w) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn joint_model_multiplies() {
        let joint = vec![ConstantFeasibility(0.5), ConstantFeasibility(0.4)];
        assert_relative_eq!(joint.probability(&[]).unwrap(), 0.2);
        let none: Vec<ConstantFeasibility> = vec![];
        assert!(matches!(none.probability(&[]), Err(Error::ModelNotLoaded)));
    }

    #[test]
    fn out_of_range_probability_is_an_error() {
        let mut c = controller(8, 1);
        let r = bc_controller_step(&mut c, &State::default(), 0.0, &ConstantFeasibility(1.5));
        assert!(matches!(r, Err(Error::Model(_))));
    }

    #[test]
    fn horizon_must_match_features() {
        let config = MppiConfig {
            num_samples: 4,
            horizon: 10,
            ..MppiConfig::default()
        };
        let mut c = MppiController::new(
            config,
            CostSpec::default(),
            QuadrotorParams::default(),
            CostMode::Tracking,
            vec![],
            1,
        )
        .unwrap();
        let r = bc_controller_step(&mut c, &State::default(), 0.0, &ConstantFeasibility(1.0));
        assert!(matches!(
            r,
            Err(Error::HorizonMismatch {
                expected: 25,
                actual: 10
            })
        ));
    }
}
