//! Model predictive path integral control over rotor-thrust plans.
//!
//! Each replanning step draws `K` Gaussian perturbations of the nominal plan,
//! rolls every perturbed plan through the quadrotor model, weights the
//! perturbations by `exp(-(J - ρ)/λ)` (optionally scaled by a per-sample
//! feasibility factor) and moves the nominal plan by the weighted average
//! perturbation. The first input of the updated plan is applied and the plan
//! is shifted one step to warm-start the next replanning step.
//!
//! Sampling uses one ChaCha stream per `(seed, step, sample)` triple, and all
//! reductions run in sample order, so results do not depend on the number of
//! worker threads.

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::constraints::{evaluate_trajectory, ConstraintVerdict, Obstacle};
use crate::dynamics::{self, ControlInput, QuadrotorParams, State, NUM_ROTORS};
use crate::error::{Error, Result};

/// Horizon steps used throughout the experiments.
pub const DEFAULT_HORIZON: usize = 25;
pub const DEFAULT_DT: f64 = 0.02;

/// Rejection threshold numerator; a sample is rejected when `ω < 1e-6 / K`.
pub const DEFAULT_REJECTION_SCALE: f64 = 1e-6;

/// A horizon of rotor thrusts under zero-order hold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlPlan {
    pub theta: Vec<[f64; NUM_ROTORS]>,
    pub dt: f64,
}

impl ControlPlan {
    pub fn constant(input: ControlInput, horizon: usize, dt: f64) -> Self {
        Self {
            theta: vec![input.rotor_thrusts; horizon],
            dt,
        }
    }

    pub fn hover(params: &QuadrotorParams, horizon: usize, dt: f64) -> Self {
        Self::constant(ControlInput::hover(params), horizon, dt)
    }

    pub fn horizon(&self) -> usize {
        self.theta.len()
    }

    pub fn input(&self, i: usize) -> ControlInput {
        ControlInput::new(self.theta[i])
    }

    /// Row-major over steps, then rotors.
    pub fn flatten(&self) -> Vec<f64> {
        self.theta
            .iter()
            .flat_map(|row| row.iter().copied())
            .collect()
    }

    pub fn from_flat(values: &[f64], dt: f64) -> Result<Self> {
        if values.is_empty() || !values.len().is_multiple_of(NUM_ROTORS) {
            return Err(Error::LengthMismatch {
                expected: NUM_ROTORS * (values.len() / NUM_ROTORS).max(1),
                actual: values.len(),
            });
        }
        let theta = values
            .chunks_exact(NUM_ROTORS)
            .map(|c| [c[0], c[1], c[2], c[3]])
            .collect();
        Ok(Self { theta, dt })
    }

    pub fn clamped(&self, u_max: f64) -> Self {
        Self {
            theta: self
                .theta
                .iter()
                .map(|r| r.map(|f| f.clamp(0.0, u_max)))
                .collect(),
            dt: self.dt,
        }
    }

    /// `self + delta`, clamped to the actuator range.
    pub fn perturbed(&self, delta: &Perturbation, u_max: f64) -> Self {
        let theta = self
            .theta
            .iter()
            .zip(delta)
            .map(|(row, d)| std::array::from_fn(|r| (row[r] + d[r]).clamp(0.0, u_max)))
            .collect();
        Self { theta, dt: self.dt }
    }

    /// Drops the first step and repeats the last one.
    pub fn shifted(&self) -> Self {
        let mut theta = self.theta.clone();
        if theta.len() > 1 {
            theta.rotate_left(1);
            let n = theta.len();
            theta[n - 1] = theta[n - 2];
        }
        Self { theta, dt: self.dt }
    }

    pub fn mean_thrust(&self) -> f64 {
        let n = (self.theta.len() * NUM_ROTORS) as f64;
        self.theta.iter().flatten().sum::<f64>() / n
    }
}

/// One sampled perturbation of a plan: `horizon × 4` thrust offsets.
pub type Perturbation = Vec<[f64; NUM_ROTORS]>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineRule {
    /// ρ is the smallest finite sampled cost.
    #[default]
    MinCost,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MppiConfig {
    pub num_samples: usize,
    pub temperature: f64,
    /// Per-rotor perturbation standard deviation, N.
    pub sigma: [f64; NUM_ROTORS],
    pub horizon: usize,
    pub dt: f64,
    pub baseline_rule: BaselineRule,
    pub seed: u64,
    /// Defaults to `1e-6 / K` when unset.
    pub rejection_epsilon: Option<f64>,
}

impl Default for MppiConfig {
    fn default() -> Self {
        Self {
            num_samples: 300,
            temperature: 0.7,
            sigma: [0.3; NUM_ROTORS],
            horizon: DEFAULT_HORIZON,
            dt: DEFAULT_DT,
            baseline_rule: BaselineRule::MinCost,
            seed: 0,
            rejection_epsilon: None,
        }
    }
}

impl MppiConfig {
    pub fn rejection_epsilon(&self) -> f64 {
        self.rejection_epsilon
            .unwrap_or(DEFAULT_REJECTION_SCALE / self.num_samples.max(1) as f64)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.num_samples == 0 {
            return bad("num_samples must be at least 1".into());
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return bad(format!(
                "temperature must be positive, got {}",
                self.temperature
            ));
        }
        if self.sigma.iter().any(|s| !(*s >= 0.0 && s.is_finite())) {
            return bad(format!("sigma must be non-negative, got {:?}", self.sigma));
        }
        if self.horizon == 0 {
            return bad("horizon must be at least 1".into());
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return bad(format!("dt must be positive, got {}", self.dt));
        }
        let eps = self.rejection_epsilon();
        if !(eps >= 0.0 && eps < 1.0 / self.num_samples as f64) {
            return bad(format!(
                "rejection_epsilon must lie in [0, 1/K), got {eps} with K = {}",
                self.num_samples
            ));
        }
        Ok(())
    }
}

/// Quadratic tracking cost, with optional attitude regularisation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CostSpec {
    pub position_weight: f64,
    pub velocity_weight: f64,
    pub control_weight: f64,
    pub terminal_position_weight: f64,
    /// Weight on `1 - R_zz`, the tilt of the body z axis away from vertical.
    pub tilt_weight: f64,
    /// Weight on the squared body angular rate, s²/rad².
    pub angular_rate_weight: f64,
    pub target: [f64; 3],
}

impl Default for CostSpec {
    fn default() -> Self {
        Self {
            position_weight: 5.0,
            velocity_weight: 0.7,
            control_weight: 0.01,
            terminal_position_weight: 30.0,
            tilt_weight: 0.0,
            angular_rate_weight: 0.02,
            target: [0.0; 3],
        }
    }
}

impl CostSpec {
    pub fn with_target(mut self, target: [f64; 3]) -> Self {
        self.target = target;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let w = [
            self.position_weight,
            self.velocity_weight,
            self.control_weight,
            self.terminal_position_weight,
            self.tilt_weight,
            self.angular_rate_weight,
        ];
        if w.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
            return Err(Error::Config(
                "cost weights must be finite and non-negative".into(),
            ));
        }
        Ok(())
    }

    pub fn stage_cost(&self, state: &State, input: &ControlInput) -> f64 {
        let target = Vector3::from(self.target);
        self.position_weight * (state.position - target).norm_squared()
            + self.velocity_weight * state.linear_velocity.norm_squared()
            + self.control_weight * input.norm_squared()
            + self.tilt_weight * tilt(state)
            + self.angular_rate_weight * state.angular_velocity.norm_squared()
    }

    pub fn terminal_cost(&self, state: &State) -> f64 {
        self.terminal_position_weight * (state.position - Vector3::from(self.target)).norm_squared()
    }
}

/// `1 - R_zz = 2(x² + y²)` for the unit attitude quaternion; 0 level, 2 inverted.
pub fn tilt(state: &State) -> f64 {
    let q = state.attitude.coords;
    2.0 * (q.x * q.x + q.y * q.y)
}

/// Outcome of simulating one plan.
#[derive(Debug, Clone, PartialEq)]
pub struct Rollout {
    /// `+∞` when the rollout diverged.
    pub cost: f64,
    /// `x_0 … x_N`, truncated at divergence.
    pub trajectory: Vec<State>,
}

impl Rollout {
    pub fn diverged(&self) -> bool {
        self.cost == f64::INFINITY
    }
}

/// Simulates `plan` from `initial` and sums stage and terminal costs.
pub fn rollout_cost(
    initial: &State,
    plan: &ControlPlan,
    cost: &CostSpec,
    params: &QuadrotorParams,
) -> Rollout {
    let mut trajectory = Vec::with_capacity(plan.horizon() + 1);
    trajectory.push(*initial);
    let mut state = *initial;
    let mut total = 0.0;
    for i in 0..plan.horizon() {
        let u = plan.input(i).clamped(params.u_max);
        total += cost.stage_cost(&state, &u);
        match dynamics::step(&state, &u, plan.dt, params) {
            Ok(next) => state = next,
            Err(_) => {
                return Rollout {
                    cost: f64::INFINITY,
                    trajectory,
                }
            }
        }
        trajectory.push(state);
    }
    total += cost.terminal_cost(&state);
    Rollout {
        cost: total,
        trajectory,
    }
}

/// Per-sample diagnostics of one replanning step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RolloutEvaluation {
    pub cost: f64,
    pub raw_weight: f64,
    pub feasibility: f64,
    pub modulated_weight: f64,
    pub normalized_weight: f64,
    /// Ground-truth margin check of the rollout.
    pub violated: bool,
    pub rejected: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Weights {
    pub evaluations: Vec<RolloutEvaluation>,
    /// Every sample had zero modulated weight; the normalisation fell back
    /// to the raw weights.
    pub all_infeasible: bool,
}

impl Weights {
    pub fn normalized(&self) -> Vec<f64> {
        self.evaluations
            .iter()
            .map(|e| e.normalized_weight)
            .collect()
    }
}

/// Exponentiated-cost importance weights, scaled by `feasibility`.
pub fn compute_weights(
    costs: &[f64],
    temperature: f64,
    feasibility: &[f64],
    rejection_epsilon: f64,
) -> Result<Weights> {
    assert_eq!(
        costs.len(),
        feasibility.len(),
        "one feasibility factor per cost"
    );
    let rho = costs
        .iter()
        .copied()
        .filter(|c| c.is_finite())
        .fold(f64::INFINITY, f64::min);
    if !rho.is_finite() {
        return Err(Error::NoViableSample);
    }

    let raw: Vec<f64> = costs
        .iter()
        .map(|&j| {
            if j.is_finite() {
                (-(j - rho) / temperature).exp()
            } else {
                0.0
            }
        })
        .collect();
    let modulated: Vec<f64> = raw.iter().zip(feasibility).map(|(m, w)| m * w).collect();

    let sum_modulated: f64 = modulated.iter().sum();
    let (all_infeasible, normalized): (bool, Vec<f64>) = if sum_modulated > 0.0 {
        (false, modulated.iter().map(|m| m / sum_modulated).collect())
    } else {
        let sum_raw: f64 = raw.iter().sum();
        (true, raw.iter().map(|m| m / sum_raw).collect())
    };

    let evaluations = (0..costs.len())
        .map(|k| RolloutEvaluation {
            cost: costs[k],
            raw_weight: raw[k],
            feasibility: feasibility[k],
            modulated_weight: modulated[k],
            normalized_weight: normalized[k],
            violated: false,
            rejected: normalized[k] < rejection_epsilon,
        })
        .collect();
    Ok(Weights {
        evaluations,
        all_infeasible,
    })
}

/// `θ* = θ̄ + Σ ωᵏ Δθᵏ`, clamped to `[0, u_max]`.
pub fn update_plan(
    nominal: &ControlPlan,
    perturbations: &[Perturbation],
    weights: &[f64],
    u_max: f64,
) -> ControlPlan {
    assert_eq!(perturbations.len(), weights.len());
    let mut acc = vec![[0.0; NUM_ROTORS]; nominal.horizon()];
    for (delta, &w) in perturbations.iter().zip(weights) {
        for (a, d) in acc.iter_mut().zip(delta) {
            for r in 0..NUM_ROTORS {
                a[r] += w * d[r];
            }
        }
    }
    let theta = nominal
        .theta
        .iter()
        .zip(&acc)
        .map(|(row, a)| std::array::from_fn(|r| (row[r] + a[r]).clamp(0.0, u_max)))
        .collect();
    ControlPlan {
        theta,
        dt: nominal.dt,
    }
}

/// Independent generator for sample `sample` of replanning step `step`.
pub fn sample_stream(seed: u64, step: u64, sample: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&step.to_le_bytes());
    key[16..24].copy_from_slice(&sample.to_le_bytes());
    key[24..].copy_from_slice(b"mppi-smp");
    ChaCha8Rng::from_seed(key)
}

/// One Gaussian perturbation drawn from its own substream.
pub fn sample_perturbation(config: &MppiConfig, step: u64, sample: u64) -> Perturbation {
    let mut rng = sample_stream(config.seed, step, sample);
    (0..config.horizon)
        .map(|_| {
            std::array::from_fn(|r| {
                let z: f64 = rng.sample(StandardNormal);
                config.sigma[r] * z
            })
        })
        .collect()
}

/// `K` perturbations for replanning step `step`.
pub fn sample_perturbations(config: &MppiConfig, step: u64) -> Vec<Perturbation> {
    (0..config.num_samples as u64)
        .map(|k| sample_perturbation(config, step, k))
        .collect()
}

/// How obstacles enter the rollout cost.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CostMode {
    /// Tracking cost only.
    #[default]
    Tracking,
    /// Tracking cost plus the per-step violation penalty, with an optional
    /// extra term proportional to the summed violation depth.
    Penalized { shaping_weight: f64 },
}

/// Diagnostics of one receding-horizon step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub input: ControlInput,
    pub evaluations: Vec<RolloutEvaluation>,
    pub all_infeasible: bool,
    /// No finite-cost sample; the previous input was re-applied.
    pub no_viable_sample: bool,
}

impl StepOutcome {
    pub fn rejected_count(&self) -> usize {
        self.evaluations.iter().filter(|e| e.rejected).count()
    }
}

/// Everything that only depends on the sample and the fixed step context.
struct SampleResult {
    plan: ControlPlan,
    perturbation: Perturbation,
    cost: f64,
    verdict: ConstraintVerdict,
}

pub struct MppiController {
    config: MppiConfig,
    cost: CostSpec,
    params: QuadrotorParams,
    mode: CostMode,
    obstacles: Vec<Obstacle>,
    nominal: ControlPlan,
    last_input: ControlInput,
    step: u64,
    pool: rayon::ThreadPool,
}

impl std::fmt::Debug for MppiController {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("MppiController")
            .field("config", &self.config)
            .field("mode", &self.mode)
            .field("step", &self.step)
            .finish_non_exhaustive()
    }
}

impl MppiController {
    /// Controller starting from the hover plan. `workers == 0` uses all cores.
    pub fn new(
        config: MppiConfig,
        cost: CostSpec,
        params: QuadrotorParams,
        mode: CostMode,
        obstacles: Vec<Obstacle>,
        workers: usize,
    ) -> Result<Self> {
        config.validate()?;
        cost.validate()?;
        params.validate()?;
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
        let nominal = ControlPlan::hover(&params, config.horizon, config.dt);
        Ok(Self {
            last_input: ControlInput::hover(&params),
            config,
            cost,
            params,
            mode,
            obstacles,
            nominal,
            step: 0,
            pool,
        })
    }

    pub fn config(&self) -> &MppiConfig {
        &self.config
    }

    pub fn params(&self) -> &QuadrotorParams {
        &self.params
    }

    pub fn nominal(&self) -> &ControlPlan {
        &self.nominal
    }

    pub fn set_nominal(&mut self, plan: ControlPlan) {
        self.nominal = plan;
    }

    pub fn set_obstacles(&mut self, obstacles: Vec<Obstacle>) {
        self.obstacles = obstacles;
    }

    pub fn set_target(&mut self, target: [f64; 3]) {
        self.cost.target = target;
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Runs `f` inside the controller's worker pool.
    pub fn install<R: Send>(&self, f: impl FnOnce() -> R + Send) -> R {
        self.pool.install(f)
    }

    /// Classic MPPI step: every feasibility factor is one.
    pub fn receding_horizon_step(&mut self, measured: &State, clock: f64) -> StepOutcome {
        self.step_with_feasibility(measured, clock, |plans| Ok(vec![1.0; plans.len()]))
            .expect("unit feasibility cannot fail")
    }

    /// Replanning step with per-sample feasibility factors supplied by
    /// `feasibility`, which receives the clamped candidate plans in sample
    /// order. `feasibility` runs inside the worker pool.
    pub fn step_with_feasibility<F>(
        &mut self,
        measured: &State,
        clock: f64,
        feasibility: F,
    ) -> Result<StepOutcome>
    where
        F: FnOnce(&[ControlPlan]) -> Result<Vec<f64>> + Send,
    {
        let step = self.step;
        self.step += 1;

        let results: Vec<SampleResult> = {
            let config = &self.config;
            let nominal = &self.nominal;
            let cost = &self.cost;
            let params = &self.params;
            let obstacles = &self.obstacles;
            let mode = self.mode;
            self.pool.install(|| {
                (0..config.num_samples as u64)
                    .into_par_iter()
                    .map(|k| {
                        let perturbation = sample_perturbation(config, step, k);
                        let plan = nominal.perturbed(&perturbation, params.u_max);
                        let rollout = rollout_cost(measured, &plan, cost, params);
                        let verdict =
                            evaluate_trajectory(&rollout.trajectory, obstacles, clock, config.dt);
                        let mut j = rollout.cost;
                        if let CostMode::Penalized { shaping_weight } = mode {
                            if j.is_finite() {
                                j += verdict.total_penalty
                                    + shaping_weight * verdict.violation_depth;
                            }
                        }
                        SampleResult {
                            plan,
                            perturbation,
                            cost: j,
                            verdict,
                        }
                    })
                    .collect()
            })
        };

        let plans: Vec<ControlPlan> = results.iter().map(|r| r.plan.clone()).collect();
        let factors = self.pool.install(|| feasibility(&plans))?;
        if factors.len() != results.len() {
            return Err(Error::LengthMismatch {
                expected: results.len(),
                actual: factors.len(),
            });
        }
        let costs: Vec<f64> = results.iter().map(|r| r.cost).collect();

        match compute_weights(
            &costs,
            self.config.temperature,
            &factors,
            self.config.rejection_epsilon(),
        ) {
            Ok(mut weights) => {
                for (e, r) in weights.evaluations.iter_mut().zip(&results) {
                    e.violated = r.verdict.violated;
                }
                let perturbations: Vec<Perturbation> =
                    results.into_iter().map(|r| r.perturbation).collect();
                let optimized = update_plan(
                    &self.nominal,
                    &perturbations,
                    &weights.normalized(),
                    self.params.u_max,
                );
                let input = optimized.input(0);
                self.nominal = optimized.shifted();
                self.last_input = input;
                Ok(StepOutcome {
                    input,
                    evaluations: weights.evaluations,
                    all_infeasible: weights.all_infeasible,
                    no_viable_sample: false,
                })
            }
            Err(Error::NoViableSample) => {
                log::warn!("step {step}: no viable sample, holding previous input");
                let evaluations = results
                    .iter()
                    .zip(&factors)
                    .map(|(r, &w)| RolloutEvaluation {
                        cost: r.cost,
                        raw_weight: 0.0,
                        feasibility: w,
                        modulated_weight: 0.0,
                        normalized_weight: 0.0,
                        violated: r.verdict.violated,
                        rejected: true,
                    })
                    .collect();
                Ok(StepOutcome {
                    input: self.last_input,
                    evaluations,
                    all_infeasible: true,
                    no_viable_sample: true,
                })
            }
            Err(e) => Err(e),
        }
    }
}
