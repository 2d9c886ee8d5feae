use std::time::Instant;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::scenario::Scenario;
use crate::bc::{bc_controller_step, FeasibilityModel};
use crate::constraints::{l1_margin, nearest_center_distance, Obstacle};
use crate::dynamics::{self, ControlInput, QuadrotorParams, State};
use crate::error::{Error, Result};
use crate::mppi::{CostMode, CostSpec, MppiConfig, MppiController, StepOutcome};

/// Distance to the target that counts as arrival, m.
pub const TARGET_TOLERANCE: f64 = 0.15;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControllerKind {
    ClassicMppi,
    MppiPenalty,
    BcMppi,
}

impl ControllerKind {
    pub const ALL: [ControllerKind; 3] = [Self::ClassicMppi, Self::MppiPenalty, Self::BcMppi];

    pub fn name(&self) -> &'static str {
        match self {
            Self::ClassicMppi => "classic_mppi",
            Self::MppiPenalty => "mppi_penalty",
            Self::BcMppi => "bc_mppi",
        }
    }
}

impl std::str::FromStr for ControllerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown controller {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeConfig {
    pub scenario: Scenario,
    pub controller: ControllerKind,
    pub mppi: MppiConfig,
    /// Tracking weights; the target is taken from the scenario.
    pub cost: CostSpec,
    pub params: QuadrotorParams,
    /// Overrides the scenario duration when set, s.
    pub duration: Option<f64>,
    /// Seeds the controller's sampling streams.
    pub seed: u64,
    /// Weight of the violation-depth term added to the penalty baseline's
    /// cost; zero keeps only the step penalties.
    pub penalty_shaping: f64,
    /// 0 uses every core.
    pub workers: usize,
    /// Keep every sample's feasibility factor in the step diagnostics.
    pub log_sample_feasibility: bool,
}

impl EpisodeConfig {
    pub fn new(scenario: Scenario, controller: ControllerKind) -> Self {
        Self {
            scenario,
            controller,
            mppi: MppiConfig::default(),
            cost: CostSpec::default(),
            params: QuadrotorParams::default(),
            duration: None,
            seed: 0,
            penalty_shaping: 0.0,
            workers: 0,
            log_sample_feasibility: false,
        }
    }

    pub fn duration(&self) -> f64 {
        self.duration.unwrap_or(self.scenario.duration)
    }

    /// Number of replanning steps in the episode.
    pub fn steps(&self) -> usize {
        (self.duration() / self.mppi.dt + 1e-9).floor() as usize
    }

    pub fn validate(&self) -> Result<()> {
        self.scenario.validate()?;
        self.mppi.validate()?;
        self.cost.validate()?;
        self.params.validate()?;
        let d = self.duration();
        if !(d.is_finite() && d >= self.mppi.dt) {
            return Err(Error::Config(format!(
                "duration {d} s is shorter than one control step of {} s",
                self.mppi.dt
            )));
        }
        if !(self.penalty_shaping >= 0.0 && self.penalty_shaping.is_finite()) {
            return Err(Error::Config("penalty_shaping must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub clock: f64,
    /// State measured at `clock`, before `input` is applied.
    pub state: State,
    pub input: ControlInput,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepDiagnostics {
    pub clock: f64,
    pub min_cost: f64,
    pub rejected: usize,
    pub violated: usize,
    pub all_infeasible: bool,
    pub no_viable_sample: bool,
    pub mean_feasibility: f64,
    pub min_feasibility: f64,
    /// Per-sample feasibility factors, when requested.
    pub feasibility: Option<Vec<f64>>,
}

impl StepDiagnostics {
    fn from_outcome(clock: f64, outcome: &StepOutcome, keep_samples: bool) -> Self {
        let e = &outcome.evaluations;
        let n = e.len().max(1) as f64;
        Self {
            clock,
            min_cost: e.iter().map(|e| e.cost).fold(f64::INFINITY, f64::min),
            rejected: outcome.rejected_count(),
            violated: e.iter().filter(|e| e.violated).count(),
            all_infeasible: outcome.all_infeasible,
            no_viable_sample: outcome.no_viable_sample,
            mean_feasibility: e.iter().map(|e| e.feasibility).sum::<f64>() / n,
            min_feasibility: e
                .iter()
                .map(|e| e.feasibility)
                .fold(f64::INFINITY, f64::min),
            feasibility: keep_samples.then(|| e.iter().map(|e| e.feasibility).collect()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeMetrics {
    /// Wall-clock seconds.
    pub sim_runtime: f64,
    /// Replanning steps per wall-clock second.
    pub control_frequency: f64,
    pub avg_obstacle_distance: f64,
    pub final_target_distance: f64,
    pub mean_target_distance: f64,
    pub collision_events: usize,
    /// Like `collision_events`, but entering the region where the L1
    /// clearance margin is negative.
    pub constraint_violation_events: usize,
    pub rejection_rate: f64,
    pub reached_target: bool,
    pub steps: usize,
    /// The state diverged and the episode stopped early.
    pub diverged: bool,
    pub mean_feasibility: f64,
    pub min_feasibility: f64,
    pub all_infeasible_steps: usize,
}

impl EpisodeMetrics {
    /// Copy with the wall-clock fields zeroed, for determinism checks.
    pub fn without_wall_clock(&self) -> Self {
        Self {
            sim_runtime: 0.0,
            control_frequency: 0.0,
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeResult {
    pub metrics: EpisodeMetrics,
    pub trace: Vec<TraceEntry>,
    /// Last executed state, one step after the final trace entry.
    pub final_state: State,
    pub dt: f64,
    pub diagnostics: Vec<StepDiagnostics>,
}

impl EpisodeResult {
    /// Every executed state with its time, including the final one.
    pub fn states(&self) -> Vec<(f64, State)> {
        executed_states(
            &self.trace,
            &self.final_state,
            self.metrics.diverged,
            self.dt,
        )
    }
}

fn executed_states(
    trace: &[TraceEntry],
    last: &State,
    diverged: bool,
    dt: f64,
) -> Vec<(f64, State)> {
    let mut states: Vec<(f64, State)> = trace.iter().map(|e| (e.clock, e.state)).collect();
    if !diverged {
        states.push((trace.len() as f64 * dt, *last));
    }
    states
}

fn count_runs(
    states: &[(f64, State)],
    obstacles: &[Obstacle],
    inside: impl Fn(&State, &Obstacle, f64) -> bool,
) -> usize {
    obstacles
        .iter()
        .map(|o| {
            let mut was_inside = false;
            let mut events = 0;
            for (t, s) in states {
                let now = inside(s, o, *t);
                if now && !was_inside {
                    events += 1;
                }
                was_inside = now;
            }
            events
        })
        .sum()
}

/// Counts collision events: for each obstacle, every maximal run of
/// consecutive states strictly inside its inflated radius counts once.
pub fn count_collision_events(states: &[(f64, State)], obstacles: &[Obstacle]) -> usize {
    count_runs(states, obstacles, |s, o, t| {
        (s.position - o.position(t)).norm() < o.radius
    })
}

/// Counts runs of consecutive states with a negative L1 margin, per obstacle.
/// The L1 region lies inside the Euclidean ball, so this never exceeds
/// [`count_collision_events`] for the same run structure.
pub fn count_constraint_violation_events(states: &[(f64, State)], obstacles: &[Obstacle]) -> usize {
    count_runs(states, obstacles, |s, o, t| {
        l1_margin(&s.position, &o.position(t), o.radius) < 0.0
    })
}

/// Runs one closed-loop episode. `model` is required for BC-MPPI and
/// ignored otherwise.
pub fn run_episode(
    config: &EpisodeConfig,
    model: Option<&dyn FeasibilityModel>,
) -> Result<EpisodeResult> {
    config.validate()?;
    if config.controller == ControllerKind::BcMppi && model.is_none() {
        return Err(Error::ModelNotLoaded);
    }
    let scenario = &config.scenario;
    let mode = match config.controller {
        ControllerKind::MppiPenalty => CostMode::Penalized {
            shaping_weight: config.penalty_shaping,
        },
        _ => CostMode::Tracking,
    };
    let mppi = MppiConfig {
        seed: config.seed,
        ..config.mppi.clone()
    };
    let cost = config.cost.clone().with_target(scenario.target);
    let dt = mppi.dt;
    let params: &QuadrotorParams = &config.params;
    let mut controller = MppiController::new(
        mppi,
        cost,
        *params,
        mode,
        scenario.obstacles.clone(),
        config.workers,
    )?;

    let target = Vector3::from(scenario.target);
    let steps = config.steps();
    let mut state = State::at_rest(Vector3::from(scenario.start));
    let mut trace = Vec::with_capacity(steps);
    let mut diagnostics = Vec::with_capacity(steps);
    let mut diverged = false;
    let started = Instant::now();

    for i in 0..steps {
        let clock = i as f64 * dt;
        let outcome = match (config.controller, model) {
            (ControllerKind::BcMppi, Some(m)) => {
                bc_controller_step(&mut controller, &state, clock, m)?.outcome
            }
            _ => controller.receding_horizon_step(&state, clock),
        };
        diagnostics.push(StepDiagnostics::from_outcome(
            clock,
            &outcome,
            config.log_sample_feasibility,
        ));
        trace.push(TraceEntry {
            clock,
            state,
            input: outcome.input,
        });
        match dynamics::step(&state, &outcome.input, dt, params) {
            Ok(next) => state = next,
            Err(Error::DivergedState(m)) => {
                log::warn!("episode diverged at t = {clock:.2} s: {m}");
                diverged = true;
                break;
            }
            Err(e) => return Err(e),
        }
    }
    let sim_runtime = started.elapsed().as_secs_f64();

    let states = executed_states(&trace, &state, diverged, dt);
    let obstacles = &scenario.obstacles;
    let n = states.len() as f64;
    let target_distances: Vec<f64> = states
        .iter()
        .map(|(_, s)| (s.position - target).norm())
        .collect();
    let avg_obstacle_distance = if obstacles.is_empty() {
        f64::INFINITY
    } else {
        states
            .iter()
            .map(|(t, s)| nearest_center_distance(&s.position, obstacles, *t))
            .sum::<f64>()
            / n
    };
    let samples = (diagnostics.len() * config.mppi.num_samples).max(1);
    let rejected: usize = diagnostics.iter().map(|d| d.rejected).sum();
    let metrics = EpisodeMetrics {
        sim_runtime,
        control_frequency: if sim_runtime > 0.0 {
            diagnostics.len() as f64 / sim_runtime
        } else {
            0.0
        },
        avg_obstacle_distance,
        final_target_distance: *target_distances.last().expect("at least the initial state"),
        mean_target_distance: target_distances.iter().sum::<f64>() / n,
        collision_events: count_collision_events(&states, obstacles),
        constraint_violation_events: count_constraint_violation_events(&states, obstacles),
        rejection_rate: rejected as f64 / samples as f64,
        reached_target: target_distances.iter().any(|d| *d <= TARGET_TOLERANCE),
        steps: diagnostics.len(),
        diverged,
        mean_feasibility: diagnostics.iter().map(|d| d.mean_feasibility).sum::<f64>()
            / diagnostics.len().max(1) as f64,
        min_feasibility: diagnostics
            .iter()
            .map(|d| d.min_feasibility)
            .fold(1.0, f64::min),
        all_infeasible_steps: diagnostics.iter().filter(|d| d.all_infeasible).count(),
    };
    Ok(EpisodeResult {
        metrics,
        trace,
        final_state: state,
        dt,
        diagnostics,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bc::ConstantFeasibility;
    use crate::sim::scenario::Randomization;

    fn free_scenario(duration: f64) -> Scenario {
        Scenario {
            name: "free".into(),
            start: [0.0, 0.0, 1.0],
            target: [4.0, 0.0, 1.0],
            duration,
            obstacles: vec![],
            randomization: Randomization::default(),
        }
    }

    fn config(scenario: Scenario, kind: ControllerKind) -> EpisodeConfig {
        let mut c = EpisodeConfig::new(scenario, kind);
        c.workers = 1;
        c
    }

    #[test]
    fn zero_duration_is_a_config_error() {
        let mut c = config(free_scenario(10.0), ControllerKind::ClassicMppi);
        c.duration = Some(0.0);
        assert!(matches!(run_episode(&c, None), Err(Error::Config(_))));
    }

    #[test]
    fn bc_without_model_fails() {
        let c = config(free_scenario(0.1), ControllerKind::BcMppi);
        assert!(matches!(run_episode(&c, None), Err(Error::ModelNotLoaded)));
    }

    #[test]
    fn obstacle_free_flight_reaches_the_target() {
        let c = config(free_scenario(10.0), ControllerKind::ClassicMppi);
        let r = run_episode(&c, None).unwrap();
        assert_eq!(r.metrics.steps, 500);
        assert!(!r.metrics.diverged);
        assert!(r.metrics.reached_target);
        assert!(
            r.metrics.final_target_distance < TARGET_TOLERANCE,
            "{:?}",
            r.metrics
        );
        assert_eq!(r.metrics.collision_events, 0);
        assert!(r.metrics.avg_obstacle_distance.is_infinite());
        assert!((r.metrics.control_frequency * r.metrics.sim_runtime - 500.0).abs() < 1e-6);
    }

    #[test]
    fn bc_with_unit_stub_reaches_a_near_target() {
        let mut s = free_scenario(10.0);
        s.target = [2.0, 0.0, 1.0];
        let c = config(s, ControllerKind::BcMppi);
        let r = run_episode(&c, Some(&ConstantFeasibility(1.0))).unwrap();
        assert!(r.metrics.reached_target, "{:?}", r.metrics);
        assert_eq!(r.metrics.collision_events, 0);
    }

    #[test]
    fn penalty_controller_hits_a_wall_repeatably() {
        let mut s = free_scenario(6.0);
        s.obstacles = [-0.9, -0.3, 0.3, 0.9]
            .iter()
            .flat_map(|&y| [0.6, 1.2].map(|z| Obstacle::stationary([2.0, y, z], 0.45)))
            .collect();
        let mut c = config(s.clone(), ControllerKind::MppiPenalty);
        c.seed = 4;
        let a = run_episode(&c, None).unwrap();
        let b = run_episode(&c, None).unwrap();
        assert!(a.metrics.collision_events >= 1, "{:?}", a.metrics);
        assert_eq!(a.metrics.collision_events, b.metrics.collision_events);
        assert_eq!(
            count_collision_events(&a.states(), &s.obstacles),
            a.metrics.collision_events
        );
    }

    #[test]
    fn rejection_rate_counts_rejected_samples() {
        let c = config(free_scenario(0.5), ControllerKind::ClassicMppi);
        let r = run_episode(&c, None).unwrap();
        let rejected: usize = r.diagnostics.iter().map(|d| d.rejected).sum();
        let expected = rejected as f64 / (c.mppi.num_samples * r.metrics.steps) as f64;
        assert_eq!(r.metrics.rejection_rate, expected);
    }

    #[test]
    fn unit_feasibility_matches_classic() {
        let classic = config(free_scenario(0.4), ControllerKind::ClassicMppi);
        let bc = config(free_scenario(0.4), ControllerKind::BcMppi);
        let a = run_episode(&classic, None).unwrap();
        let b = run_episode(&bc, Some(&ConstantFeasibility(1.0))).unwrap();
        assert_eq!(a.trace, b.trace);
        assert_eq!(a.final_state, b.final_state);
    }

    #[test]
    fn wall_is_hit_and_counted_consistently() {
        let mut s = free_scenario(4.0);
        s.obstacles = vec![Obstacle::stationary([2.0, 0.0, 1.0], 0.6)];
        let c = config(s.clone(), ControllerKind::ClassicMppi);
        let r = run_episode(&c, None).unwrap();
        let states = r.states();
        assert_eq!(states.len(), r.trace.len() + 1);
        assert_eq!(
            count_collision_events(&states, &s.obstacles),
            r.metrics.collision_events
        );
        // Straight through the centre: the tracking-only controller meets it.
        assert!(r.metrics.collision_events >= 1, "{:?}", r.metrics);
    }

    #[test]
    fn collision_runs_count_once() {
        let o = Obstacle::stationary([0.0, 0.0, 0.0], 1.0);
        let at = |x: f64| (0.0, State::at_rest(Vector3::new(x, 0.0, 0.0)));
        let states = [
            at(2.0),
            at(0.5),
            at(0.2),
            at(1.5),
            at(0.9),
            at(1.0),
            at(3.0),
        ];
        assert_eq!(count_collision_events(&states, std::slice::from_ref(&o)), 2);
        assert_eq!(count_constraint_violation_events(&states, &[o]), 2);
    }

    #[test]
    fn l1_violations_are_a_subset_of_collisions() {
        let o = Obstacle::stationary([0.0, 0.0, 0.0], 1.0);
        // Diagonal pass: inside the sphere, outside the L1 region.
        let diag = |x: f64| (0.0, State::at_rest(Vector3::new(x, 0.5, 0.5)));
        let states = [diag(-2.0), diag(-0.2), diag(0.0), diag(0.2), diag(2.0)];
        assert_eq!(count_collision_events(&states, std::slice::from_ref(&o)), 1);
        assert_eq!(count_constraint_violation_events(&states, &[o]), 0);
    }

    #[test]
    fn worker_count_does_not_change_the_episode() {
        let mut one = config(free_scenario(0.5), ControllerKind::MppiPenalty);
        one.scenario.obstacles = vec![Obstacle::stationary([1.0, 0.0, 1.0], 0.5)];
        let mut eight = one.clone();
        eight.workers = 8;
        let a = run_episode(&one, None).unwrap();
        let b = run_episode(&eight, None).unwrap();
        assert_eq!(a.trace, b.trace);
        assert_eq!(
            a.metrics.without_wall_clock(),
            b.metrics.without_wall_clock()
        );
    }
}
