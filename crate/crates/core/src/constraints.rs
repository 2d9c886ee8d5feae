//! Spherical obstacles, L1 clearance margins and the step penalty.
//!
//! The margin of a point to an obstacle is its L1 distance to the obstacle
//! centre minus the inflated radius; a negative margin is a violation. Each
//! horizon step is scored by its worst obstacle.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::dynamics::State;
use crate::error::{Error, Result};

/// Cost charged for a step whose margin is negative.
pub const VIOLATION_PENALTY: f64 = 1e3;

pub const DEFAULT_AMPLITUDE: f64 = 0.5;
pub const DEFAULT_ANGULAR_FREQUENCY: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Motion {
    Stationary,
    Circular,
    Diagonal,
    Sinusoidal,
}

impl Motion {
    pub const MOVING: [Motion; 3] = [Motion::Circular, Motion::Diagonal, Motion::Sinusoidal];

    pub fn name(&self) -> &'static str {
        match self {
            Motion::Stationary => "stationary",
            Motion::Circular => "circular",
            Motion::Diagonal => "diagonal",
            Motion::Sinusoidal => "sinusoidal",
        }
    }
}

/// Axis-aligned box.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Arena {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl Default for Arena {
    fn default() -> Self {
        Self {
            min: [-5.0; 3],
            max: [5.0; 3],
        }
    }
}

impl Arena {
    pub fn clip(&self, p: Vector3<f64>) -> Vector3<f64> {
        Vector3::new(
            p.x.clamp(self.min[0], self.max[0]),
            p.y.clamp(self.min[1], self.max[1]),
            p.z.clamp(self.min[2], self.max[2]),
        )
    }
}

fn default_amplitude() -> f64 {
    DEFAULT_AMPLITUDE
}

fn default_angular_frequency() -> f64 {
    DEFAULT_ANGULAR_FREQUENCY
}

fn default_direction() -> [f64; 3] {
    [1.0, 0.0, 0.0]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Obstacle {
    pub motion: Motion,
    pub anchor: [f64; 3],
    /// Inflated radius, m.
    pub radius: f64,
    #[serde(default = "default_amplitude")]
    pub amplitude: f64,
    #[serde(default = "default_angular_frequency")]
    pub angular_frequency: f64,
    /// Unit vector for diagonal oscillation and sinusoidal drift.
    #[serde(default = "default_direction")]
    pub direction: [f64; 3],
    #[serde(default)]
    pub phase: f64,
    #[serde(default)]
    pub arena: Arena,
}

impl Obstacle {
    pub fn stationary(anchor: [f64; 3], radius: f64) -> Self {
        Self {
            motion: Motion::Stationary,
            anchor,
            radius,
            amplitude: DEFAULT_AMPLITUDE,
            angular_frequency: DEFAULT_ANGULAR_FREQUENCY,
            direction: default_direction(),
            phase: 0.0,
            arena: Arena::default(),
        }
    }

    pub fn moving(motion: Motion, anchor: [f64; 3], radius: f64) -> Self {
        Self {
            motion,
            ..Self::stationary(anchor, radius)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.radius > 0.0 && self.radius.is_finite()) {
            return Err(Error::Config(format!(
                "obstacle radius must be positive, got {}",
                self.radius
            )));
        }
        let all_finite = self
            .anchor
            .iter()
            .chain(self.direction.iter())
            .all(|v| v.is_finite())
            && self.amplitude.is_finite()
            && self.angular_frequency.is_finite()
            && self.phase.is_finite();
        if !all_finite {
            return Err(Error::Config("obstacle parameters must be finite".into()));
        }
        let n = Vector3::from(self.direction).norm();
        if (n - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "obstacle direction must be a unit vector, norm is {n}"
            )));
        }
        Ok(())
    }

    /// Centre of the obstacle at time `t` (seconds).
    pub fn position(&self, t: f64) -> Vector3<f64> {
        let anchor = Vector3::from(self.anchor);
        let a = self.amplitude;
        let w = self.angular_frequency;
        let dir = Vector3::from(self.direction);
        match self.motion {
            Motion::Stationary => anchor,
            Motion::Circular => {
                let angle = w * t + self.phase;
                anchor + a * Vector3::new(angle.cos(), angle.sin(), 0.0)
            }
            Motion::Diagonal => anchor + a * (w * t + self.phase).sin() * dir,
            Motion::Sinusoidal => {
                let bob = a * (w * t + self.phase).sin() * Vector3::z();
                self.arena.clip(anchor + bob + a * w * t * dir)
            }
        }
    }
}

/// L1 distance between the two points minus the inflated radius.
pub fn l1_margin(robot: &Vector3<f64>, obstacle: &Vector3<f64>, radius: f64) -> f64 {
    (robot - obstacle).abs().sum() - radius
}

/// Step penalty: [`VIOLATION_PENALTY`] for a negative margin, zero otherwise.
pub fn penalty_term(margin: f64) -> f64 {
    if margin < 0.0 {
        VIOLATION_PENALTY
    } else {
        0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConstraintVerdict {
    /// Minimum L1 margin over all steps and obstacles.
    pub min_margin: f64,
    /// Per-step penalty averaged over the trajectory.
    pub mean_penalty: f64,
    /// Per-step penalties summed over the trajectory.
    pub total_penalty: f64,
    /// Sum over steps of `max(0, -worst margin)`.
    pub violation_depth: f64,
    /// Mean over steps of the margin averaged across obstacles.
    pub mean_margin: f64,
    pub violated: bool,
}

impl ConstraintVerdict {
    /// Verdict for a trajectory with no obstacles in the scene.
    pub fn unconstrained() -> Self {
        Self {
            min_margin: f64::INFINITY,
            mean_penalty: 0.0,
            total_penalty: 0.0,
            violation_depth: 0.0,
            mean_margin: f64::INFINITY,
            violated: false,
        }
    }
}

/// Worst (smallest) margin of `position` across `obstacles` at time `t`.
pub fn worst_margin(position: &Vector3<f64>, obstacles: &[Obstacle], t: f64) -> f64 {
    obstacles
        .iter()
        .map(|o| l1_margin(position, &o.position(t), o.radius))
        .fold(f64::INFINITY, f64::min)
}

/// Scores state `i` of `trajectory` against obstacles evaluated at `t0 + i·dt`.
pub fn evaluate_trajectory(
    trajectory: &[State],
    obstacles: &[Obstacle],
    t0: f64,
    dt: f64,
) -> ConstraintVerdict {
    if obstacles.is_empty() || trajectory.is_empty() {
        return ConstraintVerdict::unconstrained();
    }
    let mut min_margin = f64::INFINITY;
    let mut penalty_sum = 0.0;
    let mut margin_sum = 0.0;
    let mut depth = 0.0;
    for (i, state) in trajectory.iter().enumerate() {
        let t = t0 + i as f64 * dt;
        let mut step_min = f64::INFINITY;
        let mut step_sum = 0.0;
        for o in obstacles {
            let d = l1_margin(&state.position, &o.position(t), o.radius);
            step_min = step_min.min(d);
            step_sum += d;
        }
        min_margin = min_margin.min(step_min);
        penalty_sum += penalty_term(step_min);
        depth += (-step_min).max(0.0);
        margin_sum += step_sum / obstacles.len() as f64;
    }
    let n = trajectory.len() as f64;
    ConstraintVerdict {
        min_margin,
        mean_penalty: penalty_sum / n,
        total_penalty: penalty_sum,
        violation_depth: depth,
        mean_margin: margin_sum / n,
        violated: min_margin < 0.0,
    }
}

/// Euclidean distance from `position` to the nearest obstacle centre at `t`.
pub fn nearest_center_distance(position: &Vector3<f64>, obstacles: &[Obstacle], t: f64) -> f64 {
    obstacles
        .iter()
        .map(|o| (position - o.position(t)).norm())
        .fold(f64::INFINITY, f64::min)
}

/// Indices of obstacles whose inflated sphere contains `position` at `t`.
pub fn colliding_obstacles(position: &Vector3<f64>, obstacles: &[Obstacle], t: f64) -> Vec<usize> {
    obstacles
        .iter()
        .enumerate()
        .filter(|(_, o)| (position - o.position(t)).norm() < o.radius)
        .map(|(i, _)| i)
        .collect()
}
