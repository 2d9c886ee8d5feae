//! Rigid-body quadrotor model.
//!
//! Newton-Euler equations for an X-configuration quadrotor with four rotors,
//! integrated with classical fixed-step RK4:
//!
//! ```text
//! p' = v
//! v' = (0, 0, -g) + R(q) (0, 0, sum f) / m
//! q' = 1/2 q ⊗ (0, ω)
//! J ω' = τ - ω × (J ω)
//! ```
//!
//! Quaternions are scalar-first Hamilton quaternions rotating body vectors
//! into the world frame. No drag, no motor lag.
//!
//! Rotor layout (body frame, x forward, y left, z up), `d = arm / √2`:
//!
//! | rotor | position   | spin |
//! |-------|------------|------|
//! | 0     | ( d, -d)   | CCW  |
//! | 1     | (-d, -d)   | CW   |
//! | 2     | (-d,  d)   | CCW  |
//! | 3     | ( d,  d)   | CW   |

use nalgebra::{Quaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Magnitude beyond which any state component is treated as diverged.
pub const DIVERGENCE_LIMIT: f64 = 1e6;

/// Number of scalar components in a [`State`].
pub const STATE_DIM: usize = 13;

/// Number of rotors.
pub const NUM_ROTORS: usize = 4;

/// Yaw reaction sign per rotor: +1 for CW rotors, -1 for CCW rotors.
pub const ROTOR_SPIN: [f64; NUM_ROTORS] = [-1.0, 1.0, -1.0, 1.0];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QuadrotorParams {
    /// kg
    pub mass: f64,
    /// kg·m²
    pub inertia_diagonal: [f64; 3],
    /// m
    pub arm_length: f64,
    /// Yaw torque per Newton of rotor thrust (m).
    pub rotor_torque_coefficient: f64,
    /// m/s²
    pub gravity: f64,
    /// Per-rotor thrust limit (N).
    pub u_max: f64,
}

impl Default for QuadrotorParams {
    fn default() -> Self {
        Self {
            mass: 0.8,
            inertia_diagonal: [5e-3, 5e-3, 9e-3],
            arm_length: 0.17,
            rotor_torque_coefficient: 0.016,
            gravity: 9.81,
            u_max: 6.0,
        }
    }
}

impl QuadrotorParams {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.mass,
            self.inertia_diagonal[0],
            self.inertia_diagonal[1],
            self.inertia_diagonal[2],
            self.arm_length,
            self.rotor_torque_coefficient,
            self.gravity,
            self.u_max,
        ];
        if all.iter().all(|v| v.is_finite() && *v > 0.0) {
            Ok(())
        } else {
            Err(Error::Config(
                "quadrotor parameters must all be finite and strictly positive".into(),
            ))
        }
    }

    /// Per-rotor thrust that balances gravity.
    pub fn hover_thrust(&self) -> f64 {
        self.mass * self.gravity / NUM_ROTORS as f64
    }

    /// Maps rotor thrusts to body torques (roll, pitch, yaw).
    pub fn mix_torques(&self, thrusts: &[f64; NUM_ROTORS]) -> Vector3<f64> {
        let d = self.arm_length / std::f64::consts::SQRT_2;
        let [f0, f1, f2, f3] = *thrusts;
        Vector3::new(
            d * (-f0 - f1 + f2 + f3),
            d * (-f0 + f1 + f2 - f3),
            self.rotor_torque_coefficient
                * (ROTOR_SPIN[0] * f0
                    + ROTOR_SPIN[1] * f1
                    + ROTOR_SPIN[2] * f2
                    + ROTOR_SPIN[3] * f3),
        )
    }
}

/// Rotor thrust command, Newtons.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControlInput {
    pub rotor_thrusts: [f64; NUM_ROTORS],
}

impl ControlInput {
    pub fn new(rotor_thrusts: [f64; NUM_ROTORS]) -> Self {
        Self { rotor_thrusts }
    }

    pub fn hover(params: &QuadrotorParams) -> Self {
        Self::new([params.hover_thrust(); NUM_ROTORS])
    }

    pub fn clamped(&self, u_max: f64) -> Self {
        Self::new(self.rotor_thrusts.map(|f| f.clamp(0.0, u_max)))
    }

    pub fn total_thrust(&self) -> f64 {
        self.rotor_thrusts.iter().sum()
    }

    pub fn norm_squared(&self) -> f64 {
        self.rotor_thrusts.iter().map(|f| f * f).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct State {
    pub position: Vector3<f64>,
    /// Unit quaternion, world-from-body.
    pub attitude: Quaternion<f64>,
    /// World frame.
    pub linear_velocity: Vector3<f64>,
    /// Body frame.
    pub angular_velocity: Vector3<f64>,
}

impl Default for State {
    fn default() -> Self {
        Self::at_rest(Vector3::zeros())
    }
}

impl State {
    /// Level, motionless state at `position`.
    pub fn at_rest(position: Vector3<f64>) -> Self {
        Self {
            position,
            attitude: Quaternion::identity(),
            linear_velocity: Vector3::zeros(),
            angular_velocity: Vector3::zeros(),
        }
    }

    /// Flattened as position, quaternion (w, x, y, z), linear velocity, angular velocity.
    pub fn to_array(&self) -> [f64; STATE_DIM] {
        let p = &self.position;
        let q = &self.attitude;
        let v = &self.linear_velocity;
        let w = &self.angular_velocity;
        [
            p.x, p.y, p.z, q.w, q.i, q.j, q.k, v.x, v.y, v.z, w.x, w.y, w.z,
        ]
    }

    pub fn from_slice(values: &[f64]) -> Result<Self> {
        if values.len() != STATE_DIM {
            return Err(Error::LengthMismatch {
                expected: STATE_DIM,
                actual: values.len(),
            });
        }
        Ok(Self {
            position: Vector3::new(values[0], values[1], values[2]),
            attitude: Quaternion::new(values[3], values[4], values[5], values[6]),
            linear_velocity: Vector3::new(values[7], values[8], values[9]),
            angular_velocity: Vector3::new(values[10], values[11], values[12]),
        })
    }

    /// Rotates a body-frame vector into the world frame.
    pub fn body_to_world(&self, v: &Vector3<f64>) -> Vector3<f64> {
        rotate(&self.attitude, v)
    }

    pub fn check_finite(&self) -> Result<()> {
        check_components(&self.to_array())
    }
}

/// Time derivative of a [`State`]; the attitude entry is the raw quaternion rate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StateDerivative {
    pub position: Vector3<f64>,
    pub attitude: Quaternion<f64>,
    pub linear_velocity: Vector3<f64>,
    pub angular_velocity: Vector3<f64>,
}

impl StateDerivative {
    fn to_array(self) -> [f64; STATE_DIM] {
        State {
            position: self.position,
            attitude: self.attitude,
            linear_velocity: self.linear_velocity,
            angular_velocity: self.angular_velocity,
        }
        .to_array()
    }
}

fn check_components(values: &[f64]) -> Result<()> {
    match values
        .iter()
        .position(|v| !v.is_finite() || v.abs() > DIVERGENCE_LIMIT)
    {
        None => Ok(()),
        Some(i) => Err(Error::DivergedState(format!(
            "component {i} = {}",
            values[i]
        ))),
    }
}

/// `q v q*` for a (near) unit quaternion, expanded to avoid building a matrix.
fn rotate(q: &Quaternion<f64>, v: &Vector3<f64>) -> Vector3<f64> {
    let u = Vector3::new(q.i, q.j, q.k);
    let t = 2.0 * u.cross(v);
    v + q.w * t + u.cross(&t)
}

/// Continuous-time right-hand side. `input` must already be clamped.
pub fn derivative(
    state: &State,
    input: &ControlInput,
    params: &QuadrotorParams,
) -> Result<StateDerivative> {
    let q = &state.attitude;
    let omega = &state.angular_velocity;

    let thrust_body = Vector3::new(0.0, 0.0, input.total_thrust());
    let accel = rotate(q, &thrust_body) / params.mass - Vector3::new(0.0, 0.0, params.gravity);

    let q_dot = q * Quaternion::from_parts(0.0, *omega) * 0.5;

    let inertia = Vector3::from(params.inertia_diagonal);
    let torque = params.mix_torques(&input.rotor_thrusts);
    let j_omega = inertia.component_mul(omega);
    let omega_dot = (torque - omega.cross(&j_omega)).component_div(&inertia);

    let d = StateDerivative {
        position: state.linear_velocity,
        attitude: q_dot,
        linear_velocity: accel,
        angular_velocity: omega_dot,
    };
    check_components(&d.to_array())?;
    Ok(d)
}

fn advance(state: &State, d: &StateDerivative, h: f64) -> State {
    State {
        position: state.position + d.position * h,
        attitude: state.attitude + d.attitude * h,
        linear_velocity: state.linear_velocity + d.linear_velocity * h,
        angular_velocity: state.angular_velocity + d.angular_velocity * h,
    }
}

/// One RK4 step of length `dt` under zero-order hold. The input is clamped to
/// `[0, u_max]` and the attitude renormalized once at the end of the step.
pub fn step(
    state: &State,
    input: &ControlInput,
    dt: f64,
    params: &QuadrotorParams,
) -> Result<State> {
    debug_assert!(dt > 0.0);
    let u = input.clamped(params.u_max);

    let k1 = derivative(state, &u, params)?;
    let k2 = derivative(&advance(state, &k1, 0.5 * dt), &u, params)?;
    let k3 = derivative(&advance(state, &k2, 0.5 * dt), &u, params)?;
    let k4 = derivative(&advance(state, &k3, dt), &u, params)?;

    let w = dt / 6.0;
    let mut next = State {
        position: state.position
            + (k1.position + 2.0 * k2.position + 2.0 * k3.position + k4.position) * w,
        attitude: state.attitude
            + (k1.attitude + k2.attitude * 2.0 + k3.attitude * 2.0 + k4.attitude) * w,
        linear_velocity: state.linear_velocity
            + (k1.linear_velocity
                + 2.0 * k2.linear_velocity
                + 2.0 * k3.linear_velocity
                + k4.linear_velocity)
                * w,
        angular_velocity: state.angular_velocity
            + (k1.angular_velocity
                + 2.0 * k2.angular_velocity
                + 2.0 * k3.angular_velocity
                + k4.angular_velocity)
                * w,
    };
    let norm = next.attitude.norm();
    if !(norm.is_finite() && norm > 0.0) {
        return Err(Error::DivergedState(format!("quaternion norm {norm}")));
    }
    next.attitude /= norm;
    next.check_finite()?;
    Ok(next)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::{UnitQuaternion, Vector3};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn params() -> QuadrotorParams {
        QuadrotorParams::default()
    }

    #[test]
    fn hover_is_an_equilibrium() {
        let p = params();
        let d = derivative(&State::default(), &ControlInput::hover(&p), &p).unwrap();
        assert!(d.linear_velocity.norm() < 1e-15);
        assert!(d.angular_velocity.norm() < 1e-15);
        assert!(d.position.norm() == 0.0);
    }

    #[test]
    fn zero_thrust_free_falls() {
        let p = params();
        let d = derivative(&State::default(), &ControlInput::new([0.0; 4]), &p).unwrap();
        assert_eq!(d.linear_velocity, Vector3::new(0.0, 0.0, -p.gravity));
    }

    #[test]
    fn yaw_pattern_only_produces_yaw_torque() {
        let p = params();
        let h = p.hover_thrust();
        let delta = 0.3;
        // +δ on CW rotors (1, 3), -δ on CCW rotors (0, 2).
        let u = ControlInput::new([h - delta, h + delta, h - delta, h + delta]);
        let d = derivative(&State::default(), &u, &p).unwrap();

        // Mixing oracle: torque = Σ r_i × (0, 0, f_i) + κ s_i f_i ẑ.
        let a = p.arm_length / 2f64.sqrt();
        let arms = [(a, -a), (-a, -a), (-a, a), (a, a)];
        let spins = [-1.0, 1.0, -1.0, 1.0];
        let mut torque = Vector3::zeros();
        for i in 0..4 {
            let r = Vector3::new(arms[i].0, arms[i].1, 0.0);
            let f = Vector3::new(0.0, 0.0, u.rotor_thrusts[i]);
            torque += r.cross(&f);
            torque.z += p.rotor_torque_coefficient * spins[i] * u.rotor_thrusts[i];
        }
        assert!(torque.x.abs() < 1e-15 && torque.y.abs() < 1e-15);
        assert_relative_eq!(
            torque.z,
            4.0 * delta * p.rotor_torque_coefficient,
            epsilon = 1e-15
        );

        let expected = torque.component_div(&Vector3::from(p.inertia_diagonal));
        assert_relative_eq!(d.angular_velocity, expected, epsilon = 1e-12);
        assert!(d.linear_velocity.norm() < 1e-12);
    }

    #[test]
    fn mixing_matches_cross_product_oracle_for_random_thrusts() {
        let p = params();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = p.arm_length / 2f64.sqrt();
        let arms = [(a, -a), (-a, -a), (-a, a), (a, a)];
        for _ in 0..100 {
            let f: [f64; 4] = std::array::from_fn(|_| rng.gen_range(0.0..6.0));
            let mut oracle = Vector3::zeros();
            for i in 0..4 {
                oracle +=
                    Vector3::new(arms[i].0, arms[i].1, 0.0).cross(&Vector3::new(0.0, 0.0, f[i]));
                oracle.z += p.rotor_torque_coefficient * ROTOR_SPIN[i] * f[i];
            }
            assert_relative_eq!(p.mix_torques(&f), oracle, epsilon = 1e-14);
        }
    }

    #[test]
    fn hover_drift_is_negligible() {
        let p = params();
        let mut s = State::at_rest(Vector3::new(1.0, -2.0, 3.0));
        let u = ControlInput::hover(&p);
        for _ in 0..50 {
            s = step(&s, &u, 0.02, &p).unwrap();
        }
        assert!((s.position - Vector3::new(1.0, -2.0, 3.0)).norm() < 1e-9);
    }

    #[test]
    fn constant_yaw_rate_matches_axis_angle_rotation() {
        let p = params();
        let mut s = State::default();
        s.angular_velocity = Vector3::new(0.0, 0.0, 1.0);
        let u = ControlInput::hover(&p);
        for _ in 0..50 {
            s = step(&s, &u, 0.02, &p).unwrap();
        }
        let expected = UnitQuaternion::from_axis_angle(&Vector3::z_axis(), 1.0);
        let q = s.attitude;
        let e = expected.quaternion();
        // Sign-invariant comparison.
        let diff = (q - e).norm().min((q + e).norm());
        assert!(diff < 1e-6, "attitude error {diff}");
    }

    #[test]
    fn free_fall_matches_ballistic_closed_form() {
        let p = params();
        let mut s = State::default();
        let u = ControlInput::new([0.0; 4]);
        let dt = 0.02;
        for k in 1..=50 {
            s = step(&s, &u, dt, &p).unwrap();
            let t = k as f64 * dt;
            assert!((s.position.z + 0.5 * p.gravity * t * t).abs() < 1e-9);
        }
    }

    #[test]
    fn free_fall_conserves_energy() {
        let p = params();
        let mut s = State::at_rest(Vector3::new(0.0, 0.0, 10.0));
        s.linear_velocity = Vector3::new(0.3, -0.2, 1.0);
        let energy = |s: &State| {
            0.5 * p.mass * s.linear_velocity.norm_squared() + p.mass * p.gravity * s.position.z
        };
        let e0 = energy(&s);
        for _ in 0..50 {
            s = step(&s, &ControlInput::new([0.0; 4]), 0.02, &p).unwrap();
        }
        assert!(((energy(&s) - e0) / e0).abs() < 1e-6);
    }

    #[test]
    fn thrust_is_clamped_before_integration() {
        let p = params();
        let s = State::default();
        let a = step(&s, &ControlInput::new([100.0, -5.0, 7.0, 3.0]), 0.02, &p).unwrap();
        let b = step(
            &s,
            &ControlInput::new([p.u_max, 0.0, p.u_max, 3.0]),
            0.02,
            &p,
        )
        .unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn divergence_is_reported() {
        let p = params();
        let mut s = State::default();
        s.linear_velocity = Vector3::new(2e6, 0.0, 0.0);
        assert!(matches!(
            step(&s, &ControlInput::hover(&p), 0.02, &p),
            Err(Error::DivergedState(_))
        ));
        s.linear_velocity = Vector3::new(f64::NAN, 0.0, 0.0);
        assert!(derivative(&s, &ControlInput::hover(&p), &p).is_err());
    }

    #[test]
    fn step_is_deterministic() {
        let p = params();
        let mut s = State::default();
        s.angular_velocity = Vector3::new(0.4, -0.3, 0.2);
        let u = ControlInput::new([1.0, 2.5, 2.0, 1.7]);
        assert_eq!(
            step(&s, &u, 0.02, &p).unwrap(),
            step(&s, &u, 0.02, &p).unwrap()
        );
    }

    #[test]
    fn params_validation_rejects_nonpositive() {
        let mut p = params();
        assert!(p.validate().is_ok());
        p.arm_length = 0.0;
        assert!(p.validate().is_err());
    }

    #[test]
    fn state_array_round_trip() {
        let mut s = State::at_rest(Vector3::new(1.0, 2.0, 3.0));
        s.attitude = *UnitQuaternion::from_euler_angles(0.1, 0.2, 0.3).quaternion();
        s.linear_velocity = Vector3::new(4.0, 5.0, 6.0);
        s.angular_velocity = Vector3::new(7.0, 8.0, 9.0);
        assert_eq!(State::from_slice(&s.to_array()).unwrap(), s);
        assert!(State::from_slice(&[0.0; 12]).is_err());
    }
}
