//! Quadrotor rigid-body dynamics with first-order rotor lag.
//!
//! The state is the 17-dimensional vector `{p, q, v, ω, ω_m}`: world-frame
//! position, world-from-body unit quaternion `(w, x, y, z)`, world-frame
//! linear velocity, body-frame angular velocity and the four rotor speeds.
//! Rotor speeds follow their setpoints through a first-order low-pass with
//! time constant `T_m`, and each rotor produces thrust along the body z axis
//! according to a quadratic thrust curve.
//!
//! Integration is classical RK4; the quaternion is renormalized and the rotor
//! speeds clamped after every step.

use nalgebra::{Matrix3, Quaternion, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::SimError;

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;

pub const STATE_DIM: usize = 17;
pub const NUM_ROTORS: usize = 4;

/// Tolerance on `‖q‖ − 1` accepted by [`quat_to_rotmat`].
pub const UNIT_QUATERNION_TOLERANCE: f64 = 1e-6;

/// Default integration step, 100 Hz.
pub const DEFAULT_DT: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadState {
    pub position: Vec3,
    /// World-from-body rotation as `(w, x, y, z)`.
    pub orientation: Quaternion<f64>,
    pub linear_velocity: Vec3,
    /// Body frame.
    pub angular_velocity: Vec3,
    pub rotor_speeds: [f64; NUM_ROTORS],
}

impl QuadState {
    /// Origin, identity attitude, at rest, with all rotors at `rotor_speed`.
    pub fn at_rest(rotor_speed: f64) -> Self {
        Self {
            position: Vec3::zeros(),
            orientation: Quaternion::identity(),
            linear_velocity: Vec3::zeros(),
            angular_velocity: Vec3::zeros(),
            rotor_speeds: [rotor_speed; NUM_ROTORS],
        }
    }

    /// Flattens to `[p, q(w,x,y,z), v, ω, ω_m]`.
    pub fn to_array(&self) -> [f64; STATE_DIM] {
        let q = &self.orientation;
        let mut out = [0.0; STATE_DIM];
        out[0..3].copy_from_slice(self.position.as_slice());
        out[3..7].copy_from_slice(&[q.w, q.i, q.j, q.k]);
        out[7..10].copy_from_slice(self.linear_velocity.as_slice());
        out[10..13].copy_from_slice(self.angular_velocity.as_slice());
        out[13..17].copy_from_slice(&self.rotor_speeds);
        out
    }

    pub fn from_array(x: &[f64; STATE_DIM]) -> Self {
        Self {
            position: Vec3::new(x[0], x[1], x[2]),
            orientation: Quaternion::new(x[3], x[4], x[5], x[6]),
            linear_velocity: Vec3::new(x[7], x[8], x[9]),
            angular_velocity: Vec3::new(x[10], x[11], x[12]),
            rotor_speeds: [x[13], x[14], x[15], x[16]],
        }
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|x| x.is_finite())
    }
}

/// Physical parameters of the vehicle. Key names carry their units in the
/// serialized form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadParams {
    #[serde(rename = "mass_kg")]
    pub mass: f64,
    /// Row-major 3×3 inertia tensor.
    #[serde(rename = "inertia_kg_m2")]
    pub inertia: [[f64; 3]; 3],
    /// Body-frame rotor hub positions.
    #[serde(rename = "rotor_positions_m")]
    pub rotor_positions: [[f64; 3]; NUM_ROTORS],
    /// Sign of the reaction yaw torque each rotor produces (+1 or -1).
    pub rotor_directions: [f64; NUM_ROTORS],
    /// `(c0, c1, c2)` with thrust `f(ω) = c0 + c1·ω + c2·ω²` in newtons.
    #[serde(rename = "thrust_coefficients_n")]
    pub thrust_coefficients: [f64; 3],
    /// Yaw torque per newton of thrust.
    #[serde(rename = "torque_coefficient_m")]
    pub torque_coefficient: f64,
    #[serde(rename = "motor_time_constant_s")]
    pub motor_time_constant: f64,
    #[serde(rename = "rotor_speed_min_rad_s")]
    pub rotor_speed_min: f64,
    #[serde(rename = "rotor_speed_max_rad_s")]
    pub rotor_speed_max: f64,
    #[serde(rename = "gravity_m_s2")]
    pub gravity: [f64; 3],
}

impl Default for QuadParams {
    /// A 27 g nano quadrotor in X configuration (Crazyflie class).
    fn default() -> Self {
        let arm = 0.046 / std::f64::consts::SQRT_2;
        Self {
            mass: 0.027,
            inertia: [
                [16.571710e-6, 0.0, 0.0],
                [0.0, 16.655602e-6, 0.0],
                [0.0, 0.0, 29.261652e-6],
            ],
            rotor_positions: [
                [arm, -arm, 0.0],
                [-arm, -arm, 0.0],
                [-arm, arm, 0.0],
                [arm, arm, 0.0],
            ],
            rotor_directions: [-1.0, 1.0, -1.0, 1.0],
            thrust_coefficients: [0.0, 0.0, 2.88e-8],
            torque_coefficient: 0.005964552,
            motor_time_constant: 0.15,
            rotor_speed_min: 0.0,
            // 21702 RPM
            rotor_speed_max: 2272.6,
            gravity: [0.0, 0.0, -9.81],
        }
    }
}

impl QuadParams {
    pub fn validate(&self) -> Result<(), SimError> {
        let invalid = |what: &str| Err(SimError::InvalidParams(what.to_string()));
        if !(self.mass > 0.0) {
            return invalid("mass must be positive");
        }
        if !(self.motor_time_constant > 0.0) {
            return invalid("motor time constant must be positive");
        }
        if !(self.rotor_speed_min >= 0.0 && self.rotor_speed_max > self.rotor_speed_min) {
            return invalid("rotor speed bounds must satisfy 0 <= min < max");
        }
        let j = self.inertia_matrix();
        if (j - j.transpose()).abs().max() > 1e-12 * j.abs().max() {
            return invalid("inertia must be symmetric");
        }
        if j.cholesky().is_none() {
            return invalid("inertia must be positive definite");
        }
        if self.thrust_coefficients[2] < 0.0 {
            return invalid("quadratic thrust coefficient must be nonnegative");
        }
        if self.rotor_directions.iter().any(|d| d.abs() != 1.0) {
            return invalid("rotor directions must be +1 or -1");
        }
        if 4.0 * self.thrust(self.rotor_speed_max) <= self.mass * self.gravity_vector().norm() {
            return invalid("hover infeasible: maximum thrust does not exceed weight");
        }
        Ok(())
    }

    pub fn inertia_matrix(&self) -> Mat3 {
        Mat3::from_fn(|r, c| self.inertia[r][c])
    }

    pub fn gravity_vector(&self) -> Vec3 {
        Vec3::from(self.gravity)
    }

    #[inline]
    pub fn thrust(&self, rotor_speed: f64) -> f64 {
        let [c0, c1, c2] = self.thrust_coefficients;
        c0 + c1 * rotor_speed + c2 * rotor_speed * rotor_speed
    }

    pub fn clamp_rotor_speed(&self, rotor_speed: f64) -> f64 {
        rotor_speed.clamp(self.rotor_speed_min, self.rotor_speed_max)
    }
}

/// Constant external force (world frame) and torque (body frame) applied for
/// a whole episode.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Disturbance {
    pub force: Vec3,
    pub torque: Vec3,
}

impl Disturbance {
    pub fn zero() -> Self {
        Self::default()
    }
}

/// Rotation matrix of a unit quaternion.
///
/// Every entry is built from pairwise products of components, so `q` and `-q`
/// give bitwise-identical matrices.
pub fn quat_to_rotmat(q: &Quaternion<f64>) -> Result<Mat3, SimError> {
    let norm = q.norm();
    if !((norm - 1.0).abs() <= UNIT_QUATERNION_TOLERANCE) {
        return Err(SimError::NonUnitQuaternion(norm));
    }
    Ok(rotmat_unchecked(q))
}

#[inline]
pub(crate) fn rotmat_unchecked(q: &Quaternion<f64>) -> Mat3 {
    let (w, x, y, z) = (q.w, q.i, q.j, q.k);
    let (xx, yy, zz) = (x * x, y * y, z * z);
    let (xy, xz, yz) = (x * y, x * z, y * z);
    let (wx, wy, wz) = (w * x, w * y, w * z);
    Mat3::new(
        1.0 - 2.0 * (yy + zz),
        2.0 * (xy - wz),
        2.0 * (xz + wy),
        2.0 * (xy + wz),
        1.0 - 2.0 * (xx + zz),
        2.0 * (yz - wx),
        2.0 * (xz - wy),
        2.0 * (yz + wx),
        1.0 - 2.0 * (xx + yy),
    )
}

/// Time derivative of the 17-dimensional state, laid out like
/// [`QuadState::to_array`].
pub fn dynamics_derivative(
    params: &QuadParams,
    state: &QuadState,
    setpoints: &[f64; NUM_ROTORS],
    dist: &Disturbance,
) -> [f64; STATE_DIM] {
    let inertia = params.inertia_matrix();
    let inertia_inv = inertia
        .try_inverse()
        .expect("inertia validated as positive definite");
    derivative_with_inverse(params, &inertia, &inertia_inv, state, setpoints, dist)
}

#[inline]
fn derivative_with_inverse(
    params: &QuadParams,
    inertia: &Mat3,
    inertia_inv: &Mat3,
    state: &QuadState,
    setpoints: &[f64; NUM_ROTORS],
    dist: &Disturbance,
) -> [f64; STATE_DIM] {
    let q = &state.orientation;
    let omega = &state.angular_velocity;

    let mut total_thrust = 0.0;
    let mut torque = Vec3::zeros();
    for i in 0..NUM_ROTORS {
        let f = params.thrust(state.rotor_speeds[i]);
        total_thrust += f;
        let r = params.rotor_positions[i];
        // r × (0, 0, f)
        torque.x += r[1] * f;
        torque.y -= r[0] * f;
        torque.z += params.rotor_directions[i] * params.torque_coefficient * f;
    }

    let rot = rotmat_unchecked(q);
    let accel = params.gravity_vector()
        + (rot.column(2) * total_thrust + dist.force) / params.mass;
    let angular_accel = inertia_inv * (torque + dist.torque - omega.cross(&(inertia * omega)));

    // ½ q ⊗ (0, ω)
    let q_dot = q * Quaternion::new(0.0, omega.x, omega.y, omega.z) * 0.5;

    let mut d = [0.0; STATE_DIM];
    d[0..3].copy_from_slice(state.linear_velocity.as_slice());
    d[3..7].copy_from_slice(&[q_dot.w, q_dot.i, q_dot.j, q_dot.k]);
    d[7..10].copy_from_slice(accel.as_slice());
    d[10..13].copy_from_slice(angular_accel.as_slice());
    for i in 0..NUM_ROTORS {
        d[13 + i] = (setpoints[i] - state.rotor_speeds[i]) / params.motor_time_constant;
    }
    d
}

#[inline]
fn axpy(x: &[f64; STATE_DIM], a: f64, k: &[f64; STATE_DIM]) -> [f64; STATE_DIM] {
    let mut out = [0.0; STATE_DIM];
    for i in 0..STATE_DIM {
        out[i] = x[i] + a * k[i];
    }
    out
}

/// One RK4 step of length `dt`.
pub fn step(
    params: &QuadParams,
    state: &QuadState,
    setpoints: &[f64; NUM_ROTORS],
    dist: &Disturbance,
    dt: f64,
) -> Result<QuadState, SimError> {
    if !(dt > 0.0) {
        return Err(SimError::InvalidTimestep(dt));
    }
    let inertia = params.inertia_matrix();
    let inertia_inv = inertia
        .try_inverse()
        .ok_or_else(|| SimError::InvalidParams("singular inertia".into()))?;
    let f = |x: &[f64; STATE_DIM]| {
        derivative_with_inverse(
            params,
            &inertia,
            &inertia_inv,
            &QuadState::from_array(x),
            setpoints,
            dist,
        )
    };

    let x0 = state.to_array();
    let k1 = f(&x0);
    let k2 = f(&axpy(&x0, 0.5 * dt, &k1));
    let k3 = f(&axpy(&x0, 0.5 * dt, &k2));
    let k4 = f(&axpy(&x0, dt, &k3));
    let mut x = [0.0; STATE_DIM];
    for i in 0..STATE_DIM {
        x[i] = x0[i] + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }

    let mut next = QuadState::from_array(&x);
    next.orientation /= next.orientation.norm();
    for w in next.rotor_speeds.iter_mut() {
        *w = params.clamp_rotor_speed(*w);
    }
    if !next.is_finite() {
        return Err(SimError::Diverged);
    }
    Ok(next)
}

/// Steps every environment independently. Slot `i` of the result is bitwise
/// identical to `step(params, &states[i], &actions[i], &dists[i], dt)`.
pub fn step_batch(
    params: &QuadParams,
    states: &[QuadState],
    setpoints: &[[f64; NUM_ROTORS]],
    dists: &[Disturbance],
    dt: f64,
) -> Result<Vec<Result<QuadState, SimError>>, SimError> {
    if setpoints.len() != states.len() || dists.len() != states.len() {
        return Err(SimError::BatchMismatch {
            states: states.len(),
            actions: setpoints.len(),
            disturbances: dists.len(),
        });
    }
    Ok(states
        .par_iter()
        .with_min_len(256)
        .zip(setpoints.par_iter())
        .zip(dists.par_iter())
        .map(|((s, u), d)| step(params, s, u, d, dt))
        .collect())
}

/// Rotor speed at which four rotors exactly balance gravity, and the resting
/// state at the origin spinning at that speed.
pub fn hover_equilibrium(params: &QuadParams) -> Result<(f64, QuadState), SimError> {
    let per_rotor = params.mass * params.gravity_vector().norm() / NUM_ROTORS as f64;
    let speed = invert_thrust(params, per_rotor).ok_or(SimError::HoverInfeasible)?;
    if speed < params.rotor_speed_min || speed > params.rotor_speed_max {
        return Err(SimError::HoverInfeasible);
    }
    // The closed form is exact up to rounding; walk a few ulps so the vertical
    // acceleration evaluates to exactly zero when such a float exists.
    let vertical_accel = |w: f64| {
        dynamics_derivative(params, &QuadState::at_rest(w), &[w; NUM_ROTORS], &Disturbance::zero())[9]
    };
    let mut best = speed;
    if vertical_accel(speed) != 0.0 {
        let mut lo = speed;
        let mut hi = speed;
        for _ in 0..64 {
            lo = lo.next_down();
            hi = hi.next_up();
            if vertical_accel(lo) == 0.0 {
                best = lo;
                break;
            }
            if vertical_accel(hi) == 0.0 {
                best = hi;
                break;
            }
        }
    }
    Ok((best, QuadState::at_rest(best)))
}

/// Nonnegative rotor speed producing `thrust`, i.e. the larger root of
/// `c2·ω² + c1·ω + (c0 − thrust) = 0`. `None` if no nonnegative root exists.
pub fn invert_thrust(params: &QuadParams, thrust: f64) -> Option<f64> {
    let [c0, c1, c2] = params.thrust_coefficients;
    let c = c0 - thrust;
    let root = if c2 == 0.0 {
        if c1 == 0.0 {
            return None;
        }
        -c / c1
    } else {
        let disc = c1 * c1 - 4.0 * c2 * c;
        if disc < 0.0 {
            return None;
        }
        let sq = disc.sqrt();
        // larger root, written to avoid cancellation
        if c1 >= 0.0 {
            if c1 + sq == 0.0 {
                0.0
            } else {
                -2.0 * c / (c1 + sq)
            }
        } else {
            (sq - c1) / (2.0 * c2)
        }
    };
    (root.is_finite() && root >= 0.0).then_some(root)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx_eq::*;

    mod approx_eq {
        pub fn close(a: f64, b: f64, tol: f64) -> bool {
            (a - b).abs() <= tol
        }
    }

    #[test]
    fn identity_and_yaw_flip() {
        let r = quat_to_rotmat(&Quaternion::identity()).unwrap();
        assert_eq!(r, Mat3::identity());
        let r = quat_to_rotmat(&Quaternion::new(0.0, 0.0, 0.0, 1.0)).unwrap();
        assert_eq!(r, Mat3::from_diagonal(&Vec3::new(-1.0, -1.0, 1.0)));
    }

    #[test]
    fn rejects_non_unit_quaternion() {
        let err = quat_to_rotmat(&Quaternion::new(1.1, 0.0, 0.0, 0.0)).unwrap_err();
        assert!(matches!(err, SimError::NonUnitQuaternion(_)));
    }

    #[test]
    fn default_params_are_valid() {
        QuadParams::default().validate().unwrap();
    }

    #[test]
    fn hover_speed_closed_form() {
        let p = QuadParams::default();
        let (w, s) = hover_equilibrium(&p).unwrap();
        let expected = (p.mass * 9.81 / (4.0 * p.thrust_coefficients[2])).sqrt();
        assert!(close(w, expected, 1e-9 * expected));
        let d = dynamics_derivative(&p, &s, &[w; 4], &Disturbance::zero());
        assert!(d.iter().all(|&x| x == 0.0), "{d:?}");
    }

    #[test]
    fn invert_thrust_general_quadratic() {
        let mut p = QuadParams::default();
        p.thrust_coefficients = [0.01, 3e-5, 2e-8];
        for f in [0.01, 0.05, 0.1, 0.15] {
            let w = invert_thrust(&p, f).unwrap();
            assert!(close(p.thrust(w), f, 1e-12));
        }
        p.thrust_coefficients = [0.0, -3e-5, 2e-8];
        let w = invert_thrust(&p, 0.07).unwrap();
        assert!(close(p.thrust(w), 0.07, 1e-12));
        assert!(w > 0.0);
    }

    #[test]
    fn infeasible_hover_is_rejected() {
        let mut p = QuadParams::default();
        p.mass = 1.0;
        assert!(matches!(hover_equilibrium(&p), Err(SimError::HoverInfeasible)));
        assert!(p.validate().is_err());
    }

    #[test]
    fn nonpositive_dt_is_rejected() {
        let p = QuadParams::default();
        let s = QuadState::at_rest(0.0);
        assert!(matches!(
            step(&p, &s, &[0.0; 4], &Disturbance::zero(), 0.0),
            Err(SimError::InvalidTimestep(_))
        ));
    }

    #[test]
    fn divergence_is_reported() {
        let p = QuadParams::default();
        let mut s = QuadState::at_rest(0.0);
        s.linear_velocity.x = f64::NAN;
        assert!(matches!(
            step(&p, &s, &[0.0; 4], &Disturbance::zero(), 0.01),
            Err(SimError::Diverged)
        ));
    }

    #[test]
    fn batch_mismatch_is_an_error() {
        let p = QuadParams::default();
        let s = vec![QuadState::at_rest(0.0); 2];
        assert!(step_batch(&p, &s, &[[0.0; 4]], &[Disturbance::zero(); 2], 0.01).is_err());
    }

    #[test]
    fn batch_flags_diverged_slot_only() {
        let p = QuadParams::default();
        let mut s = vec![QuadState::at_rest(1000.0); 3];
        s[1].position.y = f64::INFINITY;
        let out = step_batch(&p, &s, &[[1000.0; 4]; 3], &[Disturbance::zero(); 3], 0.01).unwrap();
        assert!(out[0].is_ok() && out[2].is_ok());
        assert!(out[1].is_err());
    }

    #[test]
    fn rotor_speeds_are_clamped() {
        let p = QuadParams::default();
        let s = QuadState::at_rest(p.rotor_speed_max);
        // setpoint beyond the bound; the lag alone would overshoot nothing, but
        // a huge setpoint drives the integrated speed past the maximum
        let next = step(&p, &s, &[1e7; 4], &Disturbance::zero(), 0.01).unwrap();
        assert!(next.rotor_speeds.iter().all(|&w| w == p.rotor_speed_max));
    }
}
