//! Cascaded PID baseline: position → attitude → body rate → mixer → rotor
//! speeds.

use nalgebra::{Matrix4, Vector4};
use serde::{Deserialize, Serialize};

use crate::sim::{self, Mat3, QuadParams, QuadState, Vec3, NUM_ROTORS};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PositionGains {
    pub kp: [f64; 3],
    pub ki: [f64; 3],
    pub kd: [f64; 3],
    /// Clamp on each integrator state, m·s.
    pub integral_limit: f64,
    /// Clamp on each component of the commanded acceleration, m/s².
    #[serde(rename = "accel_limit_m_s2")]
    pub accel_limit: f64,
    /// Largest commanded tilt from vertical, rad.
    #[serde(rename = "max_tilt_rad")]
    pub max_tilt: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AttitudeGains {
    pub kp: [f64; 3],
    #[serde(rename = "rate_limit_rad_s")]
    pub rate_limit: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateGains {
    pub kp: [f64; 3],
    pub ki: [f64; 3],
    pub integral_limit: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PidGains {
    pub position: PositionGains,
    pub attitude: AttitudeGains,
    pub rate: RateGains,
    /// Rotor setpoint is `ω + k·(ω_cmd − ω)`; with `k = T_m / τ` the rotors
    /// respond to the command with time constant `τ` until they saturate.
    pub lag_compensation: f64,
}

impl Default for PidGains {
    /// Tuned on the default vehicle.
    fn default() -> Self {
        Self {
            position: PositionGains {
                kp: [4.0, 4.0, 6.0],
                ki: [0.5, 0.5, 1.0],
                kd: [3.0, 3.0, 4.0],
                integral_limit: 0.5,
                accel_limit: 6.0,
                max_tilt: 0.6,
            },
            attitude: AttitudeGains {
                kp: [10.0, 10.0, 4.0],
                rate_limit: 8.0,
            },
            rate: RateGains {
                kp: [25.0, 25.0, 10.0],
                ki: [0.0, 0.0, 0.0],
                integral_limit: 1.0,
            },
            lag_compensation: 5.0,
        }
    }
}

/// Linear map from per-rotor thrusts to `(collective thrust, τx, τy, τz)`
/// and its inverse.
#[derive(Debug, Clone, PartialEq)]
pub struct Mixer {
    forward: Matrix4<f64>,
    inverse: Matrix4<f64>,
}

impl Mixer {
    pub fn from_params(params: &QuadParams) -> Self {
        let mut forward = Matrix4::zeros();
        for i in 0..NUM_ROTORS {
            let r = params.rotor_positions[i];
            forward[(0, i)] = 1.0;
            forward[(1, i)] = r[1];
            forward[(2, i)] = -r[0];
            forward[(3, i)] = params.rotor_directions[i] * params.torque_coefficient;
        }
        let inverse = forward
            .pseudo_inverse(1e-15)
            .expect("SVD of a 4x4 matrix converges");
        Self { forward, inverse }
    }

    /// Rotor thrusts → wrench.
    pub fn wrench(&self, thrusts: &Vector4<f64>) -> Vector4<f64> {
        self.forward * thrusts
    }

    /// Wrench → rotor thrusts.
    pub fn mix(&self, wrench: &Vector4<f64>) -> Vector4<f64> {
        self.inverse * wrench
    }
}

/// Rotor speed for a thrust, clamped to the rotor range. The flag is set when
/// the requested thrust was outside `[f(ω_min), f(ω_max)]`.
pub fn invert_thrust_curve(params: &QuadParams, thrust: f64) -> (f64, bool) {
    let lo = params.thrust(params.rotor_speed_min);
    let hi = params.thrust(params.rotor_speed_max);
    if thrust <= lo {
        return (params.rotor_speed_min, thrust < lo);
    }
    if thrust >= hi {
        return (params.rotor_speed_max, thrust > hi);
    }
    match sim::invert_thrust(params, thrust) {
        Some(w) => (params.clamp_rotor_speed(w), false),
        None => (params.rotor_speed_min, true),
    }
}

/// Controller state: gains, mixer and integrators.
#[derive(Debug, Clone)]
pub struct PidController {
    params: QuadParams,
    gains: PidGains,
    mixer: Mixer,
    inertia: Mat3,
    position_integral: Vec3,
    rate_integral: Vec3,
}

impl PidController {
    pub fn new(params: QuadParams, gains: PidGains) -> Self {
        let mixer = Mixer::from_params(&params);
        let inertia = params.inertia_matrix();
        Self {
            params,
            gains,
            mixer,
            inertia,
            position_integral: Vec3::zeros(),
            rate_integral: Vec3::zeros(),
        }
    }

    pub fn params(&self) -> &QuadParams {
        &self.params
    }

    pub fn gains(&self) -> &PidGains {
        &self.gains
    }

    pub fn mixer(&self) -> &Mixer {
        &self.mixer
    }

    pub fn reset(&mut self) {
        self.position_integral = Vec3::zeros();
        self.rate_integral = Vec3::zeros();
    }

    /// Collective thrust and body torque requested for the current state,
    /// updating the integrators.
    pub fn wrench(&mut self, s: &QuadState, p_ref: &Vec3, v_ref: &Vec3, dt: f64) -> Vector4<f64> {
        let g = &self.gains;
        let m = self.params.mass;
        let gravity = self.params.gravity_vector();

        let e_p = p_ref - s.position;
        let e_v = v_ref - s.linear_velocity;
        let il = g.position.integral_limit;
        self.position_integral = (self.position_integral + e_p * dt).map(|x| x.clamp(-il, il));
        let mut accel = Vec3::zeros();
        for k in 0..3 {
            accel[k] = (g.position.kp[k] * e_p[k]
                + g.position.kd[k] * e_v[k]
                + g.position.ki[k] * self.position_integral[k])
                .clamp(-g.position.accel_limit, g.position.accel_limit);
        }
        let mut force = (accel - gravity) * m;
        // Keep the thrust direction inside the tilt cone around vertical.
        let up = -gravity.normalize();
        let vertical = force.dot(&up).max(1e-3 * m * gravity.norm());
        let lateral = force - up * force.dot(&up);
        let max_lateral = vertical * g.position.max_tilt.tan();
        let lateral = if lateral.norm() > max_lateral {
            lateral * (max_lateral / lateral.norm())
        } else {
            lateral
        };
        force = up * vertical + lateral;

        let rot = sim::quat_to_rotmat(&s.orientation).unwrap_or_else(|_| Mat3::identity());
        let z_des = force.normalize();
        let x_c = Vec3::x();
        let y_des = z_des.cross(&x_c).normalize();
        let x_des = y_des.cross(&z_des);
        let rot_des = Mat3::from_columns(&[x_des, y_des, z_des]);
        let collective = force.dot(&rot.column(2).into_owned());

        let e_rot = rot_des.transpose() * rot - rot.transpose() * rot_des;
        let e_att = Vec3::new(e_rot[(2, 1)], e_rot[(0, 2)], e_rot[(1, 0)]) * 0.5;
        let rl = g.attitude.rate_limit;
        let mut rate_des = Vec3::zeros();
        for k in 0..3 {
            rate_des[k] = (-g.attitude.kp[k] * e_att[k]).clamp(-rl, rl);
        }

        let omega = s.angular_velocity;
        let e_w = rate_des - omega;
        let ril = g.rate.integral_limit;
        self.rate_integral = (self.rate_integral + e_w * dt).map(|x| x.clamp(-ril, ril));
        let mut ang_accel = Vec3::zeros();
        for k in 0..3 {
            ang_accel[k] = g.rate.kp[k] * e_w[k] + g.rate.ki[k] * self.rate_integral[k];
        }
        let torque = self.inertia * ang_accel + omega.cross(&(self.inertia * omega));
        Vector4::new(collective, torque.x, torque.y, torque.z)
    }

    /// Rotor-speed setpoints for tracking `p_ref` with feed-forward `v_ref`.
    pub fn control(&mut self, s: &QuadState, p_ref: &Vec3, v_ref: &Vec3, dt: f64) -> [f64; NUM_ROTORS] {
        let wrench = self.wrench(s, p_ref, v_ref, dt);
        let thrusts = self.mixer.mix(&wrench);
        let k = self.gains.lag_compensation;
        std::array::from_fn(|i| {
            let (cmd, _) = invert_thrust_curve(&self.params, thrusts[i]);
            let current = s.rotor_speeds[i];
            self.params.clamp_rotor_speed(current + k * (cmd - current))
        })
    }
}

/// One-shot controller evaluation with fresh integrators.
pub fn pid_control(params: &QuadParams, gains: &PidGains, s: &QuadState, p_ref: &Vec3, v_ref: &Vec3, dt: f64) -> [f64; NUM_ROTORS] {
    PidController::new(params.clone(), *gains).control(s, p_ref, v_ref, dt)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::Disturbance;

    #[test]
    fn hover_output_at_zero_error() {
        let p = QuadParams::default();
        let (w_hover, s) = sim::hover_equilibrium(&p).unwrap();
        let out = pid_control(&p, &PidGains::default(), &s, &Vec3::zeros(), &Vec3::zeros(), 0.01);
        for w in out {
            assert!((w - w_hover).abs() < 1e-6 * w_hover, "{w} vs {w_hover}");
        }
    }

    #[test]
    fn vertical_error_raises_all_rotors_equally() {
        let p = QuadParams::default();
        let (w_hover, s) = sim::hover_equilibrium(&p).unwrap();
        let out = pid_control(&p, &PidGains::default(), &s, &Vec3::new(0.0, 0.0, 0.1), &Vec3::zeros(), 0.01);
        for w in out {
            assert!(w > w_hover);
            assert!((w - out[0]).abs() < 1e-9 * w);
        }
    }

    #[test]
    fn mixer_round_trip() {
        let mixer = Mixer::from_params(&QuadParams::default());
        for w in [
            Vector4::new(0.265, 0.0, 0.0, 0.0),
            Vector4::new(0.3, 1e-4, -2e-4, 3e-6),
            Vector4::new(0.1, -5e-4, 5e-4, -1e-5),
        ] {
            let back = mixer.wrench(&mixer.mix(&w));
            assert!((back - w).abs().max() < 1e-9);
        }
    }

    #[test]
    fn thrust_curve_clamps_with_flag() {
        let p = QuadParams::default();
        assert_eq!(invert_thrust_curve(&p, -1.0), (p.rotor_speed_min, true));
        assert_eq!(invert_thrust_curve(&p, 1.0), (p.rotor_speed_max, true));
        let (w, clamped) = invert_thrust_curve(&p, 0.05);
        assert!(!clamped);
        assert!((w - (0.05 / p.thrust_coefficients[2]).sqrt()).abs() < 1e-9);
    }

    #[test]
    fn settles_from_offset() {
        let p = QuadParams::default();
        let mut c = PidController::new(p.clone(), PidGains::default());
        let (_, mut s) = sim::hover_equilibrium(&p).unwrap();
        s.position = Vec3::new(0.2, 0.0, 0.0);
        let dt = 0.01;
        for _ in 0..500 {
            let u = c.control(&s, &Vec3::zeros(), &Vec3::zeros(), dt);
            s = sim::step(&p, &s, &u, &Disturbance::zero(), dt).unwrap();
        }
        assert!(s.position.norm() < 0.05, "{:?}", s.position);
    }
}
