//! Tasks beyond the training objective.
//!
//! A policy trained to return to the origin becomes a setpoint or trajectory
//! tracker by shifting its observed position and velocity by the reference,
//! with the shifted errors clipped to the range seen during training.

use std::collections::VecDeque;
use std::f64::consts::PI;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::env::{self, Action, EnvConfig, ObservationNoise};
use crate::error::TrackingError;
use crate::nn::Mlp;
use crate::pid::{PidController, PidGains};
use crate::sim::{self, Disturbance, QuadParams, QuadState, Vec3};

/// Figure-eight `p(t) = s·[cos(2πt/T), sin(4πt/T)/2, 0] + [0, 0, h]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LissajousSpec {
    #[serde(rename = "cycle_time_s")]
    pub cycle_time: f64,
    /// Multiplies the unit figure-eight (1 m along x, 0.5 m along y).
    pub scale: f64,
    #[serde(rename = "altitude_m")]
    pub altitude: f64,
    pub cycles: u32,
}

impl LissajousSpec {
    pub fn new(cycle_time: f64) -> Self {
        Self {
            cycle_time,
            scale: 1.0,
            altitude: 0.0,
            cycles: 4,
        }
    }

    pub fn duration(&self) -> f64 {
        self.cycle_time * self.cycles as f64
    }
}

/// Reference position and its analytic time derivative.
pub fn lissajous(spec: &LissajousSpec, t: f64) -> (Vec3, Vec3) {
    let w = 2.0 * PI / spec.cycle_time;
    let s = spec.scale;
    let p = Vec3::new(s * (w * t).cos(), s * 0.5 * (2.0 * w * t).sin(), spec.altitude);
    let v = Vec3::new(-s * w * (w * t).sin(), s * w * (2.0 * w * t).cos(), 0.0);
    (p, v)
}

/// Symmetric clip bounds for the shifted position and velocity errors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShiftBounds {
    pub position: f64,
    pub velocity: f64,
}

impl ShiftBounds {
    /// The bounds of the training initial-state distribution.
    pub fn from_config(cfg: &EnvConfig) -> Self {
        Self {
            position: cfg.initial_state.position_half_width,
            velocity: cfg.initial_state.max_linear_velocity,
        }
    }
}

/// State as seen by a policy trained to fly to the origin at rest:
/// `p ← clip(p − p_ref)`, `v ← clip(v − v_ref)`, component-wise.
pub fn tracking_observation(s: &QuadState, p_ref: &Vec3, v_ref: &Vec3, bounds: &ShiftBounds) -> QuadState {
    let clip = |x: f64, b: f64| x.clamp(-b, b);
    let mut out = *s;
    out.position = (s.position - p_ref).map(|x| clip(x, bounds.position));
    out.linear_velocity = (s.linear_velocity - v_ref).map(|x| clip(x, bounds.velocity));
    out
}

/// Root mean squared Euclidean error; `include_z == false` uses only x and y.
pub fn rmse(actual: &[Vec3], reference: &[Vec3], include_z: bool) -> Result<f64, TrackingError> {
    if actual.len() != reference.len() {
        return Err(TrackingError::LengthMismatch {
            actual: actual.len(),
            reference: reference.len(),
        });
    }
    if actual.is_empty() {
        return Ok(0.0);
    }
    let sum: f64 = actual
        .iter()
        .zip(reference)
        .map(|(a, r)| {
            let d = a - r;
            if include_z {
                d.norm_squared()
            } else {
                d.x * d.x + d.y * d.y
            }
        })
        .sum();
    Ok((sum / actual.len() as f64).sqrt())
}

/// Everything a controller may use at one control step.
pub struct TrackingContext<'a> {
    pub state: &'a QuadState,
    /// State shifted by the reference and clipped.
    pub shifted: &'a QuadState,
    pub p_ref: Vec3,
    pub v_ref: Vec3,
    pub dt: f64,
}

pub trait TrackingController {
    fn reset(&mut self, initial: &QuadState);
    fn command(&mut self, ctx: &TrackingContext<'_>) -> Action;
}

/// Advances the vehicle by one control step.
pub trait Plant {
    fn step(&mut self, state: &QuadState, action: &Action, t_next: f64) -> Option<QuadState>;
}

/// The simulator with a constant disturbance.
pub struct SimPlant {
    pub params: QuadParams,
    pub disturbance: Disturbance,
    pub dt: f64,
    pub rotor_delay: bool,
}

impl Plant for SimPlant {
    fn step(&mut self, state: &QuadState, action: &Action, _t_next: f64) -> Option<QuadState> {
        let setpoints = env::action_to_rpm(&self.params, action);
        let mut s = *state;
        if !self.rotor_delay {
            s.rotor_speeds = setpoints;
        }
        sim::step(&self.params, &s, &setpoints, &self.disturbance, self.dt).ok()
    }
}

/// Trained actor driven with the shifted observation and its own action
/// history.
pub struct ActorController<'a> {
    actor: &'a Mlp<f32>,
    params: QuadParams,
    history_len: usize,
    history: VecDeque<Action>,
    noise: ObservationNoise,
    rng: ChaCha8Rng,
}

impl<'a> ActorController<'a> {
    pub fn new(actor: &'a Mlp<f32>, cfg: &EnvConfig, seed: u64) -> Self {
        let noise = if cfg.components.observation_noise {
            cfg.observation_noise
        } else {
            ObservationNoise::none()
        };
        Self {
            actor,
            params: cfg.dynamics.clone(),
            history_len: cfg.effective_history(),
            history: VecDeque::new(),
            noise,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }
}

impl TrackingController for ActorController<'_> {
    fn reset(&mut self, initial: &QuadState) {
        let fill = initial.rotor_speeds.map(|w| env::rpm_to_action(&self.params, w));
        self.history = std::iter::repeat_n(fill, self.history_len).collect();
    }

    fn command(&mut self, ctx: &TrackingContext<'_>) -> Action {
        let hist: Vec<Action> = self.history.iter().copied().collect();
        let obs = env::observe_actor(ctx.shifted, &hist, &self.noise, &mut self.rng);
        let y = self.actor.forward(&obs).expect("actor width matches config");
        let a = [y[0] as f64, y[1] as f64, y[2] as f64, y[3] as f64].map(|x| x.clamp(-1.0, 1.0));
        if self.history_len > 0 {
            self.history.pop_back();
            self.history.push_front(a);
        }
        a
    }
}

/// Cascaded PID baseline expressed as normalized actions.
pub struct PidTracker {
    controller: PidController,
}

impl PidTracker {
    pub fn new(params: &QuadParams, gains: PidGains) -> Self {
        Self {
            controller: PidController::new(params.clone(), gains),
        }
    }
}

impl TrackingController for PidTracker {
    fn reset(&mut self, _initial: &QuadState) {
        self.controller.reset();
    }

    fn command(&mut self, ctx: &TrackingContext<'_>) -> Action {
        let speeds = self.controller.control(ctx.state, &ctx.p_ref, &ctx.v_ref, ctx.dt);
        let p = self.controller.params();
        speeds.map(|w| env::rpm_to_action(p, w))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackingResult {
    pub times: Vec<f64>,
    pub reference: Vec<Vec3>,
    pub actual: Vec<Vec3>,
    /// 3-D RMSE, meters.
    pub rmse: f64,
    /// RMSE in the xy-plane, meters.
    pub rmse_xy: f64,
    /// All cycles completed without termination.
    pub success: bool,
}

impl TrackingResult {
    /// `t,p_ref_x,p_ref_y,p_ref_z,p_x,p_y,p_z,error_m`
    pub fn to_csv(&self) -> String {
        let mut s = String::from("t,p_ref_x,p_ref_y,p_ref_z,p_x,p_y,p_z,error_m\n");
        for ((t, r), a) in self.times.iter().zip(&self.reference).zip(&self.actual) {
            s.push_str(&format!(
                "{:.4},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}\n",
                t,
                r.x,
                r.y,
                r.z,
                a.x,
                a.y,
                a.z,
                (a - r).norm()
            ));
        }
        s
    }
}

/// Starting state for tracking: at the reference start point, level, at
/// rest, rotors at hover speed.
pub fn tracking_start(params: &QuadParams, spec: &LissajousSpec) -> QuadState {
    let hover = sim::hover_equilibrium(params).map(|(w, _)| w).unwrap_or(params.rotor_speed_max);
    let mut s = QuadState::at_rest(hover);
    s.position = lissajous(spec, 0.0).0;
    s
}

/// Flies `spec.cycles` cycles of the figure-eight. Failure is termination of
/// the reference-relative state (the termination box is centered on the
/// reference point) before the last cycle ends.
pub fn run_tracking_with<C: TrackingController, P: Plant>(
    controller: &mut C,
    plant: &mut P,
    cfg: &EnvConfig,
    spec: &LissajousSpec,
) -> Result<TrackingResult, TrackingError> {
    if !(spec.cycle_time > 0.0) {
        return Err(TrackingError::InvalidCycleTime(spec.cycle_time));
    }
    let dt = cfg.dt;
    let bounds = ShiftBounds::from_config(cfg);
    let steps = (spec.duration() / dt).round() as usize;
    let mut state = tracking_start(&cfg.dynamics, spec);
    controller.reset(&state);

    let mut times = Vec::with_capacity(steps);
    let mut reference = Vec::with_capacity(steps);
    let mut actual = Vec::with_capacity(steps);
    let mut success = true;
    for k in 0..steps {
        let t = k as f64 * dt;
        let (p_ref, v_ref) = lissajous(spec, t);
        let shifted = tracking_observation(&state, &p_ref, &v_ref, &bounds);
        let action = controller.command(&TrackingContext {
            state: &state,
            shifted: &shifted,
            p_ref,
            v_ref,
            dt,
        });
        let t_next = (k + 1) as f64 * dt;
        let Some(next) = plant.step(&state, &action, t_next) else {
            success = false;
            break;
        };
        state = next;
        let (p_ref_next, _) = lissajous(spec, t_next);
        times.push(t_next);
        reference.push(p_ref_next);
        actual.push(state.position);
        let mut relative = state;
        relative.position -= p_ref_next;
        if env::terminate(&relative, &cfg.termination) {
            success = false;
            break;
        }
    }
    Ok(TrackingResult {
        rmse: rmse(&actual, &reference, true)?,
        rmse_xy: rmse(&actual, &reference, false)?,
        times,
        reference,
        actual,
        success,
    })
}

/// Tracking with a trained actor on the simulator. The seed selects the
/// disturbance and the observation-noise stream.
pub fn run_tracking(actor: &Mlp<f32>, cfg: &EnvConfig, spec: &LissajousSpec, seed: u64) -> Result<TrackingResult, TrackingError> {
    let mut controller = ActorController::new(actor, cfg, seed);
    let mut plant = sim_plant(cfg, seed);
    run_tracking_with(&mut controller, &mut plant, cfg, spec)
}

/// The PID baseline on the same plant.
pub fn run_tracking_pid(gains: PidGains, cfg: &EnvConfig, spec: &LissajousSpec, seed: u64) -> Result<TrackingResult, TrackingError> {
    let mut controller = PidTracker::new(&cfg.dynamics, gains);
    let mut plant = sim_plant(cfg, seed);
    run_tracking_with(&mut controller, &mut plant, cfg, spec)
}

fn sim_plant(cfg: &EnvConfig, seed: u64) -> SimPlant {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    let disturbance = if cfg.components.disturbances {
        env::sample_disturbance(&cfg.disturbance, &mut rng)
    } else {
        Disturbance::zero()
    };
    SimPlant {
        params: cfg.dynamics.clone(),
        disturbance,
        dt: cfg.dt,
        rotor_delay: true,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lissajous_start_and_half_cycle() {
        let spec = LissajousSpec::new(4.0);
        let (p, v) = lissajous(&spec, 0.0);
        assert_eq!(p, Vec3::new(1.0, 0.0, 0.0));
        assert!((v - Vec3::new(0.0, 2.0 * PI / 4.0, 0.0)).norm() < 1e-15);
        let (p, _) = lissajous(&spec, 2.0);
        assert!((p - Vec3::new(-1.0, 0.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn velocity_is_derivative_of_position() {
        let spec = LissajousSpec::new(3.5);
        let h = 1e-6;
        for i in 0..20 {
            let t = i as f64 * 0.37;
            let fd = (lissajous(&spec, t + h).0 - lissajous(&spec, t - h).0) / (2.0 * h);
            assert!((fd - lissajous(&spec, t).1).norm() < 1e-7);
        }
    }

    #[test]
    fn shift_is_identity_for_zero_reference() {
        let mut s = QuadState::at_rest(1000.0);
        s.position = Vec3::new(0.1, -0.2, 0.05);
        s.linear_velocity = Vec3::new(0.3, 0.0, -0.1);
        let b = ShiftBounds {
            position: 0.5,
            velocity: 1.0,
        };
        assert_eq!(tracking_observation(&s, &Vec3::zeros(), &Vec3::zeros(), &b), s);
    }

    #[test]
    fn shift_clips_at_bound() {
        let s = QuadState::at_rest(1000.0);
        let b = ShiftBounds {
            position: 0.3,
            velocity: 1.0,
        };
        let out = tracking_observation(&s, &Vec3::new(2.0, -0.1, 0.0), &Vec3::new(0.0, -5.0, 0.0), &b);
        assert_eq!(out.position, Vec3::new(-0.3, 0.1, 0.0));
        assert_eq!(out.linear_velocity, Vec3::new(0.0, 1.0, 0.0));
    }

    #[test]
    fn rmse_of_constant_offset() {
        let r: Vec<Vec3> = (0..10).map(|i| Vec3::new(i as f64, 0.5, 1.0)).collect();
        let a: Vec<Vec3> = r.iter().map(|p| p + Vec3::new(-0.25, 0.0, 0.0)).collect();
        assert!((rmse(&a, &r, true).unwrap() - 0.25).abs() < 1e-15);
        assert!((rmse(&a, &r, false).unwrap() - 0.25).abs() < 1e-15);
        assert_eq!(rmse(&r, &r, true).unwrap(), 0.0);
        assert!(rmse(&a[..3], &r, true).is_err());
    }

    #[test]
    fn invalid_cycle_time_rejected() {
        struct Hold;
        impl TrackingController for Hold {
            fn reset(&mut self, _: &QuadState) {}
            fn command(&mut self, _: &TrackingContext<'_>) -> Action {
                [0.0; 4]
            }
        }
        let cfg = EnvConfig::default();
        let mut plant = sim_plant(&cfg, 0);
        assert!(run_tracking_with(&mut Hold, &mut plant, &cfg, &LissajousSpec::new(0.0)).is_err());
    }
}
