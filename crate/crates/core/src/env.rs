//! The position-control MDP around the dynamics.
//!
//! Each episode starts from a state drawn from [`InitialStateDistribution`]
//! with a constant force/torque disturbance. The goal is to return to the
//! origin at rest; no goal is part of the observation. The actor sees a noisy
//! `18 + 4·N_H` vector (position, rotation matrix, velocities, action
//! history), the critic the exact 28-dimensional privileged vector that also
//! contains rotor speeds and the disturbance.

use std::collections::VecDeque;

use nalgebra::{Quaternion, UnitQuaternion, Unit};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{ConfigError, SimError};
use crate::sim::{self, Disturbance, QuadParams, QuadState, Vec3, NUM_ROTORS};

pub const ACTION_DIM: usize = NUM_ROTORS;
pub const CRITIC_OBS_DIM: usize = 28;
pub const BASE_ACTOR_OBS_DIM: usize = 18;
pub const MAX_ACTION_HISTORY: usize = 32;

pub type Action = [f64; ACTION_DIM];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InitialStateDistribution {
    /// Each position component is uniform in `±position_half_width`.
    #[serde(rename = "position_half_width_m")]
    pub position_half_width: f64,
    /// Attitude is a rotation about a uniformly random axis by an angle
    /// uniform in `[0, max_angle]`.
    #[serde(rename = "max_angle_rad")]
    pub max_angle: f64,
    #[serde(rename = "max_linear_velocity_m_s")]
    pub max_linear_velocity: f64,
    #[serde(rename = "max_angular_velocity_rad_s")]
    pub max_angular_velocity: f64,
    #[serde(rename = "rotor_speed_center_rad_s")]
    pub rotor_speed_center: f64,
    #[serde(rename = "rotor_speed_half_width_rad_s")]
    pub rotor_speed_half_width: f64,
}

impl InitialStateDistribution {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let bounds = [
            self.position_half_width,
            self.max_angle,
            self.max_linear_velocity,
            self.max_angular_velocity,
            self.rotor_speed_center,
            self.rotor_speed_half_width,
        ];
        if bounds.iter().any(|b| !(b.is_finite() && *b >= 0.0)) {
            return Err(ConfigError::Invalid(
                "initial-state bounds must be finite and nonnegative".into(),
            ));
        }
        Ok(())
    }
}

/// Per-block standard deviations of the actor's Gaussian observation noise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObservationNoise {
    #[serde(rename = "position_m")]
    pub position: f64,
    pub rotation_matrix: f64,
    #[serde(rename = "linear_velocity_m_s")]
    pub linear_velocity: f64,
    #[serde(rename = "angular_velocity_rad_s")]
    pub angular_velocity: f64,
}

impl ObservationNoise {
    pub fn none() -> Self {
        Self {
            position: 0.0,
            rotation_matrix: 0.0,
            linear_velocity: 0.0,
            angular_velocity: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DisturbanceScales {
    #[serde(rename = "force_n")]
    pub force: f64,
    #[serde(rename = "torque_n_m")]
    pub torque: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TerminationConfig {
    /// Half-width of the box around the origin (infinity norm).
    #[serde(rename = "position_bound_m")]
    pub position_bound: f64,
    #[serde(rename = "linear_velocity_cap_m_s")]
    pub linear_velocity_cap: f64,
    #[serde(rename = "angular_velocity_cap_rad_s")]
    pub angular_velocity_cap: f64,
}

/// Coefficients of the squared-cost reward with survival bonus.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardWeights {
    pub position: f64,
    pub orientation: f64,
    pub linear_velocity: f64,
    pub angular_velocity: f64,
    pub action: f64,
    /// Action the action penalty is measured against, in normalized units.
    pub action_baseline: Action,
    pub survival: f64,
}

impl RewardWeights {
    fn penalties(&self) -> [f64; 5] {
        [
            self.position,
            self.orientation,
            self.linear_velocity,
            self.angular_velocity,
            self.action,
        ]
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.penalties().iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(ConfigError::Invalid("penalty weights must be nonnegative".into()));
        }
        Ok(())
    }
}

/// Multiplicative per-weight curriculum factors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightFactors {
    pub position: f64,
    pub orientation: f64,
    pub linear_velocity: f64,
    pub angular_velocity: f64,
    pub action: f64,
    pub survival: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurriculumSchedule {
    pub initial: RewardWeights,
    pub target: RewardWeights,
    pub factors: WeightFactors,
    /// Environment steps between two updates.
    pub interval: u64,
}

/// One value following the multiply-and-clamp rule: `x ← x·factor`, never
/// crossing `target` in the direction of travel from `initial`.
pub fn scheduled_update(current: f64, initial: f64, target: f64, factor: f64) -> f64 {
    let next = current * factor;
    if initial <= target {
        next.min(target)
    } else {
        next.max(target)
    }
}

/// Applies one curriculum update to every weight.
pub fn curriculum_update(w: &RewardWeights, schedule: &CurriculumSchedule) -> RewardWeights {
    let (i, t, f) = (&schedule.initial, &schedule.target, &schedule.factors);
    RewardWeights {
        position: scheduled_update(w.position, i.position, t.position, f.position),
        orientation: scheduled_update(w.orientation, i.orientation, t.orientation, f.orientation),
        linear_velocity: scheduled_update(
            w.linear_velocity,
            i.linear_velocity,
            t.linear_velocity,
            f.linear_velocity,
        ),
        angular_velocity: scheduled_update(
            w.angular_velocity,
            i.angular_velocity,
            t.angular_velocity,
            f.angular_velocity,
        ),
        action: scheduled_update(w.action, i.action, t.action, f.action),
        action_baseline: t.action_baseline,
        survival: scheduled_update(w.survival, i.survival, t.survival, f.survival),
    }
}

impl CurriculumSchedule {
    /// Number of updates that have happened by `global_step`.
    pub fn updates_by(&self, global_step: u64) -> u64 {
        if self.interval == 0 {
            0
        } else {
            global_step / self.interval
        }
    }

    /// Weights in force at `global_step`. With `enabled == false` the target
    /// weights apply from the start.
    pub fn weights_at(&self, global_step: u64, enabled: bool) -> RewardWeights {
        if !enabled {
            return self.target;
        }
        let mut w = self.initial;
        for _ in 0..self.updates_by(global_step) {
            let next = curriculum_update(&w, self);
            if next == w {
                break;
            }
            w = next;
        }
        w
    }
}

/// Ablation switches. Every component is on in the baseline configuration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Components {
    pub observation_noise: bool,
    pub disturbances: bool,
    pub rotor_delay: bool,
    pub action_history: bool,
    pub curriculum: bool,
    pub reward_recalculation: bool,
    pub exploration_decay: bool,
    pub asymmetric_critic: bool,
}

impl Default for Components {
    fn default() -> Self {
        Self {
            observation_noise: true,
            disturbances: true,
            rotor_delay: true,
            action_history: true,
            curriculum: true,
            reward_recalculation: true,
            exploration_decay: true,
            asymmetric_critic: true,
        }
    }
}

/// Rows of the ablation study: the baseline and the component(s) removed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Ablation {
    AllComponents,
    ObservationNoise,
    RewardRecalculation,
    ExplorationNoiseDecay,
    Disturbances,
    AsymmetricActorCritic,
    ActionHistory,
    Curriculum,
    RotorDelay,
    AacAndCurriculum,
}

impl Ablation {
    pub const ALL: [Ablation; 10] = [
        Ablation::AllComponents,
        Ablation::ObservationNoise,
        Ablation::RewardRecalculation,
        Ablation::ExplorationNoiseDecay,
        Ablation::Disturbances,
        Ablation::AsymmetricActorCritic,
        Ablation::ActionHistory,
        Ablation::Curriculum,
        Ablation::RotorDelay,
        Ablation::AacAndCurriculum,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Ablation::AllComponents => "All Components",
            Ablation::ObservationNoise => "Observation Noise",
            Ablation::RewardRecalculation => "Reward Recalculation",
            Ablation::ExplorationNoiseDecay => "Exploration Noise Decay",
            Ablation::Disturbances => "Disturbances",
            Ablation::AsymmetricActorCritic => "Asymmetric Actor-Critic",
            Ablation::ActionHistory => "Action History",
            Ablation::Curriculum => "Curriculum",
            Ablation::RotorDelay => "Rotor Delay",
            Ablation::AacAndCurriculum => "AAC & Curriculum",
        }
    }

    /// Accepts the row name, case-insensitively, or a snake_case form such
    /// as `rotor_delay`.
    pub fn from_name(name: &str) -> Option<Self> {
        let norm = |s: &str| {
            s.chars()
                .filter(|c| c.is_ascii_alphanumeric() || *c == '&')
                .collect::<String>()
                .to_ascii_lowercase()
                .replace('&', "and")
        };
        let wanted = norm(name);
        Self::ALL.into_iter().find(|a| norm(a.name()) == wanted)
    }

    pub fn apply(self, components: &mut Components) {
        match self {
            Ablation::AllComponents => {}
            Ablation::ObservationNoise => components.observation_noise = false,
            Ablation::RewardRecalculation => components.reward_recalculation = false,
            Ablation::ExplorationNoiseDecay => components.exploration_decay = false,
            Ablation::Disturbances => components.disturbances = false,
            Ablation::AsymmetricActorCritic => components.asymmetric_critic = false,
            Ablation::ActionHistory => components.action_history = false,
            Ablation::Curriculum => components.curriculum = false,
            Ablation::RotorDelay => components.rotor_delay = false,
            Ablation::AacAndCurriculum => {
                components.asymmetric_critic = false;
                components.curriculum = false;
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvConfig {
    pub dynamics: QuadParams,
    #[serde(rename = "dt_s")]
    pub dt: f64,
    pub initial_state: InitialStateDistribution,
    pub disturbance: DisturbanceScales,
    pub observation_noise: ObservationNoise,
    pub termination: TerminationConfig,
    pub max_episode_steps: u32,
    pub action_history_length: usize,
    pub curriculum: CurriculumSchedule,
    pub components: Components,
}

impl Default for EnvConfig {
    fn default() -> Self {
        let dynamics = QuadParams::default();
        let (hover, _) = sim::hover_equilibrium(&dynamics).expect("default params hover");
        let hover_action = rpm_to_action(&dynamics, hover);
        let baseline = [hover_action; ACTION_DIM];
        let initial = RewardWeights {
            position: 1.0,
            orientation: 0.5,
            linear_velocity: 0.0625,
            angular_velocity: 0.0078125,
            action: 0.015625,
            action_baseline: baseline,
            survival: 2.0,
        };
        let target = RewardWeights {
            position: 4.0,
            orientation: 0.5,
            linear_velocity: 0.25,
            angular_velocity: 0.0078125,
            action: 0.25,
            action_baseline: baseline,
            survival: 2.0,
        };
        Self {
            dynamics,
            dt: sim::DEFAULT_DT,
            initial_state: InitialStateDistribution {
                position_half_width: 0.3,
                max_angle: 30f64.to_radians(),
                max_linear_velocity: 1.0,
                max_angular_velocity: 1.0,
                rotor_speed_center: hover,
                rotor_speed_half_width: 0.3 * hover,
            },
            disturbance: DisturbanceScales {
                force: 0.01,
                torque: 2e-5,
            },
            observation_noise: ObservationNoise {
                position: 0.002,
                rotation_matrix: 0.0,
                linear_velocity: 0.02,
                angular_velocity: 0.1,
            },
            termination: TerminationConfig {
                position_bound: 0.6,
                linear_velocity_cap: 10.0,
                angular_velocity_cap: 35.0,
            },
            max_episode_steps: 500,
            action_history_length: 1,
            curriculum: CurriculumSchedule {
                initial,
                target,
                factors: WeightFactors {
                    position: 1.25,
                    orientation: 1.0,
                    linear_velocity: 1.25,
                    angular_velocity: 1.0,
                    action: 2.0,
                    survival: 1.0,
                },
                interval: 100_000,
            },
            components: Components::default(),
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        self.dynamics.validate()?;
        if !(self.dt > 0.0) {
            return Err(SimError::InvalidTimestep(self.dt).into());
        }
        self.initial_state.validate()?;
        self.curriculum.initial.validate()?;
        self.curriculum.target.validate()?;
        let d = &self.disturbance;
        let n = &self.observation_noise;
        let t = &self.termination;
        if [d.force, d.torque, n.position, n.rotation_matrix, n.linear_velocity, n.angular_velocity]
            .iter()
            .any(|x| !(x.is_finite() && *x >= 0.0))
        {
            return Err(ConfigError::Invalid(
                "disturbance scales and noise levels must be nonnegative".into(),
            ));
        }
        if [t.position_bound, t.linear_velocity_cap, t.angular_velocity_cap]
            .iter()
            .any(|x| !(*x > 0.0))
        {
            return Err(ConfigError::Invalid("termination bounds must be positive".into()));
        }
        if self.max_episode_steps == 0 {
            return Err(ConfigError::Invalid("episode step limit must be positive".into()));
        }
        if self.action_history_length > MAX_ACTION_HISTORY {
            return Err(ConfigError::Invalid(format!(
                "action history length {} exceeds {MAX_ACTION_HISTORY}",
                self.action_history_length
            )));
        }
        Ok(())
    }

    /// History length actually fed to the actor.
    pub fn effective_history(&self) -> usize {
        if self.components.action_history {
            self.action_history_length
        } else {
            0
        }
    }

    pub fn actor_obs_dim(&self) -> usize {
        BASE_ACTOR_OBS_DIM + ACTION_DIM * self.effective_history()
    }

    pub fn critic_obs_dim(&self) -> usize {
        if self.components.asymmetric_critic {
            CRITIC_OBS_DIM
        } else {
            self.actor_obs_dim()
        }
    }

    pub fn with_ablation(mut self, ablation: Ablation) -> Self {
        ablation.apply(&mut self.components);
        self
    }

    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Affine map from `[-1, 1]` to `[ω_min, ω_max]`; inputs are clipped first.
pub fn action_to_rpm(params: &QuadParams, action: &Action) -> [f64; NUM_ROTORS] {
    let span = params.rotor_speed_max - params.rotor_speed_min;
    action.map(|a| params.rotor_speed_min + (a.clamp(-1.0, 1.0) + 1.0) * 0.5 * span)
}

pub fn rpm_to_action(params: &QuadParams, rotor_speed: f64) -> f64 {
    let span = params.rotor_speed_max - params.rotor_speed_min;
    (2.0 * (rotor_speed - params.rotor_speed_min) / span - 1.0).clamp(-1.0, 1.0)
}

fn uniform_sym<R: Rng + ?Sized>(rng: &mut R, bound: f64) -> f64 {
    if bound > 0.0 {
        rng.random_range(-bound..=bound)
    } else {
        0.0
    }
}

fn gaussian<R: Rng + ?Sized>(rng: &mut R, sigma: f64) -> f64 {
    if sigma > 0.0 {
        let z: f64 = StandardNormal.sample(rng);
        sigma * z
    } else {
        0.0
    }
}

pub fn sample_initial_state<R: Rng + ?Sized>(
    dist: &InitialStateDistribution,
    params: &QuadParams,
    rng: &mut R,
) -> QuadState {
    let position = Vec3::from_fn(|_, _| uniform_sym(rng, dist.position_half_width));
    let orientation = if dist.max_angle > 0.0 {
        let axis = loop {
            let v = Vec3::from_fn(|_, _| StandardNormal.sample(rng));
            if v.norm() > 1e-9 {
                break Unit::new_normalize(v);
            }
        };
        let angle = rng.random_range(0.0..=dist.max_angle);
        let q = UnitQuaternion::from_axis_angle(&axis, angle).into_inner();
        q / q.norm()
    } else {
        Quaternion::identity()
    };
    let linear_velocity = Vec3::from_fn(|_, _| uniform_sym(rng, dist.max_linear_velocity));
    let angular_velocity = Vec3::from_fn(|_, _| uniform_sym(rng, dist.max_angular_velocity));
    let rotor_speeds = [(); NUM_ROTORS].map(|_| {
        params.clamp_rotor_speed(dist.rotor_speed_center + uniform_sym(rng, dist.rotor_speed_half_width))
    });
    QuadState {
        position,
        orientation,
        linear_velocity,
        angular_velocity,
        rotor_speeds,
    }
}

/// Each component uniform in `±scale`.
pub fn sample_disturbance<R: Rng + ?Sized>(scales: &DisturbanceScales, rng: &mut R) -> Disturbance {
    Disturbance {
        force: Vec3::from_fn(|_, _| uniform_sym(rng, scales.force)),
        torque: Vec3::from_fn(|_, _| uniform_sym(rng, scales.torque)),
    }
}

fn push_state_blocks(out: &mut Vec<f32>, s: &QuadState) {
    let r = sim::rotmat_unchecked(&s.orientation);
    out.extend(s.position.iter().map(|&x| x as f32));
    for row in 0..3 {
        for col in 0..3 {
            out.push(r[(row, col)] as f32);
        }
    }
    out.extend(s.linear_velocity.iter().map(|&x| x as f32));
    out.extend(s.angular_velocity.iter().map(|&x| x as f32));
}

/// Actor observation `{p, R (row-major), v, ω, H}` with additive Gaussian
/// noise on the state blocks. The history is appended unperturbed, most
/// recent action first.
pub fn observe_actor<R: Rng + ?Sized>(
    s: &QuadState,
    history: &[Action],
    noise: &ObservationNoise,
    rng: &mut R,
) -> Vec<f32> {
    let r = sim::rotmat_unchecked(&s.orientation);
    let mut out = Vec::with_capacity(BASE_ACTOR_OBS_DIM + ACTION_DIM * history.len());
    for &x in s.position.iter() {
        out.push((x + gaussian(rng, noise.position)) as f32);
    }
    for row in 0..3 {
        for col in 0..3 {
            out.push((r[(row, col)] + gaussian(rng, noise.rotation_matrix)) as f32);
        }
    }
    for &x in s.linear_velocity.iter() {
        out.push((x + gaussian(rng, noise.linear_velocity)) as f32);
    }
    for &x in s.angular_velocity.iter() {
        out.push((x + gaussian(rng, noise.angular_velocity)) as f32);
    }
    for a in history {
        out.extend(a.iter().map(|&x| x as f32));
    }
    out
}

/// Exact privileged observation `{p, R, v, ω, ω_m, f_r, τ_r}`. Rotor speeds
/// are expressed in normalized action units, the force in multiples of the
/// vehicle weight and the torque in multiples of weight times rotor arm.
pub fn observe_critic(s: &QuadState, dist: &Disturbance, params: &QuadParams) -> Vec<f32> {
    let mut out = Vec::with_capacity(CRITIC_OBS_DIM);
    push_state_blocks(&mut out, s);
    let span = params.rotor_speed_max - params.rotor_speed_min;
    out.extend(
        s.rotor_speeds
            .iter()
            .map(|&w| (2.0 * (w - params.rotor_speed_min) / span - 1.0) as f32),
    );
    let (force_unit, torque_unit) = disturbance_units(params);
    out.extend(dist.force.iter().map(|&x| (x / force_unit) as f32));
    out.extend(dist.torque.iter().map(|&x| (x / torque_unit) as f32));
    out
}

/// Normalizers for the disturbance blocks of the critic observation.
pub fn disturbance_units(params: &QuadParams) -> (f64, f64) {
    let weight = params.mass * params.gravity_vector().norm();
    let arm = params
        .rotor_positions
        .iter()
        .map(|r| (r[0] * r[0] + r[1] * r[1]).sqrt())
        .sum::<f64>()
        / NUM_ROTORS as f64;
    (weight, weight * arm.max(f64::EPSILON))
}

/// `−C_rp‖p‖² − C_rq(1−q_w²) − C_rv‖v‖² − C_rω‖ω‖² − C_ra‖a−C_rab‖² + C_rs`
/// on the post-transition state.
pub fn reward(w: &RewardWeights, next: &QuadState, action: &Action) -> f64 {
    let qw = next.orientation.w;
    let action_dev: f64 = action
        .iter()
        .zip(&w.action_baseline)
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    -w.position * next.position.norm_squared()
        - w.orientation * (1.0 - qw * qw)
        - w.linear_velocity * next.linear_velocity.norm_squared()
        - w.angular_velocity * next.angular_velocity.norm_squared()
        - w.action * action_dev
        + w.survival
}

/// Strict-inequality termination test; non-finite states always terminate.
pub fn terminate(s: &QuadState, t: &TerminationConfig) -> bool {
    if !s.is_finite() {
        return true;
    }
    s.position.amax() > t.position_bound
        || s.linear_velocity.norm() > t.linear_velocity_cap
        || s.angular_velocity.norm() > t.angular_velocity_cap
}

/// Result of one environment transition.
#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub state: QuadState,
    pub actor_obs: Vec<f32>,
    pub critic_obs: Vec<f32>,
    pub reward: f64,
    /// True termination (box exit, rate caps or integration failure).
    pub done: bool,
    /// Episode step limit reached without termination.
    pub truncated: bool,
    pub crashed: bool,
}

/// A single environment instance owning its random stream.
#[derive(Debug, Clone)]
pub struct Env {
    config: EnvConfig,
    rng: ChaCha8Rng,
    state: QuadState,
    disturbance: Disturbance,
    history: VecDeque<Action>,
    steps: u32,
    weights: RewardWeights,
}

impl Env {
    /// `stream` selects an independent random stream for the same seed,
    /// e.g. the environment index in a batch.
    pub fn new(config: EnvConfig, seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        let weights = config.curriculum.weights_at(0, config.components.curriculum);
        let state = QuadState::at_rest(config.dynamics.rotor_speed_min);
        let mut env = Self {
            config,
            rng,
            state,
            disturbance: Disturbance::zero(),
            history: VecDeque::new(),
            steps: 0,
            weights,
        };
        env.reset();
        env
    }

    pub fn config(&self) -> &EnvConfig {
        &self.config
    }

    pub fn state(&self) -> &QuadState {
        &self.state
    }

    pub fn disturbance(&self) -> &Disturbance {
        &self.disturbance
    }

    pub fn steps(&self) -> u32 {
        self.steps
    }

    pub fn reward_weights(&self) -> &RewardWeights {
        &self.weights
    }

    pub fn set_reward_weights(&mut self, weights: RewardWeights) {
        self.weights = weights;
    }

    pub fn rng_mut(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }

    /// Starts a new episode from a sampled initial state.
    pub fn reset(&mut self) -> Vec<f32> {
        let state = sample_initial_state(&self.config.initial_state, &self.config.dynamics, &mut self.rng);
        let disturbance = if self.config.components.disturbances {
            sample_disturbance(&self.config.disturbance, &mut self.rng)
        } else {
            Disturbance::zero()
        };
        self.reset_to(state, disturbance)
    }

    /// Starts a new episode from a given state. The action history is filled
    /// with the actions that correspond to the current rotor speeds.
    pub fn reset_to(&mut self, state: QuadState, disturbance: Disturbance) -> Vec<f32> {
        self.state = state;
        self.disturbance = disturbance;
        self.steps = 0;
        let p = &self.config.dynamics;
        let fill = state.rotor_speeds.map(|w| rpm_to_action(p, w));
        self.history = std::iter::repeat_n(fill, self.config.effective_history()).collect();
        self.actor_observation()
    }

    pub fn history(&self) -> Vec<Action> {
        self.history.iter().copied().collect()
    }

    fn noise(&self) -> ObservationNoise {
        if self.config.components.observation_noise {
            self.config.observation_noise
        } else {
            ObservationNoise::none()
        }
    }

    /// Fresh (noisy) actor observation of the current state.
    pub fn actor_observation(&mut self) -> Vec<f32> {
        let noise = self.noise();
        let hist: Vec<Action> = self.history.iter().copied().collect();
        observe_actor(&self.state, &hist, &noise, &mut self.rng)
    }

    /// Critic input: privileged vector, or when the asymmetric critic is
    /// switched off, the actor observation it is paired with.
    pub fn critic_observation(&self, actor_obs: &[f32]) -> Vec<f32> {
        if self.config.components.asymmetric_critic {
            observe_critic(&self.state, &self.disturbance, &self.config.dynamics)
        } else {
            actor_obs.to_vec()
        }
    }

    pub fn step(&mut self, action: &Action) -> StepOutcome {
        let action = action.map(|a| a.clamp(-1.0, 1.0));
        let params = &self.config.dynamics;
        let setpoints = action_to_rpm(params, &action);
        let mut current = self.state;
        if !self.config.components.rotor_delay {
            current.rotor_speeds = setpoints;
        }
        let stepped = sim::step(params, &current, &setpoints, &self.disturbance, self.config.dt);
        let (next, crashed) = match stepped {
            Ok(s) => (s, false),
            Err(_) => (current, true),
        };
        self.state = next;
        self.steps += 1;
        if self.config.effective_history() > 0 {
            self.history.pop_back();
            self.history.push_front(action);
        }
        let r = reward(&self.weights, &next, &action);
        let done = crashed || terminate(&next, &self.config.termination);
        let truncated = !done && self.steps >= self.config.max_episode_steps;
        let actor_obs = self.actor_observation();
        let critic_obs = self.critic_observation(&actor_obs);
        StepOutcome {
            state: next,
            actor_obs,
            critic_obs,
            reward: r,
            done,
            truncated,
            crashed,
        }
    }
}
