//! TD3 with asymmetric critics, curriculum-driven reward updates and
//! scheduled exploration noise.
//!
//! The actor maps the (noisy) actor observation to normalized rotor-speed
//! setpoints. Both critics and their targets consume the critic observation
//! concatenated with the action.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::env::{self, Action, Env, EnvConfig, RewardWeights, ACTION_DIM};
use crate::error::{ConfigError, TrainError};
use crate::nn::{Activation, Adam, AdamConfig, Mlp};
use crate::replay::{Batch, ReplayBuffer, Transition};

/// Multiply-and-clamp schedule for the exploration noise standard deviation,
/// stepped on the curriculum grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSchedule {
    pub initial: f64,
    pub factor: f64,
    pub target: f64,
}

impl NoiseSchedule {
    /// σ at `global_step`. Without decay, σ stays at its initial value.
    pub fn sigma_at(&self, global_step: u64, interval: u64, decay: bool) -> f64 {
        if !decay || interval == 0 {
            return self.initial;
        }
        let mut sigma = self.initial;
        for _ in 0..global_step / interval {
            let next = env::scheduled_update(sigma, self.initial, self.target, self.factor);
            if next == sigma {
                break;
            }
            sigma = next;
        }
        sigma
    }
}

pub fn exploration_noise(schedule: &NoiseSchedule, global_step: u64, interval: u64, decay: bool) -> f64 {
    schedule.sigma_at(global_step, interval, decay)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Td3Config {
    pub gamma: f64,
    pub tau: f64,
    pub policy_delay: u32,
    pub target_noise: f64,
    pub target_noise_clip: f64,
    pub batch_size: usize,
    pub actor_learning_rate: f64,
    pub critic_learning_rate: f64,
    /// Environment steps with uniformly random actions before learning.
    pub warmup_steps: u64,
    pub total_steps: u64,
    pub eval_interval: u64,
    pub eval_episodes: usize,
    pub exploration: NoiseSchedule,
    pub hidden_sizes: Vec<usize>,
    pub hidden_activation: Activation,
    pub replay_capacity: usize,
    /// Global steps at which the actor is snapshotted.
    pub checkpoint_steps: Vec<u64>,
}

impl Default for Td3Config {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            tau: 0.005,
            policy_delay: 2,
            target_noise: 0.2,
            target_noise_clip: 0.5,
            batch_size: 256,
            actor_learning_rate: 3e-4,
            critic_learning_rate: 3e-4,
            warmup_steps: 10_000,
            total_steps: 400_000,
            eval_interval: 1000,
            eval_episodes: 10,
            exploration: NoiseSchedule {
                initial: 0.1,
                factor: 0.75,
                target: 0.025,
            },
            hidden_sizes: vec![64, 64],
            hidden_activation: Activation::Relu,
            replay_capacity: 1_000_000,
            checkpoint_steps: vec![300_000, 3_000_000],
        }
    }
}

impl Td3Config {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: &str| Err(ConfigError::Invalid(m.to_string()));
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return bad("gamma must lie in (0, 1)");
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return bad("tau must lie in (0, 1]");
        }
        if self.policy_delay == 0 {
            return bad("policy delay must be at least 1");
        }
        if self.batch_size == 0 || self.replay_capacity == 0 {
            return bad("batch size and replay capacity must be positive");
        }
        if self.eval_interval == 0 {
            return bad("evaluation interval must be positive");
        }
        if self.hidden_sizes.iter().any(|&h| h == 0) {
            return bad("hidden layer sizes must be positive");
        }
        if !(self.exploration.initial >= 0.0 && self.exploration.target >= 0.0 && self.exploration.factor > 0.0) {
            return bad("exploration schedule must be nonnegative with a positive factor");
        }
        Ok(())
    }
}

/// Actor, twin critics, their targets and optimizers.
#[derive(Debug, Clone)]
pub struct Td3Agent {
    pub actor: Mlp<f32>,
    pub actor_target: Mlp<f32>,
    pub critics: [Mlp<f32>; 2],
    pub critic_targets: [Mlp<f32>; 2],
    actor_opt: Adam<f32>,
    critic_opts: [Adam<f32>; 2],
    critic_updates: u64,
}

/// Loss values of one update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UpdateLosses {
    pub critic: [f32; 2],
    pub actor: Option<f32>,
}

pub fn actor_sizes(actor_dim: usize, hidden: &[usize]) -> Vec<usize> {
    let mut s = vec![actor_dim];
    s.extend_from_slice(hidden);
    s.push(ACTION_DIM);
    s
}

pub fn critic_sizes(critic_dim: usize, hidden: &[usize]) -> Vec<usize> {
    let mut s = vec![critic_dim + ACTION_DIM];
    s.extend_from_slice(hidden);
    s.push(1);
    s
}

/// Row-wise concatenation `[obs | action]`.
pub fn critic_input(obs: &[f32], obs_dim: usize, actions: &[f32]) -> Vec<f32> {
    let n = obs.len() / obs_dim;
    let mut out = Vec::with_capacity(n * (obs_dim + ACTION_DIM));
    for (o, a) in obs.chunks_exact(obs_dim).zip(actions.chunks_exact(ACTION_DIM)) {
        out.extend_from_slice(o);
        out.extend_from_slice(a);
    }
    out
}

/// `target ← τ·online + (1−τ)·target`.
pub fn soft_update(target: &mut Mlp<f32>, online: &Mlp<f32>, tau: f32) {
    assert_eq!(target.sizes(), online.sizes(), "soft update between different architectures");
    if tau == 1.0 {
        target.params_mut().copy_from_slice(online.params());
        return;
    }
    for (t, &o) in target.params_mut().iter_mut().zip(online.params()) {
        *t = tau * o + (1.0 - tau) * *t;
    }
}

impl Td3Agent {
    pub fn new<R: Rng + ?Sized>(actor_dim: usize, critic_dim: usize, cfg: &Td3Config, rng: &mut R) -> Self {
        let actor = Mlp::new(
            &actor_sizes(actor_dim, &cfg.hidden_sizes),
            cfg.hidden_activation,
            Activation::Tanh,
            rng,
        );
        let critic_shape = critic_sizes(critic_dim, &cfg.hidden_sizes);
        let critics = [
            Mlp::new(&critic_shape, cfg.hidden_activation, Activation::Identity, rng),
            Mlp::new(&critic_shape, cfg.hidden_activation, Activation::Identity, rng),
        ];
        let actor_opt = Adam::new(
            AdamConfig {
                learning_rate: cfg.actor_learning_rate,
                ..Default::default()
            },
            actor.num_params(),
        );
        let critic_cfg = AdamConfig {
            learning_rate: cfg.critic_learning_rate,
            ..Default::default()
        };
        let critic_opts = [
            Adam::new(critic_cfg, critics[0].num_params()),
            Adam::new(critic_cfg, critics[1].num_params()),
        ];
        Self {
            actor_target: actor.clone(),
            critic_targets: critics.clone(),
            actor,
            critics,
            actor_opt,
            critic_opts,
            critic_updates: 0,
        }
    }

    pub fn actor_dim(&self) -> usize {
        self.actor.input_dim()
    }

    pub fn critic_dim(&self) -> usize {
        self.critics[0].input_dim() - ACTION_DIM
    }

    pub fn critic_updates(&self) -> u64 {
        self.critic_updates
    }

    /// Deterministic policy output for one observation.
    pub fn act(&self, obs: &[f32]) -> Action {
        let y = self.actor.forward(obs).expect("observation width matches actor");
        [y[0] as f64, y[1] as f64, y[2] as f64, y[3] as f64]
    }

    /// Clipped double-Q targets with target-policy smoothing.
    pub fn critic_targets_for<R: Rng + ?Sized>(&self, batch: &Batch, cfg: &Td3Config, rng: &mut R) -> Vec<f32> {
        let mut next_actions = self
            .actor_target
            .forward(&batch.next_actor_obs)
            .expect("actor observation width");
        let sigma = cfg.target_noise;
        let clip = cfg.target_noise_clip;
        for a in &mut next_actions {
            let eps = if sigma > 0.0 {
                let z: f64 = StandardNormal.sample(rng);
                (sigma * z).clamp(-clip, clip)
            } else {
                0.0
            };
            *a = (*a as f64 + eps).clamp(-1.0, 1.0) as f32;
        }
        let input = critic_input(&batch.next_critic_obs, self.critic_dim(), &next_actions);
        let q1 = self.critic_targets[0].forward(&input).expect("critic width");
        let q2 = self.critic_targets[1].forward(&input).expect("critic width");
        let gamma = cfg.gamma as f32;
        (0..batch.size)
            .map(|i| batch.rewards[i] + gamma * (1.0 - batch.dones[i]) * q1[i].min(q2[i]))
            .collect()
    }

    /// Regresses both critics onto the shared targets. Returns their mean
    /// squared errors before the update.
    pub fn critic_update<R: Rng + ?Sized>(&mut self, batch: &Batch, cfg: &Td3Config, rng: &mut R) -> [f32; 2] {
        let targets = self.critic_targets_for(batch, cfg, rng);
        let input = critic_input(&batch.critic_obs, self.critic_dim(), &batch.actions);
        let n = batch.size as f32;
        let mut losses = [0.0; 2];
        for k in 0..2 {
            let tape = self.critics[k].forward_cached(&input).expect("critic width");
            let q = tape.output();
            let mut loss = 0.0;
            let upstream: Vec<f32> = q
                .iter()
                .zip(&targets)
                .map(|(&qi, &yi)| {
                    let d = qi - yi;
                    loss += d * d;
                    2.0 * d / n
                })
                .collect();
            losses[k] = loss / n;
            let (grads, _) = self.critics[k].backward(&tape, &upstream, false).expect("shapes");
            self.critic_opts[k].step(self.critics[k].params_mut(), &grads);
        }
        self.critic_updates += 1;
        losses
    }

    /// Gradient of `−mean Q₁(o_c, π(o_a))` with respect to the actor's
    /// parameters, and the loss value.
    pub fn actor_gradient(&self, batch: &Batch) -> (Vec<f32>, f32) {
        let actor_tape = self.actor.forward_cached(&batch.actor_obs).expect("actor width");
        let actions = actor_tape.output();
        let input = critic_input(&batch.critic_obs, self.critic_dim(), actions);
        let critic_tape = self.critics[0].forward_cached(&input).expect("critic width");
        let n = batch.size as f32;
        let loss = -critic_tape.output().iter().sum::<f32>() / n;
        let upstream = vec![-1.0 / n; batch.size];
        let (_, dinput) = self.critics[0]
            .backward(&critic_tape, &upstream, true)
            .expect("shapes");
        let dinput = dinput.expect("input gradient requested");
        let width = self.critic_dim() + ACTION_DIM;
        let daction: Vec<f32> = dinput
            .chunks_exact(width)
            .flat_map(|row| row[width - ACTION_DIM..].iter().copied())
            .collect();
        let (grads, _) = self.actor.backward(&actor_tape, &daction, false).expect("shapes");
        (grads, loss)
    }

    pub fn actor_update(&mut self, batch: &Batch) -> f32 {
        let (grads, loss) = self.actor_gradient(batch);
        self.actor_opt.step(self.actor.params_mut(), &grads);
        loss
    }

    pub fn update_targets(&mut self, tau: f32) {
        soft_update(&mut self.actor_target, &self.actor, tau);
        for k in 0..2 {
            soft_update(&mut self.critic_targets[k], &self.critics[k], tau);
        }
    }

    /// One critic step; every `policy_delay`-th call also updates the actor
    /// and all target networks.
    pub fn update<R: Rng + ?Sized>(&mut self, batch: &Batch, cfg: &Td3Config, rng: &mut R) -> UpdateLosses {
        let critic = self.critic_update(batch, cfg, rng);
        let actor = if self.critic_updates % cfg.policy_delay as u64 == 0 {
            let loss = self.actor_update(batch);
            self.update_targets(cfg.tau as f32);
            Some(loss)
        } else {
            None
        };
        UpdateLosses { critic, actor }
    }
}

/// Outcome of one evaluation episode.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub episode_return: f64,
    pub length: u32,
    pub terminated: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub episodes: Vec<EpisodeRecord>,
    /// Zero when there are no episodes.
    pub mean_return: f64,
    pub mean_length: f64,
}

impl EvalSummary {
    pub fn from_episodes(episodes: Vec<EpisodeRecord>) -> Self {
        let n = episodes.len();
        let (mean_return, mean_length) = if n == 0 {
            (0.0, 0.0)
        } else {
            (
                episodes.iter().map(|e| e.episode_return).sum::<f64>() / n as f64,
                episodes.iter().map(|e| e.length as f64).sum::<f64>() / n as f64,
            )
        };
        Self {
            episodes,
            mean_return,
            mean_length,
        }
    }

    pub fn successes(&self) -> usize {
        self.episodes.iter().filter(|e| !e.terminated).count()
    }
}

/// Environment used for evaluation: the configured one with the rotor lag
/// always simulated.
pub fn evaluation_config(config: &EnvConfig) -> EnvConfig {
    let mut cfg = config.clone();
    cfg.components.rotor_delay = true;
    cfg
}

/// Runs `episodes` deterministic-policy episodes in lockstep. Episode `i`
/// uses random stream `i` of `seed`.
pub fn evaluate<P>(policy: P, config: &EnvConfig, weights: &RewardWeights, episodes: usize, seed: u64) -> EvalSummary
where
    P: Fn(&[f32], usize) -> Vec<f32>,
{
    let cfg = evaluation_config(config);
    let obs_dim = cfg.actor_obs_dim();
    let mut envs: Vec<Env> = (0..episodes)
        .map(|i| {
            let mut e = Env::new(cfg.clone(), seed, i as u64);
            e.set_reward_weights(*weights);
            e
        })
        .collect();
    let mut obs: Vec<Vec<f32>> = envs.iter_mut().map(|e| e.actor_observation()).collect();
    let mut records: Vec<Option<EpisodeRecord>> = vec![None; episodes];
    let mut returns = vec![0.0; episodes];
    loop {
        let active: Vec<usize> = (0..episodes).filter(|&i| records[i].is_none()).collect();
        if active.is_empty() {
            break;
        }
        let mut input = Vec::with_capacity(active.len() * obs_dim);
        for &i in &active {
            input.extend_from_slice(&obs[i]);
        }
        let actions = policy(&input, active.len());
        for (k, &i) in active.iter().enumerate() {
            let a = &actions[k * ACTION_DIM..(k + 1) * ACTION_DIM];
            let out = envs[i].step(&[a[0] as f64, a[1] as f64, a[2] as f64, a[3] as f64]);
            returns[i] += out.reward;
            if out.done || out.truncated {
                records[i] = Some(EpisodeRecord {
                    episode_return: returns[i],
                    length: envs[i].steps(),
                    terminated: out.done,
                });
            } else {
                obs[i] = out.actor_obs;
            }
        }
    }
    EvalSummary::from_episodes(records.into_iter().map(|r| r.unwrap()).collect())
}

/// Evaluation of a network actor.
pub fn evaluate_actor(actor: &Mlp<f32>, config: &EnvConfig, weights: &RewardWeights, episodes: usize, seed: u64) -> EvalSummary {
    evaluate(
        |x, _| actor.forward(x).expect("actor width matches config"),
        config,
        weights,
        episodes,
        seed,
    )
}

/// One row of the learning curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub step: u64,
    pub return_mean: f64,
    pub return_ma10: f64,
    pub length_mean: f64,
    pub length_ma10: f64,
    pub wallclock_s: f64,
}

pub const MOVING_AVERAGE_WINDOW: usize = 10;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingStats {
    pub records: Vec<EvalRecord>,
}

impl TrainingStats {
    pub fn push(&mut self, step: u64, return_mean: f64, length_mean: f64, wallclock_s: f64) {
        let start = self.records.len().saturating_sub(MOVING_AVERAGE_WINDOW - 1);
        let window = &self.records[start..];
        let k = (window.len() + 1) as f64;
        let return_ma10 = (window.iter().map(|r| r.return_mean).sum::<f64>() + return_mean) / k;
        let length_ma10 = (window.iter().map(|r| r.length_mean).sum::<f64>() + length_mean) / k;
        self.records.push(EvalRecord {
            step,
            return_mean,
            return_ma10,
            length_mean,
            length_ma10,
            wallclock_s,
        });
    }

    /// Largest moving-average episode length reached at or before `step`.
    pub fn best_length_ma10_by(&self, step: u64) -> Option<f64> {
        self.records
            .iter()
            .filter(|r| r.step <= step)
            .map(|r| r.length_ma10)
            .reduce(f64::max)
    }

    pub fn record_at(&self, step: u64) -> Option<&EvalRecord> {
        self.records.iter().find(|r| r.step == step)
    }

    /// Deterministic learning-curve CSV (no wall-clock column).
    pub fn to_csv(&self) -> String {
        let mut s = String::from("step,return_mean,return_ma10,length_mean,length_ma10\n");
        for r in &self.records {
            s.push_str(&format!(
                "{},{:.6},{:.6},{:.3},{:.3}\n",
                r.step, r.return_mean, r.return_ma10, r.length_mean, r.length_ma10
            ));
        }
        s
    }

    pub fn timing_csv(&self) -> String {
        let mut s = String::from("step,wallclock_s\n");
        for r in &self.records {
            s.push_str(&format!("{},{:.3}\n", r.step, r.wallclock_s));
        }
        s
    }
}

/// Actor snapshot taken during training.
#[derive(Debug, Clone)]
pub struct ActorSnapshot {
    pub step: u64,
    pub actor: Mlp<f32>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub agent: Td3Agent,
    pub stats: TrainingStats,
    pub snapshots: Vec<ActorSnapshot>,
    pub final_weights: RewardWeights,
}

/// Evaluation seed for the evaluation that ends at `step`; disjoint from the
/// training streams.
pub fn evaluation_seed(seed: u64, step: u64) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ step.wrapping_add(0xD1B5_4A32_D192_ED03).rotate_left(17)
}

const ENV_STREAM: u64 = 0;
const INIT_STREAM: u64 = 1;
const LEARNER_STREAM: u64 = 2;

/// Hook called after every evaluation; returning `false` stops training.
pub trait TrainObserver {
    fn on_eval(&mut self, _record: &EvalRecord) -> bool {
        true
    }
}

impl TrainObserver for () {}

pub fn train(env_cfg: &EnvConfig, cfg: &Td3Config, seed: u64) -> Result<TrainOutcome, TrainError> {
    train_with(env_cfg, cfg, seed, &mut ())
}

pub fn train_with<O: TrainObserver>(
    env_cfg: &EnvConfig,
    cfg: &Td3Config,
    seed: u64,
    observer: &mut O,
) -> Result<TrainOutcome, TrainError> {
    env_cfg.validate()?;
    cfg.validate()?;
    let started = Instant::now();
    let components = env_cfg.components;
    let schedule = &env_cfg.curriculum;

    let mut init_rng = ChaCha8Rng::seed_from_u64(seed);
    init_rng.set_stream(INIT_STREAM);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(LEARNER_STREAM);

    let actor_dim = env_cfg.actor_obs_dim();
    let critic_dim = env_cfg.critic_obs_dim();
    let mut agent = Td3Agent::new(actor_dim, critic_dim, cfg, &mut init_rng);
    let mut buffer = ReplayBuffer::new(cfg.replay_capacity, actor_dim, critic_dim)?;
    let mut env = Env::new(env_cfg.clone(), seed, ENV_STREAM);
    let mut weights = schedule.weights_at(0, components.curriculum);
    env.set_reward_weights(weights);
    let mut sigma = exploration_noise(&cfg.exploration, 0, schedule.interval, components.exploration_decay);

    let mut stats = TrainingStats::default();
    let mut snapshots = Vec::new();
    if cfg.checkpoint_steps.contains(&0) {
        snapshots.push(ActorSnapshot {
            step: 0,
            actor: agent.actor.clone(),
        });
    }

    let mut obs = env.actor_observation();
    let mut critic_obs = env.critic_observation(&obs);

    for step in 0..cfg.total_steps {
        if step > 0 && schedule.interval > 0 && step % schedule.interval == 0 {
            let next = schedule.weights_at(step, components.curriculum);
            weights = next;
            env.set_reward_weights(weights);
            if components.reward_recalculation {
                buffer.recalculate_rewards(&weights);
            }
            sigma = exploration_noise(&cfg.exploration, step, schedule.interval, components.exploration_decay);
            log::debug!("step {step}: reward weights {weights:?}, exploration sigma {sigma}");
        }

        let action: Action = if step < cfg.warmup_steps {
            [(); ACTION_DIM].map(|_| rng.random_range(-1.0..=1.0))
        } else {
            agent.act(&obs).map(|a| {
                let z: f64 = StandardNormal.sample(&mut rng);
                (a + sigma * z).clamp(-1.0, 1.0)
            })
        };

        let state = *env.state();
        let out = env.step(&action);
        buffer.push(Transition {
            state,
            action,
            next_state: out.state,
            actor_obs: std::mem::take(&mut obs),
            next_actor_obs: out.actor_obs.clone(),
            critic_obs: std::mem::take(&mut critic_obs),
            next_critic_obs: out.critic_obs.clone(),
            reward: out.reward,
            done: out.done,
        });
        if out.done || out.truncated {
            obs = env.reset();
            critic_obs = env.critic_observation(&obs);
        } else {
            obs = out.actor_obs;
            critic_obs = out.critic_obs;
        }

        if step >= cfg.warmup_steps {
            let batch = buffer.sample_batch(cfg.batch_size, &mut rng)?;
            let losses = agent.update(&batch, cfg, &mut rng);
            if losses.critic.iter().any(|l| !l.is_finite()) {
                return Err(TrainError::NonFiniteLoss { what: "critic", step });
            }
            if losses.actor.is_some_and(|l| !l.is_finite()) {
                return Err(TrainError::NonFiniteLoss { what: "actor", step });
            }
        }

        let done_steps = step + 1;
        if cfg.checkpoint_steps.contains(&done_steps) {
            snapshots.push(ActorSnapshot {
                step: done_steps,
                actor: agent.actor.clone(),
            });
        }
        if done_steps % cfg.eval_interval == 0 {
            let summary = evaluate_actor(
                &agent.actor,
                env_cfg,
                &weights,
                cfg.eval_episodes,
                evaluation_seed(seed, done_steps),
            );
            stats.push(
                done_steps,
                summary.mean_return,
                summary.mean_length,
                started.elapsed().as_secs_f64(),
            );
            let rec = *stats.records.last().unwrap();
            log::info!(
                "step {:>8} return {:>9.2} (ma {:>9.2}) length {:>6.1} (ma {:>6.1}) {:.0}s",
                rec.step,
                rec.return_mean,
                rec.return_ma10,
                rec.length_mean,
                rec.length_ma10,
                rec.wallclock_s
            );
            if !observer.on_eval(&rec) {
                break;
            }
        }
    }

    Ok(TrainOutcome {
        agent,
        stats,
        snapshots,
        final_weights: weights,
    })
}
