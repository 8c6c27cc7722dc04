use quadlab::env::{self, EnvConfig, ACTION_DIM};
use quadlab::nn::{Activation, Mlp};
use quadlab::replay::Batch;
use quadlab::sim;
use quadlab::td3::{self, Td3Agent, Td3Config};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn small_cfg() -> Td3Config {
    Td3Config {
        hidden_sizes: vec![8],
        target_noise: 0.0,
        ..Td3Config::default()
    }
}

/// Critic whose output is a constant `bias`, independent of its input.
fn constant_critic(input: usize, hidden: usize, bias: f32) -> Mlp<f32> {
    let mut net = Mlp::zeros(&[input, hidden, 1], Activation::Relu, Activation::Identity);
    let n = net.num_params();
    net.params_mut()[n - 1] = bias;
    net
}

fn single_batch(actor_dim: usize, critic_dim: usize, reward: f32, done: bool) -> Batch {
    Batch {
        size: 1,
        actor_obs: vec![0.1; actor_dim],
        next_actor_obs: vec![0.2; actor_dim],
        critic_obs: vec![0.3; critic_dim],
        next_critic_obs: vec![0.4; critic_dim],
        actions: vec![0.0; ACTION_DIM],
        rewards: vec![reward],
        dones: vec![if done { 1.0 } else { 0.0 }],
    }
}

#[test]
fn critic_target_scalar_trace() {
    // y = r + γ·(1 − d)·min(Q′₁, Q′₂) with Q′₁ ≡ 3, Q′₂ ≡ 5
    let cfg = small_cfg();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut agent = Td3Agent::new(5, 6, &cfg, &mut rng);
    agent.critic_targets = [constant_critic(10, 8, 3.0), constant_critic(10, 8, 5.0)];
    let y = agent.critic_targets_for(&single_batch(5, 6, 1.5, false), &cfg, &mut rng);
    assert_eq!(y, vec![1.5 + 0.99f32 * 3.0]);
    agent.critic_targets = [constant_critic(10, 8, 7.0), constant_critic(10, 8, -2.0)];
    let y = agent.critic_targets_for(&single_batch(5, 6, 1.5, false), &cfg, &mut rng);
    assert_eq!(y, vec![1.5 + 0.99f32 * -2.0]);
    let y = agent.critic_targets_for(&single_batch(5, 6, 1.5, true), &cfg, &mut rng);
    assert_eq!(y, vec![1.5]);
}

#[test]
fn target_smoothing_noise_is_clipped() {
    // A critic linear in the first action component reveals the perturbed
    // target action; with the target actor at zero the perturbation is the
    // clipped noise itself.
    let cfg = Td3Config {
        hidden_sizes: vec![4],
        target_noise: 10.0,
        target_noise_clip: 0.25,
        gamma: 1.0,
        ..Td3Config::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut agent = Td3Agent::new(2, 3, &cfg, &mut rng);
    agent.actor_target = Mlp::zeros(&[2, 4, 4], Activation::Relu, Activation::Tanh);
    // hidden unit 0 = relu(a0 + 1), output = h0 − 1 = a0 for |a0| ≤ 1
    let mut critic = Mlp::zeros(&[7, 4, 1], Activation::Relu, Activation::Identity);
    {
        let p = critic.params_mut();
        p[3] = 1.0; // W1[0][3]: first action column
        p[28] = 1.0; // b1[0]
        p[32] = 1.0; // W2[0][0]
        p[36] = -1.0; // b2
    }
    agent.critic_targets = [critic.clone(), critic];
    let mut seen_max = 0.0f32;
    for _ in 0..200 {
        let y = agent.critic_targets_for(&single_batch(2, 3, 0.0, false), &cfg, &mut rng)[0];
        assert!(y.abs() <= 0.25 + 1e-6, "{y}");
        seen_max = seen_max.max(y.abs());
    }
    assert!(seen_max > 0.24, "noise of scale 10 should saturate the clip");
}

#[test]
fn actor_gradient_matches_finite_differences() {
    let cfg = Td3Config {
        hidden_sizes: vec![6, 5],
        hidden_activation: Activation::Tanh,
        ..Td3Config::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let agent = Td3Agent::new(4, 3, &cfg, &mut rng);
    let n = 6;
    let batch = Batch {
        size: n,
        actor_obs: (0..n * 4).map(|_| rng.random_range(-1.0..1.0)).collect(),
        next_actor_obs: vec![0.0; n * 4],
        critic_obs: (0..n * 3).map(|_| rng.random_range(-1.0..1.0)).collect(),
        next_critic_obs: vec![0.0; n * 3],
        actions: vec![0.0; n * ACTION_DIM],
        rewards: vec![0.0; n],
        dones: vec![0.0; n],
    };
    let (grads, loss) = agent.actor_gradient(&batch);

    // Independent f64 evaluation of −mean Q₁(o_c, π(o_a)).
    let critic = agent.critics[0].cast::<f64>();
    let obs_a: Vec<f64> = batch.actor_obs.iter().map(|&x| x as f64).collect();
    let obs_c: Vec<f64> = batch.critic_obs.iter().map(|&x| x as f64).collect();
    let objective = |actor: &Mlp<f64>| {
        let a = actor.forward(&obs_a).unwrap();
        let mut input = Vec::new();
        for i in 0..n {
            input.extend_from_slice(&obs_c[i * 3..i * 3 + 3]);
            input.extend_from_slice(&a[i * 4..i * 4 + 4]);
        }
        -critic.forward(&input).unwrap().iter().sum::<f64>() / n as f64
    };
    let mut actor = agent.actor.cast::<f64>();
    assert!((objective(&actor) - loss as f64).abs() < 1e-5);
    let h = 1e-6;
    for k in 0..actor.num_params() {
        let orig = actor.params()[k];
        actor.params_mut()[k] = orig + h;
        let up = objective(&actor);
        actor.params_mut()[k] = orig - h;
        let down = objective(&actor);
        actor.params_mut()[k] = orig;
        let fd = (up - down) / (2.0 * h);
        let g = grads[k] as f64;
        assert!((g - fd).abs() <= 1e-3 * g.abs().max(fd.abs()) + 1e-6, "param {k}: {g} vs {fd}");
    }
}

#[test]
fn toy_actor_converges_to_critic_maximum() {
    // Q(o, a) = −Σ_k |a_k − 0.3| built from ReLU units; the actor must learn
    // a ≡ 0.3 for every observation.
    let cfg = Td3Config {
        hidden_sizes: vec![8],
        actor_learning_rate: 3e-3,
        ..Td3Config::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut agent = Td3Agent::new(2, 1, &cfg, &mut rng);
    let mut critic = Mlp::zeros(&[5, 8, 1], Activation::Relu, Activation::Identity);
    {
        let p = critic.params_mut();
        for k in 0..4 {
            // unit 2k: relu(a_k − 0.3), unit 2k+1: relu(0.3 − a_k)
            p[(2 * k) * 5 + 1 + k] = 1.0;
            p[40 + 2 * k] = -0.3;
            p[(2 * k + 1) * 5 + 1 + k] = -1.0;
            p[40 + 2 * k + 1] = 0.3;
        }
        for j in 0..8 {
            p[48 + j] = -1.0;
        }
    }
    agent.critics[0] = critic;
    let n = 32;
    for _ in 0..3000 {
        let batch = Batch {
            size: n,
            actor_obs: (0..n * 2).map(|_| rng.random_range(-1.0..1.0)).collect(),
            next_actor_obs: vec![0.0; n * 2],
            critic_obs: vec![0.0; n],
            next_critic_obs: vec![0.0; n],
            actions: vec![0.0; n * 4],
            rewards: vec![0.0; n],
            dones: vec![0.0; n],
        };
        agent.actor_update(&batch);
    }
    for _ in 0..20 {
        let o = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
        for a in agent.act(&o) {
            assert!((a - 0.3).abs() < 0.02, "action {a}");
        }
    }
}

#[test]
fn critic_regression_reduces_loss() {
    let cfg = Td3Config {
        hidden_sizes: vec![16],
        gamma: 0.0,
        critic_learning_rate: 1e-2,
        ..Td3Config::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut agent = Td3Agent::new(3, 3, &cfg, &mut rng);
    let n = 64;
    let critic_obs: Vec<f32> = (0..n * 3).map(|_| rng.random_range(-1.0..1.0)).collect();
    let actions: Vec<f32> = (0..n * 4).map(|_| rng.random_range(-1.0..1.0)).collect();
    let rewards: Vec<f32> = (0..n).map(|i| critic_obs[i * 3] - 0.5 * actions[i * 4 + 1]).collect();
    let batch = Batch {
        size: n,
        actor_obs: vec![0.0; n * 3],
        next_actor_obs: vec![0.0; n * 3],
        critic_obs,
        next_critic_obs: vec![0.0; n * 3],
        actions,
        rewards,
        dones: vec![0.0; n],
    };
    let first = agent.critic_update(&batch, &cfg, &mut rng);
    let mut last = first;
    for _ in 0..500 {
        last = agent.critic_update(&batch, &cfg, &mut rng);
    }
    for k in 0..2 {
        assert!(last[k] < 0.05 * first[k], "critic {k}: {} -> {}", first[k], last[k]);
    }
}

#[test]
fn policy_delay_updates_actor_every_other_step() {
    let cfg = small_cfg();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut agent = Td3Agent::new(3, 2, &cfg, &mut rng);
    let batch = Batch {
        size: 2,
        actor_obs: vec![0.5; 6],
        next_actor_obs: vec![0.5; 6],
        critic_obs: vec![0.1; 4],
        next_critic_obs: vec![0.1; 4],
        actions: vec![0.2; 8],
        rewards: vec![1.0; 2],
        dones: vec![0.0; 2],
    };
    let before = agent.actor.clone();
    let l1 = agent.update(&batch, &cfg, &mut rng);
    assert!(l1.actor.is_none());
    assert_eq!(agent.actor, before);
    let l2 = agent.update(&batch, &cfg, &mut rng);
    assert!(l2.actor.is_some());
    assert_ne!(agent.actor, before);
}

fn calm_config() -> EnvConfig {
    let mut cfg = EnvConfig::default();
    cfg.initial_state.position_half_width = 0.0;
    cfg.initial_state.max_angle = 0.0;
    cfg.initial_state.max_linear_velocity = 0.0;
    cfg.initial_state.max_angular_velocity = 0.0;
    cfg.initial_state.rotor_speed_half_width = 0.0;
    cfg.components.disturbances = false;
    cfg.components.observation_noise = false;
    cfg
}

#[test]
fn hover_policy_survives_to_cap() {
    let cfg = calm_config();
    let (hover, _) = sim::hover_equilibrium(&cfg.dynamics).unwrap();
    let a = env::rpm_to_action(&cfg.dynamics, hover) as f32;
    let weights = cfg.curriculum.target;
    let summary = td3::evaluate(|_, n| vec![a; n * ACTION_DIM], &cfg, &weights, 10, 0);
    assert_eq!(summary.successes(), 10);
    assert_eq!(summary.mean_length, cfg.max_episode_steps as f64);
    assert!((summary.mean_return - weights.survival * cfg.max_episode_steps as f64).abs() < 1e-6);
}

#[test]
fn zero_action_policy_falls_early() {
    let cfg = EnvConfig::default();
    let summary = td3::evaluate(|_, n| vec![0.0; n * ACTION_DIM], &cfg, &cfg.curriculum.target, 10, 0);
    assert_eq!(summary.successes(), 0);
    assert!(summary.mean_length < 0.5 * cfg.max_episode_steps as f64, "{}", summary.mean_length);
}

#[test]
fn evaluation_episodes_are_independent_of_batch_size() {
    let cfg = EnvConfig::default();
    let policy = |obs: &[f32], n: usize| -> Vec<f32> {
        let d = obs.len() / n;
        obs.chunks(d).flat_map(|o| [(-o[2]).tanh(); 4]).collect()
    };
    let all = td3::evaluate(policy, &cfg, &cfg.curriculum.target, 6, 9);
    let few = td3::evaluate(policy, &cfg, &cfg.curriculum.target, 3, 9);
    assert_eq!(&all.episodes[..3], &few.episodes[..]);
}

#[test]
fn short_training_is_deterministic_and_finite() {
    let env_cfg = EnvConfig::default();
    let cfg = Td3Config {
        total_steps: 3000,
        warmup_steps: 1000,
        eval_interval: 500,
        eval_episodes: 2,
        hidden_sizes: vec![16, 16],
        replay_capacity: 2000,
        batch_size: 32,
        checkpoint_steps: vec![0, 1500],
        ..Td3Config::default()
    };
    let a = td3::train(&env_cfg, &cfg, 42).unwrap();
    let b = td3::train(&env_cfg, &cfg, 42).unwrap();
    assert_eq!(a.stats.to_csv(), b.stats.to_csv());
    assert_eq!(a.agent.actor, b.agent.actor);
    assert_eq!(a.stats.records.len(), 6);
    assert_eq!(a.snapshots.iter().map(|s| s.step).collect::<Vec<_>>(), vec![0, 1500]);
    assert!(a.agent.actor.params().iter().all(|p| p.is_finite()));
    let c = td3::train(&env_cfg, &cfg, 43).unwrap();
    assert_ne!(a.agent.actor, c.agent.actor);
}

#[test]
fn curriculum_boundaries_in_training_update_weights() {
    let mut env_cfg = EnvConfig::default();
    env_cfg.curriculum.interval = 500;
    let cfg = Td3Config {
        total_steps: 1600,
        warmup_steps: 1600,
        eval_interval: 1600,
        eval_episodes: 1,
        hidden_sizes: vec![4],
        replay_capacity: 5000,
        checkpoint_steps: vec![],
        ..Td3Config::default()
    };
    let out = td3::train(&env_cfg, &cfg, 0).unwrap();
    let expected = env_cfg.curriculum.weights_at(1500, true);
    assert_eq!(out.final_weights, expected);
    assert_eq!(expected.position, 1.0 * 1.25f64.powi(3));
    assert_eq!(expected.action, 0.015625 * 8.0);
}
