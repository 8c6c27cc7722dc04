use proptest::prelude::*;
use quadlab::env::{self, EnvConfig, RewardWeights};
use quadlab::replay::{ReplayBuffer, Transition};
use quadlab::sim::QuadState;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_transition(rng: &mut ChaCha8Rng, cfg: &EnvConfig) -> Transition {
    let s = env::sample_initial_state(&cfg.initial_state, &cfg.dynamics, rng);
    let s2 = env::sample_initial_state(&cfg.initial_state, &cfg.dynamics, rng);
    let action = [(); 4].map(|_| rng.random_range(-1.0..=1.0));
    Transition {
        state: s,
        action,
        next_state: s2,
        actor_obs: vec![rng.random(); 3],
        next_actor_obs: vec![rng.random(); 3],
        critic_obs: vec![rng.random(); 2],
        next_critic_obs: vec![rng.random(); 2],
        reward: rng.random(),
        done: rng.random_bool(0.1),
    }
}

#[test]
fn sampling_is_uniform_chi_square() {
    let cfg = EnvConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let slots = 50;
    let mut buf = ReplayBuffer::new(slots, 3, 2).unwrap();
    for _ in 0..slots {
        buf.push(random_transition(&mut rng, &cfg));
    }
    let draws = 200_000;
    let mut counts = vec![0u64; slots];
    for i in buf.sample_indices(draws, &mut rng).unwrap() {
        counts[i] += 1;
    }
    let expected = draws as f64 / slots as f64;
    let chi2: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
    // 99.9th percentile of χ² with 49 degrees of freedom
    assert!(chi2 < 85.35, "chi-square {chi2}");
}

#[test]
fn sampling_after_wraparound_covers_only_live_slots() {
    let cfg = EnvConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut buf = ReplayBuffer::new(10, 3, 2).unwrap();
    let mut pushed = Vec::new();
    for _ in 0..25 {
        let t = random_transition(&mut rng, &cfg);
        pushed.push(t.clone());
        buf.push(t);
    }
    assert_eq!(buf.len(), 10);
    for slot in 0..10 {
        let t = buf.get(slot).unwrap();
        assert!(pushed[15..].contains(&t));
    }
    let batch = buf.sample_batch(64, &mut rng).unwrap();
    assert_eq!(batch.actor_obs.len(), 64 * 3);
    assert_eq!(batch.critic_obs.len(), 64 * 2);
    assert_eq!(batch.actions.len(), 64 * 4);
}

#[test]
fn gather_preserves_row_alignment() {
    let cfg = EnvConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut buf = ReplayBuffer::new(20, 3, 2).unwrap();
    for _ in 0..20 {
        buf.push(random_transition(&mut rng, &cfg));
    }
    let idx = [7, 0, 19, 7];
    let b = buf.gather(&idx);
    for (row, &i) in idx.iter().enumerate() {
        let t = buf.get(i).unwrap();
        assert_eq!(&b.actor_obs[row * 3..row * 3 + 3], &t.actor_obs[..]);
        assert_eq!(&b.next_critic_obs[row * 2..row * 2 + 2], &t.next_critic_obs[..]);
        assert_eq!(b.rewards[row], t.reward as f32);
        assert_eq!(b.dones[row], if t.done { 1.0 } else { 0.0 });
        let a: Vec<f32> = t.action.iter().map(|&x| x as f32).collect();
        assert_eq!(&b.actions[row * 4..row * 4 + 4], &a[..]);
    }
}

fn arb_weights() -> impl Strategy<Value = RewardWeights> {
    (prop::array::uniform6(0.0..5.0f64), prop::array::uniform4(-1.0..1.0f64)).prop_map(|(w, b)| RewardWeights {
        position: w[0],
        orientation: w[1],
        linear_velocity: w[2],
        angular_velocity: w[3],
        action: w[4],
        action_baseline: b,
        survival: w[5],
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn recalculation_matches_fresh_evaluation(
        seed in 0u64..1000,
        n in 1usize..80,
        capacity in 1usize..40,
        passes in prop::collection::vec(arb_weights(), 1..4),
    ) {
        let cfg = EnvConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut buf = ReplayBuffer::new(capacity, 3, 2).unwrap();
        for _ in 0..n {
            buf.push(random_transition(&mut rng, &cfg));
        }
        for w in &passes {
            buf.recalculate_rewards(w);
            for slot in 0..buf.len() {
                let t = buf.get(slot).unwrap();
                let fresh = env::reward(w, &t.next_state, &t.action);
                prop_assert_eq!(t.reward.to_bits(), fresh.to_bits());
            }
        }
    }

    #[test]
    fn length_never_exceeds_capacity(capacity in 1usize..30, n in 0usize..100) {
        let cfg = EnvConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut buf = ReplayBuffer::new(capacity, 3, 2).unwrap();
        for _ in 0..n {
            buf.push(random_transition(&mut rng, &cfg));
        }
        prop_assert_eq!(buf.len(), n.min(capacity));
        prop_assert_eq!(buf.inserted(), n as u64);
    }
}

#[test]
fn recalculation_ignores_stored_state_and_uses_next_state() {
    let mut buf = ReplayBuffer::new(2, 1, 1).unwrap();
    let mut s2 = QuadState::at_rest(1000.0);
    s2.position.x = 0.5;
    buf.push(Transition {
        state: QuadState::at_rest(1000.0),
        action: [0.0; 4],
        next_state: s2,
        actor_obs: vec![0.0],
        next_actor_obs: vec![0.0],
        critic_obs: vec![0.0],
        next_critic_obs: vec![0.0],
        reward: 123.0,
        done: false,
    });
    let w = RewardWeights {
        position: 2.0,
        orientation: 0.0,
        linear_velocity: 0.0,
        angular_velocity: 0.0,
        action: 0.0,
        action_baseline: [0.0; 4],
        survival: 1.0,
    };
    buf.recalculate_rewards(&w);
    // 1 − 2·0.5²
    assert_eq!(buf.rewards(), &[0.5]);
}
