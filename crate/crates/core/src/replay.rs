//! Uniform replay buffer.
//!
//! Alongside the observations the learner trains on, every slot keeps the
//! raw next state and the action, so rewards can be recomputed exactly when
//! the reward weights change.

use rand::Rng;

use crate::env::{self, Action, RewardWeights, ACTION_DIM};
use crate::error::ReplayError;
use crate::sim::QuadState;

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub state: QuadState,
    pub action: Action,
    pub next_state: QuadState,
    pub actor_obs: Vec<f32>,
    pub next_actor_obs: Vec<f32>,
    pub critic_obs: Vec<f32>,
    pub next_critic_obs: Vec<f32>,
    pub reward: f64,
    /// True termination only; time-limit truncation is stored as `false`.
    pub done: bool,
}

/// A sampled minibatch in row-major, network-ready layout.
#[derive(Debug, Clone, Default)]
pub struct Batch {
    pub size: usize,
    pub actor_obs: Vec<f32>,
    pub next_actor_obs: Vec<f32>,
    pub critic_obs: Vec<f32>,
    pub next_critic_obs: Vec<f32>,
    pub actions: Vec<f32>,
    pub rewards: Vec<f32>,
    pub dones: Vec<f32>,
}

#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    actor_dim: usize,
    critic_dim: usize,
    inserted: u64,
    states: Vec<QuadState>,
    next_states: Vec<QuadState>,
    actions: Vec<Action>,
    actor_obs: Vec<f32>,
    next_actor_obs: Vec<f32>,
    critic_obs: Vec<f32>,
    next_critic_obs: Vec<f32>,
    rewards: Vec<f64>,
    dones: Vec<bool>,
}

impl ReplayBuffer {
    pub fn new(capacity: usize, actor_dim: usize, critic_dim: usize) -> Result<Self, ReplayError> {
        if capacity == 0 {
            return Err(ReplayError::ZeroCapacity);
        }
        Ok(Self {
            capacity,
            actor_dim,
            critic_dim,
            inserted: 0,
            states: Vec::new(),
            next_states: Vec::new(),
            actions: Vec::new(),
            actor_obs: Vec::new(),
            next_actor_obs: Vec::new(),
            critic_obs: Vec::new(),
            next_critic_obs: Vec::new(),
            rewards: Vec::new(),
            dones: Vec::new(),
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Occupied slots.
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    /// Total number of pushes, including overwritten ones.
    pub fn inserted(&self) -> u64 {
        self.inserted
    }

    pub fn push(&mut self, t: Transition) {
        assert_eq!(t.actor_obs.len(), self.actor_dim, "actor observation width");
        assert_eq!(t.next_actor_obs.len(), self.actor_dim, "actor observation width");
        assert_eq!(t.critic_obs.len(), self.critic_dim, "critic observation width");
        assert_eq!(t.next_critic_obs.len(), self.critic_dim, "critic observation width");
        let slot = (self.inserted % self.capacity as u64) as usize;
        self.inserted += 1;
        if slot == self.states.len() {
            self.states.push(t.state);
            self.next_states.push(t.next_state);
            self.actions.push(t.action);
            self.actor_obs.extend_from_slice(&t.actor_obs);
            self.next_actor_obs.extend_from_slice(&t.next_actor_obs);
            self.critic_obs.extend_from_slice(&t.critic_obs);
            self.next_critic_obs.extend_from_slice(&t.next_critic_obs);
            self.rewards.push(t.reward);
            self.dones.push(t.done);
        } else {
            self.states[slot] = t.state;
            self.next_states[slot] = t.next_state;
            self.actions[slot] = t.action;
            let (a, c) = (self.actor_dim, self.critic_dim);
            self.actor_obs[slot * a..(slot + 1) * a].copy_from_slice(&t.actor_obs);
            self.next_actor_obs[slot * a..(slot + 1) * a].copy_from_slice(&t.next_actor_obs);
            self.critic_obs[slot * c..(slot + 1) * c].copy_from_slice(&t.critic_obs);
            self.next_critic_obs[slot * c..(slot + 1) * c].copy_from_slice(&t.next_critic_obs);
            self.rewards[slot] = t.reward;
            self.dones[slot] = t.done;
        }
    }

    pub fn get(&self, slot: usize) -> Option<Transition> {
        if slot >= self.len() {
            return None;
        }
        let (a, c) = (self.actor_dim, self.critic_dim);
        Some(Transition {
            state: self.states[slot],
            action: self.actions[slot],
            next_state: self.next_states[slot],
            actor_obs: self.actor_obs[slot * a..(slot + 1) * a].to_vec(),
            next_actor_obs: self.next_actor_obs[slot * a..(slot + 1) * a].to_vec(),
            critic_obs: self.critic_obs[slot * c..(slot + 1) * c].to_vec(),
            next_critic_obs: self.next_critic_obs[slot * c..(slot + 1) * c].to_vec(),
            reward: self.rewards[slot],
            done: self.dones[slot],
        })
    }

    pub fn rewards(&self) -> &[f64] {
        &self.rewards
    }

    /// `n` slot indices drawn uniformly with replacement.
    pub fn sample_indices<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<Vec<usize>, ReplayError> {
        if self.is_empty() {
            return Err(ReplayError::Empty);
        }
        let len = self.len();
        Ok((0..n).map(|_| rng.random_range(0..len)).collect())
    }

    pub fn sample_batch<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<Batch, ReplayError> {
        let idx = self.sample_indices(n, rng)?;
        Ok(self.gather(&idx))
    }

    pub fn gather(&self, idx: &[usize]) -> Batch {
        let (a, c) = (self.actor_dim, self.critic_dim);
        let n = idx.len();
        let mut b = Batch {
            size: n,
            actor_obs: Vec::with_capacity(n * a),
            next_actor_obs: Vec::with_capacity(n * a),
            critic_obs: Vec::with_capacity(n * c),
            next_critic_obs: Vec::with_capacity(n * c),
            actions: Vec::with_capacity(n * ACTION_DIM),
            rewards: Vec::with_capacity(n),
            dones: Vec::with_capacity(n),
        };
        for &i in idx {
            b.actor_obs.extend_from_slice(&self.actor_obs[i * a..(i + 1) * a]);
            b.next_actor_obs.extend_from_slice(&self.next_actor_obs[i * a..(i + 1) * a]);
            b.critic_obs.extend_from_slice(&self.critic_obs[i * c..(i + 1) * c]);
            b.next_critic_obs.extend_from_slice(&self.next_critic_obs[i * c..(i + 1) * c]);
            b.actions.extend(self.actions[i].iter().map(|&x| x as f32));
            b.rewards.push(self.rewards[i] as f32);
            b.dones.push(if self.dones[i] { 1.0 } else { 0.0 });
        }
        b
    }

    /// Rewrites every stored reward as `reward(weights, s′, a)`.
    pub fn recalculate_rewards(&mut self, weights: &RewardWeights) {
        for ((r, s), a) in self.rewards.iter_mut().zip(&self.next_states).zip(&self.actions) {
            *r = env::reward(weights, s, a);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn transition(tag: f64) -> Transition {
        let mut s = QuadState::at_rest(100.0);
        s.position.x = tag;
        Transition {
            state: s,
            action: [tag; 4],
            next_state: s,
            actor_obs: vec![tag as f32; 2],
            next_actor_obs: vec![tag as f32; 2],
            critic_obs: vec![tag as f32; 3],
            next_critic_obs: vec![tag as f32; 3],
            reward: tag,
            done: false,
        }
    }

    #[test]
    fn push_then_sample_single() {
        let mut buf = ReplayBuffer::new(4, 2, 3).unwrap();
        buf.push(transition(0.5));
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let b = buf.sample_batch(5, &mut rng).unwrap();
        assert_eq!(b.size, 5);
        assert!(b.rewards.iter().all(|&r| r == 0.5));
        assert_eq!(buf.get(0).unwrap(), transition(0.5));
    }

    #[test]
    fn overwrites_oldest() {
        let mut buf = ReplayBuffer::new(3, 2, 3).unwrap();
        for i in 0..4 {
            buf.push(transition(i as f64));
        }
        assert_eq!(buf.len(), 3);
        assert_eq!(buf.inserted(), 4);
        assert_eq!(buf.get(0).unwrap().reward, 3.0);
        assert_eq!(buf.get(1).unwrap().reward, 1.0);
        assert_eq!(buf.get(0).unwrap().actor_obs, vec![3.0; 2]);
    }

    #[test]
    fn empty_sampling_fails() {
        let buf = ReplayBuffer::new(3, 2, 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(buf.sample_batch(1, &mut rng), Err(ReplayError::Empty)));
        assert!(matches!(ReplayBuffer::new(0, 1, 1), Err(ReplayError::ZeroCapacity)));
    }

    #[test]
    fn same_seed_same_indices() {
        let mut buf = ReplayBuffer::new(100, 2, 3).unwrap();
        for i in 0..50 {
            buf.push(transition(i as f64));
        }
        let a = buf.sample_indices(32, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = buf.sample_indices(32, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn zero_weights_give_survival_only() {
        let mut buf = ReplayBuffer::new(10, 2, 3).unwrap();
        for i in 0..10 {
            buf.push(transition(i as f64));
        }
        let w = RewardWeights {
            position: 0.0,
            orientation: 0.0,
            linear_velocity: 0.0,
            angular_velocity: 0.0,
            action: 0.0,
            action_baseline: [0.0; 4],
            survival: 1.0,
        };
        buf.recalculate_rewards(&w);
        assert!(buf.rewards().iter().all(|&r| r == 1.0));
    }
}
