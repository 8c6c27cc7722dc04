//! Batch-stepping throughput.

use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::env::{self, EnvConfig};
use crate::error::SimError;
use crate::sim::{self, Disturbance, QuadState, NUM_ROTORS};

pub const DEFAULT_BATCH_SIZES: [usize; 3] = [1, 128, 8192];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub batch_size: usize,
    pub steps: u64,
    pub elapsed_s: f64,
    pub steps_per_s: f64,
    /// Simulated seconds per wall-clock second at the configured timestep.
    pub sim_time_ratio: f64,
    /// Batched results were bitwise equal to sequential stepping on the
    /// first batch.
    pub equivalent: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub dt_s: f64,
    pub threads: usize,
    pub rows: Vec<BenchRow>,
}

impl BenchReport {
    /// `batch_size,steps,elapsed_s,steps_per_s,sim_time_ratio,equivalent`
    pub fn to_csv(&self) -> String {
        let mut s = String::from("batch_size,steps,elapsed_s,steps_per_s,sim_time_ratio,equivalent\n");
        for r in &self.rows {
            s.push_str(&format!(
                "{},{},{:.6},{:.1},{:.1},{}\n",
                r.batch_size, r.steps, r.elapsed_s, r.steps_per_s, r.sim_time_ratio, r.equivalent
            ));
        }
        s
    }
}

/// Random states, setpoints and disturbances drawn from the environment's
/// distributions.
pub fn random_batch(
    cfg: &EnvConfig,
    n: usize,
    seed: u64,
) -> (Vec<QuadState>, Vec<[f64; NUM_ROTORS]>, Vec<Disturbance>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let states = (0..n)
        .map(|_| env::sample_initial_state(&cfg.initial_state, &cfg.dynamics, &mut rng))
        .collect();
    let setpoints = (0..n)
        .map(|_| {
            let a: [f64; NUM_ROTORS] = std::array::from_fn(|_| rand::Rng::random_range(&mut rng, -1.0..=1.0));
            env::action_to_rpm(&cfg.dynamics, &a)
        })
        .collect();
    let dists = (0..n)
        .map(|_| env::sample_disturbance(&cfg.disturbance, &mut rng))
        .collect();
    (states, setpoints, dists)
}

/// Whether `step_batch` equals per-element `step` bitwise on this input.
pub fn batch_matches_sequential(
    cfg: &EnvConfig,
    states: &[QuadState],
    setpoints: &[[f64; NUM_ROTORS]],
    dists: &[Disturbance],
) -> Result<bool, SimError> {
    let batched = sim::step_batch(&cfg.dynamics, states, setpoints, dists, cfg.dt)?;
    Ok(batched.iter().enumerate().all(|(i, b)| {
        let s = sim::step(&cfg.dynamics, &states[i], &setpoints[i], &dists[i], cfg.dt);
        match (b, s) {
            (Ok(b), Ok(s)) => b.to_array().map(f64::to_bits) == s.to_array().map(f64::to_bits),
            (Err(a), Err(b)) => *a == b,
            _ => false,
        }
    }))
}

/// Steps batches of each size repeatedly for at least `duration`, holding
/// setpoints fixed; diverged slots keep their previous state.
pub fn run(cfg: &EnvConfig, batch_sizes: &[usize], duration: Duration, seed: u64) -> Result<BenchReport, SimError> {
    let mut rows = Vec::with_capacity(batch_sizes.len());
    for &n in batch_sizes {
        let (mut states, setpoints, dists) = random_batch(cfg, n, seed);
        let equivalent = batch_matches_sequential(cfg, &states, &setpoints, &dists)?;
        let mut steps = 0u64;
        let start = Instant::now();
        while start.elapsed() < duration || steps == 0 {
            let next = sim::step_batch(&cfg.dynamics, &states, &setpoints, &dists, cfg.dt)?;
            for (s, r) in states.iter_mut().zip(next) {
                if let Ok(r) = r {
                    *s = r;
                }
            }
            steps += n as u64;
        }
        let elapsed = start.elapsed().as_secs_f64();
        let steps_per_s = steps as f64 / elapsed;
        rows.push(BenchRow {
            batch_size: n,
            steps,
            elapsed_s: elapsed,
            steps_per_s,
            sim_time_ratio: steps_per_s * cfg.dt,
            equivalent,
        });
    }
    Ok(BenchReport {
        dt_s: cfg.dt,
        threads: rayon::current_num_threads(),
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tiny_run_reports_every_size() {
        let report = run(&EnvConfig::default(), &[1, 7], Duration::from_millis(5), 0).unwrap();
        assert_eq!(report.rows.len(), 2);
        for r in &report.rows {
            assert!(r.steps_per_s > 0.0);
            assert!(r.equivalent);
            assert_eq!(r.sim_time_ratio, r.steps_per_s * 0.01);
        }
        assert_eq!(report.to_csv().lines().count(), 3);
    }
}
