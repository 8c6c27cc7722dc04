//! Quadrotor flight-learning laboratory.
//!
//! * [`sim`]: rigid-body dynamics with first-order rotor lag, RK4 stepping
//!   and data-parallel batch stepping.
//! * [`env`]: the position-control MDP (initial states, disturbances,
//!   actor/critic observations, reward, curriculum, termination).
//! * [`replay`]: replay buffer with exact reward recalculation.
//! * [`nn`]: dense networks, backpropagation and Adam.
//! * [`td3`]: the training loop and evaluation.
//! * [`tasks`]: setpoint shifting and Lissajous trajectory tracking.
//! * [`pid`]: cascaded PID baseline.
//! * [`checkpoint`]: binary actor checkpoints.
//! * [`bench`]: batch-stepping throughput measurement.

pub mod bench;
pub mod checkpoint;
pub mod config;
pub mod env;
pub mod error;
pub mod nn;
pub mod pid;
pub mod replay;
pub mod sim;
pub mod tasks;
pub mod td3;

pub use error::{CheckpointError, ConfigError, NnError, ReplayError, SimError, TrackingError, TrainError};
