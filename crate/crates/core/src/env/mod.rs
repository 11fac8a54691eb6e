//! Reinforcement-learning environments.
//!
//! [`quadruped::QuadrupedEnv`] is the locomotion task; [`pendulum::PendulumEnv`]
//! is a one-joint sanity task sharing the same interface. [`vec::VecEnv`]
//! steps many instances in parallel with automatic resets.

pub mod obs;
pub mod pendulum;
pub mod quadruped;
pub mod reward;
pub mod vec;

use crate::error::{Error, Result};
use crate::model::NUM_JOINTS;
use crate::physics::JointTorques;

/// Training mode injects observation noise, latency and pushes; evaluation
/// mode runs without them.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EnvMode {
    Train,
    Eval,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DoneReason {
    /// Horizon reached; the final state is not terminal for value purposes.
    Timeout,
    /// Height or tilt termination.
    Fall,
    /// Invalid action or simulation divergence.
    Failure,
}

impl DoneReason {
    pub fn as_str(self) -> &'static str {
        match self {
            DoneReason::Timeout => "timeout",
            DoneReason::Fall => "fall",
            DoneReason::Failure => "failure",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    /// Observation after the step (before any reset).
    pub obs: Vec<f64>,
    pub reward: f64,
    /// Weighted reward terms; they sum to `reward`.
    pub terms: Vec<f64>,
    pub done: Option<DoneReason>,
}

pub trait Environment: Send {
    fn obs_dim(&self) -> usize;
    fn act_dim(&self) -> usize;
    fn term_names(&self) -> &'static [&'static str];
    /// Starts a new episode and returns its first observation.
    fn reset(&mut self, seed: u64) -> Vec<f64>;
    fn step(&mut self, action: &[f64]) -> Result<Transition>;
}

/// Maps a raw policy output to joint torques: `clamp(raw * scale, -clamp, clamp)`.
pub fn apply_action(raw: &[f64], action_scale: f64, torque_clamp: f64) -> Result<JointTorques> {
    if raw.len() != NUM_JOINTS {
        return Err(Error::ShapeMismatch {
            expected: format!("{NUM_JOINTS} actions"),
            actual: format!("{} actions", raw.len()),
        });
    }
    if let Some(i) = raw.iter().position(|a| !a.is_finite()) {
        return Err(Error::ActionInvalid(format!(
            "action[{i}] = {} is not finite",
            raw[i]
        )));
    }
    let mut tau = [0.0; NUM_JOINTS];
    for (t, a) in tau.iter_mut().zip(raw) {
        *t = (a * action_scale).clamp(-torque_clamp, torque_clamp);
    }
    Ok(JointTorques(tau))
}
