//! A torque-limited pendulum on a fixed pivot, to be swung up and balanced.
//!
//! The angle is measured from upright and episodes start hanging near the
//! bottom. The reward is `dt * (1 + cos theta) / 2 * exp(-c * omega^2)`: zero
//! when hanging, `dt` when balanced at rest, and small while spinning.
//! Spinning faster than `max_velocity` ends the episode as a fall.

use nalgebra::{DVector, Matrix3, UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{DoneReason, Environment, Transition};
use crate::error::{Error, Result};
use crate::model::{PendulumConfig, SimConfig};
use crate::physics::{BodyDef, Multibody, MultibodyState, Root, SpatialVec};

pub const TERM_NAMES: [&str; 1] = ["upright"];

pub struct PendulumEnv {
    cfg: PendulumConfig,
    sim: SimConfig,
    body: Multibody,
    state: MultibodyState,
    rng: ChaCha8Rng,
    steps: u64,
}

fn wrap(theta: f64) -> f64 {
    let two_pi = 2.0 * std::f64::consts::PI;
    (theta + std::f64::consts::PI).rem_euclid(two_pi) - std::f64::consts::PI
}

impl PendulumEnv {
    pub fn new(cfg: PendulumConfig, sim: SimConfig) -> Result<Self> {
        cfg.validate()?;
        let i = cfg.inertia;
        let body = Multibody::new(
            Root::Fixed,
            0.0,
            Vector3::zeros(),
            Matrix3::zeros(),
            vec![BodyDef {
                parent: 0,
                origin: Vector3::zeros(),
                axis: Vector3::y(),
                mass: cfg.mass,
                com: Vector3::new(0.0, 0.0, cfg.length),
                inertia: Matrix3::from_diagonal(&Vector3::new(i, i, i)),
            }],
        )?;
        let state = MultibodyState {
            base_pos: Vector3::zeros(),
            base_rot: UnitQuaternion::identity(),
            base_twist: SpatialVec::zeros(),
            q: DVector::zeros(1),
            qd: DVector::zeros(1),
        };
        Ok(Self {
            cfg,
            sim,
            body,
            state,
            rng: ChaCha8Rng::seed_from_u64(0),
            steps: 0,
        })
    }

    pub fn angle(&self) -> f64 {
        wrap(self.state.q[0])
    }

    pub fn angular_velocity(&self) -> f64 {
        self.state.qd[0]
    }

    fn observation(&self) -> Vec<f64> {
        let th = self.state.q[0];
        vec![th.sin(), th.cos(), 0.25 * self.state.qd[0]]
    }
}

impl Environment for PendulumEnv {
    fn obs_dim(&self) -> usize {
        3
    }

    fn act_dim(&self) -> usize {
        1
    }

    fn term_names(&self) -> &'static [&'static str] {
        &TERM_NAMES
    }

    fn reset(&mut self, seed: u64) -> Vec<f64> {
        self.rng = ChaCha8Rng::seed_from_u64(seed);
        let a = self.cfg.init_angle;
        let v = self.cfg.init_velocity;
        let offset = if a > 0.0 {
            self.rng.random_range(-a..=a)
        } else {
            0.0
        };
        self.state.q[0] = std::f64::consts::PI + offset;
        self.state.qd[0] = if v > 0.0 {
            self.rng.random_range(-v..=v)
        } else {
            0.0
        };
        self.steps = 0;
        self.observation()
    }

    fn step(&mut self, action: &[f64]) -> Result<Transition> {
        if action.len() != 1 {
            return Err(Error::ShapeMismatch {
                expected: "1 action".into(),
                actual: format!("{} actions", action.len()),
            });
        }
        if !action[0].is_finite() {
            return Err(Error::ActionInvalid(format!("action[0] = {}", action[0])));
        }
        let tau =
            (action[0] * self.cfg.action_scale).clamp(-self.cfg.max_torque, self.cfg.max_torque);
        let h = self.sim.dt / f64::from(self.sim.substeps);
        let ext = [SpatialVec::zeros(); 2];
        for _ in 0..self.sim.substeps {
            let kin = self.body.kinematics(&self.state);
            let acc = self
                .body
                .forward_dynamics(&self.state, &kin, &[tau], self.sim.gravity, &ext)
                .ok_or_else(|| Error::SimDiverged {
                    step: self.steps + 1,
                    detail: "pendulum inertia is singular".into(),
                })?;
            self.body.integrate(&mut self.state, &acc, h);
        }
        self.steps += 1;
        if !self.state.q[0].is_finite() || !self.state.qd[0].is_finite() {
            return Err(Error::SimDiverged {
                step: self.steps,
                detail: "non-finite pendulum state".into(),
            });
        }
        let th = self.angle();
        let w = self.state.qd[0];
        let reward =
            self.sim.dt * 0.5 * (1.0 + th.cos()) * (-self.cfg.velocity_weight * w * w).exp();
        let spinning = self.cfg.max_velocity > 0.0 && w.abs() > self.cfg.max_velocity;
        let done = if spinning {
            Some(DoneReason::Fall)
        } else {
            (self.steps >= self.cfg.horizon_steps).then_some(DoneReason::Timeout)
        };
        Ok(Transition {
            obs: self.observation(),
            reward,
            terms: vec![reward],
            done,
        })
    }
}
