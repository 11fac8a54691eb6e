//! The locomotion environment.

use std::collections::VecDeque;
use std::sync::Arc;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::obs::{build_observation, NoiseSpec, Observation, OBS_DIM};
use super::reward::{compute_reward, RewardBreakdown, RewardInputs, TERM_NAMES};
use super::{apply_action, DoneReason, EnvMode, Environment, Transition};
use crate::error::Result;
use crate::model::{
    EnvConfig, ExperimentConfig, NominalPose, SimConfig, TerrainConfig, NUM_JOINTS,
};
use crate::physics::{
    apply_push, rest_state, ContactReport, JointTorques, QuadrupedModel, SimState,
};
use crate::terrain::Heightfield;

/// Read-only data shared by every environment instance of a run.
#[derive(Debug, Clone)]
pub struct QuadrupedSpec {
    pub model: QuadrupedModel,
    pub sim: SimConfig,
    pub env: EnvConfig,
    pub terrain: TerrainConfig,
    pub nominal: NominalPose,
}

impl QuadrupedSpec {
    pub fn from_experiment(cfg: &ExperimentConfig) -> Result<Self> {
        Ok(Self {
            model: QuadrupedModel::new(&cfg.robot)?,
            sim: cfg.sim.clone(),
            env: cfg.env.clone(),
            terrain: cfg.terrain.clone(),
            nominal: cfg.robot.nominal_pose,
        })
    }

    /// Terrain for environment `index`: its own seed when per-env terrain is
    /// enabled, otherwise the shared seed.
    pub fn terrain_for(&self, index: usize) -> Result<Heightfield> {
        let mut t = self.terrain.clone();
        if t.per_env {
            t.seed = t.seed.wrapping_add(index as u64);
        }
        Heightfield::generate(&t)
    }

    fn steps_for(&self, seconds: f64) -> u64 {
        if seconds > 0.0 {
            (seconds / self.sim.dt).round().max(1.0) as u64
        } else {
            0
        }
    }
}

pub struct QuadrupedEnv {
    spec: Arc<QuadrupedSpec>,
    field: Arc<Heightfield>,
    mode: EnvMode,
    rng: ChaCha8Rng,
    state: SimState,
    /// Most recent states, newest last; the policy sees the front.
    history: VecDeque<SimState>,
    command: [f64; 3],
    last_action: [f64; NUM_JOINTS],
    last_torques: JointTorques,
    last_reward: Option<RewardBreakdown>,
    last_contacts: ContactReport,
    last_observation: Option<Observation>,
    mu: f64,
    steps: u64,
}

impl QuadrupedEnv {
    pub fn new(spec: Arc<QuadrupedSpec>, field: Arc<Heightfield>, mode: EnvMode) -> Self {
        let q = spec.nominal.joint_positions();
        let state = rest_state(Vector3::new(0.0, 0.0, 0.3), q);
        let mut env = Self {
            spec,
            field,
            mode,
            rng: ChaCha8Rng::seed_from_u64(0),
            state: state.clone(),
            history: VecDeque::from([state]),
            command: [0.0; 3],
            last_action: [0.0; NUM_JOINTS],
            last_torques: JointTorques::zero(),
            last_reward: None,
            last_contacts: ContactReport::default(),
            last_observation: None,
            mu: 1.0,
            steps: 0,
        };
        env.reset(0);
        env
    }

    pub fn spec(&self) -> &QuadrupedSpec {
        &self.spec
    }

    pub fn state(&self) -> &SimState {
        &self.state
    }

    pub fn command(&self) -> [f64; 3] {
        self.command
    }

    /// Replaces the command; it is clamped to the configured ranges and takes
    /// effect on the next step.
    pub fn set_command(&mut self, cmd: [f64; 3]) {
        self.command = self.spec.env.commands.clamp(cmd);
    }

    pub fn friction(&self) -> f64 {
        self.mu
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn field(&self) -> &Heightfield {
        &self.field
    }

    pub fn last_torques(&self) -> &JointTorques {
        &self.last_torques
    }

    pub fn last_reward(&self) -> Option<&RewardBreakdown> {
        self.last_reward.as_ref()
    }

    pub fn last_contacts(&self) -> &ContactReport {
        &self.last_contacts
    }

    /// The last observation handed to the policy, with its raw values.
    pub fn last_observation(&self) -> Option<&Observation> {
        self.last_observation.as_ref()
    }

    fn latency(&self) -> usize {
        match self.mode {
            EnvMode::Train => self.spec.env.latency_steps,
            EnvMode::Eval => 0,
        }
    }

    fn sample_command(&mut self) -> [f64; 3] {
        let c = &self.spec.env.commands;
        let mut draw = |r: [f64; 2]| {
            if r[0] == r[1] {
                r[0]
            } else {
                self.rng.random_range(r[0]..=r[1])
            }
        };
        [draw(c.vx), draw(c.vy), draw(c.wz)]
    }

    fn observe(&mut self) -> Vec<f64> {
        let seen = self
            .history
            .front()
            .expect("history is never empty")
            .clone();
        let env = &self.spec.env;
        let obs = match self.mode {
            EnvMode::Train => build_observation(
                &seen,
                self.command,
                &self.last_action,
                &env.obs_scales,
                Some(NoiseSpec {
                    variances: &env.obs_noise,
                    multiplier: env.noise_multiplier,
                    rng: &mut self.rng,
                }),
            ),
            EnvMode::Eval => build_observation::<ChaCha8Rng>(
                &seen,
                self.command,
                &self.last_action,
                &env.obs_scales,
                None,
            ),
        };
        let out = obs.values.to_vec();
        self.last_observation = Some(obs);
        out
    }

    /// Rebuilds the current observation, e.g. after [`Self::set_command`]. In
    /// training mode this draws fresh observation noise.
    pub fn refresh_observation(&mut self) -> Vec<f64> {
        self.observe()
    }

    /// Base height above the terrain directly below it.
    pub fn base_clearance(&self) -> f64 {
        let p = self.state.base_pos;
        p.z - self.field.height_at(p.x, p.y)
    }
}

impl Environment for QuadrupedEnv {
    fn obs_dim(&self) -> usize {
        OBS_DIM
    }

    fn act_dim(&self) -> usize {
        NUM_JOINTS
    }

    fn term_names(&self) -> &'static [&'static str] {
        &TERM_NAMES
    }

    fn reset(&mut self, seed: u64) -> Vec<f64> {
        self.rng = ChaCha8Rng::seed_from_u64(seed);
        let env = self.spec.env.clone();
        let mut q = self.spec.nominal.joint_positions();
        if env.init_joint_noise > 0.0 {
            for qi in q.iter_mut() {
                *qi += self
                    .rng
                    .random_range(-env.init_joint_noise..=env.init_joint_noise);
            }
        }
        self.mu = if env.friction_range[0] == env.friction_range[1] {
            env.friction_range[0]
        } else {
            self.rng
                .random_range(env.friction_range[0]..=env.friction_range[1])
        };
        self.command = self.sample_command();

        let (nx, ny) = self.field.dims();
        let half = 0.5 * (nx.min(ny) as f64) * self.field.cell_size();
        let spread = (half - 1.0).clamp(0.0, 2.0);
        let (x, y) = if spread > 0.0 {
            (
                self.rng.random_range(-spread..=spread),
                self.rng.random_range(-spread..=spread),
            )
        } else {
            (0.0, 0.0)
        };
        // Lift the base until the lowest foot clears the terrain under it.
        let probe = rest_state(Vector3::new(x, y, 0.0), q);
        let z = self
            .spec
            .model
            .foot_bottoms(&probe)
            .iter()
            .map(|f| self.field.height_at(f.x, f.y) - f.z)
            .fold(f64::MIN, f64::max)
            + env.spawn_clearance;
        self.state = rest_state(Vector3::new(x, y, z), q);
        self.history = VecDeque::from([self.state.clone()]);
        self.last_action = [0.0; NUM_JOINTS];
        self.last_torques = JointTorques::zero();
        self.last_reward = None;
        self.last_contacts = ContactReport::default();
        self.steps = 0;
        self.observe()
    }

    fn step(&mut self, action: &[f64]) -> Result<Transition> {
        let spec = self.spec.clone();
        let env = &spec.env;
        let torques = apply_action(action, env.action_scale, env.torque_clamp)?;
        let (mut next, contacts) =
            self.spec
                .model
                .step(&self.state, &torques, &self.field, self.mu, &self.spec.sim)?;
        let mut act = [0.0; NUM_JOINTS];
        act.copy_from_slice(action);
        let ground = self.field.height_at(next.base_pos.x, next.base_pos.y);
        let breakdown = compute_reward(
            &RewardInputs {
                prev: &self.state,
                next: &next,
                torques: &torques,
                action: &act,
                last_action: &self.last_action,
                command: self.command,
                contacts: &contacts,
                ground_height: ground,
            },
            &env.reward,
            &spec.nominal,
            spec.sim.dt,
        );
        self.steps += 1;

        let push_every = spec.steps_for(env.push_interval_s);
        if self.mode == EnvMode::Train && push_every > 0 && self.steps.is_multiple_of(push_every) {
            let [lo, hi] = env.push_velocity;
            let v = [
                self.rng.random_range(lo..=hi),
                self.rng.random_range(lo..=hi),
            ];
            next = apply_push(&next, v);
        }
        let resample_every = spec.steps_for(env.commands.resample_interval_s);
        if resample_every > 0 && self.steps.is_multiple_of(resample_every) {
            self.command = self.sample_command();
        }

        let clearance = next.base_pos.z - ground;
        let done = if clearance < env.min_base_height || next.tilt() > env.max_tilt {
            Some(DoneReason::Fall)
        } else if self.steps >= env.horizon_steps {
            Some(DoneReason::Timeout)
        } else {
            None
        };

        self.last_action = act;
        self.last_torques = torques;
        self.last_reward = Some(breakdown);
        self.last_contacts = contacts;
        self.state = next.clone();
        self.history.push_back(next);
        while self.history.len() > self.latency() + 1 {
            self.history.pop_front();
        }
        Ok(Transition {
            obs: self.observe(),
            reward: breakdown.total,
            terms: breakdown.weighted.to_vec(),
            done,
        })
    }
}

/// Builds a quadruped environment for index `index` of a run.
pub fn make_quadruped(
    spec: &Arc<QuadrupedSpec>,
    index: usize,
    mode: EnvMode,
) -> Result<QuadrupedEnv> {
    let field = Arc::new(spec.terrain_for(index)?);
    Ok(QuadrupedEnv::new(spec.clone(), field, mode))
}
