//! Robot description and experiment configuration.
//!
//! Everything the simulator, environment and trainer need is loaded from a
//! single TOML experiment file. Omitted sections and keys fall back to the
//! defaults below, unknown keys are rejected, and the fully resolved
//! configuration can be echoed back to disk so a run is reproducible from its
//! output directory alone.

use std::fs;
use std::path::Path;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Number of actuated joints.
pub const NUM_JOINTS: usize = 12;
/// Number of legs (and feet, and knees).
pub const NUM_LEGS: usize = 4;
/// Canonical leg order. Joint `3 * leg + k` is hip (k = 0), thigh (1), calf (2).
pub const LEG_NAMES: [&str; NUM_LEGS] = ["FL", "FR", "RL", "RR"];

/// File name of the resolved configuration written beside run outputs.
pub const EFFECTIVE_CONFIG_FILE: &str = "effective_config.toml";

const DEFAULT_ROBOT: &str = include_str!("../configs/robot_a1.toml");

// ------------------------------------------------------------------ robot

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Link {
    pub name: String,
    pub mass: f64,
    /// Center of mass in the link frame (m).
    pub com: [f64; 3],
    /// Rotational inertia about the center of mass, link frame (kg·m²).
    pub inertia: [[f64; 3]; 3],
}

impl Link {
    pub fn com_vector(&self) -> Vector3<f64> {
        Vector3::from(self.com)
    }

    pub fn inertia_matrix(&self) -> Matrix3<f64> {
        Matrix3::from_fn(|r, c| self.inertia[r][c])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Joint {
    pub name: String,
    pub parent: String,
    pub child: String,
    /// Joint frame origin in the parent link frame (m).
    pub origin: [f64; 3],
    pub axis: [f64; 3],
    /// Position limits (rad).
    pub limits: [f64; 2],
    /// rad/s
    pub velocity_limit: f64,
    /// N·m
    pub torque_limit: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContactSphere {
    pub link: String,
    /// Sphere center in the link frame (m).
    pub offset: [f64; 3],
    pub radius: f64,
}

/// The nominal standing configuration, one value per joint group.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NominalPose {
    pub left_hips: f64,
    pub right_hips: f64,
    pub front_thighs: f64,
    pub rear_thighs: f64,
    pub calves: f64,
}

impl NominalPose {
    /// Expands the grouped values into the canonical 12-joint order.
    pub fn joint_positions(&self) -> [f64; NUM_JOINTS] {
        let mut q = [0.0; NUM_JOINTS];
        for (leg, name) in LEG_NAMES.iter().enumerate() {
            let left = name.ends_with('L');
            let front = name.starts_with('F');
            q[3 * leg] = if left {
                self.left_hips
            } else {
                self.right_hips
            };
            q[3 * leg + 1] = if front {
                self.front_thighs
            } else {
                self.rear_thighs
            };
            q[3 * leg + 2] = self.calves;
        }
        q
    }

    pub fn hip_targets(&self) -> [f64; NUM_LEGS] {
        let q = self.joint_positions();
        [q[0], q[3], q[6], q[9]]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RobotModel {
    pub base_link: String,
    pub nominal_pose: NominalPose,
    pub links: Vec<Link>,
    pub joints: Vec<Joint>,
    pub feet: Vec<ContactSphere>,
    pub knees: Vec<ContactSphere>,
}

impl Default for RobotModel {
    fn default() -> Self {
        toml::from_str(DEFAULT_ROBOT).expect("bundled robot description parses")
    }
}

impl RobotModel {
    pub fn link_index(&self, name: &str) -> Option<usize> {
        self.links.iter().position(|l| l.name == name)
    }

    pub fn total_mass(&self) -> f64 {
        self.links.iter().map(|l| l.mass).sum()
    }

    pub fn validate(&self) -> Result<()> {
        if self.joints.len() != NUM_JOINTS {
            return Err(Error::validation(
                "robot.joints",
                format!(
                    "expected {NUM_JOINTS} actuated joints, found {}",
                    self.joints.len()
                ),
            ));
        }
        if self.feet.len() != NUM_LEGS {
            return Err(Error::validation(
                "robot.feet",
                format!("expected {NUM_LEGS} feet, found {}", self.feet.len()),
            ));
        }
        if self.knees.len() != NUM_LEGS {
            return Err(Error::validation(
                "robot.knees",
                format!(
                    "expected {NUM_LEGS} knee spheres, found {}",
                    self.knees.len()
                ),
            ));
        }
        if self.link_index(&self.base_link).is_none() {
            return Err(Error::validation(
                "robot.base_link",
                format!("unknown link `{}`", self.base_link),
            ));
        }
        for (i, link) in self.links.iter().enumerate() {
            let key = format!("robot.links[{i}]");
            if !(link.mass > 0.0) || !link.mass.is_finite() {
                return Err(Error::validation(
                    format!("{key}.mass"),
                    format!("mass of `{}` must be positive", link.name),
                ));
            }
            let inertia = link.inertia_matrix();
            if (inertia - inertia.transpose()).abs().max() > 1e-12 {
                return Err(Error::validation(
                    format!("{key}.inertia"),
                    format!("inertia of `{}` is not symmetric", link.name),
                ));
            }
            if inertia.cholesky().is_none() {
                return Err(Error::validation(
                    format!("{key}.inertia"),
                    format!("inertia of `{}` is not positive definite", link.name),
                ));
            }
        }
        for (i, joint) in self.joints.iter().enumerate() {
            let key = format!("robot.joints[{i}]");
            let leg = i / 3;
            if !joint.name.starts_with(LEG_NAMES[leg]) {
                return Err(Error::validation(
                    format!("{key}.name"),
                    format!(
                        "joint `{}` out of order: expected a {} joint",
                        joint.name, LEG_NAMES[leg]
                    ),
                ));
            }
            let expected_parent = if i % 3 == 0 {
                self.base_link.clone()
            } else {
                self.joints[i - 1].child.clone()
            };
            if joint.parent != expected_parent {
                return Err(Error::validation(
                    format!("{key}.parent"),
                    format!(
                        "joint `{}` must hang from `{expected_parent}`, found `{}`",
                        joint.name, joint.parent
                    ),
                ));
            }
            if self.link_index(&joint.child).is_none() {
                return Err(Error::validation(
                    format!("{key}.child"),
                    format!("unknown link `{}`", joint.child),
                ));
            }
            let axis = Vector3::from(joint.axis);
            if (axis.norm() - 1.0).abs() > 1e-9 {
                return Err(Error::validation(
                    format!("{key}.axis"),
                    "joint axis must be a unit vector",
                ));
            }
            if !(joint.limits[0] < joint.limits[1]) {
                return Err(Error::validation(
                    format!("{key}.limits"),
                    "lower limit must be below upper limit",
                ));
            }
            if joint.torque_limit != 30.0 {
                return Err(Error::validation(
                    format!("{key}.torque_limit"),
                    format!("torque limit must be 30 N·m, found {}", joint.torque_limit),
                ));
            }
            if !(joint.velocity_limit > 0.0) {
                return Err(Error::validation(
                    format!("{key}.velocity_limit"),
                    "velocity limit must be positive",
                ));
            }
        }
        for (group, spheres) in [("feet", &self.feet), ("knees", &self.knees)] {
            for (i, s) in spheres.iter().enumerate() {
                let key = format!("robot.{group}[{i}]");
                if self.link_index(&s.link).is_none() {
                    return Err(Error::validation(
                        format!("{key}.link"),
                        format!("unknown link `{}`", s.link),
                    ));
                }
                if !(s.radius >= 0.0) {
                    return Err(Error::validation(
                        format!("{key}.radius"),
                        "radius must be non-negative",
                    ));
                }
            }
        }
        Ok(())
    }
}

// -------------------------------------------------------------- simulation

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Integrator {
    /// Velocities first, then positions with the updated velocities.
    #[default]
    SemiImplicitEuler,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    /// Control period (s); the simulator and policy run at 1/dt.
    pub dt: f64,
    /// Magnitude of gravity along -z (m/s²).
    pub gravity: f64,
    /// Physics substeps per control step.
    pub substeps: u32,
    /// Penalty spring (N/m). Tunable; the default keeps a standing robot
    /// under 2 mm of penetration.
    pub contact_stiffness: f64,
    /// Penalty damper (N·s/m). Tunable. A penetrating sphere can carry zero
    /// normal force while it separates faster than
    /// `k * pen / (contact_damping + k * dt / substeps)`; that is the tolerance
    /// band of the penalty model. A sphere above the terrain never carries
    /// force.
    pub contact_damping: f64,
    /// Tangential slip speed below which friction is viscous (m/s).
    pub friction_slip_velocity: f64,
    /// Viscous joint friction (N·m·s/rad).
    pub joint_damping: f64,
    /// Restoring stiffness applied beyond joint position limits (N·m/rad).
    pub limit_stiffness: f64,
    /// Damping applied beyond joint position limits (N·m·s/rad).
    pub limit_damping: f64,
    pub integrator: Integrator,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            dt: 0.002,
            gravity: 9.81,
            substeps: 1,
            contact_stiffness: 20_000.0,
            contact_damping: 120.0,
            friction_slip_velocity: 0.05,
            joint_damping: 0.01,
            limit_stiffness: 100.0,
            limit_damping: 1.0,
            integrator: Integrator::SemiImplicitEuler,
        }
    }
}

impl SimConfig {
    pub fn control_frequency(&self) -> f64 {
        1.0 / self.dt
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(Error::validation("sim.dt", "dt must be positive"));
        }
        if self.substeps == 0 {
            return Err(Error::validation(
                "sim.substeps",
                "need at least one substep",
            ));
        }
        for (key, v) in [
            ("sim.contact_stiffness", self.contact_stiffness),
            ("sim.contact_damping", self.contact_damping),
            ("sim.joint_damping", self.joint_damping),
            ("sim.limit_stiffness", self.limit_stiffness),
            ("sim.limit_damping", self.limit_damping),
            ("sim.gravity", self.gravity),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::validation(key, "must be finite and non-negative"));
            }
        }
        if !(self.friction_slip_velocity > 0.0) {
            return Err(Error::validation(
                "sim.friction_slip_velocity",
                "must be positive",
            ));
        }
        Ok(())
    }
}

// ----------------------------------------------------------------- terrain

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TerrainConfig {
    pub min_height: f64,
    pub max_height: f64,
    pub step: f64,
    pub downsample_scale: f64,
    /// Size of the field in x and y (m), centered on the origin.
    pub extent: [f64; 2],
    pub seed: u64,
    /// Give every environment its own field (seed + env index).
    pub per_env: bool,
}

impl Default for TerrainConfig {
    fn default() -> Self {
        Self {
            min_height: -0.075,
            max_height: 0.025,
            step: 0.01,
            downsample_scale: 0.2,
            extent: [16.0, 16.0],
            seed: 0,
            per_env: true,
        }
    }
}

impl TerrainConfig {
    pub fn flat() -> Self {
        Self {
            min_height: 0.0,
            max_height: 0.0,
            ..Self::default()
        }
    }

    /// Number of quantized height levels.
    pub fn levels(&self) -> usize {
        ((self.max_height - self.min_height) / self.step).round() as usize + 1
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.min_height <= self.max_height) {
            return Err(Error::validation(
                "terrain.min_height",
                "min_height must not exceed max_height",
            ));
        }
        if !(self.step > 0.0) {
            return Err(Error::validation("terrain.step", "step must be positive"));
        }
        if !(self.downsample_scale > 0.0) {
            return Err(Error::validation(
                "terrain.downsample_scale",
                "downsample_scale must be positive",
            ));
        }
        let span = (self.max_height - self.min_height) / self.step;
        if (span - span.round()).abs() > 1e-6 {
            return Err(Error::validation(
                "terrain.step",
                "height range must be an integer number of steps",
            ));
        }
        Ok(())
    }
}

// --------------------------------------------------------------------- env

/// Multipliers applied to each observation block (after noise).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ObsScales {
    pub lin_vel: f64,
    pub ang_vel: f64,
    pub gravity: f64,
    pub joint_pos: f64,
    pub joint_vel: f64,
    pub command: [f64; 3],
    pub last_action: f64,
}

impl Default for ObsScales {
    fn default() -> Self {
        Self {
            lin_vel: 2.0,
            ang_vel: 0.25,
            gravity: 1.0,
            joint_pos: 1.0,
            joint_vel: 0.05,
            command: [2.0, 2.0, 0.25],
            last_action: 1.0,
        }
    }
}

/// Gaussian noise variances in physical units. Command and last action are
/// never perturbed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ObsNoise {
    pub lin_vel: f64,
    pub ang_vel: f64,
    pub gravity: f64,
    pub joint_pos: f64,
    pub joint_vel: f64,
}

impl Default for ObsNoise {
    fn default() -> Self {
        Self {
            lin_vel: 0.01,
            ang_vel: 0.0001,
            gravity: 0.00002,
            joint_pos: 0.0005,
            joint_vel: 0.01,
        }
    }
}

/// Reward weights, expressed as multiples of the control period.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardConfig {
    pub lin_vel_xy: f64,
    pub lin_vel_z: f64,
    pub ang_vel_xy: f64,
    pub ang_vel_z: f64,
    pub orientation: f64,
    pub torque: f64,
    pub joint_accel: f64,
    pub base_height: f64,
    pub air_time: f64,
    pub knee_collision: f64,
    pub action_rate: f64,
    pub foot_contact: f64,
    pub gait: f64,
    pub hip: f64,
    /// Denominator of the exponential tracking kernels.
    pub tracking_sigma: f64,
    /// Swing duration that earns zero air-time reward (s).
    pub air_time_target: f64,
    /// Target base height above local terrain (m).
    pub base_height_target: f64,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self {
            lin_vel_xy: 1.1,
            lin_vel_z: -4.0,
            ang_vel_xy: -0.05,
            ang_vel_z: 1.0,
            orientation: -2.4,
            torque: -0.00002,
            joint_accel: -0.0005,
            base_height: -5.0,
            air_time: 0.3,
            knee_collision: -0.25,
            action_rate: -0.01,
            foot_contact: -0.05,
            gait: -0.1,
            hip: -0.25,
            tracking_sigma: 0.25,
            air_time_target: 0.5,
            base_height_target: 0.30,
        }
    }
}

impl RewardConfig {
    /// Weights in canonical term order.
    pub fn weights(&self) -> [f64; 14] {
        [
            self.lin_vel_xy,
            self.lin_vel_z,
            self.ang_vel_xy,
            self.ang_vel_z,
            self.orientation,
            self.torque,
            self.joint_accel,
            self.base_height,
            self.air_time,
            self.knee_collision,
            self.action_rate,
            self.foot_contact,
            self.gait,
            self.hip,
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CommandConfig {
    pub vx: [f64; 2],
    pub vy: [f64; 2],
    pub wz: [f64; 2],
    /// Resample the command every this many seconds; 0 keeps one command
    /// per episode.
    pub resample_interval_s: f64,
}

impl Default for CommandConfig {
    fn default() -> Self {
        Self {
            vx: [-1.0, 1.0],
            vy: [-1.0, 1.0],
            #[allow(clippy::approx_constant)]
            wz: [-3.14, 3.14],
            resample_interval_s: 0.0,
        }
    }
}

impl CommandConfig {
    pub fn clamp(&self, cmd: [f64; 3]) -> [f64; 3] {
        [
            cmd[0].clamp(self.vx[0], self.vx[1]),
            cmd[1].clamp(self.vy[0], self.vy[1]),
            cmd[2].clamp(self.wz[0], self.wz[1]),
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvConfig {
    /// Episode horizon in control steps.
    pub horizon_steps: u64,
    pub action_scale: f64,
    /// Symmetric clamp on commanded torques (N·m).
    pub torque_clamp: f64,
    /// Multiplier on the observation noise variances during training.
    pub noise_multiplier: f64,
    /// Observation staleness during training, in control steps.
    pub latency_steps: usize,
    /// 0 disables pushes.
    pub push_interval_s: f64,
    pub push_velocity: [f64; 2],
    pub friction_range: [f64; 2],
    /// Uniform half-width of the joint randomization around the nominal pose.
    pub init_joint_noise: f64,
    /// Gap between the lowest foot and the terrain at spawn (m).
    pub spawn_clearance: f64,
    /// Terminate when the base drops below this height above terrain (m).
    pub min_base_height: f64,
    /// Terminate when body z deviates from world z by more than this (rad).
    pub max_tilt: f64,
    pub commands: CommandConfig,
    pub obs_scales: ObsScales,
    pub obs_noise: ObsNoise,
    pub reward: RewardConfig,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            horizon_steps: 10_000,
            action_scale: 9.0,
            torque_clamp: 30.0,
            noise_multiplier: 1.25,
            latency_steps: 1,
            push_interval_s: 15.0,
            push_velocity: [-1.0, 1.0],
            friction_range: [0.5, 1.25],
            init_joint_noise: 0.05,
            spawn_clearance: 0.005,
            min_base_height: 0.15,
            max_tilt: 1.0,
            commands: CommandConfig::default(),
            obs_scales: ObsScales::default(),
            obs_noise: ObsNoise::default(),
            reward: RewardConfig::default(),
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<()> {
        if self.horizon_steps < 1 {
            return Err(Error::validation(
                "env.horizon_steps",
                "horizon must be >= 1",
            ));
        }
        if !(self.action_scale > 0.0) {
            return Err(Error::validation("env.action_scale", "must be positive"));
        }
        if !(self.torque_clamp > 0.0) {
            return Err(Error::validation("env.torque_clamp", "must be positive"));
        }
        if !(self.noise_multiplier >= 0.0) {
            return Err(Error::validation(
                "env.noise_multiplier",
                "must be non-negative",
            ));
        }
        if !(self.push_interval_s >= 0.0) {
            return Err(Error::validation(
                "env.push_interval_s",
                "must be non-negative",
            ));
        }
        for (key, r) in [
            ("env.push_velocity", self.push_velocity),
            ("env.friction_range", self.friction_range),
            ("env.commands.vx", self.commands.vx),
            ("env.commands.vy", self.commands.vy),
            ("env.commands.wz", self.commands.wz),
        ] {
            if !(r[0] <= r[1]) {
                return Err(Error::validation(key, "range must be non-empty (lo <= hi)"));
            }
        }
        if !(self.friction_range[0] >= 0.0) {
            return Err(Error::validation(
                "env.friction_range",
                "friction must be non-negative",
            ));
        }
        if !(self.init_joint_noise >= 0.0) {
            return Err(Error::validation(
                "env.init_joint_noise",
                "must be non-negative",
            ));
        }
        if !(self.reward.tracking_sigma > 0.0) {
            return Err(Error::validation(
                "env.reward.tracking_sigma",
                "must be positive",
            ));
        }
        let r = &self.reward;
        for (key, w) in [("lin_vel_xy", r.lin_vel_xy), ("ang_vel_z", r.ang_vel_z)] {
            if w < 0.0 {
                return Err(Error::validation(
                    format!("env.reward.{key}"),
                    "tracking weights must be non-negative",
                ));
            }
        }
        for (key, w) in [
            ("lin_vel_z", r.lin_vel_z),
            ("ang_vel_xy", r.ang_vel_xy),
            ("orientation", r.orientation),
            ("torque", r.torque),
            ("joint_accel", r.joint_accel),
            ("base_height", r.base_height),
            ("knee_collision", r.knee_collision),
            ("action_rate", r.action_rate),
            ("foot_contact", r.foot_contact),
            ("gait", r.gait),
            ("hip", r.hip),
        ] {
            if w > 0.0 {
                return Err(Error::validation(
                    format!("env.reward.{key}"),
                    "penalty weights must be non-positive",
                ));
            }
        }
        Ok(())
    }
}

// --------------------------------------------------------------------- ppo

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PpoConfig {
    pub n_envs: usize,
    pub steps_per_env: usize,
    pub num_minibatches: usize,
    pub epochs: usize,
    pub clip: f64,
    pub entropy_coef: f64,
    pub value_coef: f64,
    pub gamma: f64,
    pub lambda: f64,
    pub desired_kl: f64,
    pub learning_rate: f64,
    pub lr_min: f64,
    pub lr_max: f64,
    /// Shrink the learning rate when KL exceeds `kl_high * desired_kl`.
    pub kl_high: f64,
    /// Grow the learning rate when KL falls below `kl_low * desired_kl`.
    pub kl_low: f64,
    pub lr_factor: f64,
    pub max_grad_norm: f64,
    pub normalize_advantages: bool,
    /// Normalized observations are clipped to +/- this value.
    pub obs_clip: f64,
    pub iterations: usize,
    pub checkpoint_interval: usize,
    pub seed: u64,
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self {
            n_envs: 256,
            steps_per_env: 24,
            num_minibatches: 6,
            epochs: 5,
            clip: 0.2,
            entropy_coef: 0.001,
            value_coef: 1.0,
            gamma: 0.99,
            lambda: 0.95,
            desired_kl: 0.008,
            learning_rate: 1e-3,
            lr_min: 1e-6,
            lr_max: 1e-2,
            kl_high: 2.0,
            kl_low: 0.5,
            lr_factor: 1.5,
            max_grad_norm: 1.0,
            normalize_advantages: true,
            obs_clip: 5.0,
            iterations: 300,
            checkpoint_interval: 50,
            seed: 1,
        }
    }
}

impl PpoConfig {
    pub fn batch_size(&self) -> usize {
        self.n_envs * self.steps_per_env
    }

    pub fn minibatch_size(&self) -> usize {
        self.batch_size() / self.num_minibatches.max(1)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_envs == 0 || self.steps_per_env == 0 {
            return Err(Error::validation("ppo.n_envs", "batch must be non-empty"));
        }
        if self.num_minibatches == 0 || !self.batch_size().is_multiple_of(self.num_minibatches) {
            return Err(Error::validation(
                "ppo.num_minibatches",
                format!(
                    "minibatch count {} must divide the batch of {}",
                    self.num_minibatches,
                    self.batch_size()
                ),
            ));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(Error::validation("ppo.gamma", "need 0 < gamma <= 1"));
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::validation("ppo.lambda", "need 0 <= lambda <= 1"));
        }
        if !(self.clip > 0.0) {
            return Err(Error::validation("ppo.clip", "clip must be positive"));
        }
        if !(self.lr_min > 0.0 && self.lr_min <= self.lr_max) {
            return Err(Error::validation("ppo.lr_min", "need 0 < lr_min <= lr_max"));
        }
        if !(self.learning_rate >= self.lr_min && self.learning_rate <= self.lr_max) {
            return Err(Error::validation(
                "ppo.learning_rate",
                "initial learning rate must lie within [lr_min, lr_max]",
            ));
        }
        if !(self.lr_factor >= 1.0) {
            return Err(Error::validation("ppo.lr_factor", "must be >= 1"));
        }
        if self.epochs == 0 {
            return Err(Error::validation("ppo.epochs", "need at least one epoch"));
        }
        Ok(())
    }
}

// ------------------------------------------------------------------ policy

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PolicyConfig {
    pub hidden: Vec<usize>,
    /// Initial (and, unless trained, permanent) log standard deviation.
    pub init_log_std: f64,
    pub train_log_std: bool,
    /// Scale applied to the initial weights of the policy output layer.
    pub output_gain: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        Self {
            hidden: vec![512, 256, 128],
            init_log_std: 0.0,
            train_log_std: false,
            output_gain: 0.01,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
        }
    }
}

// -------------------------------------------------------------- validation

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ValidationConfig {
    pub episode_steps: u64,
    /// Minimum tracking-reward retention (B / A) to pass.
    pub min_tracking_retention: f64,
    /// Maximum allowed increase in fall rate from A to B.
    pub max_fall_rate_increase: f64,
}

impl Default for ValidationConfig {
    fn default() -> Self {
        Self {
            episode_steps: 2500,
            min_tracking_retention: 0.8,
            max_fall_rate_increase: 0.1,
        }
    }
}

// ---------------------------------------------------------------- pendulum

/// Which environment a run trains on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    #[default]
    Quadruped,
    Pendulum,
}

/// Torque-limited pendulum swing-up used as a trainer sanity task. The angle
/// is measured from upright.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PendulumConfig {
    pub mass: f64,
    pub length: f64,
    /// Rotational inertia about the center of mass (kg·m²).
    pub inertia: f64,
    pub action_scale: f64,
    pub max_torque: f64,
    pub horizon_steps: u64,
    /// Uniform half-width of the initial angle around hanging (rad).
    pub init_angle: f64,
    /// Uniform half-width of the initial angular velocity (rad/s).
    pub init_velocity: f64,
    /// Weight of the squared angular velocity in the reward's decay (s²).
    pub velocity_weight: f64,
    /// Episodes end as a fall above this angular speed (rad/s); 0 disables.
    pub max_velocity: f64,
}

impl Default for PendulumConfig {
    fn default() -> Self {
        Self {
            mass: 1.0,
            length: 0.5,
            inertia: 0.002,
            action_scale: 3.0,
            max_torque: 6.0,
            horizon_steps: 400,
            init_angle: 0.3,
            init_velocity: 0.5,
            velocity_weight: 0.01,
            max_velocity: 15.0,
        }
    }
}

impl PendulumConfig {
    pub fn validate(&self) -> Result<()> {
        for (key, v) in [
            ("pendulum.mass", self.mass),
            ("pendulum.length", self.length),
            ("pendulum.inertia", self.inertia),
            ("pendulum.action_scale", self.action_scale),
            ("pendulum.max_torque", self.max_torque),
        ] {
            if !(v > 0.0) {
                return Err(Error::validation(key, "must be positive"));
            }
        }
        if !(self.max_velocity >= 0.0) {
            return Err(Error::validation(
                "pendulum.max_velocity",
                "must be non-negative",
            ));
        }
        if !(self.velocity_weight >= 0.0) {
            return Err(Error::validation(
                "pendulum.velocity_weight",
                "must be non-negative",
            ));
        }
        if self.horizon_steps < 1 {
            return Err(Error::validation(
                "pendulum.horizon_steps",
                "horizon must be >= 1",
            ));
        }
        Ok(())
    }
}

// -------------------------------------------------------------- experiment

/// The fully resolved experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub task: Task,
    pub sim: SimConfig,
    pub terrain: TerrainConfig,
    pub env: EnvConfig,
    pub ppo: PpoConfig,
    pub policy: PolicyConfig,
    pub validation: ValidationConfig,
    pub pendulum: PendulumConfig,
    pub robot: RobotModel,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.robot.validate()?;
        self.sim.validate()?;
        self.terrain.validate()?;
        self.env.validate()?;
        self.ppo.validate()?;
        self.pendulum.validate()?;
        if self.env.torque_clamp > 30.0 {
            return Err(Error::validation(
                "env.torque_clamp",
                "clamp may not exceed the joint torque limit",
            ));
        }
        if self.policy.hidden.is_empty() {
            return Err(Error::validation(
                "policy.hidden",
                "need at least one hidden layer",
            ));
        }
        Ok(())
    }

    pub fn nominal_pose(&self) -> NominalPose {
        self.robot.nominal_pose
    }

    pub fn from_toml_str(text: &str, origin: &Path) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Parse {
            path: origin.to_path_buf(),
            message: e.to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }

    /// SHA-256 of the serialized effective configuration. Run-length
    /// settings (`ppo.iterations`, `ppo.checkpoint_interval`) are excluded so
    /// that extending a run keeps its checkpoints compatible.
    pub fn fingerprint(&self) -> [u8; 32] {
        let mut c = self.clone();
        c.ppo.iterations = 0;
        c.ppo.checkpoint_interval = 0;
        let mut hasher = Sha256::new();
        hasher.update(c.to_toml_string().as_bytes());
        hasher.finalize().into()
    }

    /// Writes the effective configuration into `dir` and returns its path.
    pub fn write_effective(&self, dir: &Path) -> Result<std::path::PathBuf> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(EFFECTIVE_CONFIG_FILE);
        let body = format!(
            "# Effective configuration (defaults filled in).\n{}",
            self.to_toml_string()
        );
        fs::write(&path, body).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }
}

/// Loads, defaults and validates an experiment file.
pub fn load_experiment(path: impl AsRef<Path>) -> Result<ExperimentConfig> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    ExperimentConfig::from_toml_str(&text, path)
}
