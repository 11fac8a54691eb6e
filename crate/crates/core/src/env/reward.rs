//! The fourteen-term locomotion reward.
//!
//! Every term is stored unweighted and weighted (`weight * dt * value`).
//! Penalty terms are stored as non-negative magnitudes and carry negative
//! weights, so every weighted penalty is <= 0.

use crate::model::{NominalPose, RewardConfig, NUM_JOINTS, NUM_LEGS};
use crate::physics::{ContactReport, JointTorques, SimState};

pub const NUM_TERMS: usize = 14;

pub const TERM_NAMES: [&str; NUM_TERMS] = [
    "lin_vel_xy",
    "lin_vel_z",
    "ang_vel_xy",
    "ang_vel_z",
    "orientation",
    "torque",
    "joint_accel",
    "base_height",
    "air_time",
    "knee_collision",
    "action_rate",
    "foot_contact",
    "gait",
    "hip",
];

/// Index of the linear velocity tracking term.
pub const TRACKING_TERM: usize = 0;

/// Diagonal joint pairs: (FL thigh, RR thigh), (FL calf, RR calf),
/// (FR thigh, RL thigh), (FR calf, RL calf).
pub const GAIT_PAIRS: [(usize, usize); 4] = [(1, 10), (2, 11), (4, 7), (5, 8)];
pub const HIP_JOINTS: [usize; NUM_LEGS] = [0, 3, 6, 9];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RewardBreakdown {
    pub unweighted: [f64; NUM_TERMS],
    pub weighted: [f64; NUM_TERMS],
    pub total: f64,
}

/// Everything one reward evaluation reads.
pub struct RewardInputs<'a> {
    pub prev: &'a SimState,
    pub next: &'a SimState,
    pub torques: &'a JointTorques,
    pub action: &'a [f64; NUM_JOINTS],
    pub last_action: &'a [f64; NUM_JOINTS],
    pub command: [f64; 3],
    pub contacts: &'a ContactReport,
    /// Terrain height under the base after the step.
    pub ground_height: f64,
}

fn sq(x: f64) -> f64 {
    x * x
}

pub fn compute_reward(
    inp: &RewardInputs<'_>,
    cfg: &RewardConfig,
    nominal: &NominalPose,
    dt: f64,
) -> RewardBreakdown {
    let next = inp.next;
    let v = next.base_lin_vel_body();
    let w = next.base_ang_vel;
    let g = next.projected_gravity();
    let sigma = cfg.tracking_sigma;

    let mut u = [0.0; NUM_TERMS];
    u[0] = (-(sq(inp.command[0] - v.x) + sq(inp.command[1] - v.y)) / sigma).exp();
    u[1] = sq(v.z);
    u[2] = sq(w.x) + sq(w.y);
    u[3] = (-sq(inp.command[2] - w.z) / sigma).exp();
    u[4] = sq(g.x) + sq(g.y);
    u[5] = inp.torques.0.iter().map(|t| t * t).sum();
    u[6] = inp
        .prev
        .qd
        .iter()
        .zip(&next.qd)
        .map(|(a, b)| sq(a - b))
        .sum();
    u[7] = sq(cfg.base_height_target - (next.base_pos.z - inp.ground_height));
    u[8] = (0..NUM_LEGS)
        .filter(|&i| next.foot_contact[i] && !inp.prev.foot_contact[i])
        .map(|i| inp.prev.swing_time[i] + dt - cfg.air_time_target)
        .sum();
    u[9] = inp.contacts.knee_contact.iter().filter(|&&c| c).count() as f64;
    u[10] = inp
        .last_action
        .iter()
        .zip(inp.action)
        .map(|(a, b)| sq(a - b))
        .sum();
    u[11] = next.foot_contact.iter().filter(|&&c| !c).count() as f64;
    u[12] = GAIT_PAIRS
        .iter()
        .map(|&(a, b)| (next.q[a] - next.q[b]).abs())
        .sum();
    let targets = nominal.hip_targets();
    u[13] = HIP_JOINTS
        .iter()
        .zip(targets)
        .map(|(&h, t)| (t - next.q[h]).abs())
        .sum();

    let weights = cfg.weights();
    let mut weighted = [0.0; NUM_TERMS];
    for i in 0..NUM_TERMS {
        weighted[i] = weights[i] * dt * u[i];
    }
    RewardBreakdown {
        unweighted: u,
        weighted,
        total: weighted.iter().sum(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::RobotModel;
    use crate::physics::rest_state;
    use nalgebra::Vector3;

    #[test]
    fn nominal_pose_gait_residual() {
        let pose = RobotModel::default().nominal_pose;
        let st = rest_state(Vector3::zeros(), pose.joint_positions());
        let r = compute_reward(
            &RewardInputs {
                prev: &st,
                next: &st,
                torques: &JointTorques::zero(),
                action: &[0.0; 12],
                last_action: &[0.0; 12],
                command: [0.0; 3],
                contacts: &ContactReport::default(),
                ground_height: 0.0,
            },
            &RewardConfig::default(),
            &pose,
            0.002,
        );
        assert!((r.unweighted[12] - 0.4).abs() < 1e-12);
        assert_eq!(r.unweighted[13], 0.0);
        assert_eq!(r.unweighted[0], 1.0);
    }
}
