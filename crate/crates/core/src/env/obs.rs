//! The 48-element policy observation.
//!
//! | index  | block                      | scale            |
//! |--------|----------------------------|------------------|
//! | 0..3   | base linear velocity, body | 2.0              |
//! | 3..6   | base angular velocity, body| 0.25             |
//! | 6..9   | projected gravity          | 1.0              |
//! | 9..21  | joint positions            | 1.0              |
//! | 21..33 | joint velocities           | 0.05             |
//! | 33..36 | command (vx, vy, wz)       | (2.0, 2.0, 0.25) |
//! | 36..48 | last raw action            | 1.0              |
//!
//! Noise is drawn in physical units and added before scaling. The command and
//! last-action blocks are never perturbed.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::model::{ObsNoise, ObsScales, NUM_JOINTS};
use crate::physics::SimState;

pub const OBS_DIM: usize = 48;
pub const LIN_VEL: std::ops::Range<usize> = 0..3;
pub const ANG_VEL: std::ops::Range<usize> = 3..6;
pub const GRAVITY: std::ops::Range<usize> = 6..9;
pub const JOINT_POS: std::ops::Range<usize> = 9..21;
pub const JOINT_VEL: std::ops::Range<usize> = 21..33;
pub const COMMAND: std::ops::Range<usize> = 33..36;
pub const LAST_ACTION: std::ops::Range<usize> = 36..48;

/// Scaled (and possibly noisy) observation plus the clean physical values it
/// was built from.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub values: [f64; OBS_DIM],
    pub raw: [f64; OBS_DIM],
}

/// Noise settings for one observation; `None` means noise-free.
pub struct NoiseSpec<'a, R: Rng> {
    pub variances: &'a ObsNoise,
    pub multiplier: f64,
    pub rng: &'a mut R,
}

pub fn raw_observation(
    state: &SimState,
    command: [f64; 3],
    last_action: &[f64; NUM_JOINTS],
) -> [f64; OBS_DIM] {
    let mut raw = [0.0; OBS_DIM];
    raw[LIN_VEL].copy_from_slice(state.base_lin_vel_body().as_slice());
    raw[ANG_VEL].copy_from_slice(state.base_ang_vel.as_slice());
    raw[GRAVITY].copy_from_slice(state.projected_gravity().as_slice());
    raw[JOINT_POS].copy_from_slice(&state.q);
    raw[JOINT_VEL].copy_from_slice(&state.qd);
    raw[COMMAND].copy_from_slice(&command);
    raw[LAST_ACTION].copy_from_slice(last_action);
    raw
}

pub fn build_observation<R: Rng>(
    state: &SimState,
    command: [f64; 3],
    last_action: &[f64; NUM_JOINTS],
    scales: &ObsScales,
    noise: Option<NoiseSpec<'_, R>>,
) -> Observation {
    let raw = raw_observation(state, command, last_action);
    let mut values = raw;
    if let Some(spec) = noise {
        let v = spec.variances;
        for (range, var) in [
            (LIN_VEL, v.lin_vel),
            (ANG_VEL, v.ang_vel),
            (GRAVITY, v.gravity),
            (JOINT_POS, v.joint_pos),
            (JOINT_VEL, v.joint_vel),
        ] {
            let std = (var * spec.multiplier).sqrt();
            for x in &mut values[range] {
                let z: f64 = spec.rng.sample(StandardNormal);
                *x += std * z;
            }
        }
    }
    for (range, s) in [
        (LIN_VEL, scales.lin_vel),
        (ANG_VEL, scales.ang_vel),
        (GRAVITY, scales.gravity),
        (JOINT_POS, scales.joint_pos),
        (JOINT_VEL, scales.joint_vel),
        (LAST_ACTION, scales.last_action),
    ] {
        values[range].iter_mut().for_each(|x| *x *= s);
    }
    for (x, s) in values[COMMAND].iter_mut().zip(scales.command) {
        *x *= s;
    }
    Observation { values, raw }
}
