//! Proximal policy optimization.

pub mod gae;
pub mod norm;
pub mod policy;
pub mod rollout;
pub mod update;

pub use gae::{compute_gae, normalize_advantages};
pub use norm::RunningNorm;
pub use policy::ActorCritic;
pub use rollout::{action_streams, collect_rollout, ActionMode, RolloutBuffer};
pub use update::{ppo_update, surrogate_active, Optimizer, TrainBatch, UpdateStats};

use crate::model::PpoConfig;

/// Divides the rate by `lr_factor` when KL exceeds `kl_high * desired_kl`,
/// multiplies it when KL is below `kl_low * desired_kl`, and clamps to the
/// configured bounds.
pub fn adapt_learning_rate(lr: f64, kl: f64, cfg: &PpoConfig) -> f64 {
    let next = if kl > cfg.kl_high * cfg.desired_kl {
        lr / cfg.lr_factor
    } else if kl < cfg.kl_low * cfg.desired_kl {
        lr * cfg.lr_factor
    } else {
        lr
    };
    next.clamp(cfg.lr_min, cfg.lr_max)
}
