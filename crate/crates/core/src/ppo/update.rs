//! Clipped-surrogate PPO update.

use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::Rng;

use super::adapt_learning_rate;
use super::policy::ActorCritic;
use crate::error::{Error, Result};
use crate::model::{PolicyConfig, PpoConfig};
use crate::nn::{gaussian_entropy, gaussian_log_prob, Adam};

/// Flattened training samples. Row `i` of `obs` pairs with
/// `actions[i*act_dim..]`, `old_means[i*act_dim..]` and the scalar entries.
#[derive(Debug, Clone)]
pub struct TrainBatch {
    pub obs: Array2<f32>,
    pub actions: Vec<f64>,
    pub old_means: Vec<f64>,
    pub old_log_std: Vec<f64>,
    pub old_log_probs: Vec<f64>,
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
    pub valid: Vec<bool>,
}

impl TrainBatch {
    pub fn len(&self) -> usize {
        self.obs.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct UpdateStats {
    pub kl: f64,
    pub clip_fraction: f64,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub lr: f64,
    pub minibatches: usize,
}

/// Adam state for both networks and the log-std vector.
#[derive(Debug, Clone)]
pub struct Optimizer {
    actor: Adam<f32>,
    critic: Adam<f32>,
    std_m: Vec<f64>,
    std_v: Vec<f64>,
    std_t: i32,
    cfg: PolicyConfig,
}

impl Optimizer {
    pub fn new(ac: &ActorCritic, cfg: &PolicyConfig) -> Self {
        let (b1, b2, eps) = (cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps);
        Self {
            actor: Adam::new(&ac.actor, b1, b2, eps),
            critic: Adam::new(&ac.critic, b1, b2, eps),
            std_m: vec![0.0; ac.log_std.len()],
            std_v: vec![0.0; ac.log_std.len()],
            std_t: 0,
            cfg: cfg.clone(),
        }
    }

    fn step_log_std(&mut self, log_std: &mut [f64], grad: &[f64], lr: f64) {
        let (b1, b2) = (self.cfg.adam_beta1, self.cfg.adam_beta2);
        self.std_t += 1;
        let c1 = 1.0 - b1.powi(self.std_t);
        let c2 = 1.0 - b2.powi(self.std_t);
        for i in 0..log_std.len() {
            self.std_m[i] = b1 * self.std_m[i] + (1.0 - b1) * grad[i];
            self.std_v[i] = b2 * self.std_v[i] + (1.0 - b2) * grad[i] * grad[i];
            let mhat = self.std_m[i] / c1;
            let vhat = self.std_v[i] / c2;
            log_std[i] -= lr * mhat / (vhat.sqrt() + self.cfg.adam_eps);
        }
    }
}

/// Derivative of `min(r A, clip(r) A)` with respect to `r`, divided by `A`:
/// 1 where the unclipped branch is strictly selected, 0 where the clipped
/// branch is active (including the boundary itself).
pub fn surrogate_active(ratio: f64, advantage: f64, clip: f64) -> bool {
    if advantage > 0.0 {
        ratio < 1.0 + clip
    } else if advantage < 0.0 {
        ratio > 1.0 - clip
    } else {
        false
    }
}

/// KL(old || new) between diagonal Gaussians.
fn gaussian_kl(mu_old: &[f64], ls_old: &[f64], mu_new: &[f64], ls_new: &[f64]) -> f64 {
    (0..mu_old.len())
        .map(|j| {
            let var_old = (2.0 * ls_old[j]).exp();
            let var_new = (2.0 * ls_new[j]).exp();
            let d = mu_old[j] - mu_new[j];
            ls_new[j] - ls_old[j] + (var_old + d * d) / (2.0 * var_new) - 0.5
        })
        .sum()
}

/// Runs `cfg.epochs` passes over shuffled minibatches. The learning rate is
/// adapted after every epoch from the mean minibatch KL between the rollout
/// policy and the current one. On any non-finite loss or gradient every parameter,
/// optimizer moment and the learning rate are restored and an error is
/// returned.
pub fn ppo_update<R: Rng>(
    ac: &mut ActorCritic,
    opt: &mut Optimizer,
    batch: &TrainBatch,
    cfg: &PpoConfig,
    train_log_std: bool,
    lr: &mut f64,
    rng: &mut R,
) -> Result<UpdateStats> {
    let snapshot = (ac.clone(), opt.clone(), *lr);
    match run_epochs(ac, opt, batch, cfg, train_log_std, lr, rng) {
        Ok(s) => Ok(s),
        Err(e) => {
            (*ac, *opt, *lr) = snapshot;
            Err(e)
        }
    }
}

fn run_epochs<R: Rng>(
    ac: &mut ActorCritic,
    opt: &mut Optimizer,
    batch: &TrainBatch,
    cfg: &PpoConfig,
    train_log_std: bool,
    lr: &mut f64,
    rng: &mut R,
) -> Result<UpdateStats> {
    let n = batch.len();
    let act = ac.act_dim();
    if batch.actions.len() != n * act {
        return Err(Error::ShapeMismatch {
            expected: format!("{} action values", n * act),
            actual: format!("{}", batch.actions.len()),
        });
    }
    let mb = (n / cfg.num_minibatches.max(1)).max(1);
    let mut order: Vec<usize> = (0..n).collect();
    let mut stats = UpdateStats::default();
    let mut clipped = 0usize;
    let mut counted = 0usize;

    for epoch in 0..cfg.epochs {
        order.shuffle(rng);
        let mut epoch_kl = 0.0;
        let mut epoch_batches = 0usize;
        for (k, idx) in order.chunks(mb).enumerate() {
            let m = idx.iter().filter(|&&i| batch.valid[i]).count();
            if m == 0 {
                continue;
            }
            let inv_m = 1.0 / m as f64;
            let x = batch.obs.select(Axis(0), idx);
            let (mu, acache) = ac.actor.forward_cached(x.view())?;
            let (v, ccache) = ac.critic.forward_cached(x.view())?;

            let ls = ac.log_std.clone();
            let inv_var: Vec<f64> = ls.iter().map(|l| (-2.0 * l).exp()).collect();
            let mut d_mu = Array2::<f32>::zeros((idx.len(), act));
            let mut d_v = Array2::<f32>::zeros((idx.len(), 1));
            let mut d_ls = vec![0.0; act];
            let (mut surr, mut vloss, mut kl) = (0.0, 0.0, 0.0);

            for (r, &i) in idx.iter().enumerate() {
                if !batch.valid[i] {
                    continue;
                }
                let a = &batch.actions[i * act..(i + 1) * act];
                let mu_old = &batch.old_means[i * act..(i + 1) * act];
                let mu_new: Vec<f64> = mu.row(r).iter().map(|&x| f64::from(x)).collect();
                let adv = batch.advantages[i];
                let logp = gaussian_log_prob(&mu_new, &ls, a);
                let ratio = (logp - batch.old_log_probs[i]).exp();
                let clipped_ratio = ratio.clamp(1.0 - cfg.clip, 1.0 + cfg.clip);
                surr -= (ratio * adv).min(clipped_ratio * adv) * inv_m;
                if (ratio - 1.0).abs() > cfg.clip {
                    clipped += 1;
                }
                counted += 1;
                kl += gaussian_kl(mu_old, &batch.old_log_std, &mu_new, &ls) * inv_m;

                if surrogate_active(ratio, adv, cfg.clip) {
                    let g = -adv * ratio * inv_m;
                    for j in 0..act {
                        let diff = a[j] - mu_new[j];
                        d_mu[[r, j]] = (g * diff * inv_var[j]) as f32;
                        d_ls[j] += g * (diff * diff * inv_var[j] - 1.0);
                    }
                }
                let err = f64::from(v[[r, 0]]) - batch.returns[i];
                vloss += 0.5 * err * err * inv_m;
                d_v[[r, 0]] = (cfg.value_coef * err * inv_m) as f32;
            }
            let entropy = gaussian_entropy(&ls);
            d_ls.iter_mut().for_each(|g| *g -= cfg.entropy_coef);

            let loss = surr + cfg.value_coef * vloss - cfg.entropy_coef * entropy;
            if !loss.is_finite() {
                return Err(Error::NonFinite(format!(
                    "loss {loss} (policy {surr}, value {vloss}) at epoch {epoch}, minibatch {k}"
                )));
            }

            epoch_kl += kl;
            epoch_batches += 1;

            let mut ga = ac.actor.backward(&acache, d_mu.view())?;
            let mut gc = ac.critic.backward(&ccache, d_v.view())?;
            if !train_log_std {
                d_ls.iter_mut().for_each(|g| *g = 0.0);
            }
            let norm2 =
                ga.squared_norm() + gc.squared_norm() + d_ls.iter().map(|g| g * g).sum::<f64>();
            let norm = norm2.sqrt();
            if !norm.is_finite() {
                return Err(Error::NonFinite(format!(
                    "gradient norm {norm} at epoch {epoch}, minibatch {k}"
                )));
            }
            if cfg.max_grad_norm > 0.0 && norm > cfg.max_grad_norm {
                let s = cfg.max_grad_norm / norm;
                ga.scale(s as f32);
                gc.scale(s as f32);
                d_ls.iter_mut().for_each(|g| *g *= s);
            }
            opt.actor.step(&mut ac.actor, &ga, *lr);
            opt.critic.step(&mut ac.critic, &gc, *lr);
            if train_log_std {
                opt.step_log_std(&mut ac.log_std, &d_ls, *lr);
            }

            stats.kl += kl;
            stats.policy_loss += surr;
            stats.value_loss += vloss;
            stats.entropy += entropy;
            stats.minibatches += 1;
        }
        if cfg.desired_kl > 0.0 && epoch_batches > 0 {
            let kl = epoch_kl / epoch_batches as f64;
            if kl.is_finite() {
                *lr = adapt_learning_rate(*lr, kl, cfg);
            }
        }
    }
    if !(ac.actor.is_finite() && ac.critic.is_finite() && ac.log_std.iter().all(|v| v.is_finite()))
    {
        return Err(Error::NonFinite("parameters became non-finite".into()));
    }
    let k = stats.minibatches.max(1) as f64;
    stats.kl /= k;
    stats.policy_loss /= k;
    stats.value_loss /= k;
    stats.entropy /= k;
    stats.clip_fraction = clipped as f64 / counted.max(1) as f64;
    stats.lr = *lr;
    Ok(stats)
}
