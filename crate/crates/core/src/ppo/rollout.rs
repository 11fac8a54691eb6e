//! Rollout collection over batched environments.

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::gae::{compute_gae, normalize_advantages};
use super::policy::ActorCritic;
use super::update::TrainBatch;
use crate::env::vec::{EpisodeSummary, VecEnv};
use crate::env::{DoneReason, Environment};
use crate::error::Result;

/// `steps x envs` samples stored time-major: sample `(t, e)` lives at index
/// `t * envs + e`. Vector-valued fields use that index times their width.
#[derive(Debug, Clone, PartialEq)]
pub struct RolloutBuffer {
    pub envs: usize,
    pub steps: usize,
    pub obs_dim: usize,
    pub act_dim: usize,
    pub n_terms: usize,
    pub raw_obs: Vec<f64>,
    pub obs: Vec<f32>,
    pub actions: Vec<f64>,
    pub means: Vec<f64>,
    pub log_std: Vec<f64>,
    pub log_probs: Vec<f64>,
    pub values: Vec<f64>,
    pub rewards: Vec<f64>,
    /// Weighted reward terms per sample.
    pub terms: Vec<f64>,
    pub dones: Vec<Option<DoneReason>>,
    /// Value of the successor state: the next sample's value inside an
    /// episode, the bootstrap estimate after a timeout, zero after a fall or
    /// failure.
    pub next_values: Vec<f64>,
    pub valid: Vec<bool>,
    /// Episodes that ended during the rollout, in (step, env) order.
    pub episodes: Vec<EpisodeSummary>,
}

impl RolloutBuffer {
    pub fn len(&self) -> usize {
        self.envs * self.steps
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// True where the episode continues into the next sample.
    pub fn continues(&self) -> Vec<bool> {
        self.dones.iter().map(Option::is_none).collect()
    }

    pub fn advantages(&self, gamma: f64, lambda: f64) -> (Vec<f64>, Vec<f64>) {
        compute_gae(
            &self.rewards,
            &self.values,
            &self.next_values,
            &self.continues(),
            self.envs,
            gamma,
            lambda,
        )
    }

    /// Flattens into a training batch with GAE advantages, optionally
    /// normalized over the valid samples.
    pub fn to_batch(&self, gamma: f64, lambda: f64, normalize: bool) -> TrainBatch {
        let (mut adv, returns) = self.advantages(gamma, lambda);
        if normalize {
            normalize_advantages(&mut adv, &self.valid);
        }
        TrainBatch {
            obs: Array2::from_shape_vec((self.len(), self.obs_dim), self.obs.clone())
                .expect("buffer shape"),
            actions: self.actions.clone(),
            old_means: self.means.clone(),
            old_log_std: self.log_std.clone(),
            old_log_probs: self.log_probs.clone(),
            advantages: adv,
            returns,
            valid: self.valid.clone(),
        }
    }
}

/// How actions are drawn during collection.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActionMode {
    Sample,
    Mean,
}

/// Per-environment action-noise generators: stream `i` of a ChaCha8 seeded
/// with `seed`.
pub fn action_streams(seed: u64, n: usize) -> Vec<ChaCha8Rng> {
    (0..n)
        .map(|i| {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            r.set_stream(i as u64);
            r
        })
        .collect()
}

/// Runs `steps` control steps in every environment. The normalizer absorbs
/// each step's observation batch before the policy sees it when
/// `update_norm` is set.
pub fn collect_rollout<E: Environment>(
    ac: &mut ActorCritic,
    envs: &mut VecEnv<E>,
    rngs: &mut [ChaCha8Rng],
    steps: usize,
    mode: ActionMode,
    update_norm: bool,
) -> Result<RolloutBuffer> {
    let n = envs.len();
    let (d, a) = (ac.obs_dim(), ac.act_dim());
    let n_terms = envs.term_names().len();
    let total = n * steps;
    let mut buf = RolloutBuffer {
        envs: n,
        steps,
        obs_dim: d,
        act_dim: a,
        n_terms,
        raw_obs: Vec::with_capacity(total * d),
        obs: Vec::with_capacity(total * d),
        actions: Vec::with_capacity(total * a),
        means: Vec::with_capacity(total * a),
        log_std: ac.log_std.clone(),
        log_probs: Vec::with_capacity(total),
        values: Vec::with_capacity(total),
        rewards: Vec::with_capacity(total),
        terms: Vec::with_capacity(total * n_terms),
        dones: Vec::with_capacity(total),
        next_values: Vec::with_capacity(total),
        valid: Vec::with_capacity(total),
        episodes: Vec::new(),
    };
    let std: Vec<f64> = ac.log_std.iter().map(|l| l.exp()).collect();

    for _ in 0..steps {
        let raw = envs.observations().to_vec();
        if update_norm {
            ac.norm.update(&raw);
        }
        let x = ac.normalize_batch(&raw)?;
        let mu = ac.means(x.view())?;
        let values = ac.values(x.view())?;

        let mut actions = Vec::with_capacity(n);
        for (e, rng) in rngs.iter_mut().enumerate().take(n) {
            let m: Vec<f64> = mu.row(e).iter().map(|&v| f64::from(v)).collect();
            let act: Vec<f64> = match mode {
                ActionMode::Sample => m
                    .iter()
                    .zip(&std)
                    .map(|(mi, s)| {
                        let z: f64 = StandardNormal.sample(rng);
                        mi + s * z
                    })
                    .collect(),
                ActionMode::Mean => m.clone(),
            };
            buf.log_probs
                .push(crate::nn::gaussian_log_prob(&m, &ac.log_std, &act));
            buf.means.extend(&m);
            buf.actions.extend(&act);
            actions.push(act);
        }
        for r in &raw {
            buf.raw_obs.extend(r);
        }
        buf.obs.extend(x.iter());
        buf.values.extend(&values);

        let out = envs.step(&actions);

        // Bootstrap values for timed-out episodes, batched.
        let timeouts: Vec<usize> = (0..n).filter(|&e| out[e].terminal_obs.is_some()).collect();
        let mut boot = vec![0.0; n];
        if !timeouts.is_empty() {
            let rows: Vec<&[f64]> = timeouts
                .iter()
                .map(|&e| out[e].terminal_obs.as_deref().unwrap())
                .collect();
            let xt = ac.normalize_batch(&rows)?;
            for (&e, v) in timeouts.iter().zip(ac.values(xt.view())?) {
                boot[e] = v;
            }
        }
        for (e, s) in out.into_iter().enumerate() {
            buf.rewards.push(s.reward);
            buf.terms.extend(&s.terms);
            buf.valid.push(s.valid);
            buf.next_values.push(match s.done {
                Some(DoneReason::Timeout) => boot[e],
                _ => 0.0,
            });
            buf.dones.push(s.done);
            if let Some(ep) = s.finished {
                buf.episodes.push(ep);
            }
        }
    }

    // Successor values inside episodes.
    let x = ac.normalize_batch(envs.observations())?;
    let tail = ac.values(x.view())?;
    for t in 0..steps {
        for e in 0..n {
            let i = t * n + e;
            if buf.dones[i].is_none() {
                buf.next_values[i] = if t + 1 < steps {
                    buf.values[i + n]
                } else {
                    tail[e]
                };
            }
        }
    }
    Ok(buf)
}
