//! The training loop and run directory handling.

use std::collections::VecDeque;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::checkpoint::PolicyCheckpoint;
use crate::env::pendulum::PendulumEnv;
use crate::env::quadruped::{make_quadruped, QuadrupedEnv, QuadrupedSpec};
use crate::env::vec::VecEnv;
use crate::env::{DoneReason, EnvMode, Environment};
use crate::error::{Error, Result};
use crate::metrics::{IterationMetrics, MetricsWriter};
use crate::model::{ExperimentConfig, Task};
use crate::ppo::{action_streams, collect_rollout, ppo_update, ActionMode, ActorCritic, Optimizer};

/// Consecutive rejected updates that end a run as diverged.
pub const MAX_CONSECUTIVE_FAILURES: usize = 3;
const LENGTH_WINDOW: usize = 100;

const TAG_POLICY: u64 = 1;
const TAG_ENVS: u64 = 2;
const TAG_ACTIONS: u64 = 3;
const TAG_SHUFFLE: u64 = 4;

/// Independent seed for one purpose at one starting iteration.
pub fn derive_seed(seed: u64, start_iteration: u64, tag: u64) -> u64 {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream((start_iteration << 8) | tag);
    r.next_u64()
}

pub fn quadruped_envs(
    cfg: &ExperimentConfig,
    n: usize,
    mode: EnvMode,
) -> Result<Vec<QuadrupedEnv>> {
    let spec = Arc::new(QuadrupedSpec::from_experiment(cfg)?);
    (0..n).map(|i| make_quadruped(&spec, i, mode)).collect()
}

pub fn pendulum_envs(cfg: &ExperimentConfig, n: usize) -> Result<Vec<PendulumEnv>> {
    (0..n)
        .map(|_| PendulumEnv::new(cfg.pendulum.clone(), cfg.sim.clone()))
        .collect()
}

pub struct Trainer<E> {
    cfg: ExperimentConfig,
    policy: ActorCritic,
    opt: Optimizer,
    envs: VecEnv<E>,
    action_rngs: Vec<ChaCha8Rng>,
    shuffle: ChaCha8Rng,
    lr: f64,
    iteration: u64,
    lengths: VecDeque<u64>,
    failures_seen: usize,
    consecutive_failures: usize,
}

impl<E: Environment> Trainer<E> {
    /// Starts from freshly initialized networks.
    pub fn new(cfg: &ExperimentConfig, envs: Vec<E>) -> Result<Self> {
        let (obs, act) = dims(&envs)?;
        let policy = ActorCritic::new(
            obs,
            act,
            &cfg.policy,
            cfg.ppo.obs_clip,
            derive_seed(cfg.ppo.seed, 0, TAG_POLICY),
        );
        Ok(Self::assemble(cfg, envs, policy, cfg.ppo.learning_rate, 0))
    }

    /// Continues from a checkpoint. Optimizer moments restart from zero and
    /// the random streams are re-derived from the checkpoint iteration, so a
    /// resumed run is reproducible but not identical to an uninterrupted one.
    pub fn resume(cfg: &ExperimentConfig, envs: Vec<E>, ckpt: PolicyCheckpoint) -> Result<Self> {
        let (obs, act) = dims(&envs)?;
        ckpt.check_dims(obs, act)?;
        let lr = ckpt.learning_rate.clamp(cfg.ppo.lr_min, cfg.ppo.lr_max);
        Ok(Self::assemble(cfg, envs, ckpt.policy, lr, ckpt.iteration))
    }

    fn assemble(
        cfg: &ExperimentConfig,
        envs: Vec<E>,
        policy: ActorCritic,
        lr: f64,
        iteration: u64,
    ) -> Self {
        let seed = cfg.ppo.seed;
        let n = envs.len();
        Self {
            opt: Optimizer::new(&policy, &cfg.policy),
            envs: VecEnv::new(envs, derive_seed(seed, iteration, TAG_ENVS)),
            action_rngs: action_streams(derive_seed(seed, iteration, TAG_ACTIONS), n),
            shuffle: ChaCha8Rng::seed_from_u64(derive_seed(seed, iteration, TAG_SHUFFLE)),
            cfg: cfg.clone(),
            policy,
            lr,
            iteration,
            lengths: VecDeque::with_capacity(LENGTH_WINDOW),
            failures_seen: 0,
            consecutive_failures: 0,
        }
    }

    pub fn policy(&self) -> &ActorCritic {
        &self.policy
    }

    pub fn iteration(&self) -> u64 {
        self.iteration
    }

    pub fn learning_rate(&self) -> f64 {
        self.lr
    }

    pub fn envs(&self) -> &VecEnv<E> {
        &self.envs
    }

    pub fn term_names(&self) -> &'static [&'static str] {
        self.envs.term_names()
    }

    pub fn checkpoint(&self) -> PolicyCheckpoint {
        PolicyCheckpoint {
            iteration: self.iteration,
            seed: self.cfg.ppo.seed,
            fingerprint: self.cfg.fingerprint(),
            learning_rate: self.lr,
            policy: self.policy.clone(),
        }
    }

    /// One rollout plus one update. A rejected (non-finite) update leaves the
    /// parameters untouched and is reported in the metrics;
    /// [`MAX_CONSECUTIVE_FAILURES`] in a row return [`Error::NonFinite`].
    pub fn iterate(&mut self) -> Result<IterationMetrics> {
        let ppo = self.cfg.ppo.clone();
        let t0 = Instant::now();
        let buf = collect_rollout(
            &mut self.policy,
            &mut self.envs,
            &mut self.action_rngs,
            ppo.steps_per_env,
            ActionMode::Sample,
            true,
        )?;
        let rollout_s = t0.elapsed().as_secs_f64();
        self.iteration += 1;

        let valid = buf.valid.iter().filter(|&&v| v).count().max(1) as f64;
        let n_terms = buf.n_terms;
        let mut term_means = vec![0.0; n_terms];
        let mut mean_reward = 0.0;
        for i in 0..buf.len() {
            if buf.valid[i] {
                mean_reward += buf.rewards[i];
                for (k, m) in term_means.iter_mut().enumerate() {
                    *m += buf.terms[i * n_terms + k];
                }
            }
        }
        mean_reward /= valid;
        term_means.iter_mut().for_each(|m| *m /= valid);
        let mut falls = 0;
        for ep in &buf.episodes {
            if self.lengths.len() == LENGTH_WINDOW {
                self.lengths.pop_front();
            }
            self.lengths.push_back(ep.length);
            if ep.reason == DoneReason::Fall {
                falls += 1;
            }
        }
        let mean_episode_length = if self.lengths.is_empty() {
            0.0
        } else {
            self.lengths.iter().sum::<u64>() as f64 / self.lengths.len() as f64
        };
        let env_failures = self.envs.failures() - self.failures_seen;
        self.failures_seen = self.envs.failures();

        let t1 = Instant::now();
        let batch = buf.to_batch(ppo.gamma, ppo.lambda, ppo.normalize_advantages);
        let result = ppo_update(
            &mut self.policy,
            &mut self.opt,
            &batch,
            &ppo,
            self.cfg.policy.train_log_std,
            &mut self.lr,
            &mut self.shuffle,
        );
        let update_s = t1.elapsed().as_secs_f64();

        let mut m = IterationMetrics {
            iteration: self.iteration,
            mean_reward,
            term_means,
            mean_episode_length,
            episodes: buf.episodes.len(),
            falls,
            learning_rate: self.lr,
            env_failures,
            rollout_s,
            update_s,
            ..Default::default()
        };
        match result {
            Ok(s) => {
                self.consecutive_failures = 0;
                m.kl = s.kl;
                m.clip_fraction = s.clip_fraction;
                m.policy_loss = s.policy_loss;
                m.value_loss = s.value_loss;
                m.entropy = s.entropy;
            }
            Err(Error::NonFinite(msg)) => {
                self.consecutive_failures += 1;
                log::warn!(
                    "iteration {}: update rejected ({msg}); {} consecutive",
                    self.iteration,
                    self.consecutive_failures
                );
                if self.consecutive_failures >= MAX_CONSECUTIVE_FAILURES {
                    return Err(Error::NonFinite(format!(
                        "training diverged: {MAX_CONSECUTIVE_FAILURES} consecutive rejected updates, last: {msg}"
                    )));
                }
                m.update_skipped = true;
                m.kl = f64::NAN;
                m.clip_fraction = f64::NAN;
                m.policy_loss = f64::NAN;
                m.value_loss = f64::NAN;
                m.entropy = f64::NAN;
            }
            Err(e) => return Err(e),
        }
        Ok(m)
    }
}

fn dims<E: Environment>(envs: &[E]) -> Result<(usize, usize)> {
    let e = envs
        .first()
        .ok_or_else(|| Error::validation("ppo.n_envs", "need at least one environment"))?;
    Ok((e.obs_dim(), e.act_dim()))
}

#[derive(Debug, Clone, Default)]
pub struct TrainOptions {
    pub out_dir: PathBuf,
    pub resume: Option<PathBuf>,
    pub force: bool,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub iterations: u64,
    pub final_checkpoint: PathBuf,
    pub last: Option<IterationMetrics>,
}

pub const FINAL_CHECKPOINT: &str = "final.qtck";
pub const LAST_GOOD_CHECKPOINT: &str = "last_good.qtck";

pub fn checkpoint_path(dir: &Path, iteration: u64) -> PathBuf {
    dir.join("checkpoints")
        .join(format!("iter_{iteration:06}.qtck"))
}

/// Trains `cfg.ppo.iterations` iterations (counting from the resumed
/// iteration, if any) and writes the run directory: effective config,
/// `metrics.csv`, `timing.csv`, periodic checkpoints and `final.qtck`. On
/// divergence the last good parameters are saved as `last_good.qtck` and the
/// error is returned.
pub fn run_training(cfg: &ExperimentConfig, opts: &TrainOptions) -> Result<TrainOutcome> {
    cfg.validate()?;
    let n = cfg.ppo.n_envs;
    match cfg.task {
        Task::Quadruped => run(cfg, opts, quadruped_envs(cfg, n, EnvMode::Train)?),
        Task::Pendulum => run(cfg, opts, pendulum_envs(cfg, n)?),
    }
}

fn run<E: Environment>(
    cfg: &ExperimentConfig,
    opts: &TrainOptions,
    envs: Vec<E>,
) -> Result<TrainOutcome> {
    let dir = &opts.out_dir;
    cfg.write_effective(dir)?;
    let mut trainer = match &opts.resume {
        Some(path) => {
            let ckpt = PolicyCheckpoint::load(path)?;
            ckpt.check_fingerprint(&cfg.fingerprint(), opts.force)?;
            log::info!(
                "resuming from {} at iteration {}",
                path.display(),
                ckpt.iteration
            );
            Trainer::resume(cfg, envs, ckpt)?
        }
        None => Trainer::new(cfg, envs)?,
    };
    let mut writer = MetricsWriter::open(dir, trainer.term_names())?;
    let target = trainer.iteration() + cfg.ppo.iterations as u64;
    let mut last = None;
    while trainer.iteration() < target {
        match trainer.iterate() {
            Ok(m) => {
                writer.write(&m)?;
                log::info!(
                    "iter {:>5}  reward {:>9.5}  len {:>7.1}  kl {:.5}  lr {:.2e}  ({:.2}s + {:.2}s)",
                    m.iteration,
                    m.mean_reward,
                    m.mean_episode_length,
                    m.kl,
                    m.learning_rate,
                    m.rollout_s,
                    m.update_s
                );
                let every = cfg.ppo.checkpoint_interval as u64;
                if every > 0 && m.iteration % every == 0 {
                    trainer
                        .checkpoint()
                        .save(&checkpoint_path(dir, m.iteration))?;
                }
                last = Some(m);
            }
            Err(e @ Error::NonFinite(_)) => {
                trainer.checkpoint().save(&dir.join(LAST_GOOD_CHECKPOINT))?;
                return Err(e);
            }
            Err(e) => return Err(e),
        }
    }
    let final_checkpoint = dir.join(FINAL_CHECKPOINT);
    trainer.checkpoint().save(&final_checkpoint)?;
    Ok(TrainOutcome {
        iterations: trainer.iteration(),
        final_checkpoint,
        last,
    })
}
