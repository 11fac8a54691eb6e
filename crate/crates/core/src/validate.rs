//! Deterministic policy evaluation and sim-to-sim cross-validation.
//!
//! Evaluation runs in [`EnvMode::Eval`] (no observation noise, latency or
//! pushes) with mean actions. Episode `i` is reset with a seed derived from
//! the evaluation seed and `i`, so two configurations evaluated with the same
//! seed see the same spawn states, friction and commands.

use std::fmt;
use std::path::Path;
use std::sync::Arc;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::checkpoint::PolicyCheckpoint;
use crate::env::obs::OBS_DIM;
use crate::env::quadruped::{make_quadruped, QuadrupedEnv, QuadrupedSpec};
use crate::env::reward::{TERM_NAMES, TRACKING_TERM};
use crate::env::{DoneReason, EnvMode, Environment};
use crate::error::{Error, Result};
use crate::model::{ExperimentConfig, Task, NUM_JOINTS};
use crate::ppo::ActorCritic;

/// Minimum number of episodes behind every reported mean.
pub const MIN_EPISODES: usize = 20;

/// Timed command setpoints. The command at time `t` is that of the last row
/// with `row.t <= t` (the first row before it starts).
#[derive(Debug, Clone, PartialEq)]
pub struct CommandProfile {
    pub rows: Vec<(f64, [f64; 3])>,
}

impl CommandProfile {
    pub fn constant(cmd: [f64; 3]) -> Self {
        Self {
            rows: vec![(0.0, cmd)],
        }
    }

    /// Reads a CSV with header `t,vx,vy,wz`.
    pub fn load(path: &Path) -> Result<Self> {
        let mut r = csv::Reader::from_path(path).map_err(|e| match e.kind() {
            csv::ErrorKind::Io(_) => Error::io(path, std::io::Error::other(e.to_string())),
            _ => Error::Csv(e),
        })?;
        let headers: Vec<String> = r.headers()?.iter().map(|h| h.trim().to_string()).collect();
        if headers != ["t", "vx", "vy", "wz"] {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                message: format!("expected header t,vx,vy,wz, found {}", headers.join(",")),
            });
        }
        let mut rows = Vec::new();
        for (line, rec) in r.records().enumerate() {
            let rec = rec?;
            let mut v = [0.0f64; 4];
            for (k, field) in rec.iter().enumerate().take(4) {
                v[k] = field.trim().parse().map_err(|e| Error::Parse {
                    path: path.to_path_buf(),
                    message: format!("row {}: {e}", line + 2),
                })?;
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    message: format!("row {}: non-finite value", line + 2),
                });
            }
            rows.push((v[0], [v[1], v[2], v[3]]));
        }
        if rows.is_empty() {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                message: "profile has no rows".into(),
            });
        }
        if rows.windows(2).any(|w| w[1].0 < w[0].0) {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                message: "times must be non-decreasing".into(),
            });
        }
        Ok(Self { rows })
    }

    pub fn at(&self, t: f64) -> [f64; 3] {
        let mut cmd = self.rows[0].1;
        for &(rt, c) in &self.rows {
            if rt <= t {
                cmd = c;
            } else {
                break;
            }
        }
        cmd
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeRecord {
    pub episode: usize,
    pub length: u64,
    /// `None` when the step cap was reached first.
    pub reason: Option<DoneReason>,
    pub total_reward: f64,
    pub term_sums: Vec<f64>,
    /// Mean per-step weighted velocity-tracking term.
    pub tracking_reward: f64,
    /// Mean body-frame planar speed error `|v_xy - cmd_xy|` (m/s).
    pub tracking_error: f64,
    pub mean_vx: f64,
    pub mean_vy: f64,
    pub mean_wz: f64,
    pub mean_command: [f64; 3],
}

impl EpisodeRecord {
    pub fn fell(&self) -> bool {
        matches!(self.reason, Some(DoneReason::Fall | DoneReason::Failure))
    }
}

fn episode_seed(seed: u64, episode: usize) -> u64 {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(episode as u64);
    r.next_u64()
}

#[derive(Default)]
struct Acc {
    steps: u64,
    reward: f64,
    terms: Vec<f64>,
    err: f64,
    v: [f64; 3],
    cmd: [f64; 3],
    reason: Option<DoneReason>,
}

/// Rolls out `episodes` deterministic episodes of at most `max_steps` steps,
/// all environments advancing in lockstep with batched policy evaluation.
pub fn run_episodes(
    policy: &ActorCritic,
    cfg: &ExperimentConfig,
    episodes: usize,
    seed: u64,
    max_steps: u64,
    profile: Option<&CommandProfile>,
) -> Result<Vec<EpisodeRecord>> {
    if cfg.task != Task::Quadruped {
        return Err(Error::validation(
            "task",
            "evaluation needs the quadruped task",
        ));
    }
    check_policy_dims(policy)?;
    let spec = Arc::new(QuadrupedSpec::from_experiment(cfg)?);
    let mut envs: Vec<QuadrupedEnv> = (0..episodes)
        .map(|i| make_quadruped(&spec, i, EnvMode::Eval))
        .collect::<Result<_>>()?;
    let mut obs: Vec<Vec<f64>> = envs
        .iter_mut()
        .enumerate()
        .map(|(i, e)| {
            let o = e.reset(episode_seed(seed, i));
            match profile {
                Some(p) => {
                    e.set_command(p.at(0.0));
                    e.refresh_observation()
                }
                None => o,
            }
        })
        .collect();
    let mut acc: Vec<Acc> = (0..episodes)
        .map(|_| Acc {
            terms: vec![0.0; TERM_NAMES.len()],
            ..Default::default()
        })
        .collect();
    let mut active: Vec<usize> = (0..episodes).collect();
    let dt = cfg.sim.dt;

    for _ in 0..max_steps {
        if active.is_empty() {
            break;
        }
        let rows: Vec<&[f64]> = active.iter().map(|&i| obs[i].as_slice()).collect();
        let actions = policy.act_batch(&rows)?;
        let stepped: Vec<(usize, Result<crate::env::Transition>)> = {
            let mut refs: Vec<(usize, &mut QuadrupedEnv)> = envs
                .iter_mut()
                .enumerate()
                .filter(|(i, _)| active.binary_search(i).is_ok())
                .collect();
            refs.par_iter_mut()
                .zip(actions.par_iter())
                .map(|((i, env), a)| (*i, env.step(a)))
                .collect()
        };
        let mut still = Vec::with_capacity(active.len());
        for (i, res) in stepped {
            let a = &mut acc[i];
            let env = &mut envs[i];
            match res {
                Ok(t) => {
                    let cmd = env.command();
                    let v = env.state().base_lin_vel_body();
                    let w = env.state().base_ang_vel;
                    a.steps += 1;
                    a.reward += t.reward;
                    for (s, x) in a.terms.iter_mut().zip(&t.terms) {
                        *s += x;
                    }
                    a.err += ((v.x - cmd[0]).powi(2) + (v.y - cmd[1]).powi(2)).sqrt();
                    a.v[0] += v.x;
                    a.v[1] += v.y;
                    a.v[2] += w.z;
                    for k in 0..3 {
                        a.cmd[k] += cmd[k];
                    }
                    if t.done.is_some() {
                        a.reason = t.done;
                        continue;
                    }
                    obs[i] = match profile {
                        Some(p) => {
                            env.set_command(p.at(a.steps as f64 * dt));
                            env.refresh_observation()
                        }
                        None => t.obs,
                    };
                    still.push(i);
                }
                Err(e) => {
                    log::warn!("evaluation episode {i} failed: {e}");
                    a.reason = Some(DoneReason::Failure);
                }
            }
        }
        active = still;
    }

    Ok(acc
        .into_iter()
        .enumerate()
        .map(|(i, a)| {
            let n = a.steps.max(1) as f64;
            EpisodeRecord {
                episode: i,
                length: a.steps,
                reason: a.reason,
                total_reward: a.reward,
                tracking_reward: a.terms[TRACKING_TERM] / n,
                term_sums: a.terms,
                tracking_error: a.err / n,
                mean_vx: a.v[0] / n,
                mean_vy: a.v[1] / n,
                mean_wz: a.v[2] / n,
                mean_command: a.cmd.map(|c| c / n),
            }
        })
        .collect())
}

fn check_policy_dims(policy: &ActorCritic) -> Result<()> {
    let (o, a) = (policy.obs_dim(), policy.act_dim());
    if o != OBS_DIM || a != NUM_JOINTS {
        return Err(Error::ShapeMismatch {
            expected: format!("{OBS_DIM}-d observation, {NUM_JOINTS}-d action"),
            actual: format!("checkpoint with {o}-d observation, {a}-d action"),
        });
    }
    Ok(())
}

/// Means over a set of episodes.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ConfigMetrics {
    pub episodes: usize,
    pub tracking_reward: f64,
    pub episode_length: f64,
    pub fall_rate: f64,
    pub tracking_error: f64,
}

impl ConfigMetrics {
    pub fn from_records(records: &[EpisodeRecord]) -> Self {
        let n = records.len().max(1) as f64;
        let mean = |f: &dyn Fn(&EpisodeRecord) -> f64| records.iter().map(f).sum::<f64>() / n;
        Self {
            episodes: records.len(),
            tracking_reward: mean(&|r| r.tracking_reward),
            episode_length: mean(&|r| r.length as f64),
            fall_rate: mean(&|r| f64::from(u8::from(r.fell()))),
            tracking_error: mean(&|r| r.tracking_error),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValidationReport {
    pub a: ConfigMetrics,
    pub b: ConfigMetrics,
    /// `b / a` for tracking reward; `None` when config A scored zero.
    pub tracking_retention: Option<f64>,
    /// `b / a` for episode length; `None` when config A scored zero.
    pub length_retention: Option<f64>,
    pub fall_rate_increase: f64,
    pub min_tracking_retention: f64,
    pub max_fall_rate_increase: f64,
    pub passed: bool,
}

fn ratio(b: f64, a: f64) -> Option<f64> {
    (a != 0.0).then(|| b / a)
}

/// Checks that `b` differs from `a` only in its physics settings.
fn physics_only_difference(a: &ExperimentConfig, b: &ExperimentConfig) -> Result<()> {
    let mut b_as_a = b.clone();
    b_as_a.sim = a.sim.clone();
    b_as_a.validation = a.validation.clone();
    b_as_a.ppo = a.ppo.clone();
    if b_as_a != *a {
        return Err(Error::validation(
            "config B",
            "may differ from config A only in its [sim] section",
        ));
    }
    if b.sim == a.sim {
        log::warn!("config B has the same physics as config A; retention will be exactly 1");
    }
    Ok(())
}

/// Evaluates the checkpoint under `a` and `b` with identical seeds and
/// commands. Config B must differ from A only in `[sim]`; thresholds come
/// from A's `[validation]` section.
pub fn cross_validate(
    ckpt: &PolicyCheckpoint,
    a: &ExperimentConfig,
    b: &ExperimentConfig,
    episodes: usize,
    seed: u64,
) -> Result<ValidationReport> {
    check_policy_dims(&ckpt.policy)?;
    if episodes < MIN_EPISODES {
        return Err(Error::validation(
            "episodes",
            format!("need at least {MIN_EPISODES} episodes, got {episodes}"),
        ));
    }
    physics_only_difference(a, b)?;
    let steps = a.validation.episode_steps;
    let ra = run_episodes(&ckpt.policy, a, episodes, seed, steps, None)?;
    let rb = run_episodes(&ckpt.policy, b, episodes, seed, steps, None)?;
    let (ma, mb) = (
        ConfigMetrics::from_records(&ra),
        ConfigMetrics::from_records(&rb),
    );
    let tracking_retention = ratio(mb.tracking_reward, ma.tracking_reward);
    let fall_rate_increase = mb.fall_rate - ma.fall_rate;
    let v = &a.validation;
    let passed = tracking_retention.is_some_and(|r| r >= v.min_tracking_retention)
        && fall_rate_increase <= v.max_fall_rate_increase;
    Ok(ValidationReport {
        a: ma,
        b: mb,
        tracking_retention,
        length_retention: ratio(mb.episode_length, ma.episode_length),
        fall_rate_increase,
        min_tracking_retention: v.min_tracking_retention,
        max_fall_rate_increase: v.max_fall_rate_increase,
        passed,
    })
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_string(), |x| x.to_string())
}

impl ValidationReport {
    /// Writes `config,episodes,tracking_reward,episode_length,fall_rate,tracking_error`
    /// rows for A and B followed by a `retention` row.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record([
            "config",
            "episodes",
            "tracking_reward",
            "episode_length",
            "fall_rate",
            "tracking_error",
        ])?;
        for (name, m) in [("A", &self.a), ("B", &self.b)] {
            w.write_record([
                name.to_string(),
                m.episodes.to_string(),
                m.tracking_reward.to_string(),
                m.episode_length.to_string(),
                m.fall_rate.to_string(),
                m.tracking_error.to_string(),
            ])?;
        }
        w.write_record([
            "retention".to_string(),
            String::new(),
            opt(self.tracking_retention),
            opt(self.length_retention),
            self.fall_rate_increase.to_string(),
            String::new(),
        ])?;
        w.flush().map_err(|e| Error::io(path, e))
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{:<10} {:>9} {:>15} {:>12} {:>10} {:>12}",
            "config", "episodes", "tracking", "length", "falls", "err (m/s)"
        )?;
        for (name, m) in [("A", &self.a), ("B", &self.b)] {
            writeln!(
                f,
                "{:<10} {:>9} {:>15.6e} {:>12.1} {:>10.3} {:>12.4}",
                name,
                m.episodes,
                m.tracking_reward,
                m.episode_length,
                m.fall_rate,
                m.tracking_error
            )?;
        }
        writeln!(
            f,
            "tracking retention {} (min {}), length retention {}, fall-rate increase {:.3} (max {})",
            opt(self.tracking_retention),
            self.min_tracking_retention,
            opt(self.length_retention),
            self.fall_rate_increase,
            self.max_fall_rate_increase
        )?;
        write!(f, "{}", if self.passed { "PASS" } else { "FAIL" })
    }
}

/// Per-episode evaluation CSV: identity, outcome, achieved velocities,
/// tracking error and the per-term reward sums.
pub fn write_episodes_csv(path: &Path, records: &[EpisodeRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header: Vec<String> = [
        "episode",
        "length",
        "outcome",
        "total_reward",
        "tracking_reward",
        "tracking_error",
        "mean_vx",
        "mean_vy",
        "mean_wz",
        "cmd_vx",
        "cmd_vy",
        "cmd_wz",
    ]
    .map(String::from)
    .to_vec();
    header.extend(TERM_NAMES.iter().map(|n| format!("term_{n}")));
    w.write_record(&header)?;
    for r in records {
        let mut row = vec![
            r.episode.to_string(),
            r.length.to_string(),
            r.reason.map_or("running", DoneReason::as_str).to_string(),
            r.total_reward.to_string(),
            r.tracking_reward.to_string(),
            r.tracking_error.to_string(),
            r.mean_vx.to_string(),
            r.mean_vy.to_string(),
            r.mean_wz.to_string(),
        ];
        row.extend(r.mean_command.iter().map(f64::to_string));
        row.extend(r.term_sums.iter().map(f64::to_string));
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
