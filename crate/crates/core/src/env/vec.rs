//! Batched environments stepped in parallel.
//!
//! Each slot owns its environment and its own reset-seed stream, so results
//! do not depend on thread scheduling. Outputs are returned in slot order.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{DoneReason, Environment};

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeSummary {
    pub env: usize,
    pub total_reward: f64,
    pub length: u64,
    /// Per-term sums over the episode.
    pub terms: Vec<f64>,
    pub reason: DoneReason,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnvStep {
    /// The observation the policy acts on next (a fresh reset observation
    /// when the episode ended).
    pub obs: Vec<f64>,
    pub reward: f64,
    pub terms: Vec<f64>,
    pub done: Option<DoneReason>,
    /// Final observation of a timed-out episode, for bootstrapping.
    pub terminal_obs: Option<Vec<f64>>,
    /// False when the environment raised an error; the sample should not be
    /// trained on.
    pub valid: bool,
    pub finished: Option<EpisodeSummary>,
}

struct Slot<E> {
    index: usize,
    env: E,
    seeds: ChaCha8Rng,
    ret: f64,
    len: u64,
    terms: Vec<f64>,
}

impl<E: Environment> Slot<E> {
    fn reset(&mut self) -> Vec<f64> {
        self.ret = 0.0;
        self.len = 0;
        self.terms.iter_mut().for_each(|t| *t = 0.0);
        let seed = self.seeds.next_u64();
        self.env.reset(seed)
    }

    fn step(&mut self, action: &[f64]) -> EnvStep {
        let n_terms = self.terms.len();
        let (obs, reward, terms, done, valid) = match self.env.step(action) {
            Ok(t) => (t.obs, t.reward, t.terms, t.done, true),
            Err(e) => {
                log::warn!(
                    "env {} failed at episode step {}: {e}",
                    self.index,
                    self.len + 1
                );
                (
                    Vec::new(),
                    0.0,
                    vec![0.0; n_terms],
                    Some(DoneReason::Failure),
                    false,
                )
            }
        };
        self.ret += reward;
        self.len += 1;
        for (acc, t) in self.terms.iter_mut().zip(&terms) {
            *acc += t;
        }
        match done {
            None => EnvStep {
                obs,
                reward,
                terms,
                done,
                terminal_obs: None,
                valid,
                finished: None,
            },
            Some(reason) => {
                let summary = EpisodeSummary {
                    env: self.index,
                    total_reward: self.ret,
                    length: self.len,
                    terms: self.terms.clone(),
                    reason,
                };
                let terminal_obs = (reason == DoneReason::Timeout).then_some(obs);
                let fresh = self.reset();
                EnvStep {
                    obs: fresh,
                    reward,
                    terms,
                    done,
                    terminal_obs,
                    valid,
                    finished: Some(summary),
                }
            }
        }
    }
}

pub struct VecEnv<E> {
    slots: Vec<Slot<E>>,
    obs: Vec<Vec<f64>>,
    failures: usize,
}

impl<E: Environment> VecEnv<E> {
    /// Wraps `envs`; environment `i` draws its episode seeds from stream `i`
    /// of a generator seeded with `seed`.
    pub fn new(envs: Vec<E>, seed: u64) -> Self {
        let slots: Vec<Slot<E>> = envs
            .into_iter()
            .enumerate()
            .map(|(index, env)| {
                let mut seeds = ChaCha8Rng::seed_from_u64(seed);
                seeds.set_stream(index as u64);
                let terms = vec![0.0; env.term_names().len()];
                Slot {
                    index,
                    env,
                    seeds,
                    ret: 0.0,
                    len: 0,
                    terms,
                }
            })
            .collect();
        let mut v = Self {
            slots,
            obs: Vec::new(),
            failures: 0,
        };
        v.reset_all();
        v
    }

    pub fn reset_all(&mut self) -> &[Vec<f64>] {
        self.obs = self.slots.par_iter_mut().map(|s| s.reset()).collect();
        &self.obs
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn obs_dim(&self) -> usize {
        self.slots[0].env.obs_dim()
    }

    pub fn act_dim(&self) -> usize {
        self.slots[0].env.act_dim()
    }

    pub fn term_names(&self) -> &'static [&'static str] {
        self.slots[0].env.term_names()
    }

    /// Current observations, one per environment.
    pub fn observations(&self) -> &[Vec<f64>] {
        &self.obs
    }

    /// Number of environment errors so far.
    pub fn failures(&self) -> usize {
        self.failures
    }

    pub fn env(&self, i: usize) -> &E {
        &self.slots[i].env
    }

    pub fn env_mut(&mut self, i: usize) -> &mut E {
        &mut self.slots[i].env
    }

    /// Steps every environment with its action. Ended episodes are reset in
    /// place.
    pub fn step(&mut self, actions: &[Vec<f64>]) -> Vec<EnvStep> {
        assert_eq!(
            actions.len(),
            self.slots.len(),
            "one action per environment"
        );
        let out: Vec<EnvStep> = self
            .slots
            .par_iter_mut()
            .zip(actions.par_iter())
            .map(|(slot, a)| slot.step(a))
            .collect();
        for (o, s) in self.obs.iter_mut().zip(&out) {
            o.clone_from(&s.obs);
        }
        let failed = out.iter().filter(|s| !s.valid).count();
        if failed > 0 {
            self.failures += failed;
            log::warn!("{failed} environment step(s) failed and were excised");
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::pendulum::PendulumEnv;
    use crate::model::{PendulumConfig, SimConfig};

    fn pendulums(n: usize, horizon: u64) -> VecEnv<PendulumEnv> {
        let cfg = PendulumConfig {
            horizon_steps: horizon,
            ..PendulumConfig::default()
        };
        let sim = SimConfig {
            dt: 0.01,
            ..SimConfig::default()
        };
        let envs = (0..n)
            .map(|_| PendulumEnv::new(cfg.clone(), sim.clone()).unwrap())
            .collect();
        VecEnv::new(envs, 9)
    }

    #[test]
    fn timeout_resets_in_place_and_keeps_terminal_obs() {
        let mut v = pendulums(3, 10);
        let actions = vec![vec![0.0]; 3];
        for t in 1..=10 {
            let out = v.step(&actions);
            for s in &out {
                if t < 10 {
                    assert!(s.done.is_none());
                } else {
                    assert_eq!(s.done, Some(DoneReason::Timeout));
                    assert!(s.terminal_obs.is_some());
                    assert_eq!(s.finished.as_ref().unwrap().length, 10);
                }
            }
        }
    }

    #[test]
    fn streams_are_reproducible() {
        let mut a = pendulums(4, 7);
        let mut b = pendulums(4, 7);
        let actions: Vec<Vec<f64>> = (0..4).map(|i| vec![0.1 * i as f64]).collect();
        for _ in 0..30 {
            assert_eq!(a.step(&actions), b.step(&actions));
        }
        assert_ne!(a.observations()[0], a.observations()[1]);
    }

    #[test]
    fn errors_are_excised_and_reset() {
        let mut v = pendulums(2, 50);
        let out = v.step(&[vec![f64::NAN], vec![0.0]]);
        assert!(!out[0].valid && out[1].valid);
        assert_eq!(out[0].done, Some(DoneReason::Failure));
        assert_eq!(v.failures(), 1);
        assert_eq!(v.observations()[0].len(), 3);
    }
}
