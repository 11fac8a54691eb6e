use quadtorque::env::vec::VecEnv;
use quadtorque::env::{DoneReason, Environment, Transition};
use quadtorque::model::{ExperimentConfig, PolicyConfig, PpoConfig};
use quadtorque::ppo::{action_streams, collect_rollout, ActionMode, ActorCritic};
use quadtorque::train::Trainer;
use quadtorque::Result;

/// Observation `[steps taken, reset seed marker]`; ends with a fall after
/// `length` steps. Reward penalizes the action magnitude.
struct Counter {
    length: u64,
    t: u64,
    marker: f64,
}

impl Counter {
    fn new(length: u64) -> Self {
        Counter {
            length,
            t: 0,
            marker: 0.0,
        }
    }

    fn obs(&self) -> Vec<f64> {
        vec![self.t as f64, self.marker]
    }
}

impl Environment for Counter {
    fn obs_dim(&self) -> usize {
        2
    }
    fn act_dim(&self) -> usize {
        1
    }
    fn term_names(&self) -> &'static [&'static str] {
        &["effort"]
    }
    fn reset(&mut self, seed: u64) -> Vec<f64> {
        self.t = 0;
        self.marker = (seed % 1000) as f64 / 1000.0;
        self.obs()
    }
    fn step(&mut self, action: &[f64]) -> Result<Transition> {
        self.t += 1;
        let r = -action[0] * action[0];
        Ok(Transition {
            obs: self.obs(),
            reward: r,
            terms: vec![r],
            done: (self.t == self.length).then_some(DoneReason::Fall),
        })
    }
}

fn small_policy(seed: u64) -> ActorCritic {
    let pc = PolicyConfig {
        hidden: vec![8],
        output_gain: 1.0,
        ..PolicyConfig::default()
    };
    ActorCritic::new(2, 1, &pc, 5.0, seed)
}

fn collect(envs: usize, length: u64, mode: ActionMode) -> quadtorque::ppo::RolloutBuffer {
    let mut ac = small_policy(4);
    let mut venv = VecEnv::new((0..envs).map(|_| Counter::new(length)).collect(), 17);
    venv.reset_all();
    let mut rngs = action_streams(99, envs);
    collect_rollout(&mut ac, &mut venv, &mut rngs, 24, mode, true).unwrap()
}

#[test]
fn four_envs_by_24_steps_fill_96_samples() {
    let b = collect(4, 1000, ActionMode::Sample);
    assert_eq!(b.len(), 96);
    assert_eq!(b.raw_obs.len(), 96 * 2);
    assert_eq!(b.obs.len(), 96 * 2);
    assert_eq!(b.actions.len(), 96);
    for v in [&b.log_probs, &b.values, &b.rewards, &b.next_values] {
        assert_eq!(v.len(), 96);
    }
    assert_eq!(b.terms.len(), 96);
    assert!(b.valid.iter().all(|&v| v));
    assert!(b.rewards.iter().all(|r| r.is_finite()));
}

#[test]
fn collection_is_reproducible() {
    assert_eq!(
        collect(3, 7, ActionMode::Mean),
        collect(3, 7, ActionMode::Mean)
    );
    assert_eq!(
        collect(3, 7, ActionMode::Sample),
        collect(3, 7, ActionMode::Sample)
    );
    assert_ne!(
        collect(3, 7, ActionMode::Sample).actions,
        collect(3, 7, ActionMode::Mean).actions
    );
}

#[test]
fn termination_marks_the_step_and_resets_in_place() {
    // one env; the episode ends on its 11th step, sample index 10
    let b = collect(1, 11, ActionMode::Sample);
    for (i, d) in b.dones.iter().enumerate() {
        assert_eq!(d.is_some(), i == 10 || i == 21, "index {i}");
    }
    assert_eq!(b.raw_obs[10 * 2], 10.0);
    assert_eq!(b.raw_obs[11 * 2], 0.0, "fresh reset observation");
    assert_ne!(
        b.raw_obs[11 * 2 + 1],
        b.raw_obs[10 * 2 + 1],
        "new reset seed"
    );
    assert_eq!(b.next_values[10], 0.0, "no bootstrap after a fall");
    assert_eq!(b.next_values[9], b.values[10]);
    assert_eq!(b.episodes.len(), 2);
    assert_eq!(b.episodes[0].length, 11);
}

/// One step per episode; an action above zero picks the arm paying 1, any
/// other action the arm paying 0.
struct Bandit;

impl Environment for Bandit {
    fn obs_dim(&self) -> usize {
        1
    }
    fn act_dim(&self) -> usize {
        1
    }
    fn term_names(&self) -> &'static [&'static str] {
        &["payout"]
    }
    fn reset(&mut self, _seed: u64) -> Vec<f64> {
        vec![0.0]
    }
    fn step(&mut self, action: &[f64]) -> Result<Transition> {
        let r = if action[0] > 0.0 { 1.0 } else { 0.0 };
        Ok(Transition {
            obs: vec![0.0],
            reward: r,
            terms: vec![r],
            done: Some(DoneReason::Fall),
        })
    }
}

/// Standard normal CDF by Simpson integration of the density.
fn phi(x: f64) -> f64 {
    let n = 2000;
    let h = x / n as f64;
    let f = |t: f64| (-0.5 * t * t).exp() / (2.0 * std::f64::consts::PI).sqrt();
    let mut s = f(0.0) + f(x);
    for i in 1..n {
        s += f(i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    0.5 + s * h / 3.0
}

#[test]
fn bandit_prefers_the_better_arm_after_50_updates() {
    let cfg = ExperimentConfig {
        ppo: PpoConfig {
            n_envs: 64,
            steps_per_env: 4,
            num_minibatches: 4,
            ..PpoConfig::default()
        },
        policy: PolicyConfig {
            hidden: vec![8],
            ..PolicyConfig::default()
        },
        ..ExperimentConfig::default()
    };
    let mut trainer = Trainer::new(&cfg, (0..64).map(|_| Bandit).collect()).unwrap();
    let p0 = phi(trainer.policy().act(&[0.0]).unwrap()[0]);
    for _ in 0..50 {
        let m = trainer.iterate().unwrap();
        assert!(m.learning_rate >= cfg.ppo.lr_min && m.learning_rate <= cfg.ppo.lr_max);
    }
    let p = phi(trainer.policy().act(&[0.0]).unwrap()[0]);
    assert!((p0 - 0.5).abs() < 0.05, "{p0}");
    assert!(p > 0.9, "better-arm probability {p}");
}

#[test]
fn simpson_cdf_matches_known_quantiles() {
    assert!((phi(1.2815515655446004) - 0.9).abs() < 1e-9);
    assert!((phi(-1.959963984540054) - 0.025).abs() < 1e-9);
}

#[test]
fn sampled_actions_have_unit_spread_by_default() {
    let b = collect(16, 1000, ActionMode::Sample);
    let dev: Vec<f64> = b.actions.iter().zip(&b.means).map(|(a, m)| a - m).collect();
    let var = dev.iter().map(|d| d * d).sum::<f64>() / dev.len() as f64;
    assert!((var - 1.0).abs() < 0.15, "{var}");
}
