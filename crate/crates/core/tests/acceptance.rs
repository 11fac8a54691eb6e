//! Acceptance suite. Runs every criterion in order and prints one PASS/FAIL
//! line per criterion, then a summary.
//!
//! Set `QT_ACCEPTANCE=name,name` to run a subset (names as printed) and
//! `QT_ACCEPTANCE_STRICT=1` to exit non-zero when any criterion fails.

mod common;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Instant;

use nalgebra::Vector3;
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use common::oracles::{batch_moments, brute_force_gae, gradient_check, Trajectory};
use common::physics::{ballistic_drop, cone_rollout, energy_drift, pendulum_periods};
use common::reward::{evaluate, golden_rows};
use quadtorque::checkpoint::PolicyCheckpoint;
use quadtorque::env::obs::*;
use quadtorque::env::quadruped::{make_quadruped, QuadrupedSpec};
use quadtorque::env::{apply_action, EnvMode, Environment};
use quadtorque::metrics::{read_column, smooth, METRICS_FILE};
use quadtorque::model::{load_experiment, ExperimentConfig, ObsScales};
use quadtorque::nn::Mlp;
use quadtorque::physics::rest_state;
use quadtorque::ppo::{compute_gae, RunningNorm};
use quadtorque::train::{run_training, TrainOptions, FINAL_CHECKPOINT};
use quadtorque::validate::cross_validate;

type Check = std::result::Result<String, String>;

fn ensure(ok: bool, detail: String) -> Check {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn config(name: &str) -> ExperimentConfig {
    let path = Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("configs")
        .join(name);
    load_experiment(path).expect("bundled config loads")
}

fn rel(a: f64, b: f64) -> f64 {
    if a == b {
        0.0
    } else {
        (a - b).abs() / b.abs()
    }
}

fn reward_golden_table() -> Check {
    let mut worst: f64 = 0.0;
    let mut failures = Vec::new();
    for row in golden_rows() {
        let r = evaluate(&row.fixture);
        let err = rel(r.weighted[row.term], row.expected);
        let others: f64 = (0..r.weighted.len())
            .filter(|&i| i != row.term)
            .map(|i| r.weighted[i])
            .sum();
        let parts = r.weighted[row.term] + others;
        if err > 1e-10 || (r.total - parts).abs() > 1e-12 {
            failures.push(format!(
                "{}: {} vs {}",
                row.label, r.weighted[row.term], row.expected
            ));
        }
        worst = worst.max(err);
    }
    ensure(
        failures.is_empty(),
        format!("14 rows, worst rel err {worst:.1e} {}", failures.join("; ")),
    )
}

fn observation_contract() -> Check {
    let mut q = [0.0; 12];
    let mut qd = [0.0; 12];
    let mut last = [0.0; 12];
    for j in 0..12 {
        q[j] = 0.01 * j as f64;
        qd[j] = j as f64;
        last[j] = 0.1 * j as f64 - 0.5;
    }
    let mut st = rest_state(Vector3::new(0.0, 0.0, 0.3), q);
    st.qd = qd;
    st.base_lin_vel = Vector3::new(0.1, 0.2, 0.3);
    st.base_ang_vel = Vector3::new(1.0, 2.0, 3.0);
    let cmd = [0.5, -0.3, 1.2];
    let obs = build_observation::<ChaCha8Rng>(&st, cmd, &last, &ObsScales::default(), None);
    let mut golden = vec![0.2, 0.4, 0.6, 0.25, 0.5, 0.75, 0.0, 0.0, -1.0];
    golden.extend(q);
    golden.extend(qd.iter().map(|v| 0.05 * v));
    golden.extend([1.0, -0.6, 0.3]);
    golden.extend(last);
    if golden.len() != OBS_DIM || obs.values.len() != 48 {
        return Err(format!("length {}", obs.values.len()));
    }
    if let Some(i) = (0..OBS_DIM).find(|&i| (obs.values[i] - golden[i]).abs() > 1e-12) {
        return Err(format!("index {i}: {} vs {}", obs.values[i], golden[i]));
    }

    let mut cfg = config("flat.toml");
    cfg.env.noise_multiplier = 0.0;
    cfg.env.latency_steps = 0;
    let spec = Arc::new(QuadrupedSpec::from_experiment(&cfg).map_err(|e| e.to_string())?);
    let trace = |mode| -> Vec<Vec<f64>> {
        let mut env = make_quadruped(&spec, 0, mode).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut out = vec![env.reset(5)];
        for _ in 0..300 {
            let a: Vec<f64> = (0..12).map(|_| rng.random_range(-0.5..0.5)).collect();
            let tr = env.step(&a).unwrap();
            if tr.obs.len() != OBS_DIM {
                panic!("observation length {}", tr.obs.len());
            }
            out.push(tr.obs);
            if tr.done.is_some() {
                out.push(env.reset(6));
            }
        }
        out
    };
    let bits =
        |t: Vec<Vec<f64>>| -> Vec<u64> { t.into_iter().flatten().map(f64::to_bits).collect() };
    let same_train = bits(trace(EnvMode::Train)) == bits(trace(EnvMode::Train));
    let same_eval = bits(trace(EnvMode::Eval)) == bits(trace(EnvMode::Eval));
    ensure(
        same_train && same_eval,
        format!("48 golden indices match; noise-off replay identical: train {same_train}, eval {same_eval}"),
    )
}

fn action_pipeline() -> Check {
    let cases: [(f64, f64); 7] = [
        (1.0, 9.0),
        (10.0 / 3.0, 30.0),
        (-10.0 / 3.0, -30.0),
        (4.0, 30.0),
        (-4.0, -30.0),
        (3.0, 27.0),
        (0.0, 0.0),
    ];
    for (raw, want) in cases {
        let t = apply_action(&[raw; 12], 9.0, 30.0).map_err(|e| e.to_string())?;
        if t.0.iter().any(|&v| v != want) {
            return Err(format!("raw {raw} gave {}, want {want}", t.0[0]));
        }
    }
    let bad = apply_action(&[f64::NAN; 12], 9.0, 30.0).is_err();
    ensure(
        bad,
        "scale 9, clamp 30, raw 10/3 -> 30 exactly; NaN rejected".into(),
    )
}

fn gae_oracle() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let envs = rng.random_range(1..=3);
        let len = rng.random_range(1..=16);
        let gamma = rng.random_range(0.9..=1.0);
        let lambda = rng.random_range(0.0..=1.0);
        let trajs: Vec<Trajectory> = (0..envs)
            .map(|_| Trajectory::random(len, &mut rng))
            .collect();
        let n = envs * len;
        let (mut r, mut v, mut nv, mut c) =
            (vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![true; n]);
        for (e, tr) in trajs.iter().enumerate() {
            for t in 0..len {
                let i = t * envs + e;
                r[i] = tr.rewards[t];
                v[i] = tr.values[t];
                nv[i] = tr.next_values[t];
                c[i] = tr.cont[t];
            }
        }
        let (adv, ret) = compute_gae(&r, &v, &nv, &c, envs, gamma, lambda);
        for (e, tr) in trajs.iter().enumerate() {
            let oracle = brute_force_gae(tr, gamma, lambda);
            for (t, o) in oracle.iter().enumerate() {
                let i = t * envs + e;
                worst = worst.max((adv[i] - o).abs());
                worst = worst.max((ret[i] - (o + tr.values[t])).abs());
            }
        }
    }
    ensure(
        worst < 1e-10,
        format!("100 rollouts, max abs diff {worst:.1e}"),
    )
}

fn gradient_suite() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut worst: f64 = 0.0;
    let mut params = 0;
    for _ in 0..20 {
        let depth = rng.random_range(1..=3);
        let mut sizes = vec![rng.random_range(1..=6)];
        for _ in 0..depth {
            sizes.push(rng.random_range(2..=8));
        }
        sizes.push(rng.random_range(1..=4));
        let net = Mlp::<f64>::new(&sizes, 1.0, &mut rng);
        let rows = rng.random_range(1..=5);
        let x = Array2::from_shape_simple_fn((rows, sizes[0]), || rng.random_range(-2.0..2.0));
        let up = Array2::from_shape_simple_fn((rows, *sizes.last().unwrap()), || {
            rng.random_range(-1.0..1.0)
        });
        params += net.num_params();
        worst = worst.max(gradient_check(&net, &x, &up, 1e-6));
    }
    ensure(
        worst < 1e-3,
        format!("20 nets, {params} parameters, max rel err {worst:.1e}"),
    )
}

fn physics_checks() -> Check {
    let dz = ballistic_drop();
    let drop_err = rel(dz, -0.5 * 9.81);
    let (period, analytic) = pendulum_periods();
    let period_err = rel(period, analytic);
    let cone = cone_rollout(100_000, 3);
    let drift = energy_drift();
    let ok = drop_err < 0.01
        && period_err < 0.02
        && cone.worst_excess <= 1e-9
        && cone.force_without_penetration == 0
        && drift < 0.01;
    ensure(
        ok,
        format!(
            "drop err {drop_err:.1e}, period err {period_err:.1e}, cone excess {:.1e} over {} contact samples, energy drift {drift:.1e}",
            cone.worst_excess, cone.contact_samples
        ),
    )
}

fn running_norm_merge() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let d = rng.random_range(1..=8);
        let mut norm = RunningNorm::new(d, 5.0);
        let mut all = Vec::new();
        for _ in 0..rng.random_range(2..=10) {
            let rows: Vec<Vec<f64>> = (0..rng.random_range(1..=50))
                .map(|_| {
                    (0..d)
                        .map(|j| rng.random_range(-3.0..3.0) * (j + 1) as f64 + 10.0)
                        .collect()
                })
                .collect();
            norm.update(&rows);
            all.extend(rows);
        }
        let (mean, var) = batch_moments(&all);
        for j in 0..d {
            worst = worst
                .max(rel(norm.mean[j], mean[j]))
                .max(rel(norm.var[j], var[j]));
        }
        if norm.count != all.len() as f64 {
            return Err(format!("count {} vs {}", norm.count, all.len()));
        }
    }
    ensure(
        worst < 1e-6,
        format!("20 batch sequences, max rel err {worst:.1e}"),
    )
}

fn train(cfg: &ExperimentConfig, dir: &Path) -> Result<PathBuf, String> {
    let _ = std::fs::remove_dir_all(dir);
    let out = run_training(
        cfg,
        &TrainOptions {
            out_dir: dir.to_path_buf(),
            ..Default::default()
        },
    )
    .map_err(|e| e.to_string())?;
    Ok(out.final_checkpoint)
}

fn ppo_pendulum(work: &Path) -> Check {
    let cfg = config("pendulum.toml");
    let dir = work.join("pendulum");
    train(&cfg, &dir)?;
    let r = read_column(&dir.join(METRICS_FILE), "mean_reward").map_err(|e| e.to_string())?;
    let s = smooth(&r, 10);
    let (first, last) = (r[0], s[199]);
    ensure(
        r.len() == 200 && last >= 5.0 * first,
        format!(
            "{} envs, iter 1 {first:.5}, smoothed iter 200 {last:.5}, ratio {:.1}",
            cfg.ppo.n_envs,
            last / first
        ),
    )
}

fn quadruped_smoke(work: &Path) -> Check {
    let cfg = config("flat.toml");
    let dir = work.join("smoke");
    train(&cfg, &dir)?;
    let r = read_column(&dir.join(METRICS_FILE), "term_lin_vel_xy").map_err(|e| e.to_string())?;
    let s = smooth(&r, 50);
    let (early, late) = (s[9], s[299]);
    ensure(
        cfg.ppo.n_envs == 256 && r.len() == 300 && late >= 2.0 * early,
        format!(
            "{} envs, smoothed tracking term iter 10 {early:.3e}, iter 300 {late:.3e}, ratio {:.2}",
            cfg.ppo.n_envs,
            late / early
        ),
    )
}

fn metrics_hash(dir: &Path) -> Result<String, String> {
    let bytes = std::fs::read(dir.join(METRICS_FILE)).map_err(|e| e.to_string())?;
    Ok(quadtorque::checkpoint::hex(&Sha256::digest(&bytes)))
}

fn determinism(work: &Path) -> Check {
    let mut cfg = config("flat.toml");
    cfg.ppo.iterations = 10;
    let (a, b) = (work.join("det_a"), work.join("det_b"));
    train(&cfg, &a)?;
    train(&cfg, &b)?;
    let (ha, hb) = (metrics_hash(&a)?, metrics_hash(&b)?);
    ensure(
        ha == hb,
        format!("10 iterations x 2, sha256 {} / {}", &ha[..16], &hb[..16]),
    )
}

fn sim_to_sim(work: &Path) -> Check {
    let a = config("flat.toml");
    let ckpt_path = work.join("smoke").join(FINAL_CHECKPOINT);
    let ckpt_path = if ckpt_path.exists() {
        ckpt_path
    } else {
        let mut short = a.clone();
        short.ppo.iterations = 5;
        train(&short, &work.join("s2s_policy"))?
    };
    let ckpt = PolicyCheckpoint::load(&ckpt_path).map_err(|e| e.to_string())?;
    let same = cross_validate(&ckpt, &a, &a, 20, 11).map_err(|e| e.to_string())?;
    let b = config("validation_b.toml");
    let report = cross_validate(&ckpt, &a, &b, 20, 11).map_err(|e| e.to_string())?;
    let exact = same.tracking_retention == Some(1.0) && same.length_retention == Some(1.0);
    let applied = report.min_tracking_retention == a.validation.min_tracking_retention
        && report.max_fall_rate_increase == a.validation.max_fall_rate_increase;
    ensure(
        exact && applied,
        format!(
            "B = A retention {:?}; substeps-4 B: tracking retention {:?}, fall-rate increase {:+.2}, thresholds {}",
            same.tracking_retention,
            report.tracking_retention,
            report.fall_rate_increase,
            if report.passed { "met" } else { "not met" }
        ),
    )
}

type Criterion<'a> = (&'static str, Box<dyn Fn() -> Check + 'a>);

fn main() -> ExitCode {
    let only: Option<Vec<String>> = std::env::var("QT_ACCEPTANCE")
        .ok()
        .map(|s| s.split(',').map(|x| x.trim().to_string()).collect());
    let work = tempfile::tempdir().expect("temp dir");
    let w = work.path();
    let criteria: Vec<Criterion> = vec![
        ("reward_golden_table", Box::new(reward_golden_table)),
        ("observation_contract", Box::new(observation_contract)),
        ("action_pipeline", Box::new(action_pipeline)),
        ("gae_oracle", Box::new(gae_oracle)),
        ("gradient_suite", Box::new(gradient_suite)),
        ("physics_analytic", Box::new(physics_checks)),
        ("running_norm_merge", Box::new(running_norm_merge)),
        ("ppo_pendulum", Box::new(|| ppo_pendulum(w))),
        ("quadruped_smoke", Box::new(|| quadruped_smoke(w))),
        ("determinism", Box::new(|| determinism(w))),
        ("sim_to_sim", Box::new(|| sim_to_sim(w))),
    ];
    let strict = std::env::var("QT_ACCEPTANCE_STRICT").is_ok_and(|v| v == "1");
    let (mut ran, mut failed) = (0, 0);
    for (name, run) in criteria {
        if only.as_ref().is_some_and(|o| !o.iter().any(|n| n == name)) {
            continue;
        }
        ran += 1;
        let t = Instant::now();
        let outcome = std::panic::catch_unwind(std::panic::AssertUnwindSafe(run))
            .unwrap_or_else(|_| Err("panicked".into()));
        let secs = t.elapsed().as_secs_f64();
        match outcome {
            Ok(d) => println!("PASS {name} ({secs:.1} s): {d}"),
            Err(d) => {
                failed += 1;
                println!("FAIL {name} ({secs:.1} s): {d}");
            }
        }
    }
    println!("{} of {ran} acceptance criteria passed", ran - failed);
    if strict && failed > 0 {
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
