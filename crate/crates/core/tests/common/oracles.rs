//! Independent reference computations used to check the library.

use ndarray::Array2;
use rand::Rng;

use quadtorque::nn::Mlp;

/// Double-double number: `hi + lo` with |lo| <= ulp(hi) / 2.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dd {
    pub hi: f64,
    pub lo: f64,
}

impl Dd {
    pub const ZERO: Dd = Dd { hi: 0.0, lo: 0.0 };

    pub fn new(x: f64) -> Self {
        Dd { hi: x, lo: 0.0 }
    }

    fn two_sum(a: f64, b: f64) -> Dd {
        let s = a + b;
        let bb = s - a;
        let err = (a - (s - bb)) + (b - bb);
        Dd { hi: s, lo: err }
    }

    fn quick(hi: f64, lo: f64) -> Dd {
        let s = hi + lo;
        Dd {
            hi: s,
            lo: lo - (s - hi),
        }
    }

    pub fn add(self, o: Dd) -> Dd {
        let s = Self::two_sum(self.hi, o.hi);
        let t = Self::two_sum(self.lo, o.lo);
        let r = Self::quick(s.hi, s.lo + t.hi);
        Self::quick(r.hi, r.lo + t.lo)
    }

    pub fn sub(self, o: Dd) -> Dd {
        self.add(Dd {
            hi: -o.hi,
            lo: -o.lo,
        })
    }

    pub fn mul(self, o: Dd) -> Dd {
        let p = self.hi * o.hi;
        let err = self.hi.mul_add(o.hi, -p);
        Self::quick(p, err + self.hi * o.lo + self.lo * o.hi)
    }

    pub fn to_f64(self) -> f64 {
        self.hi + self.lo
    }
}

/// One environment's trajectory for the GAE oracle. `cont[t]` is false when
/// the episode ends at step t; `next_values[t]` is the bootstrap for the
/// state after step t.
pub struct Trajectory {
    pub rewards: Vec<f64>,
    pub values: Vec<f64>,
    pub next_values: Vec<f64>,
    pub cont: Vec<bool>,
}

impl Trajectory {
    pub fn random<R: Rng>(len: usize, rng: &mut R) -> Self {
        let mut t = Trajectory {
            rewards: (0..len).map(|_| rng.random_range(-1.0..1.0)).collect(),
            values: (0..len).map(|_| rng.random_range(-2.0..2.0)).collect(),
            next_values: (0..len).map(|_| rng.random_range(-2.0..2.0)).collect(),
            cont: (0..len).map(|_| !rng.random_bool(0.2)).collect(),
        };
        // within an episode the bootstrap is the next state's value
        for i in 0..len.saturating_sub(1) {
            if t.cont[i] {
                t.next_values[i] = t.values[i + 1];
            } else if rng.random_bool(0.5) {
                t.next_values[i] = 0.0;
            }
        }
        t
    }
}

/// Advantages as explicit sums of discounted TD errors,
/// `A_t = sum_l (gamma * lambda)^l * delta_{t+l}`, truncated at the end of
/// the episode or the rollout. Evaluated in double-double arithmetic.
pub fn brute_force_gae(tr: &Trajectory, gamma: f64, lambda: f64) -> Vec<f64> {
    let n = tr.rewards.len();
    let g = Dd::new(gamma);
    let gl = g.mul(Dd::new(lambda));
    let delta: Vec<Dd> = (0..n)
        .map(|t| {
            Dd::new(tr.rewards[t])
                .add(g.mul(Dd::new(tr.next_values[t])))
                .sub(Dd::new(tr.values[t]))
        })
        .collect();
    (0..n)
        .map(|t| {
            let mut acc = Dd::ZERO;
            let mut w = Dd::new(1.0);
            #[allow(clippy::needless_range_loop)]
            for l in t..n {
                acc = acc.add(w.mul(delta[l]));
                if !tr.cont[l] {
                    break;
                }
                w = w.mul(gl);
            }
            acc.to_f64()
        })
        .collect()
}

/// Mean and population variance of the concatenation of `rows`, per column.
pub fn batch_moments(rows: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>) {
    let d = rows[0].len();
    let n = rows.len() as f64;
    let mean: Vec<f64> = (0..d)
        .map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / n)
        .collect();
    let var = (0..d)
        .map(|j| rows.iter().map(|r| (r[j] - mean[j]).powi(2)).sum::<f64>() / n)
        .collect();
    (mean, var)
}

/// Worst relative error between backprop and central differences of
/// `L = sum(upstream * net(x))` over every parameter of `net`.
pub fn gradient_check(net: &Mlp<f64>, x: &Array2<f64>, upstream: &Array2<f64>, h: f64) -> f64 {
    let (_, cache) = net.forward_cached(x.view()).unwrap();
    let analytic = net.backward(&cache, upstream.view()).unwrap().flat();
    let loss = |m: &Mlp<f64>| (&m.forward(x.view()).unwrap() * upstream).sum();
    let base = net.flat();
    let mut probe = net.clone();
    let mut worst: f64 = 0.0;
    for i in 0..base.len() {
        let mut p = base.clone();
        p[i] = base[i] + h;
        probe.set_flat(&p).unwrap();
        let up = loss(&probe);
        p[i] = base[i] - h;
        probe.set_flat(&p).unwrap();
        let down = loss(&probe);
        let numeric = (up - down) / (2.0 * h);
        let scale = analytic[i].abs().max(numeric.abs()).max(1e-6);
        worst = worst.max((analytic[i] - numeric).abs() / scale);
    }
    worst
}
