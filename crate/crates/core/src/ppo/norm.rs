//! Running per-dimension mean and variance with parallel (Chan) merging.

use serde::{Deserialize, Serialize};

/// Variance floor used when normalizing.
pub const VAR_EPS: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunningNorm {
    pub mean: Vec<f64>,
    /// Population variance of everything seen so far.
    pub var: Vec<f64>,
    pub count: f64,
    pub clip: f64,
}

impl RunningNorm {
    pub fn new(dim: usize, clip: f64) -> Self {
        Self {
            mean: vec![0.0; dim],
            var: vec![1.0; dim],
            count: 0.0,
            clip,
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Folds a batch of rows into the statistics.
    pub fn update<R: AsRef<[f64]>>(&mut self, rows: &[R]) {
        let n = rows.len();
        if n == 0 {
            return;
        }
        let nb = n as f64;
        let d = self.dim();
        let mut bmean = vec![0.0; d];
        for r in rows {
            for (m, x) in bmean.iter_mut().zip(r.as_ref()) {
                *m += x;
            }
        }
        bmean.iter_mut().for_each(|m| *m /= nb);
        let mut bvar = vec![0.0; d];
        for r in rows {
            for ((v, x), m) in bvar.iter_mut().zip(r.as_ref()).zip(&bmean) {
                *v += (x - m) * (x - m);
            }
        }
        bvar.iter_mut().for_each(|v| *v /= nb);

        if self.count == 0.0 {
            self.mean = bmean;
            self.var = bvar;
            self.count = nb;
            return;
        }
        let na = self.count;
        let total = na + nb;
        for i in 0..d {
            let delta = bmean[i] - self.mean[i];
            let m2 = self.var[i] * na + bvar[i] * nb + delta * delta * na * nb / total;
            self.mean[i] += delta * nb / total;
            self.var[i] = m2 / total;
        }
        self.count = total;
    }

    /// `(x - mean) / sqrt(var + eps)`, clipped to `[-clip, clip]`.
    pub fn normalize_into(&self, x: &[f64], out: &mut [f32]) {
        for i in 0..x.len() {
            let z = (x[i] - self.mean[i]) / (self.var[i] + VAR_EPS).sqrt();
            out[i] = z.clamp(-self.clip, self.clip) as f32;
        }
    }

    pub fn normalize(&self, x: &[f64]) -> Vec<f32> {
        let mut out = vec![0.0; x.len()];
        self.normalize_into(x, &mut out);
        out
    }
}
