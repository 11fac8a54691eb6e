//! Gaussian actor-critic over normalized observations.

use ndarray::{Array2, ArrayView2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::norm::RunningNorm;
use crate::error::{Error, Result};
use crate::model::PolicyConfig;
use crate::nn::Mlp;

/// Policy network, value network, action log-std and the observation
/// normalizer they were trained with.
#[derive(Debug, Clone, PartialEq)]
pub struct ActorCritic {
    pub actor: Mlp<f32>,
    pub critic: Mlp<f32>,
    pub log_std: Vec<f64>,
    pub norm: RunningNorm,
}

impl ActorCritic {
    pub fn new(
        obs_dim: usize,
        act_dim: usize,
        cfg: &PolicyConfig,
        obs_clip: f64,
        seed: u64,
    ) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut sizes = vec![obs_dim];
        sizes.extend(&cfg.hidden);
        sizes.push(act_dim);
        let actor = Mlp::new(&sizes, cfg.output_gain, &mut rng);
        *sizes.last_mut().unwrap() = 1;
        let critic = Mlp::new(&sizes, 1.0, &mut rng);
        Self {
            actor,
            critic,
            log_std: vec![cfg.init_log_std; act_dim],
            norm: RunningNorm::new(obs_dim, obs_clip),
        }
    }

    pub fn obs_dim(&self) -> usize {
        self.actor.input_dim()
    }

    pub fn act_dim(&self) -> usize {
        self.actor.output_dim()
    }

    /// Normalizes raw observation rows into a network input batch.
    pub fn normalize_batch<R: AsRef<[f64]>>(&self, rows: &[R]) -> Result<Array2<f32>> {
        let d = self.obs_dim();
        let mut x = Array2::<f32>::zeros((rows.len(), d));
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != d {
                return Err(Error::ShapeMismatch {
                    expected: format!("{d}-d observation"),
                    actual: format!("{}-d observation", r.len()),
                });
            }
            let mut row = x.row_mut(i);
            self.norm
                .normalize_into(r, row.as_slice_mut().expect("row-major batch"));
        }
        Ok(x)
    }

    pub fn means(&self, x: ArrayView2<f32>) -> Result<Array2<f32>> {
        self.actor.forward(x)
    }

    pub fn values(&self, x: ArrayView2<f32>) -> Result<Vec<f64>> {
        Ok(self
            .critic
            .forward(x)?
            .iter()
            .map(|&v| f64::from(v))
            .collect())
    }

    /// Mean action for one raw observation.
    pub fn act(&self, obs: &[f64]) -> Result<Vec<f64>> {
        let x = self.normalize_batch(&[obs])?;
        Ok(self
            .means(x.view())?
            .iter()
            .map(|&v| f64::from(v))
            .collect())
    }

    /// Mean actions for a batch of raw observations.
    pub fn act_batch<R: AsRef<[f64]>>(&self, rows: &[R]) -> Result<Vec<Vec<f64>>> {
        let x = self.normalize_batch(rows)?;
        let m = self.means(x.view())?;
        Ok(m.rows()
            .into_iter()
            .map(|r| r.iter().map(|&v| f64::from(v)).collect())
            .collect())
    }
}
