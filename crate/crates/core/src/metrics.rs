//! Per-iteration training metrics.
//!
//! `metrics.csv` columns, in order:
//!
//! | column                | meaning                                              |
//! |-----------------------|------------------------------------------------------|
//! | `iteration`           | 1-based iteration number                             |
//! | `mean_reward`         | mean per-step total reward over valid samples        |
//! | `term_<name>`         | mean per-step weighted reward term, one per term     |
//! | `mean_episode_length` | mean length (steps) of the last 100 finished episodes|
//! | `episodes`            | episodes finished during the iteration               |
//! | `falls`               | episodes ended by a fall during the iteration        |
//! | `kl`                  | mean per-minibatch KL(rollout policy, current)       |
//! | `learning_rate`       | learning rate after the update                       |
//! | `clip_fraction`       | fraction of samples with ratio outside the clip band |
//! | `policy_loss`         | mean clipped-surrogate loss                          |
//! | `value_loss`          | mean `0.5 * (V - R)^2`                               |
//! | `entropy`             | policy entropy                                       |
//! | `env_failures`        | environment steps that raised an error               |
//! | `update_skipped`      | 1 when the update was rejected as non-finite         |
//!
//! Wall-clock timings live in a separate `timing.csv`
//! (`iteration,rollout_s,update_s,total_s`) so that `metrics.csv` is
//! reproducible bit for bit.

use std::fs::{File, OpenOptions};
use std::path::Path;

use crate::error::{Error, Result};

pub const METRICS_FILE: &str = "metrics.csv";
pub const TIMING_FILE: &str = "timing.csv";

#[derive(Debug, Clone, PartialEq, Default)]
pub struct IterationMetrics {
    pub iteration: u64,
    pub mean_reward: f64,
    pub term_means: Vec<f64>,
    pub mean_episode_length: f64,
    pub episodes: usize,
    pub falls: usize,
    pub kl: f64,
    pub learning_rate: f64,
    pub clip_fraction: f64,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub env_failures: usize,
    pub update_skipped: bool,
    pub rollout_s: f64,
    pub update_s: f64,
}

pub fn metrics_header(term_names: &[&str]) -> Vec<String> {
    let mut h = vec!["iteration".to_string(), "mean_reward".to_string()];
    h.extend(term_names.iter().map(|n| format!("term_{n}")));
    h.extend(
        [
            "mean_episode_length",
            "episodes",
            "falls",
            "kl",
            "learning_rate",
            "clip_fraction",
            "policy_loss",
            "value_loss",
            "entropy",
            "env_failures",
            "update_skipped",
        ]
        .map(String::from),
    );
    h
}

impl IterationMetrics {
    pub fn record(&self) -> Vec<String> {
        let mut r = vec![self.iteration.to_string(), self.mean_reward.to_string()];
        r.extend(self.term_means.iter().map(f64::to_string));
        r.push(self.mean_episode_length.to_string());
        r.push(self.episodes.to_string());
        r.push(self.falls.to_string());
        for v in [
            self.kl,
            self.learning_rate,
            self.clip_fraction,
            self.policy_loss,
            self.value_loss,
            self.entropy,
        ] {
            r.push(v.to_string());
        }
        r.push(self.env_failures.to_string());
        r.push(u8::from(self.update_skipped).to_string());
        r
    }
}

/// Appends metric and timing rows, writing headers only to new files.
pub struct MetricsWriter {
    metrics: csv::Writer<File>,
    timing: csv::Writer<File>,
}

fn open_csv(path: &Path, header: &[String]) -> Result<csv::Writer<File>> {
    let fresh = !path.exists()
        || std::fs::metadata(path)
            .map(|m| m.len() == 0)
            .unwrap_or(true);
    let file = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(file);
    if fresh {
        w.write_record(header)?;
        w.flush().map_err(|e| Error::io(path, e))?;
    }
    Ok(w)
}

impl MetricsWriter {
    pub fn open(dir: &Path, term_names: &[&str]) -> Result<Self> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let timing_header: Vec<String> = ["iteration", "rollout_s", "update_s", "total_s"]
            .map(String::from)
            .to_vec();
        Ok(Self {
            metrics: open_csv(&dir.join(METRICS_FILE), &metrics_header(term_names))?,
            timing: open_csv(&dir.join(TIMING_FILE), &timing_header)?,
        })
    }

    pub fn write(&mut self, m: &IterationMetrics) -> Result<()> {
        self.metrics.write_record(m.record())?;
        self.timing.write_record([
            m.iteration.to_string(),
            format!("{:.6}", m.rollout_s),
            format!("{:.6}", m.update_s),
            format!("{:.6}", m.rollout_s + m.update_s),
        ])?;
        self.metrics
            .flush()
            .map_err(|e| Error::Other(e.to_string()))?;
        self.timing.flush().map_err(|e| Error::Other(e.to_string()))
    }
}

/// Reads one numeric column of a metrics file.
pub fn read_column(path: &Path, column: &str) -> Result<Vec<f64>> {
    let mut r = csv::Reader::from_path(path)?;
    let idx = r
        .headers()?
        .iter()
        .position(|h| h == column)
        .ok_or_else(|| Error::Other(format!("no column `{column}` in {}", path.display())))?;
    r.records()
        .map(|rec| {
            let rec = rec?;
            rec[idx].parse::<f64>().map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                message: format!("column {column}: {e}"),
            })
        })
        .collect()
}

/// Trailing moving average with the given window.
pub fn smooth(values: &[f64], window: usize) -> Vec<f64> {
    let w = window.max(1);
    (0..values.len())
        .map(|i| {
            let lo = (i + 1).saturating_sub(w);
            values[lo..=i].iter().sum::<f64>() / (i + 1 - lo) as f64
        })
        .collect()
}
