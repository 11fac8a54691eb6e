//! Versioned binary policy checkpoints.
//!
//! All integers and floats are little-endian.
//!
//! | field          | type                         |
//! |----------------|------------------------------|
//! | magic          | 4 bytes `QTCK`               |
//! | version        | u32 (= 1)                    |
//! | iteration      | u64                          |
//! | seed           | u64                          |
//! | fingerprint    | 32 bytes (SHA-256)           |
//! | learning rate  | f64                          |
//! | actor          | network block                |
//! | critic         | network block                |
//! | log-std        | u32 n, then n × f64          |
//! | normalizer     | u32 d, f64 count, f64 clip, d × f64 mean, d × f64 var |
//!
//! A network block is `u32 L` (number of sizes), `L × u32` layer sizes
//! (input first), then for every layer the weight matrix as `out × in` f32 in
//! row-major order (row = output unit) followed by `out` f32 biases.

use std::io::{Read, Write};
use std::path::Path;

use ndarray::{Array1, Array2};

use crate::error::{Error, Result};
use crate::nn::{Layer, Mlp};
use crate::ppo::{ActorCritic, RunningNorm};

pub const MAGIC: &[u8; 4] = b"QTCK";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyCheckpoint {
    pub iteration: u64,
    pub seed: u64,
    pub fingerprint: [u8; 32],
    pub learning_rate: f64,
    pub policy: ActorCritic,
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_f64(out: &mut Vec<u8>, v: f64) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_net(out: &mut Vec<u8>, net: &Mlp<f32>) {
    let sizes = net.sizes();
    put_u32(out, sizes.len() as u32);
    for s in sizes {
        put_u32(out, s as u32);
    }
    for l in &net.layers {
        for v in l.w.iter().chain(l.b.iter()) {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
}

struct Reader<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.data.len() {
            return Err(Error::Checkpoint(format!(
                "truncated file: wanted {n} bytes at offset {}",
                self.pos
            )));
        }
        let s = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        let raw = self.take(
            n.checked_mul(4)
                .ok_or_else(|| Error::Checkpoint("size overflow".into()))?,
        )?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        (0..n).map(|_| self.f64()).collect()
    }

    fn count(&mut self, what: &str) -> Result<usize> {
        let n = self.u32()? as usize;
        if n > 1 << 24 {
            return Err(Error::Checkpoint(format!("implausible {what} count {n}")));
        }
        Ok(n)
    }

    fn net(&mut self) -> Result<Mlp<f32>> {
        let n = self.count("layer size")?;
        if n < 2 {
            return Err(Error::Checkpoint("network needs at least two sizes".into()));
        }
        let sizes = (0..n)
            .map(|_| self.count("unit"))
            .collect::<Result<Vec<_>>>()?;
        let mut layers = Vec::with_capacity(n - 1);
        for w in sizes.windows(2) {
            let (inp, out) = (w[0], w[1]);
            let wv = self.f32s(inp * out)?;
            let bv = self.f32s(out)?;
            layers.push(Layer {
                w: Array2::from_shape_vec((out, inp), wv).unwrap(),
                b: Array1::from_vec(bv),
            });
        }
        Ok(Mlp { layers })
    }
}

impl PolicyCheckpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        put_u32(&mut out, VERSION);
        put_u64(&mut out, self.iteration);
        put_u64(&mut out, self.seed);
        out.extend_from_slice(&self.fingerprint);
        put_f64(&mut out, self.learning_rate);
        put_net(&mut out, &self.policy.actor);
        put_net(&mut out, &self.policy.critic);
        put_u32(&mut out, self.policy.log_std.len() as u32);
        for &v in &self.policy.log_std {
            put_f64(&mut out, v);
        }
        let norm = &self.policy.norm;
        put_u32(&mut out, norm.dim() as u32);
        put_f64(&mut out, norm.count);
        put_f64(&mut out, norm.clip);
        for &v in norm.mean.iter().chain(&norm.var) {
            put_f64(&mut out, v);
        }
        out
    }

    pub fn from_bytes(data: &[u8]) -> Result<Self> {
        let mut r = Reader { data, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::Checkpoint(
                "not a policy checkpoint (bad magic)".into(),
            ));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported checkpoint version {version} (expected {VERSION})"
            )));
        }
        let iteration = r.u64()?;
        let seed = r.u64()?;
        let fingerprint: [u8; 32] = r.take(32)?.try_into().unwrap();
        let learning_rate = r.f64()?;
        let actor = r.net()?;
        let critic = r.net()?;
        let n = r.count("log-std")?;
        let log_std = r.f64s(n)?;
        let d = r.count("normalizer")?;
        let count = r.f64()?;
        let clip = r.f64()?;
        let mean = r.f64s(d)?;
        let var = r.f64s(d)?;
        if r.pos != data.len() {
            return Err(Error::Checkpoint(format!(
                "{} trailing bytes",
                data.len() - r.pos
            )));
        }
        if actor.input_dim() != d
            || critic.input_dim() != d
            || actor.output_dim() != n
            || critic.output_dim() != 1
        {
            return Err(Error::Checkpoint(format!(
                "inconsistent sizes: actor {:?}, critic {:?}, log-std {n}, normalizer {d}",
                actor.sizes(),
                critic.sizes()
            )));
        }
        Ok(Self {
            iteration,
            seed,
            fingerprint,
            learning_rate,
            policy: ActorCritic {
                actor,
                critic,
                log_std,
                norm: RunningNorm {
                    mean,
                    var,
                    count,
                    clip,
                },
            },
        })
    }

    /// Writes atomically through a temporary sibling file.
    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let tmp = path.with_extension("tmp");
        let mut f = std::fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        f.write_all(&self.to_bytes())
            .map_err(|e| Error::io(&tmp, e))?;
        f.sync_all().map_err(|e| Error::io(&tmp, e))?;
        std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut data = Vec::new();
        std::fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut data))
            .map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&data)
    }

    /// Fails unless the checkpoint was trained under `fingerprint`; `force`
    /// downgrades the mismatch to a warning.
    pub fn check_fingerprint(&self, fingerprint: &[u8; 32], force: bool) -> Result<()> {
        if &self.fingerprint == fingerprint {
            return Ok(());
        }
        let msg = format!(
            "configuration fingerprint {} does not match checkpoint {}",
            hex(fingerprint),
            hex(&self.fingerprint)
        );
        if force {
            log::warn!("{msg} (continuing because of --force)");
            Ok(())
        } else {
            Err(Error::Checkpoint(format!(
                "{msg}; pass --force to load anyway"
            )))
        }
    }

    /// Fails unless the policy matches the given observation/action sizes.
    pub fn check_dims(&self, obs_dim: usize, act_dim: usize) -> Result<()> {
        let (o, a) = (self.policy.obs_dim(), self.policy.act_dim());
        if o != obs_dim || a != act_dim {
            return Err(Error::ShapeMismatch {
                expected: format!("{obs_dim}-d observation, {act_dim}-d action"),
                actual: format!("checkpoint with {o}-d observation, {a}-d action"),
            });
        }
        Ok(())
    }
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
