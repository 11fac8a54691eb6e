//! Feed-forward networks with ELU hidden layers and a linear output, exact
//! backpropagation, a diagonal Gaussian head and Adam.
//!
//! Weights are stored `(out, in)` row-major and a batch forward computes
//! `Y = X W^T + b` with one row per sample. Networks are generic over the
//! float type: training uses `f32`, gradient checks use `f64`.

use std::fmt::Debug;
use std::ops::{AddAssign, SubAssign};

use ndarray::{Array1, Array2, ArrayView2, Axis, LinalgScalar, ScalarOperand};
use num_traits::{Float, FromPrimitive};
use rand::Rng;

use crate::error::{Error, Result};

pub trait Real:
    LinalgScalar
    + Float
    + FromPrimitive
    + ScalarOperand
    + AddAssign
    + SubAssign
    + Debug
    + Send
    + Sync
    + Default
    + 'static
{
    fn lit(x: f64) -> Self {
        <Self as FromPrimitive>::from_f64(x).expect("representable")
    }
    fn as_f64(self) -> f64 {
        num_traits::ToPrimitive::to_f64(&self).expect("representable")
    }
}

impl Real for f32 {}
impl Real for f64 {}

pub fn elu<F: Real>(x: F) -> F {
    if x > F::zero() {
        x
    } else {
        x.exp() - F::one()
    }
}

pub fn elu_grad<F: Real>(x: F) -> F {
    if x > F::zero() {
        F::one()
    } else {
        x.exp()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer<F> {
    /// `(out, in)`
    pub w: Array2<F>,
    pub b: Array1<F>,
}

impl<F: Real> Layer<F> {
    pub fn zeros(inp: usize, out: usize) -> Self {
        Self {
            w: Array2::zeros((out, inp)),
            b: Array1::zeros(out),
        }
    }

    pub fn inputs(&self) -> usize {
        self.w.ncols()
    }

    pub fn outputs(&self) -> usize {
        self.w.nrows()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp<F> {
    pub layers: Vec<Layer<F>>,
}

/// Activations kept by [`Mlp::forward_cached`] for the backward pass.
#[derive(Debug, Clone)]
pub struct Cache<F> {
    /// Input to every layer.
    inputs: Vec<Array2<F>>,
    /// Pre-activations of the hidden layers.
    pre: Vec<Array2<F>>,
}

/// One gradient per parameter tensor, shaped like the network.
pub type Gradients<F> = Mlp<F>;

impl<F: Real> Mlp<F> {
    /// Fan-in scaled uniform initialization `U(-1/sqrt(in), 1/sqrt(in))` for
    /// weights and biases; the last layer is additionally scaled by
    /// `output_gain`.
    pub fn new<R: Rng>(sizes: &[usize], output_gain: f64, rng: &mut R) -> Self {
        assert!(sizes.len() >= 2, "need input and output sizes");
        let n = sizes.len() - 1;
        let layers = (0..n)
            .map(|l| {
                let (inp, out) = (sizes[l], sizes[l + 1]);
                let bound = 1.0 / (inp as f64).sqrt();
                let gain = if l + 1 == n { output_gain } else { 1.0 };
                let mut draw = || F::lit(gain * rng.random_range(-bound..bound));
                let w = Array2::from_shape_simple_fn((out, inp), &mut draw);
                let b = Array1::from_shape_simple_fn(out, &mut draw);
                Layer { w, b }
            })
            .collect();
        Self { layers }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            layers: self
                .layers
                .iter()
                .map(|l| Layer::zeros(l.inputs(), l.outputs()))
                .collect(),
        }
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![self.layers[0].inputs()];
        s.extend(self.layers.iter().map(|l| l.outputs()));
        s
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().unwrap().outputs()
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.w.len() + l.b.len()).sum()
    }

    fn check_input(&self, x: &ArrayView2<F>) -> Result<()> {
        if x.ncols() != self.input_dim() {
            return Err(Error::ShapeMismatch {
                expected: format!("{} inputs", self.input_dim()),
                actual: format!("{} inputs", x.ncols()),
            });
        }
        Ok(())
    }

    fn affine(layer: &Layer<F>, x: &ArrayView2<F>) -> Array2<F> {
        let mut y = x.dot(&layer.w.t());
        y += &layer.b;
        y
    }

    pub fn forward(&self, x: ArrayView2<F>) -> Result<Array2<F>> {
        self.check_input(&x)?;
        let mut h = Self::affine(&self.layers[0], &x);
        for layer in &self.layers[1..] {
            h.mapv_inplace(elu);
            h = Self::affine(layer, &h.view());
        }
        Ok(h)
    }

    pub fn forward_cached(&self, x: ArrayView2<F>) -> Result<(Array2<F>, Cache<F>)> {
        self.check_input(&x)?;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len() - 1);
        let mut cur = x.to_owned();
        for (l, layer) in self.layers.iter().enumerate() {
            let z = Self::affine(layer, &cur.view());
            inputs.push(cur);
            if l + 1 == self.layers.len() {
                return Ok((z, Cache { inputs, pre }));
            }
            cur = z.mapv(elu);
            pre.push(z);
        }
        unreachable!("at least one layer")
    }

    /// Gradients of a scalar loss given `d loss / d output` for every row.
    pub fn backward(&self, cache: &Cache<F>, upstream: ArrayView2<F>) -> Result<Gradients<F>> {
        if upstream.ncols() != self.output_dim() || upstream.nrows() != cache.inputs[0].nrows() {
            return Err(Error::ShapeMismatch {
                expected: format!("{} x {}", cache.inputs[0].nrows(), self.output_dim()),
                actual: format!("{} x {}", upstream.nrows(), upstream.ncols()),
            });
        }
        let mut grads = self.zeros_like();
        let mut delta = upstream.to_owned();
        for l in (0..self.layers.len()).rev() {
            let g = &mut grads.layers[l];
            g.w = delta.t().dot(&cache.inputs[l]);
            g.b = delta.sum_axis(Axis(0));
            if l > 0 {
                let mut back = delta.dot(&self.layers[l].w);
                ndarray::Zip::from(&mut back)
                    .and(&cache.pre[l - 1])
                    .for_each(|d, &z| *d = *d * elu_grad(z));
                delta = back;
            }
        }
        Ok(grads)
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.w.iter().chain(l.b.iter()).all(|v| v.is_finite()))
    }

    /// Parameters in storage order: for each layer, `w` row-major then `b`.
    pub fn flat(&self) -> Vec<F> {
        let mut out = Vec::with_capacity(self.num_params());
        for l in &self.layers {
            out.extend(l.w.iter().copied());
            out.extend(l.b.iter().copied());
        }
        out
    }

    pub fn set_flat(&mut self, values: &[F]) -> Result<()> {
        if values.len() != self.num_params() {
            return Err(Error::ShapeMismatch {
                expected: format!("{} parameters", self.num_params()),
                actual: format!("{} parameters", values.len()),
            });
        }
        let mut it = values.iter().copied();
        for l in &mut self.layers {
            l.w.iter_mut().for_each(|v| *v = it.next().unwrap());
            l.b.iter_mut().for_each(|v| *v = it.next().unwrap());
        }
        Ok(())
    }

    pub fn for_each_pair(&mut self, other: &Self, mut f: impl FnMut(&mut F, F)) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.w.iter_mut().zip(b.w.iter()).for_each(|(x, &y)| f(x, y));
            a.b.iter_mut().zip(b.b.iter()).for_each(|(x, &y)| f(x, y));
        }
    }

    pub fn squared_norm(&self) -> f64 {
        self.layers
            .iter()
            .flat_map(|l| l.w.iter().chain(l.b.iter()))
            .map(|v| {
                let x = v.as_f64();
                x * x
            })
            .sum()
    }

    pub fn scale(&mut self, s: F) {
        for l in &mut self.layers {
            l.w.mapv_inplace(|v| v * s);
            l.b.mapv_inplace(|v| v * s);
        }
    }

    /// Converts between float types.
    pub fn cast<G: Real>(&self) -> Mlp<G> {
        Mlp {
            layers: self
                .layers
                .iter()
                .map(|l| Layer {
                    w: l.w.mapv(|v| G::lit(v.as_f64())),
                    b: l.b.mapv(|v| G::lit(v.as_f64())),
                })
                .collect(),
        }
    }
}

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

/// Log density of a diagonal Gaussian.
pub fn gaussian_log_prob(mean: &[f64], log_std: &[f64], action: &[f64]) -> f64 {
    mean.iter()
        .zip(log_std)
        .zip(action)
        .map(|((m, ls), a)| {
            let z = (a - m) / ls.exp();
            -0.5 * z * z - ls - HALF_LN_2PI
        })
        .sum()
}

/// Entropy of a diagonal Gaussian.
pub fn gaussian_entropy(log_std: &[f64]) -> f64 {
    log_std.iter().map(|ls| ls + 0.5 + HALF_LN_2PI).sum()
}

/// Log density of the policy `N(forward(input), exp(log_std)^2)`.
pub fn policy_log_prob<F: Real>(
    net: &Mlp<F>,
    log_std: &[f64],
    input: &[F],
    action: &[f64],
) -> Result<f64> {
    let x =
        ArrayView2::from_shape((1, input.len()), input).map_err(|e| Error::Other(e.to_string()))?;
    let mean: Vec<f64> = net.forward(x)?.iter().map(|v| v.as_f64()).collect();
    Ok(gaussian_log_prob(&mean, log_std, action))
}

/// Adam with bias correction.
#[derive(Debug, Clone)]
pub struct Adam<F> {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Mlp<F>,
    v: Mlp<F>,
    t: u64,
}

impl<F: Real> Adam<F> {
    pub fn new(like: &Mlp<F>, beta1: f64, beta2: f64, eps: f64) -> Self {
        Self {
            beta1,
            beta2,
            eps,
            m: like.zeros_like(),
            v: like.zeros_like(),
            t: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    #[allow(clippy::assign_op_pattern)] // F has no SubAssign bound
    pub fn step(&mut self, params: &mut Mlp<F>, grads: &Mlp<F>, lr: f64) {
        self.t += 1;
        let (b1, b2) = (F::lit(self.beta1), F::lit(self.beta2));
        let one = F::one();
        self.m
            .for_each_pair(grads, |m, g| *m = b1 * *m + (one - b1) * g);
        self.v
            .for_each_pair(grads, |v, g| *v = b2 * *v + (one - b2) * g * g);
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        let step = F::lit(lr * c2.sqrt() / c1);
        let eps = F::lit(self.eps * c2.sqrt());
        for ((p, m), v) in params
            .layers
            .iter_mut()
            .zip(&self.m.layers)
            .zip(&self.v.layers)
        {
            ndarray::Zip::from(&mut p.w)
                .and(&m.w)
                .and(&v.w)
                .for_each(|p, &m, &v| *p = *p - step * m / (v.sqrt() + eps));
            ndarray::Zip::from(&mut p.b)
                .and(&m.b)
                .and(&v.b)
                .for_each(|p, &m, &v| *p = *p - step * m / (v.sqrt() + eps));
        }
    }
}
