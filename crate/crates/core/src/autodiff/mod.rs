//! Reverse-mode automatic differentiation over NCHW tensors.
//!
//! A [`Tape`] records every operation of one forward pass as a node holding its
//! output value and whatever the backward rule needs. [`Tape::backward`] walks
//! the nodes in reverse and returns [`Gradients`] for every node that requires
//! them; [`ParamStore::accumulate`] routes those into parameter `.grad` fields.
//!
//! ```
//! use cssr_core::{Tape, Tensor};
//!
//! let mut tape = Tape::<f64>::new();
//! let x = tape.input(Tensor::from_f64([1, 1, 1, 3], &[-1.0, 0.5, 2.0]).unwrap());
//! let y = tape.relu(x);
//! let loss = tape.sum(y);
//! let grads = tape.backward(loss).unwrap();
//! assert_eq!(grads.get(x).unwrap().data(), &[0.0, 1.0, 1.0]);
//! ```

pub mod gradcheck;
mod kernels;

use std::hash::{DefaultHasher, Hash, Hasher};

use crate::error::{config_err, shape_err, Error, Result};
use crate::param::{ParamId, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::Tensor;


/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Zero padding for [`Tape::conv2d`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Padding {
    /// `(k - 1) / 2` on every side; only valid for odd kernels.
    Same,
    Explicit(usize),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Activation {
    Relu,
    LeakyRelu(f64),
    Sigmoid,
    Tanh,
}

#[derive(Clone, Debug)]
enum Op<T> {
    Leaf,
    Conv {
        x: Var,
        w: Var,
        b: Option<Var>,
        geom: kernels::ConvGeom,
    },
    Act(Var, Activation),
    MaxPool2 {
        x: Var,
        argmax: Vec<usize>,
    },
    GlobalAvgPool(Var),
    PixelShuffle(Var, usize),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Concat(Vec<Var>),
    ChannelScale {
        x: Var,
        s: Var,
    },
    Affine(Var, T),
    SubScalar {
        x: Var,
        s: Var,
    },
    Abs(Var),
    Sum(Var),
    Mean(Var),
    Bce {
        p: Var,
        labels: Tensor<T>,
    },
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

#[derive(Clone, Copy, Debug)]
struct Binding {
    var: Var,
    store: u64,
    param: ParamId,
}

/// Probabilities are clamped to `[BCE_EPS, 1 - BCE_EPS]` before taking logs.
pub const BCE_EPS: f64 = 1e-7;

/// Recorded forward computation. Nodes are appended in execution order, so the
/// node list is always topologically sorted.
#[derive(Debug)]
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
    bindings: Vec<Binding>,
    frozen: Vec<u64>,
    kink: f64,
    branches: DefaultHasher,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Per-node gradients produced by [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            bindings: Vec::new(),
            frozen: Vec::new(),
            kink: f64::INFINITY,
            branches: DefaultHasher::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    /// Differentiable leaf (gradients are reported for it).
    pub fn input(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Non-differentiable leaf.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Parameters of this store are bound as constants from now on.
    pub fn freeze_store(&mut self, store: &ParamStore<T>) {
        self.frozen.push(store.id());
    }

    /// Bind a parameter as a leaf; gradients flow back to it through
    /// [`ParamStore::accumulate`] unless its store is frozen on this tape.
    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Var {
        let value = store.get(id).value.clone();
        if self.frozen.contains(&store.id()) {
            return self.constant(value);
        }
        let var = self.input(value);
        self.bindings.push(Binding {
            var,
            store: store.id(),
            param: id,
        });
        var
    }

    /// Smallest distance to a non-differentiable point (relu/abs argument,
    /// max-pool tie) seen so far on this tape.
    pub fn kink_distance(&self) -> f64 {
        self.kink
    }

    /// Hash of which side of every kink each argument fell on. Two forward
    /// passes with equal signatures took the same piecewise-linear branch.
    pub fn branch_signature(&self) -> u64 {
        self.branches.finish()
    }

    fn note_kink(&mut self, x: &Tensor<T>) {
        let mut m = f64::INFINITY;
        for v in x.data() {
            m = m.min(v.as_f64().abs());
            (*v > T::zero()).hash(&mut self.branches);
        }
        self.kink = self.kink.min(m);
    }

    // ---------------------------------------------------------------- ops

    /// Stride-1 cross-correlation plus per-channel bias.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, padding: Padding) -> Result<Var> {
        self.conv2d_strided(x, w, b, padding, 1)
    }

    pub fn conv2d_strided(
        &mut self,
        x: Var,
        w: Var,
        b: Option<Var>,
        padding: Padding,
        stride: usize,
    ) -> Result<Var> {
        let xs = self.value(x).shape();
        let ws = self.value(w).shape();
        if xs[1] != ws[1] {
            return Err(shape_err!(
                "conv2d input has {} channels, weight expects {}",
                xs[1],
                ws[1]
            ));
        }
        if let Some(b) = b {
            let bs = self.value(b).shape();
            if bs != [1, ws[0], 1, 1] {
                return Err(shape_err!("conv2d bias shape {:?}, expected [1, {}, 1, 1]", bs, ws[0]));
            }
        }
        let pad = match padding {
            Padding::Same => {
                if ws[2].is_multiple_of(2) || ws[3].is_multiple_of(2) {
                    return Err(config_err!(
                        "same padding requires an odd kernel, got {}x{}",
                        ws[2],
                        ws[3]
                    ));
                }
                if ws[2] != ws[3] {
                    return Err(config_err!("same padding requires a square kernel"));
                }
                (ws[2] - 1) / 2
            }
            Padding::Explicit(p) => p,
        };
        if stride == 0 {
            return Err(config_err!("stride must be positive"));
        }
        if xs[2] + 2 * pad < ws[2] || xs[3] + 2 * pad < ws[3] {
            return Err(shape_err!(
                "kernel {}x{} larger than padded input {:?}",
                ws[2],
                ws[3],
                xs
            ));
        }
        let geom = kernels::ConvGeom { pad, stride };
        let out = kernels::conv2d_forward(self.value(x), self.value(w), b.map(|b| self.value(b)), geom);
        let rg = self.rg(x) || self.rg(w) || b.is_some_and(|b| self.rg(b));
        Ok(self.push(out, Op::Conv { x, w, b, geom }, rg))
    }

    pub fn activation(&mut self, x: Var, kind: Activation) -> Var {
        let xv = self.value(x);
        let out = match kind {
            Activation::Relu => xv.map(|v| if v > T::zero() { v } else { T::zero() }),
            Activation::LeakyRelu(s) => {
                let s = T::of(s);
                xv.map(|v| if v > T::zero() { v } else { s * v })
            }
            Activation::Sigmoid => xv.map(sigmoid),
            Activation::Tanh => xv.map(|v| v.tanh()),
        };
        if matches!(kind, Activation::Relu | Activation::LeakyRelu(_)) {
            let xv = xv.clone();
            self.note_kink(&xv);
        }
        let rg = self.rg(x);
        self.push(out, Op::Act(x, kind), rg)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.activation(x, Activation::Relu)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.activation(x, Activation::Sigmoid)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.activation(x, Activation::Tanh)
    }

    pub fn maxpool2(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).shape();
        if !s[2].is_multiple_of(2) || !s[3].is_multiple_of(2) {
            return Err(shape_err!("maxpool2 needs even spatial dims, got {}x{}", s[2], s[3]));
        }
        let (out, argmax, gap) = kernels::maxpool2_forward(self.value(x));
        self.kink = self.kink.min(gap.as_f64());
        argmax.hash(&mut self.branches);
        let rg = self.rg(x);
        Ok(self.push(out, Op::MaxPool2 { x, argmax }, rg))
    }

    /// Mean over `H x W`, producing `(b, c, 1, 1)`.
    pub fn global_avg_pool(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let [n, c, h, w] = xv.shape();
        let inv = T::of(1.0 / (h * w) as f64);
        let mut out = Tensor::zeros([n, c, 1, 1]);
        for b in 0..n {
            for ch in 0..c {
                out.data_mut()[b * c + ch] = xv.plane(b, ch).iter().copied().sum::<T>() * inv;
            }
        }
        let rg = self.rg(x);
        self.push(out, Op::GlobalAvgPool(x), rg)
    }

    pub fn pixel_shuffle(&mut self, x: Var, r: usize) -> Result<Var> {
        let c = self.value(x).channels();
        if r == 0 || !c.is_multiple_of(r * r) {
            return Err(shape_err!("pixel_shuffle: {c} channels not divisible by {r}^2"));
        }
        let out = kernels::pixel_shuffle(self.value(x), r);
        let rg = self.rg(x);
        Ok(self.push(out, Op::PixelShuffle(x, r), rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).zip_map(self.value(b), |p, q| p + q)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).zip_map(self.value(b), |p, q| p - q)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Sub(a, b), rg))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).zip_map(self.value(b), |p, q| p * q)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Mul(a, b), rg))
    }

    /// Stack along channels; batch and spatial dims must agree.
    pub fn channel_concat(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| shape_err!("channel_concat of zero tensors"))?;
        let s0 = self.value(*first).shape();
        for p in parts {
            let s = self.value(*p).shape();
            if s[0] != s0[0] || s[2] != s0[2] || s[3] != s0[3] {
                return Err(shape_err!("channel_concat: {:?} incompatible with {:?}", s, s0));
            }
        }
        let vals: Vec<&Tensor<T>> = parts.iter().map(|p| self.value(*p)).collect();
        let out = kernels::channel_concat(&vals);
        let rg = parts.iter().any(|p| self.rg(*p));
        Ok(self.push(out, Op::Concat(parts.to_vec()), rg))
    }

    /// `x * s` with `s` of shape `(b, c, 1, 1)` broadcast over `H x W`.
    pub fn channel_scale(&mut self, x: Var, s: Var) -> Result<Var> {
        let xv = self.value(x);
        let sv = self.value(s);
        if !kernels::broadcast_shape_ok(xv.shape(), sv.shape()) {
            return Err(shape_err!(
                "channel_scale: scale {:?} does not broadcast over {:?}",
                sv.shape(),
                xv.shape()
            ));
        }
        let [n, c, h, w] = xv.shape();
        let hw = h * w;
        let mut out = xv.clone();
        for p in 0..n * c {
            let k = sv.data()[p];
            out.data_mut()[p * hw..(p + 1) * hw].iter_mut().for_each(|v| *v *= k);
        }
        let rg = self.rg(x) || self.rg(s);
        Ok(self.push(out, Op::ChannelScale { x, s }, rg))
    }

    /// `x * scale`.
    pub fn scale(&mut self, x: Var, scale: f64) -> Var {
        let k = T::of(scale);
        let out = self.value(x).map(|v| v * k);
        let rg = self.rg(x);
        self.push(out, Op::Affine(x, k), rg)
    }

    /// `x - s` where `s` holds a single element.
    pub fn sub_scalar(&mut self, x: Var, s: Var) -> Result<Var> {
        if self.value(s).len() != 1 {
            return Err(shape_err!("sub_scalar expects a one-element tensor"));
        }
        let k = self.value(s).data()[0];
        let out = self.value(x).map(|v| v - k);
        let rg = self.rg(x) || self.rg(s);
        Ok(self.push(out, Op::SubScalar { x, s }, rg))
    }

    pub fn abs(&mut self, x: Var) -> Var {
        let xv = self.value(x).clone();
        self.note_kink(&xv);
        let out = xv.map(|v| v.abs());
        let rg = self.rg(x);
        self.push(out, Op::Abs(x), rg)
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let out = Tensor::scalar(self.value(x).sum());
        let rg = self.rg(x);
        self.push(out, Op::Sum(x), rg)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let out = Tensor::scalar(self.value(x).mean());
        let rg = self.rg(x);
        self.push(out, Op::Mean(x), rg)
    }

    /// Mean binary cross-entropy between probabilities `p` and constant `labels`.
    pub fn bce(&mut self, p: Var, labels: Tensor<T>) -> Result<Var> {
        let pv = self.value(p);
        if pv.shape() != labels.shape() {
            return Err(shape_err!(
                "bce: probabilities {:?} vs labels {:?}",
                pv.shape(),
                labels.shape()
            ));
        }
        if let Some(bad) = pv.data().iter().find(|v| !(**v >= T::zero() && **v <= T::one())) {
            return Err(Error::Domain(format!("bce probability {bad} outside [0, 1]")));
        }
        let lo = T::of(BCE_EPS);
        let hi = T::one() - lo;
        let mut acc = T::zero();
        for (&q, &y) in pv.data().iter().zip(labels.data()) {
            let q = q.max(lo).min(hi);
            acc -= y * q.ln() + (T::one() - y) * (T::one() - q).ln();
        }
        let out = Tensor::scalar(acc / T::of(pv.len() as f64));
        let rg = self.rg(p);
        Ok(self.push(out, Op::Bce { p, labels }, rg))
    }

    // ----------------------------------------------------------- backward

    /// Gradients of the scalar `loss` with respect to every node that requires them.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        if self.value(loss).len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::ones(self.value(loss).shape()));
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backprop_node(node, &g, &mut grads);
            grads[i] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn backprop_node(&self, node: &Node<T>, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
        let mut acc = |v: Var, t: Tensor<T>| {
            if !self.nodes[v.0].requires_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&t),
                slot @ None => *slot = Some(t),
            }
        };
        match &node.op {
            Op::Leaf => {}
            Op::Conv { x, w, b, geom } => {
                let want = (self.rg(*x), self.rg(*w), b.is_some_and(|b| self.rg(b)));
                let (dx, dw, db) =
                    kernels::conv2d_backward(self.value(*x), self.value(*w), g, *geom, want);
                if let Some(dx) = dx {
                    acc(*x, dx);
                }
                if let Some(dw) = dw {
                    acc(*w, dw);
                }
                if let (Some(b), Some(db)) = (b, db) {
                    acc(*b, db);
                }
            }
            Op::Act(x, kind) => {
                let xv = self.value(*x);
                let dx = match kind {
                    Activation::Relu => xv.zip_map(g, |v, gv| if v > T::zero() { gv } else { T::zero() }),
                    Activation::LeakyRelu(s) => {
                        let s = T::of(*s);
                        xv.zip_map(g, |v, gv| if v > T::zero() { gv } else { s * gv })
                    }
                    Activation::Sigmoid => node.value.zip_map(g, |y, gv| gv * y * (T::one() - y)),
                    Activation::Tanh => node.value.zip_map(g, |y, gv| gv * (T::one() - y * y)),
                };
                acc(*x, dx.expect("same shape"));
            }
            Op::MaxPool2 { x, argmax } => {
                let mut dx = Tensor::zeros(self.value(*x).shape());
                for (k, &src) in argmax.iter().enumerate() {
                    dx.data_mut()[src] += g.data()[k];
                }
                acc(*x, dx);
            }
            Op::GlobalAvgPool(x) => {
                let [n, c, h, w] = self.value(*x).shape();
                let inv = T::of(1.0 / (h * w) as f64);
                let mut dx = Tensor::zeros([n, c, h, w]);
                let hw = h * w;
                for p in 0..n * c {
                    let v = g.data()[p] * inv;
                    dx.data_mut()[p * hw..(p + 1) * hw].fill(v);
                }
                acc(*x, dx);
            }
            Op::PixelShuffle(x, r) => acc(*x, kernels::pixel_unshuffle(g, *r)),
            Op::Add(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.clone());
            }
            Op::Sub(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.map(|v| -v));
            }
            Op::Mul(a, b) => {
                acc(*a, g.zip_map(self.value(*b), |gv, bv| gv * bv).expect("same shape"));
                acc(*b, g.zip_map(self.value(*a), |gv, av| gv * av).expect("same shape"));
            }
            Op::Concat(parts) => {
                let chans: Vec<usize> = parts.iter().map(|p| self.value(*p).channels()).collect();
                for (p, gp) in parts.iter().zip(kernels::channel_split(g, &chans)) {
                    acc(*p, gp);
                }
            }
            Op::ChannelScale { x, s } => {
                let xv = self.value(*x);
                let sv = self.value(*s);
                let [n, c, h, w] = xv.shape();
                let hw = h * w;
                let mut dx = g.clone();
                let mut ds = Tensor::zeros(sv.shape());
                for p in 0..n * c {
                    let k = sv.data()[p];
                    let gs = &g.data()[p * hw..(p + 1) * hw];
                    let xs = &xv.data()[p * hw..(p + 1) * hw];
                    ds.data_mut()[p] = gs.iter().zip(xs).map(|(&a, &b)| a * b).sum();
                    dx.data_mut()[p * hw..(p + 1) * hw].iter_mut().for_each(|v| *v *= k);
                }
                acc(*x, dx);
                acc(*s, ds);
            }
            Op::Affine(x, k) => acc(*x, g.map(|v| v * *k)),
            Op::SubScalar { x, s } => {
                acc(*x, g.clone());
                acc(*s, Tensor::full(self.value(*s).shape(), -g.sum()));
            }
            Op::Abs(x) => {
                let dx = self
                    .value(*x)
                    .zip_map(g, |v, gv| {
                        if v > T::zero() {
                            gv
                        } else if v < T::zero() {
                            -gv
                        } else {
                            T::zero()
                        }
                    })
                    .expect("same shape");
                acc(*x, dx);
            }
            Op::Sum(x) => acc(*x, Tensor::full(self.value(*x).shape(), g.data()[0])),
            Op::Mean(x) => {
                let xv = self.value(*x);
                let v = g.data()[0] / T::of(xv.len() as f64);
                acc(*x, Tensor::full(xv.shape(), v));
            }
            Op::Bce { p, labels } => {
                let pv = self.value(*p);
                let lo = T::of(BCE_EPS);
                let hi = T::one() - lo;
                let scale = g.data()[0] / T::of(pv.len() as f64);
                let dp = pv
                    .zip_map(labels, |q, y| {
                        if q < lo || q > hi {
                            T::zero()
                        } else {
                            scale * (q - y) / (q * (T::one() - q))
                        }
                    })
                    .expect("same shape");
                acc(*p, dp);
            }
        }
    }
}

impl<T: Scalar> ParamStore<T> {
    /// Add the gradients of every parameter of this store bound on `tape`.
    pub fn accumulate(&mut self, tape: &Tape<T>, grads: &Gradients<T>) {
        let id = self.id();
        for b in tape.bindings.iter().filter(|b| b.store == id) {
            if let Some(g) = grads.get(b.var) {
                self.get_mut(b.param).grad.add_assign(g);
            }
        }
    }
}

#[inline]
pub(crate) fn sigmoid<T: Scalar>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: [usize; 4], v: &[f64]) -> Tensor<f64> {
        Tensor::from_f64(shape, v).unwrap()
    }

    #[test]
    fn identity_1x1_conv() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(t([1, 1, 3, 3], &[1., 2., 3., 4., 5., 6., 7., 8., 9.]));
        let w = tape.constant(t([1, 1, 1, 1], &[1.0]));
        let b = tape.constant(t([1, 1, 1, 1], &[0.0]));
        let y = tape.conv2d(x, w, Some(b), Padding::Same).unwrap();
        assert_eq!(tape.value(y), tape.value(x));
    }

    #[test]
    fn two_by_two_all_ones_kernel_sums_window() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(t([1, 1, 2, 2], &[1., 2., 3., 4.]));
        let w = tape.constant(Tensor::ones([1, 1, 2, 2]));
        let b = tape.constant(Tensor::zeros([1, 1, 1, 1]));
        let y = tape.conv2d(x, w, Some(b), Padding::Explicit(0)).unwrap();
        assert_eq!(tape.value(y).shape(), [1, 1, 1, 1]);
        assert_eq!(tape.value(y).data(), &[10.0]);
    }

    #[test]
    fn zero_kernel_yields_bias() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::ones([2, 3, 4, 5]));
        let w = tape.constant(Tensor::zeros([2, 3, 3, 3]));
        let b = tape.constant(t([1, 2, 1, 1], &[0.25, -1.5]));
        let y = tape.conv2d(x, w, Some(b), Padding::Same).unwrap();
        let yv = tape.value(y);
        assert_eq!(yv.shape(), [2, 2, 4, 5]);
        for bch in 0..2 {
            assert!(yv.plane(bch, 0).iter().all(|&v| v == 0.25));
            assert!(yv.plane(bch, 1).iter().all(|&v| v == -1.5));
        }
    }

    #[test]
    fn conv_errors() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::ones([1, 2, 4, 4]));
        let w_bad = tape.constant(Tensor::ones([1, 3, 3, 3]));
        assert!(matches!(tape.conv2d(x, w_bad, None, Padding::Same), Err(Error::Shape(_))));
        let w_even = tape.constant(Tensor::ones([1, 2, 2, 2]));
        assert!(matches!(tape.conv2d(x, w_even, None, Padding::Same), Err(Error::Config(_))));
    }

    #[test]
    fn same_padding_preserves_size_for_odd_kernels() {
        for k in [1, 3, 5, 7, 11] {
            let mut tape = Tape::<f32>::new();
            let x = tape.constant(Tensor::ones([1, 2, 9, 13]));
            let w = tape.constant(Tensor::ones([3, 2, k, k]));
            let y = tape.conv2d(x, w, None, Padding::Same).unwrap();
            assert_eq!(tape.value(y).shape(), [1, 3, 9, 13]);
        }
    }

    #[test]
    fn activations() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(t([1, 1, 1, 3], &[-1., 0., 2.]));
        let r = tape.relu(x);
        assert_eq!(tape.value(r).data(), &[0., 0., 2.]);
        let z = tape.constant(Tensor::zeros([1, 1, 1, 1]));
        let s = tape.sigmoid(z);
        let th = tape.tanh(z);
        assert_eq!(tape.value(s).data(), &[0.5]);
        assert_eq!(tape.value(th).data(), &[0.0]);
    }

    #[test]
    fn maxpool_cases() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(t([1, 1, 2, 2], &[1., 2., 3., 4.]));
        let y = tape.maxpool2(x).unwrap();
        assert_eq!(tape.value(y).data(), &[4.0]);
        let c = tape.constant(Tensor::full([1, 2, 4, 6], 3.5));
        let yc = tape.maxpool2(c).unwrap();
        assert_eq!(tape.value(yc).shape(), [1, 2, 2, 3]);
        assert!(tape.value(yc).data().iter().all(|&v| v == 3.5));
        let odd = tape.constant(Tensor::zeros([1, 1, 3, 4]));
        assert!(matches!(tape.maxpool2(odd), Err(Error::Shape(_))));
    }

    #[test]
    fn maxpool_block_structured_matches_window_scan() {
        let data: Vec<f64> = (0..16).map(|i| ((i * 7) % 16) as f64).collect();
        let x = t([1, 1, 4, 4], &data);
        // exhaustive scan of every 2x2 window
        let mut expected = Vec::new();
        for wy in 0..2 {
            for wx in 0..2 {
                let mut m = f64::NEG_INFINITY;
                for dy in 0..2 {
                    for dx in 0..2 {
                        m = m.max(x.at([0, 0, 2 * wy + dy, 2 * wx + dx]));
                    }
                }
                expected.push(m);
            }
        }
        let mut tape = Tape::<f64>::new();
        let xv = tape.constant(x);
        let y = tape.maxpool2(xv).unwrap();
        assert_eq!(tape.value(y).data(), expected.as_slice());
    }

    #[test]
    fn global_avg_pool_cases() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(t([1, 2, 2, 2], &[0., 2., 4., 6., 5., 5., 5., 5.]));
        let y = tape.global_avg_pool(x);
        assert_eq!(tape.value(y).shape(), [1, 2, 1, 1]);
        assert_eq!(tape.value(y).data(), &[3.0, 5.0]);
    }

    #[test]
    fn pixel_shuffle_cases() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(t([1, 4, 1, 1], &[1., 2., 3., 4.]));
        let y = tape.pixel_shuffle(x, 2).unwrap();
        assert_eq!(tape.value(y).shape(), [1, 1, 2, 2]);
        assert_eq!(tape.value(y).data(), &[1., 2., 3., 4.]);
        let id = tape.pixel_shuffle(x, 1).unwrap();
        assert_eq!(tape.value(id), tape.value(x));
        let bad = tape.constant(Tensor::zeros([1, 6, 2, 2]));
        assert!(matches!(tape.pixel_shuffle(bad, 2), Err(Error::Shape(_))));
    }

    #[test]
    fn combine_identities() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(t([1, 2, 1, 2], &[1., -2., 3., 4.]));
        let z = tape.constant(Tensor::zeros([1, 2, 1, 2]));
        let s = tape.add(x, z).unwrap();
        assert_eq!(tape.value(s), tape.value(x));
        let ones = tape.constant(Tensor::ones([1, 2, 1, 1]));
        let cs = tape.channel_scale(x, ones).unwrap();
        assert_eq!(tape.value(cs), tape.value(x));
        let a = tape.constant(Tensor::zeros([1, 2, 3, 3]));
        let b = tape.constant(Tensor::zeros([1, 3, 3, 3]));
        let c = tape.channel_concat(&[a, b]).unwrap();
        assert_eq!(tape.value(c).shape(), [1, 5, 3, 3]);
        let wrong = tape.constant(Tensor::zeros([1, 2, 2, 3]));
        assert!(tape.add(a, wrong).is_err());
        assert!(tape.channel_concat(&[a, wrong]).is_err());
        let bad_scale = tape.constant(Tensor::ones([1, 3, 1, 1]));
        assert!(tape.channel_scale(a, bad_scale).is_err());
    }

    #[test]
    fn backward_simple_functionals() {
        let mut tape = Tape::<f64>::new();
        let x = tape.input(t([1, 2, 2, 1], &[0.3, 1.2, 2.0, 5.0]));
        let s = tape.sum(x);
        let g = tape.backward(s).unwrap();
        assert!(g.get(x).unwrap().data().iter().all(|&v| v == 1.0));

        let mut tape = Tape::<f64>::new();
        let x = tape.input(t([1, 2, 2, 1], &[0.3, 1.2, 2.0, 5.0]));
        let r = tape.relu(x);
        let s = tape.sum(r);
        let g = tape.backward(s).unwrap();
        assert!(g.get(x).unwrap().data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut tape = Tape::<f64>::new();
        let x = tape.input(Tensor::ones([1, 1, 2, 2]));
        assert!(matches!(tape.backward(x), Err(Error::Contract(_))));
    }

    #[test]
    fn unreachable_params_keep_zero_grad() {
        let mut store = ParamStore::<f64>::new();
        let a = store.add("a", Tensor::ones([1, 1, 1, 2])).unwrap();
        let b = store.add("b", Tensor::ones([1, 1, 1, 2])).unwrap();
        let mut tape = Tape::new();
        let av = tape.param(&store, a);
        let _bv = tape.param(&store, b);
        let l = tape.sum(av);
        let g = tape.backward(l).unwrap();
        store.accumulate(&tape, &g);
        assert_eq!(store.get(a).grad.data(), &[1.0, 1.0]);
        assert_eq!(store.get(b).grad.data(), &[0.0, 0.0]);
    }

    #[test]
    fn frozen_store_gets_no_grad() {
        let mut store = ParamStore::<f64>::new();
        let a = store.add("a", Tensor::ones([1, 1, 1, 2])).unwrap();
        let mut tape = Tape::new();
        tape.freeze_store(&store);
        let x = tape.input(Tensor::ones([1, 1, 1, 2]));
        let av = tape.param(&store, a);
        let p = tape.mul(x, av).unwrap();
        let l = tape.sum(p);
        let g = tape.backward(l).unwrap();
        store.accumulate(&tape, &g);
        assert_eq!(store.get(a).grad.data(), &[0.0, 0.0]);
        assert_eq!(g.get(x).unwrap().data(), &[1.0, 1.0]);
    }

    #[test]
    fn bce_domain() {
        let mut tape = Tape::<f64>::new();
        let p = tape.input(t([1, 1, 1, 2], &[0.5, 1.5]));
        assert!(matches!(tape.bce(p, Tensor::zeros([1, 1, 1, 2])), Err(Error::Domain(_))));
        let q = tape.input(t([1, 1, 1, 2], &[0.5, 0.5]));
        let l = tape.bce(q, t([1, 1, 1, 2], &[0.0, 1.0])).unwrap();
        assert!((tape.value(l).data()[0] - std::f64::consts::LN_2).abs() < 1e-12);
    }
}
