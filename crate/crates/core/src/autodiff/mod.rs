//! Reverse-mode differentiation over a linear tape.
//!
//! Every operation appends one node whose inputs already exist, so the tape is
//! topologically ordered by construction and backward is a single reverse sweep.

pub(crate) mod conv;
mod gradcheck;

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

pub use gradcheck::{finite_difference_grad, max_relative_error};

use conv::ConvGeometry;

/// Logits are clamped to this magnitude before the sigmoid.
pub const LOGIT_CLAMP: f64 = 30.0;

/// Identifier of a trainable parameter registered on a tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ParamId(pub usize);

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Reduction {
    Sum,
    Mean,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BnMode {
    Train,
    Eval,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BnConfig {
    pub momentum: f64,
    pub epsilon: f64,
}

impl Default for BnConfig {
    fn default() -> Self {
        BnConfig {
            momentum: 0.1,
            epsilon: 1e-5,
        }
    }
}

/// Exponential moving averages of per-channel batch statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct RunningStats<T: Element> {
    pub mean: Tensor<T>,
    pub var: Tensor<T>,
}

impl<T: Element> RunningStats<T> {
    pub fn new(channels: usize) -> Self {
        RunningStats {
            mean: Tensor::zeros([channels]),
            var: Tensor::full([channels], T::one()),
        }
    }
}

enum Op<T: Element> {
    Leaf,
    Conv3d {
        input: Var,
        kernel: Var,
        bias: Option<Var>,
        geom: ConvGeometry,
    },
    BatchNorm {
        input: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<T>,
        inv_std: Vec<T>,
        /// Batch statistics were used, so the mean/var depend on the input.
        batch_stats: bool,
    },
    Relu(Var),
    Add(Var, Var),
    Mul(Var, Var),
    Sum(Var),
    GlobalAvgPool(Var),
    Linear {
        input: Var,
        weight: Var,
        bias: Option<Var>,
    },
    Sigmoid(Var),
    Reshape(Var),
    Bce {
        probs: Var,
        labels: Vec<f64>,
        reduction: Reduction,
    },
    BceWithLogits {
        logits: Var,
        labels: Vec<f64>,
        reduction: Reduction,
    },
}

struct Node<T: Element> {
    value: Tensor<T>,
    op: Op<T>,
    param: Option<ParamId>,
    requires_grad: bool,
}

/// Gradients keyed by parameter; parameters the loss does not reach are absent.
pub type Gradients<T> = BTreeMap<ParamId, Tensor<T>>;

#[derive(Default)]
pub struct Tape<T: Element> {
    nodes: Vec<Node<T>>,
}

fn channels_of(shape: &[usize]) -> Result<(usize, usize, usize)> {
    if shape.len() < 2 {
        return Err(Error::shape(
            "channel",
            format!("expected [batch, channels, ...], got {shape:?}"),
        ));
    }
    Ok((shape[0], shape[1], shape[2..].iter().product()))
}

fn check_labels(labels: &[f64]) -> Result<()> {
    match labels.iter().position(|&y| y != 0.0 && y != 1.0) {
        Some(i) => Err(Error::invalid(format!(
            "label {} at position {i} is not in {{0, 1}}",
            labels[i]
        ))),
        None => Ok(()),
    }
}

/// Binary cross-entropy on probabilities, accumulated in double precision.
pub fn bce_value(probs: &[f64], labels: &[f64], reduction: Reduction) -> Result<f64> {
    if probs.len() != labels.len() || probs.is_empty() {
        return Err(Error::shape(
            "batch",
            format!("{} predictions vs {} labels", probs.len(), labels.len()),
        ));
    }
    check_labels(labels)?;
    let total: f64 = probs
        .iter()
        .zip(labels)
        .map(|(&p, &y)| {
            let p = p.clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0);
            -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
        })
        .sum();
    Ok(match reduction {
        Reduction::Sum => total,
        Reduction::Mean => total / probs.len() as f64,
    })
}

/// `bce(sigmoid(clamp(z)), y)` evaluated stably from logits.
fn bce_logits_value(logits: &[f64], labels: &[f64], reduction: Reduction) -> f64 {
    let total: f64 = logits
        .iter()
        .zip(labels)
        .map(|(&z, &y)| {
            let z = z.clamp(-LOGIT_CLAMP, LOGIT_CLAMP);
            // softplus(z) - y*z
            z.max(0.0) + (-z.abs()).exp().ln_1p() - y * z
        })
        .sum();
    match reduction {
        Reduction::Sum => total,
        Reduction::Mean => total / logits.len() as f64,
    }
}

pub fn sigmoid(z: f64) -> f64 {
    let z = z.clamp(-LOGIT_CLAMP, LOGIT_CLAMP);
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

impl<T: Element> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            param: None,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// A value that receives no gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            param: None,
            requires_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    /// A trainable leaf whose gradient is reported under `id`.
    pub fn param(&mut self, id: ParamId, value: Tensor<T>) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            param: Some(id),
            requires_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    /// 3D cross-correlation. `input` is `[C, T, H, W]` or `[B, C, T, H, W]`,
    /// `kernel` is `[Cout, Cin, Kt, Kh, Kw]`, optional `bias` is `[Cout]`.
    pub fn conv3d(
        &mut self,
        input: Var,
        kernel: Var,
        bias: Option<Var>,
        stride: [usize; 3],
        padding: [usize; 3],
    ) -> Result<Var> {
        let x_shape = self.value(input).shape().to_vec();
        let k_shape = self.value(kernel).shape().to_vec();
        let (batch, dims) = match x_shape.len() {
            4 => (1, &x_shape[..]),
            5 => (x_shape[0], &x_shape[1..]),
            r => {
                return Err(Error::shape(
                    "input rank",
                    format!("conv3d expects rank 4 or 5 input, got rank {r}"),
                ))
            }
        };
        if k_shape.len() != 5 {
            return Err(Error::shape(
                "kernel rank",
                format!("conv3d kernel must be [Cout, Cin, Kt, Kh, Kw], got {k_shape:?}"),
            ));
        }
        if k_shape[1] != dims[0] {
            return Err(Error::shape(
                "input channels",
                format!("input has {} channels, kernel expects {}", dims[0], k_shape[1]),
            ));
        }
        if let Some(b) = bias {
            let bs = self.value(b).shape();
            if bs != [k_shape[0]] {
                return Err(Error::shape(
                    "bias",
                    format!("bias shape {bs:?} does not match {} output channels", k_shape[0]),
                ));
            }
        }
        let axes = ["temporal", "height", "width"];
        let mut output = [0; 3];
        for a in 0..3 {
            if stride[a] == 0 {
                return Err(Error::shape(axes[a], "stride must be positive"));
            }
            output[a] = conv::out_extent(dims[1 + a], k_shape[2 + a], stride[a], padding[a]).ok_or_else(|| {
                Error::shape(
                    axes[a],
                    format!(
                        "kernel extent {} exceeds padded input extent {}",
                        k_shape[2 + a],
                        dims[1 + a] + 2 * padding[a]
                    ),
                )
            })?;
        }
        let geom = ConvGeometry {
            batch,
            c_in: dims[0],
            c_out: k_shape[0],
            input: [dims[1], dims[2], dims[3]],
            kernel: [k_shape[2], k_shape[3], k_shape[4]],
            stride,
            padding,
            output,
        };
        let out = conv::forward(
            &geom,
            self.value(input).data(),
            self.value(kernel).data(),
            bias.map(|b| self.value(b).data()),
        );
        let mut shape = if x_shape.len() == 5 { vec![batch] } else { vec![] };
        shape.push(geom.c_out);
        shape.extend_from_slice(&output);
        let value = Tensor::new(shape, out)?;
        let mut inputs = vec![input, kernel];
        inputs.extend(bias);
        Ok(self.push(
            value,
            Op::Conv3d {
                input,
                kernel,
                bias,
                geom,
            },
            &inputs,
        ))
    }

    /// Per-channel batch normalization over every axis except axis 1.
    /// In train mode `stats` is updated with the batch moments.
    pub fn batch_norm(
        &mut self,
        input: Var,
        gamma: Var,
        beta: Var,
        stats: &mut RunningStats<T>,
        mode: BnMode,
        cfg: BnConfig,
    ) -> Result<Var> {
        if !(cfg.epsilon > 0.0) {
            return Err(Error::invalid("batch norm epsilon must be > 0"));
        }
        let shape = self.value(input).shape().to_vec();
        let (batch, channels, inner) = channels_of(&shape)?;
        if batch == 0 {
            return Err(Error::invalid("batch norm on an empty batch"));
        }
        for (what, v) in [("gamma", gamma), ("beta", beta)] {
            if self.value(v).shape() != [channels] {
                return Err(Error::shape(
                    what,
                    format!("expected [{channels}], got {:?}", self.value(v).shape()),
                ));
            }
        }
        if stats.mean.shape() != [channels] || stats.var.shape() != [channels] {
            return Err(Error::shape("running stats", format!("expected {channels} channels")));
        }
        let x = self.value(input).data();
        let g = self.value(gamma).data();
        let b = self.value(beta).data();
        let count = batch * inner;
        let mut means = vec![0.0f64; channels];
        let mut inv_std = vec![T::zero(); channels];
        let eps = cfg.epsilon;

        match mode {
            BnMode::Train => {
                for c in 0..channels {
                    let mut sum = 0.0f64;
                    for n in 0..batch {
                        sum += x[(n * channels + c) * inner..][..inner]
                            .iter()
                            .map(|v| v.as_f64())
                            .sum::<f64>();
                    }
                    let mean = sum / count as f64;
                    let mut sq = 0.0f64;
                    for n in 0..batch {
                        sq += x[(n * channels + c) * inner..][..inner]
                            .iter()
                            .map(|v| (v.as_f64() - mean).powi(2))
                            .sum::<f64>();
                    }
                    let var = sq / count as f64;
                    means[c] = mean;
                    inv_std[c] = T::of(1.0 / (var + eps).sqrt());
                    let unbiased = if count > 1 { sq / (count - 1) as f64 } else { var };
                    let m = cfg.momentum;
                    let rm = &mut stats.mean.data_mut()[c];
                    *rm = T::of((1.0 - m) * rm.as_f64() + m * mean);
                    let rv = &mut stats.var.data_mut()[c];
                    *rv = T::of((1.0 - m) * rv.as_f64() + m * unbiased);
                }
            }
            BnMode::Eval => {
                for c in 0..channels {
                    means[c] = stats.mean.data()[c].as_f64();
                    inv_std[c] = T::of(1.0 / (stats.var.data()[c].as_f64() + eps).sqrt());
                }
            }
        }

        let mut xhat = vec![T::zero(); x.len()];
        let mut out = vec![T::zero(); x.len()];
        for n in 0..batch {
            for c in 0..channels {
                let off = (n * channels + c) * inner;
                let mean = T::of(means[c]);
                for i in off..off + inner {
                    let h = (x[i] - mean) * inv_std[c];
                    xhat[i] = h;
                    out[i] = g[c] * h + b[c];
                }
            }
        }
        let value = Tensor::new(shape, out)?;
        Ok(self.push(
            value,
            Op::BatchNorm {
                input,
                gamma,
                beta,
                xhat,
                inv_std,
                batch_stats: mode == BnMode::Train,
            },
            &[input, gamma, beta],
        ))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let value = self.value(x).map(|v| if v > T::zero() { v } else { T::zero() });
        self.push(value, Op::Relu(x), &[x])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let mut value = self.value(a).clone();
        value.add_assign(self.value(b));
        Ok(self.push(value, Op::Add(a, b), &[a, b]))
    }

    /// Elementwise product of equally-shaped tensors.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| x * y)
            .collect();
        let value = Tensor::new(self.value(a).shape().to_vec(), data)?;
        Ok(self.push(value, Op::Mul(a, b), &[a, b]))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let value = Tensor::scalar(self.value(x).sum());
        self.push(value, Op::Sum(x), &[x])
    }

    /// Mean over every axis after the channel axis: `[B, C, ...] -> [B, C]`.
    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let shape = self.value(x).shape().to_vec();
        let (batch, channels, inner) = channels_of(&shape)?;
        let data = self
            .value(x)
            .data()
            .chunks(inner)
            .map(|c| c.iter().copied().sum::<T>() / T::from_usize(inner).unwrap())
            .collect();
        let value = Tensor::new([batch, channels], data)?;
        Ok(self.push(value, Op::GlobalAvgPool(x), &[x]))
    }

    /// `[B, I] x [O, I]^T + [O] -> [B, O]`.
    pub fn linear(&mut self, input: Var, weight: Var, bias: Option<Var>) -> Result<Var> {
        let xs = self.value(input).shape().to_vec();
        let ws = self.value(weight).shape().to_vec();
        if xs.len() != 2 || ws.len() != 2 || xs[1] != ws[1] {
            return Err(Error::shape(
                "features",
                format!("linear input {xs:?} incompatible with weight {ws:?}"),
            ));
        }
        if let Some(b) = bias {
            if self.value(b).shape() != [ws[0]] {
                return Err(Error::shape("bias", format!("expected [{}]", ws[0])));
            }
        }
        let (batch, fin, fout) = (xs[0], xs[1], ws[0]);
        let x = self.value(input).data();
        let w = self.value(weight).data();
        let mut out = vec![T::zero(); batch * fout];
        for n in 0..batch {
            for o in 0..fout {
                let mut acc = bias.map_or(T::zero(), |b| self.value(b).data()[o]);
                for i in 0..fin {
                    acc += x[n * fin + i] * w[o * fin + i];
                }
                out[n * fout + o] = acc;
            }
        }
        let value = Tensor::new([batch, fout], out)?;
        let mut inputs = vec![input, weight];
        inputs.extend(bias);
        Ok(self.push(value, Op::Linear { input, weight, bias }, &inputs))
    }

    /// Logistic function with the argument clamped to `±LOGIT_CLAMP`.
    pub fn sigmoid(&mut self, x: Var) -> Var {
        let value = self.value(x).map(|v| T::of(sigmoid(v.as_f64())));
        self.push(value, Op::Sigmoid(x), &[x])
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(x).clone().reshape(shape.to_vec())?;
        Ok(self.push(value, Op::Reshape(x), &[x]))
    }

    /// `-Σ y·ln p + (1-y)·ln(1-p)`, optionally divided by N.
    pub fn bce(&mut self, probs: Var, labels: &[f64], reduction: Reduction) -> Result<Var> {
        let p: Vec<f64> = self.value(probs).data().iter().map(|v| v.as_f64()).collect();
        let loss = bce_value(&p, labels, reduction)?;
        Ok(self.push(
            Tensor::scalar(T::of(loss)),
            Op::Bce {
                probs,
                labels: labels.to_vec(),
                reduction,
            },
            &[probs],
        ))
    }

    /// Same value as `bce(sigmoid(logits))` without the round trip through
    /// probabilities, which saturate in single precision.
    pub fn bce_with_logits(&mut self, logits: Var, labels: &[f64], reduction: Reduction) -> Result<Var> {
        let z: Vec<f64> = self.value(logits).data().iter().map(|v| v.as_f64()).collect();
        if z.len() != labels.len() || z.is_empty() {
            return Err(Error::shape(
                "batch",
                format!("{} logits vs {} labels", z.len(), labels.len()),
            ));
        }
        check_labels(labels)?;
        let loss = bce_logits_value(&z, labels, reduction);
        Ok(self.push(
            Tensor::scalar(T::of(loss)),
            Op::BceWithLogits {
                logits,
                labels: labels.to_vec(),
                reduction,
            },
            &[logits],
        ))
    }

    fn same_shape(&self, what: &str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(Error::shape(what, format!("{sa:?} vs {sb:?}")));
        }
        Ok(())
    }

    /// Gradients of a scalar `loss` with respect to every reachable parameter.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        if !self.value(loss).is_scalar() {
            return Err(Error::shape(
                "loss",
                format!("backward needs a scalar loss, got shape {:?}", self.value(loss).shape()),
            ));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(self.value(loss).shape().to_vec(), T::one()));
        let mut out = Gradients::new();

        for id in (0..=loss.0).rev() {
            let node = &self.nodes[id];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            if let Some(pid) = node.param {
                match out.get_mut(&pid) {
                    Some(acc) => acc.add_assign(&g),
                    None => {
                        out.insert(pid, g.clone());
                    }
                }
            }
            self.propagate(id, &g, &mut grads)?;
        }
        Ok(out)
    }

    fn accumulate(&self, grads: &mut [Option<Tensor<T>>], v: Var, g: Tensor<T>) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(acc) => acc.add_assign(&g),
            slot => *slot = Some(g),
        }
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn propagate(&self, id: usize, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) -> Result<()> {
        let node = &self.nodes[id];
        match &node.op {
            Op::Leaf => {}
            Op::Conv3d {
                input,
                kernel,
                bias,
                geom,
            } => {
                if self.wants(*input) {
                    let gi = conv::backward_input(geom, g.data(), self.value(*kernel).data());
                    let gi = Tensor::new(self.value(*input).shape().to_vec(), gi)?;
                    self.accumulate(grads, *input, gi);
                }
                if self.wants(*kernel) {
                    let gk = conv::backward_kernel(geom, g.data(), self.value(*input).data());
                    let gk = Tensor::new(self.value(*kernel).shape().to_vec(), gk)?;
                    self.accumulate(grads, *kernel, gk);
                }
                if let Some(b) = bias {
                    if self.wants(*b) {
                        let gb = Tensor::new([geom.c_out], conv::backward_bias(geom, g.data()))?;
                        self.accumulate(grads, *b, gb);
                    }
                }
            }
            Op::BatchNorm {
                input,
                gamma,
                beta,
                xhat,
                inv_std,
                batch_stats,
            } => {
                let shape = g.shape();
                let (batch, channels, inner) = channels_of(shape)?;
                let dy = g.data();
                let gam = self.value(*gamma).data();
                let mut sum_dy = vec![T::zero(); channels];
                let mut sum_dy_xhat = vec![T::zero(); channels];
                for n in 0..batch {
                    for c in 0..channels {
                        let off = (n * channels + c) * inner;
                        let mut s = T::zero();
                        let mut sx = T::zero();
                        for i in off..off + inner {
                            s += dy[i];
                            sx += dy[i] * xhat[i];
                        }
                        sum_dy[c] += s;
                        sum_dy_xhat[c] += sx;
                    }
                }
                if self.wants(*input) {
                    let m = T::from_usize(batch * inner).unwrap();
                    let mut dx = vec![T::zero(); dy.len()];
                    for n in 0..batch {
                        for c in 0..channels {
                            let off = (n * channels + c) * inner;
                            let scale = gam[c] * inv_std[c];
                            for i in off..off + inner {
                                dx[i] = if *batch_stats {
                                    scale * (dy[i] - sum_dy[c] / m - xhat[i] * sum_dy_xhat[c] / m)
                                } else {
                                    scale * dy[i]
                                };
                            }
                        }
                    }
                    self.accumulate(grads, *input, Tensor::new(shape.to_vec(), dx)?);
                }
                self.accumulate(grads, *gamma, Tensor::new([channels], sum_dy_xhat)?);
                self.accumulate(grads, *beta, Tensor::new([channels], sum_dy)?);
            }
            Op::Relu(x) => {
                let xv = self.value(*x);
                let data = g
                    .data()
                    .iter()
                    .zip(xv.data())
                    .map(|(&dy, &v)| if v > T::zero() { dy } else { T::zero() })
                    .collect();
                self.accumulate(grads, *x, Tensor::new(g.shape().to_vec(), data)?);
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.clone());
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                let ga = g.data().iter().zip(vb.data()).map(|(&d, &y)| d * y).collect();
                let gb = g.data().iter().zip(va.data()).map(|(&d, &x)| d * x).collect();
                self.accumulate(grads, *a, Tensor::new(g.shape().to_vec(), ga)?);
                self.accumulate(grads, *b, Tensor::new(g.shape().to_vec(), gb)?);
            }
            Op::Sum(x) => {
                let shape = self.value(*x).shape().to_vec();
                self.accumulate(grads, *x, Tensor::full(shape, g.item()));
            }
            Op::GlobalAvgPool(x) => {
                let shape = self.value(*x).shape().to_vec();
                let (_, _, inner) = channels_of(&shape)?;
                let scale = T::one() / T::from_usize(inner).unwrap();
                let data = g
                    .data()
                    .iter()
                    .flat_map(|&d| std::iter::repeat(d * scale).take(inner))
                    .collect();
                self.accumulate(grads, *x, Tensor::new(shape, data)?);
            }
            Op::Linear { input, weight, bias } => {
                let xs = self.value(*input);
                let w = self.value(*weight);
                let (batch, fin) = (xs.shape()[0], xs.shape()[1]);
                let fout = w.shape()[0];
                let dy = g.data();
                if self.wants(*input) {
                    let mut dx = vec![T::zero(); batch * fin];
                    for n in 0..batch {
                        for o in 0..fout {
                            let d = dy[n * fout + o];
                            for i in 0..fin {
                                dx[n * fin + i] += d * w.data()[o * fin + i];
                            }
                        }
                    }
                    self.accumulate(grads, *input, Tensor::new([batch, fin], dx)?);
                }
                if self.wants(*weight) {
                    let mut dw = vec![T::zero(); fout * fin];
                    for n in 0..batch {
                        for o in 0..fout {
                            let d = dy[n * fout + o];
                            for i in 0..fin {
                                dw[o * fin + i] += d * xs.data()[n * fin + i];
                            }
                        }
                    }
                    self.accumulate(grads, *weight, Tensor::new([fout, fin], dw)?);
                }
                if let Some(b) = bias {
                    let mut db = vec![T::zero(); fout];
                    for n in 0..batch {
                        for o in 0..fout {
                            db[o] += dy[n * fout + o];
                        }
                    }
                    self.accumulate(grads, *b, Tensor::new([fout], db)?);
                }
            }
            Op::Sigmoid(x) => {
                let xv = self.value(*x);
                let yv = &node.value;
                let clamp = T::of(LOGIT_CLAMP);
                let data = g
                    .data()
                    .iter()
                    .zip(yv.data().iter().zip(xv.data()))
                    .map(|(&d, (&y, &z))| {
                        if z.abs() > clamp {
                            T::zero()
                        } else {
                            d * y * (T::one() - y)
                        }
                    })
                    .collect();
                self.accumulate(grads, *x, Tensor::new(g.shape().to_vec(), data)?);
            }
            Op::Reshape(x) => {
                let shape = self.value(*x).shape().to_vec();
                self.accumulate(grads, *x, g.clone().reshape(shape)?);
            }
            Op::Bce {
                probs,
                labels,
                reduction,
            } => {
                let scale = g.item().as_f64() / norm(*reduction, labels.len());
                let p = self.value(*probs);
                let data = p
                    .data()
                    .iter()
                    .zip(labels)
                    .map(|(&pv, &y)| {
                        let pv = pv.as_f64().clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0);
                        T::of(scale * (-y / pv + (1.0 - y) / (1.0 - pv)))
                    })
                    .collect();
                self.accumulate(grads, *probs, Tensor::new(p.shape().to_vec(), data)?);
            }
            Op::BceWithLogits {
                logits,
                labels,
                reduction,
            } => {
                let scale = g.item().as_f64() / norm(*reduction, labels.len());
                let z = self.value(*logits);
                let data = z
                    .data()
                    .iter()
                    .zip(labels)
                    .map(|(&zv, &y)| {
                        let zv = zv.as_f64();
                        if zv.abs() > LOGIT_CLAMP {
                            T::zero()
                        } else {
                            T::of(scale * (sigmoid(zv) - y))
                        }
                    })
                    .collect();
                self.accumulate(grads, *logits, Tensor::new(z.shape().to_vec(), data)?);
            }
        }
        Ok(())
    }
}

fn norm(reduction: Reduction, n: usize) -> f64 {
    match reduction {
        Reduction::Sum => 1.0,
        Reduction::Mean => n as f64,
    }
}
