//! Tape of recorded operations with reverse-mode gradient propagation.
//!
//! Nodes are appended in evaluation order, so the tape is already a
//! topological order and `backward` walks it in reverse. A graph lives for one
//! forward/backward step and is dropped afterwards.

use super::conv::{conv2d_backward, conv2d_forward, Conv2dSpec};
use super::{shape_err, Result, Tensor, TensorError};

/// Handle to a node on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Backward rule for an operation defined outside this module.
pub trait CustomBackward: Send + Sync {
    /// Returns one optional gradient per input, in input order.
    fn backward(
        &self,
        inputs: &[&Tensor],
        output: &Tensor,
        grad_out: &Tensor,
    ) -> Result<Vec<Option<Tensor>>>;
}

enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Affine(Var, f64),
    DivScalar {
        x: Var,
        s: Var,
        clamped: bool,
    },
    ExpandChannels(Var),
    Concat(Vec<Var>),
    Conv2d {
        input: Var,
        weight: Var,
        bias: Option<Var>,
        spec: Conv2dSpec,
    },
    Upsample2x(Var),
    Downsample2x(Var),
    Elu(Var, f64),
    Relu(Var),
    Sigmoid(Var),
    Tanh(Var),
    Abs(Var),
    Sqrt(Var),
    Sum(Var),
    Mean(Var),
    SumPerSample(Var),
    Custom {
        inputs: Vec<Var>,
        rule: Box<dyn CustomBackward>,
    },
}

struct Node {
    value: Tensor,
    requires_grad: bool,
    grad: Option<Tensor>,
    op: Op,
}

/// Floor applied to scalar divisors (spectral-norm estimates).
pub const DIV_FLOOR: f64 = 1e-12;

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, requires_grad: bool, op: Op) -> Var {
        self.nodes.push(Node {
            value,
            requires_grad,
            grad: None,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(value, requires_grad, Op::Leaf)
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    /// Copy of `v` as a constant: gradients stop here.
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.value(v).clone();
        self.constant(value)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.nodes[v.0].grad.as_ref()
    }

    pub fn take_grad(&mut self, v: Var) -> Option<Tensor> {
        self.nodes[v.0].grad.take()
    }

    fn binary(
        &mut self,
        a: Var,
        b: Var,
        name: &'static str,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Tensor> {
        let (x, y) = (self.value(a), self.value(b));
        if x.shape() != y.shape() {
            return Err(shape_err(
                name,
                format!("{:?} vs {:?}", x.shape(), y.shape()),
            ));
        }
        x.zip_map(y, f)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.binary(a, b, "add", |x, y| x + y)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, rg, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.binary(a, b, "sub", |x, y| x - y)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, rg, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.binary(a, b, "mul", |x, y| x * y)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, rg, Op::Mul(a, b)))
    }

    /// `scale * x + shift`.
    pub fn affine(&mut self, x: Var, scale: f64, shift: f64) -> Var {
        let out = self.value(x).map(|v| scale * v + shift);
        let rg = self.rg(&[x]);
        self.push(out, rg, Op::Affine(x, scale))
    }

    /// `1 - x`.
    pub fn one_minus(&mut self, x: Var) -> Var {
        self.affine(x, -1.0, 1.0)
    }

    /// Divide every element of `x` by the scalar node `s`, floored at
    /// [`DIV_FLOOR`].
    pub fn div_scalar(&mut self, x: Var, s: Var) -> Result<Var> {
        if self.value(s).numel() != 1 {
            return Err(shape_err(
                "div_scalar",
                format!("divisor has shape {:?}", self.value(s).shape()),
            ));
        }
        let raw = self.value(s).item();
        let clamped = !(raw > DIV_FLOOR);
        let d = if clamped { DIV_FLOOR } else { raw };
        let out = self.value(x).map(|v| v / d);
        let rg = self.rg(&[x, s]);
        Ok(self.push(out, rg, Op::DivScalar { x, s, clamped }))
    }

    /// Broadcast a single-channel `[N,1,H,W]` map to `[N,C,H,W]`.
    pub fn expand_channels(&mut self, x: Var, channels: usize) -> Result<Var> {
        let (n, c, h, w) = self.value(x).dims4()?;
        if c != 1 {
            return Err(shape_err(
                "expand_channels",
                format!("expected 1 channel, got {c}"),
            ));
        }
        let src = self.value(x);
        let plane = h * w;
        let mut data = Vec::with_capacity(n * channels * plane);
        for s in 0..n {
            for _ in 0..channels {
                data.extend_from_slice(&src.data()[s * plane..(s + 1) * plane]);
            }
        }
        let out = Tensor::new(&[n, channels, h, w], data)?;
        let rg = self.rg(&[x]);
        Ok(self.push(out, rg, Op::ExpandChannels(x)))
    }

    /// Concatenate `[N,Ci,H,W]` tensors along the channel axis.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let (n, _, h, w) = self
            .value(
                *parts
                    .first()
                    .ok_or_else(|| shape_err("concat", "nothing to concatenate"))?,
            )
            .dims4()?;
        let mut total = 0;
        for &p in parts {
            let (pn, pc, ph, pw) = self.value(p).dims4()?;
            if (pn, ph, pw) != (n, h, w) {
                return Err(shape_err(
                    "concat",
                    format!("{:?} vs [{n}, _, {h}, {w}]", self.value(p).shape()),
                ));
            }
            total += pc;
        }
        let mut data = Vec::with_capacity(n * total * h * w);
        for s in 0..n {
            for &p in parts {
                data.extend_from_slice(self.value(p).sample(s));
            }
        }
        let out = Tensor::new(&[n, total, h, w], data)?;
        let rg = self.rg(parts);
        Ok(self.push(out, rg, Op::Concat(parts.to_vec())))
    }

    pub fn conv2d(
        &mut self,
        input: Var,
        weight: Var,
        bias: Option<Var>,
        spec: Conv2dSpec,
    ) -> Result<Var> {
        let out = conv2d_forward(
            self.value(input),
            self.value(weight),
            bias.map(|b| self.value(b)),
            spec,
        )?;
        let mut deps = vec![input, weight];
        deps.extend(bias);
        let rg = self.rg(&deps);
        Ok(self.push(
            out,
            rg,
            Op::Conv2d {
                input,
                weight,
                bias,
                spec,
            },
        ))
    }

    pub fn upsample_nearest2x(&mut self, x: Var) -> Result<Var> {
        let out = upsample_nearest2x(self.value(x))?;
        let rg = self.rg(&[x]);
        Ok(self.push(out, rg, Op::Upsample2x(x)))
    }

    pub fn downsample_avg2x(&mut self, x: Var) -> Result<Var> {
        let out = downsample_avg2x(self.value(x))?;
        let rg = self.rg(&[x]);
        Ok(self.push(out, rg, Op::Downsample2x(x)))
    }

    fn unary(&mut self, x: Var, op: Op, f: impl Fn(f64) -> f64) -> Var {
        let out = self.value(x).map(f);
        let rg = self.rg(&[x]);
        self.push(out, rg, op)
    }

    pub fn elu(&mut self, x: Var) -> Var {
        let alpha = 1.0;
        self.unary(x, Op::Elu(x, alpha), move |v| {
            if v > 0.0 {
                v
            } else {
                alpha * v.exp_m1()
            }
        })
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, Op::Relu(x), |v| v.max(0.0))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, Op::Sigmoid(x), sigmoid)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(x, Op::Tanh(x), f64::tanh)
    }

    pub fn abs(&mut self, x: Var) -> Var {
        self.unary(x, Op::Abs(x), f64::abs)
    }

    /// Elementwise square root; the gradient at exactly zero is taken as zero.
    pub fn sqrt(&mut self, x: Var) -> Var {
        self.unary(x, Op::Sqrt(x), f64::sqrt)
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let out = Tensor::scalar(self.value(x).sum());
        let rg = self.rg(&[x]);
        self.push(out, rg, Op::Sum(x))
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let out = Tensor::scalar(t.sum() / t.numel() as f64);
        let rg = self.rg(&[x]);
        self.push(out, rg, Op::Mean(x))
    }

    /// Sum over every axis but the first: `[N, ...] -> [N]`.
    pub fn sum_per_sample(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        let n = *t
            .shape()
            .first()
            .ok_or_else(|| shape_err("sum_per_sample", "scalar input"))?;
        let out = Tensor::from_fn(&[n], |s| t.sample(s).iter().sum());
        let rg = self.rg(&[x]);
        Ok(self.push(out, rg, Op::SumPerSample(x)))
    }

    /// Record an externally computed operation with its own backward rule.
    pub fn custom(&mut self, inputs: &[Var], output: Tensor, rule: Box<dyn CustomBackward>) -> Var {
        let rg = self.rg(inputs);
        self.push(
            output,
            rg,
            Op::Custom {
                inputs: inputs.to_vec(),
                rule,
            },
        )
    }

    /// Reverse-mode sweep from a scalar `loss`, populating `grad` on every
    /// node that requires it and is reachable from the loss.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let lv = &self.nodes[loss.0].value;
        if lv.numel() != 1 {
            return Err(TensorError::NonScalarLoss(lv.shape().to_vec()));
        }
        if !self.nodes[loss.0].requires_grad {
            return Err(TensorError::Invalid {
                op: "backward",
                detail: "loss does not depend on any trainable input".into(),
            });
        }
        let mut grads: Vec<Option<Tensor>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(lv.shape(), 1.0));
        for i in (0..=loss.0).rev() {
            let Some(gy) = grads[i].take() else { continue };
            let contributions = self.local_grads(i, &gy)?;
            for (v, g) in contributions {
                if !self.nodes[v.0].requires_grad {
                    continue;
                }
                match &mut grads[v.0] {
                    Some(acc) => acc.add_assign(&g),
                    slot @ None => *slot = Some(g),
                }
            }
            self.nodes[i].grad = Some(gy);
        }
        Ok(())
    }

    fn local_grads(&self, i: usize, gy: &Tensor) -> Result<Vec<(Var, Tensor)>> {
        let node = &self.nodes[i];
        let val = |v: Var| &self.nodes[v.0].value;
        let rg = |v: Var| self.nodes[v.0].requires_grad;
        let y = &node.value;
        let mut out = Vec::new();
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                out.push((*a, gy.clone()));
                out.push((*b, gy.clone()));
            }
            Op::Sub(a, b) => {
                out.push((*a, gy.clone()));
                out.push((*b, gy.map(|g| -g)));
            }
            Op::Mul(a, b) => {
                if rg(*a) {
                    out.push((*a, gy.zip_map(val(*b), |g, v| g * v)?));
                }
                if rg(*b) {
                    out.push((*b, gy.zip_map(val(*a), |g, v| g * v)?));
                }
            }
            Op::Affine(x, scale) => out.push((*x, gy.map(|g| g * scale))),
            Op::DivScalar { x, s, clamped } => {
                let d = if *clamped { DIV_FLOOR } else { val(*s).item() };
                out.push((*x, gy.map(|g| g / d)));
                if rg(*s) && !clamped {
                    let ds: f64 = gy
                        .data()
                        .iter()
                        .zip(y.data())
                        .map(|(g, q)| g * q)
                        .sum::<f64>()
                        / -d;
                    out.push((*s, Tensor::new(val(*s).shape(), vec![ds])?));
                }
            }
            Op::ExpandChannels(x) => {
                let (n, c, h, w) = gy.dims4()?;
                let plane = h * w;
                let g = Tensor::from_fn(&[n, 1, h, w], |idx| {
                    let (s, p) = (idx / plane, idx % plane);
                    (0..c).map(|ch| gy.data()[(s * c + ch) * plane + p]).sum()
                });
                out.push((*x, g));
            }
            Op::Concat(parts) => {
                let (n, total, h, w) = gy.dims4()?;
                let plane = h * w;
                let mut offset = 0;
                for &p in parts {
                    let pc = val(p).shape()[1];
                    if rg(p) {
                        let mut data = Vec::with_capacity(n * pc * plane);
                        for s in 0..n {
                            let base = (s * total + offset) * plane;
                            data.extend_from_slice(&gy.data()[base..base + pc * plane]);
                        }
                        out.push((p, Tensor::new(val(p).shape(), data)?));
                    }
                    offset += pc;
                }
            }
            Op::Conv2d {
                input,
                weight,
                bias,
                spec,
            } => {
                let (dx, dw, db) = conv2d_backward(
                    val(*input),
                    val(*weight),
                    *spec,
                    gy,
                    rg(*input),
                    rg(*weight),
                )?;
                if let Some(dx) = dx {
                    out.push((*input, dx));
                }
                if let Some(dw) = dw {
                    out.push((*weight, dw));
                }
                if let Some(b) = bias {
                    out.push((*b, db));
                }
            }
            Op::Upsample2x(x) => out.push((*x, upsample_nearest2x_backward(gy)?)),
            Op::Downsample2x(x) => out.push((*x, downsample_avg2x_backward(gy)?)),
            Op::Elu(x, alpha) => out.push((
                *x,
                pointwise3(
                    gy,
                    val(*x),
                    y,
                    |g, xv, yv| if xv > 0.0 { g } else { g * (yv + alpha) },
                ),
            )),
            Op::Relu(x) => out.push((
                *x,
                gy.zip_map(val(*x), |g, xv| if xv > 0.0 { g } else { 0.0 })?,
            )),
            Op::Sigmoid(x) => out.push((*x, gy.zip_map(y, |g, yv| g * yv * (1.0 - yv))?)),
            Op::Tanh(x) => out.push((*x, gy.zip_map(y, |g, yv| g * (1.0 - yv * yv))?)),
            Op::Abs(x) => out.push((*x, gy.zip_map(val(*x), |g, xv| g * sign(xv))?)),
            Op::Sqrt(x) => out.push((
                *x,
                gy.zip_map(y, |g, yv| if yv > 0.0 { g / (2.0 * yv) } else { 0.0 })?,
            )),
            Op::Sum(x) => out.push((*x, Tensor::full(val(*x).shape(), gy.item()))),
            Op::Mean(x) => {
                let t = val(*x);
                out.push((*x, Tensor::full(t.shape(), gy.item() / t.numel() as f64)));
            }
            Op::SumPerSample(x) => {
                let t = val(*x);
                let per = t.numel() / t.shape()[0];
                out.push((*x, Tensor::from_fn(t.shape(), |idx| gy.data()[idx / per])));
            }
            Op::Custom { inputs, rule } => {
                let ins: Vec<&Tensor> = inputs.iter().map(|&v| val(v)).collect();
                let grads = rule.backward(&ins, y, gy)?;
                for (&v, g) in inputs.iter().zip(grads) {
                    if let Some(g) = g {
                        if g.shape() != val(v).shape() {
                            return Err(shape_err(
                                "custom backward",
                                format!("gradient {:?} for input {:?}", g.shape(), val(v).shape()),
                            ));
                        }
                        out.push((v, g));
                    }
                }
            }
        }
        Ok(out)
    }
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

pub(crate) fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

fn pointwise3(a: &Tensor, b: &Tensor, c: &Tensor, f: impl Fn(f64, f64, f64) -> f64) -> Tensor {
    Tensor::from_fn(a.shape(), |i| f(a.data()[i], b.data()[i], c.data()[i]))
}

/// Nearest-neighbour 2x enlargement of `[N,C,H,W]`.
pub fn upsample_nearest2x(x: &Tensor) -> Result<Tensor> {
    let (n, c, h, w) = x.dims4()?;
    let (h2, w2) = (2 * h, 2 * w);
    let src = x.data();
    Ok(Tensor::from_fn(&[n, c, h2, w2], |idx| {
        let plane = idx / (h2 * w2);
        let r = idx % (h2 * w2);
        let (yy, xx) = (r / w2, r % w2);
        src[plane * h * w + (yy / 2) * w + xx / 2]
    }))
}

fn upsample_nearest2x_backward(gy: &Tensor) -> Result<Tensor> {
    let (n, c, h2, w2) = gy.dims4()?;
    let (h, w) = (h2 / 2, w2 / 2);
    let g = gy.data();
    Ok(Tensor::from_fn(&[n, c, h, w], |idx| {
        let plane = idx / (h * w);
        let r = idx % (h * w);
        let (yy, xx) = (r / w, r % w);
        let base = plane * h2 * w2;
        g[base + 2 * yy * w2 + 2 * xx]
            + g[base + 2 * yy * w2 + 2 * xx + 1]
            + g[base + (2 * yy + 1) * w2 + 2 * xx]
            + g[base + (2 * yy + 1) * w2 + 2 * xx + 1]
    }))
}

/// 2x2 mean pooling of `[N,C,H,W]`; `H` and `W` must be even.
pub fn downsample_avg2x(x: &Tensor) -> Result<Tensor> {
    let (n, c, h, w) = x.dims4()?;
    if h % 2 != 0 || w % 2 != 0 {
        return Err(shape_err(
            "downsample_avg2x",
            format!("extents {h}x{w} must be even"),
        ));
    }
    let (ho, wo) = (h / 2, w / 2);
    let s = x.data();
    Ok(Tensor::from_fn(&[n, c, ho, wo], |idx| {
        let plane = idx / (ho * wo);
        let r = idx % (ho * wo);
        let (yy, xx) = (r / wo, r % wo);
        let base = plane * h * w;
        // Pairwise order keeps downsample(upsample(x)) exact.
        ((s[base + 2 * yy * w + 2 * xx] + s[base + 2 * yy * w + 2 * xx + 1])
            + (s[base + (2 * yy + 1) * w + 2 * xx] + s[base + (2 * yy + 1) * w + 2 * xx + 1]))
            * 0.25
    }))
}

fn downsample_avg2x_backward(gy: &Tensor) -> Result<Tensor> {
    let (n, c, ho, wo) = gy.dims4()?;
    let (h, w) = (2 * ho, 2 * wo);
    let g = gy.data();
    Ok(Tensor::from_fn(&[n, c, h, w], |idx| {
        let plane = idx / (h * w);
        let r = idx % (h * w);
        let (yy, xx) = (r / w, r % w);
        0.25 * g[plane * ho * wo + (yy / 2) * wo + xx / 2]
    }))
}
