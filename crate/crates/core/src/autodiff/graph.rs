//! Tape-style computation graph with reverse-mode differentiation.
//!
//! Every vector-Jacobian product is itself expressed with graph ops, so a
//! gradient obtained with `create_graph = true` can be differentiated again.
//! The gradient penalty relies on this: it backpropagates through the critic's
//! input gradient.

use super::kernels::{self, ConvGeom};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Neg(Var),
    Scale(Var, f64),
    AddScalar(Var),
    MatMul(Var, Var),
    Transpose(Var),
    Reshape(Var),
    BroadcastTo(Var),
    SumTo(Var),
    Tanh(Var),
    Sigmoid(Var),
    LeakyRelu(Var, f64),
    Sqrt(Var),
    Recip(Var),
    Conv2d { x: Var, w: Var, geom: ConvGeom },
    ConvTranspose2d { x: Var, w: Var, geom: ConvGeom },
    Conv2dWeightGrad { x: Var, gy: Var, geom: ConvGeom },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    no_grad: bool,
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

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad: requires_grad && !self.no_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Leaf that gradients are tracked for.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Leaf treated as a constant.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.rg(v)
    }

    fn binary(&mut self, a: Var, b: Var, op: &'static str, f: impl Fn(f64, f64) -> f64, mk: fn(Var, Var) -> Op) -> Result<Var> {
        let value = self.value(a).zip_map(self.value(b), op, f)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, mk(a, b), rg))
    }

    fn unary(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let value = self.value(a).map(f);
        let rg = self.rg(a);
        self.push(value, op, rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "add", |x, y| x + y, Op::Add)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "sub", |x, y| x - y, Op::Sub)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "mul", |x, y| x * y, Op::Mul)
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.unary(a, |x| -x, Op::Neg(a))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        self.unary(a, |x| c * x, Op::Scale(a, c))
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        self.unary(a, |x| x + c, Op::AddScalar(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, f64::tanh, Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, |x| 1.0 / (1.0 + (-x).exp()), Op::Sigmoid(a))
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Var {
        self.unary(a, |x| if x > 0.0 { x } else { slope * x }, Op::LeakyRelu(a, slope))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.leaky_relu(a, 0.0)
    }

    pub fn sqrt(&mut self, a: Var) -> Var {
        self.unary(a, f64::sqrt, Op::Sqrt(a))
    }

    pub fn recip(&mut self, a: Var) -> Var {
        self.unary(a, |x| 1.0 / x, Op::Recip(a))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = kernels::matmul(self.value(a), self.value(b))?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::MatMul(a, b), rg))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let value = kernels::transpose(self.value(a))?;
        let rg = self.rg(a);
        Ok(self.push(value, Op::Transpose(a), rg))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(a).reshape(shape)?;
        let rg = self.rg(a);
        Ok(self.push(value, Op::Reshape(a), rg))
    }

    pub fn broadcast_to(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(a).broadcast_to(shape)?;
        let rg = self.rg(a);
        Ok(self.push(value, Op::BroadcastTo(a), rg))
    }

    pub fn sum_to(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(a).sum_to(shape)?;
        let rg = self.rg(a);
        Ok(self.push(value, Op::SumTo(a), rg))
    }

    pub fn conv2d(&mut self, x: Var, w: Var, geom: ConvGeom) -> Result<Var> {
        let value = kernels::conv2d(self.value(x), self.value(w), geom)?;
        let rg = self.rg(x) || self.rg(w);
        Ok(self.push(value, Op::Conv2d { x, w, geom }, rg))
    }

    /// Transposed convolution; `w` is laid out `[c_in, c_out, kh, kw]`.
    pub fn conv_transpose2d(&mut self, x: Var, w: Var, geom: ConvGeom) -> Result<Var> {
        let (xs, ws) = (self.shape(x), self.shape(w));
        if xs.len() != 4 || ws.len() != 4 {
            return Err(Error::shape("conv_transpose2d", xs, ws));
        }
        let out_hw = (geom.transposed_len(xs[2], ws[2]), geom.transposed_len(xs[3], ws[3]));
        self.conv_transpose2d_sized(x, w, geom, out_hw)
    }

    fn conv_transpose2d_sized(&mut self, x: Var, w: Var, geom: ConvGeom, out_hw: (usize, usize)) -> Result<Var> {
        let value = kernels::conv2d_grad_input(self.value(x), self.value(w), out_hw, geom)?;
        let rg = self.rg(x) || self.rg(w);
        Ok(self.push(value, Op::ConvTranspose2d { x, w, geom }, rg))
    }

    fn conv2d_weight_grad(&mut self, x: Var, gy: Var, kernel: (usize, usize), geom: ConvGeom) -> Result<Var> {
        let value = kernels::conv2d_grad_weight(self.value(x), self.value(gy), kernel, geom)?;
        let rg = self.rg(x) || self.rg(gy);
        Ok(self.push(value, Op::Conv2dWeightGrad { x, gy, geom }, rg))
    }

    // ---- composites -------------------------------------------------------

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        self.sum_to(a, &[])
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let n = self.value(a).len() as f64;
        let s = self.sum(a)?;
        Ok(self.scale(s, 1.0 / n))
    }

    /// `x [m,k] * w [k,n] + b [n]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let y = self.matmul(x, w)?;
        let shape = self.shape(y).to_vec();
        let bb = self.broadcast_to(b, &shape)?;
        self.add(y, bb)
    }

    /// Euclidean norm of each row of `x [m,n]`, as `[m,1]`. `eps` keeps the
    /// derivative finite at the origin.
    pub fn row_l2_norm(&mut self, x: Var, eps: f64) -> Result<Var> {
        let m = self.shape(x)[0];
        let sq = self.mul(x, x)?;
        let s = self.sum_to(sq, &[m, 1])?;
        let s = self.add_scalar(s, eps);
        Ok(self.sqrt(s))
    }

    /// Training-mode batch normalization over `[n,c,h,w]` (or `[n,c]`) using
    /// batch statistics. Returns the output plus the batch mean and biased
    /// variance per channel for running-stat updates.
    pub fn batch_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<(Var, Vec<f64>, Vec<f64>)> {
        let shape = self.shape(x).to_vec();
        if shape.len() < 2 || self.shape(gamma) != [shape[1]] || self.shape(beta) != [shape[1]] {
            return Err(Error::shape("batch_norm", &shape, self.shape(gamma)));
        }
        let c = shape[1];
        let mut stat_shape = vec![1; shape.len()];
        stat_shape[1] = c;
        let count = (self.value(x).len() / c) as f64;
        let s = self.sum_to(x, &stat_shape)?;
        let mean = self.scale(s, 1.0 / count);
        let mean_b = self.broadcast_to(mean, &shape)?;
        let xc = self.sub(x, mean_b)?;
        let sq = self.mul(xc, xc)?;
        let vs = self.sum_to(sq, &stat_shape)?;
        let var = self.scale(vs, 1.0 / count);
        let batch_mean = self.value(mean).data().to_vec();
        let batch_var = self.value(var).data().to_vec();
        let ve = self.add_scalar(var, eps);
        let sd = self.sqrt(ve);
        let inv = self.recip(sd);
        let inv_b = self.broadcast_to(inv, &shape)?;
        let xn = self.mul(xc, inv_b)?;
        let g = self.reshape(gamma, &stat_shape)?;
        let g = self.broadcast_to(g, &shape)?;
        let b = self.reshape(beta, &stat_shape)?;
        let b = self.broadcast_to(b, &shape)?;
        let y = self.mul(xn, g)?;
        let y = self.add(y, b)?;
        Ok((y, batch_mean, batch_var))
    }

    /// Inference-mode batch normalization with fixed statistics.
    pub fn batch_norm_fixed(&mut self, x: Var, gamma: Var, beta: Var, mean: &[f64], var: &[f64], eps: f64) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let c = shape[1];
        let mut stat_shape = vec![1; shape.len()];
        stat_shape[1] = c;
        let m = self.constant(Tensor::new(stat_shape.clone(), mean.to_vec())?);
        let m = self.broadcast_to(m, &shape)?;
        let inv: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let inv = self.constant(Tensor::new(stat_shape.clone(), inv)?);
        let inv = self.broadcast_to(inv, &shape)?;
        let xc = self.sub(x, m)?;
        let xn = self.mul(xc, inv)?;
        let g = self.reshape(gamma, &stat_shape)?;
        let g = self.broadcast_to(g, &shape)?;
        let b = self.reshape(beta, &stat_shape)?;
        let b = self.broadcast_to(b, &shape)?;
        let y = self.mul(xn, g)?;
        self.add(y, b)
    }

    /// Multiplies by a fixed 0/(1/keep) mask.
    pub fn dropout(&mut self, x: Var, mask: Tensor) -> Result<Var> {
        let m = self.constant(mask);
        self.mul(x, m)
    }

    // ---- differentiation --------------------------------------------------

    /// Gradients of the scalar `loss` with respect to each of `wrt`.
    ///
    /// With `create_graph` the returned gradient nodes stay connected to the
    /// graph and can be differentiated again. Inputs that `loss` does not depend
    /// on receive zeros.
    pub fn backward(&mut self, loss: Var, wrt: &[Var], create_graph: bool) -> Result<Vec<Var>> {
        if self.value(loss).len() != 1 {
            return Err(Error::shape("backward", self.shape(loss), &[]));
        }
        let saved = self.no_grad;
        self.no_grad = !create_graph;
        let res = self.backward_inner(loss, wrt);
        self.no_grad = saved;
        res
    }

    fn backward_inner(&mut self, loss: Var, wrt: &[Var]) -> Result<Vec<Var>> {
        let end = loss.0 + 1;
        let mut grads: Vec<Option<Var>> = vec![None; end];
        let seed_shape = self.shape(loss).to_vec();
        grads[loss.0] = Some(self.constant(Tensor::ones(&seed_shape)));
        let lowest = wrt.iter().map(|v| v.0).min().unwrap_or(0);
        for i in (lowest..end).rev() {
            let Some(g) = grads[i] else { continue };
            if !self.nodes[i].requires_grad {
                continue;
            }
            let op = self.nodes[i].op.clone();
            for (parent, pg) in self.vjp(Var(i), &op, g)? {
                if parent.0 >= end || !self.rg(parent) {
                    continue;
                }
                grads[parent.0] = Some(match grads[parent.0] {
                    Some(prev) => self.add(prev, pg)?,
                    None => pg,
                });
            }
        }
        let mut out = Vec::with_capacity(wrt.len());
        for &v in wrt {
            out.push(match grads.get(v.0).copied().flatten() {
                Some(g) => g,
                None => {
                    let s = self.shape(v).to_vec();
                    self.constant(Tensor::zeros(&s))
                }
            });
        }
        Ok(out)
    }

    /// First-order gradients as plain tensors.
    pub fn gradients(&mut self, loss: Var, wrt: &[Var]) -> Result<Vec<Tensor>> {
        let gs = self.backward(loss, wrt, false)?;
        Ok(gs.into_iter().map(|g| self.value(g).clone()).collect())
    }

    fn vjp(&mut self, node: Var, op: &Op, g: Var) -> Result<Vec<(Var, Var)>> {
        Ok(match *op {
            Op::Leaf => vec![],
            Op::Add(a, b) => vec![(a, g), (b, g)],
            Op::Sub(a, b) => {
                let nb = self.neg(g);
                vec![(a, g), (b, nb)]
            }
            Op::Mul(a, b) => {
                let mut v = Vec::with_capacity(2);
                if self.rg(a) {
                    v.push((a, self.mul(g, b)?));
                }
                if self.rg(b) {
                    v.push((b, self.mul(g, a)?));
                }
                v
            }
            Op::Neg(a) => vec![(a, self.neg(g))],
            Op::Scale(a, c) => vec![(a, self.scale(g, c))],
            Op::AddScalar(a) => vec![(a, g)],
            Op::MatMul(a, b) => {
                let mut v = Vec::with_capacity(2);
                if self.rg(a) {
                    let bt = self.transpose(b)?;
                    v.push((a, self.matmul(g, bt)?));
                }
                if self.rg(b) {
                    let at = self.transpose(a)?;
                    v.push((b, self.matmul(at, g)?));
                }
                v
            }
            Op::Transpose(a) => vec![(a, self.transpose(g)?)],
            Op::Reshape(a) => {
                let s = self.shape(a).to_vec();
                vec![(a, self.reshape(g, &s)?)]
            }
            Op::BroadcastTo(a) => {
                let s = self.shape(a).to_vec();
                vec![(a, self.sum_to(g, &s)?)]
            }
            Op::SumTo(a) => {
                let s = self.shape(a).to_vec();
                vec![(a, self.broadcast_to(g, &s)?)]
            }
            Op::Tanh(a) => {
                // d tanh = 1 - y^2
                let y2 = self.mul(node, node)?;
                let ny2 = self.neg(y2);
                let d = self.add_scalar(ny2, 1.0);
                vec![(a, self.mul(g, d)?)]
            }
            Op::Sigmoid(a) => {
                let ny = self.neg(node);
                let one_minus = self.add_scalar(ny, 1.0);
                let d = self.mul(node, one_minus)?;
                vec![(a, self.mul(g, d)?)]
            }
            Op::LeakyRelu(a, slope) => {
                let mask = self.value(a).map(|x| if x > 0.0 { 1.0 } else { slope });
                let m = self.constant(mask);
                vec![(a, self.mul(g, m)?)]
            }
            Op::Sqrt(a) => {
                let r = self.recip(node);
                let d = self.scale(r, 0.5);
                vec![(a, self.mul(g, d)?)]
            }
            Op::Recip(a) => {
                let y2 = self.mul(node, node)?;
                let d = self.neg(y2);
                vec![(a, self.mul(g, d)?)]
            }
            Op::Conv2d { x, w, geom } => {
                let mut v = Vec::with_capacity(2);
                if self.rg(x) {
                    let xs = self.shape(x);
                    let hw = (xs[2], xs[3]);
                    v.push((x, self.conv_transpose2d_sized(g, w, geom, hw)?));
                }
                if self.rg(w) {
                    let ws = self.shape(w);
                    let k = (ws[2], ws[3]);
                    v.push((w, self.conv2d_weight_grad(x, g, k, geom)?));
                }
                v
            }
            Op::ConvTranspose2d { x, w, geom } => {
                let mut v = Vec::with_capacity(2);
                if self.rg(x) {
                    v.push((x, self.conv2d(g, w, geom)?));
                }
                if self.rg(w) {
                    let ws = self.shape(w);
                    let k = (ws[2], ws[3]);
                    v.push((w, self.conv2d_weight_grad(g, x, k, geom)?));
                }
                v
            }
            Op::Conv2dWeightGrad { x, gy, geom } => {
                let mut v = Vec::with_capacity(2);
                if self.rg(x) {
                    let xs = self.shape(x);
                    let hw = (xs[2], xs[3]);
                    v.push((x, self.conv_transpose2d_sized(gy, g, geom, hw)?));
                }
                if self.rg(gy) {
                    v.push((gy, self.conv2d(x, g, geom)?));
                }
                v
            }
        })
    }
}
