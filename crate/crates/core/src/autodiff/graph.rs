//! Tape-based reverse-mode differentiation.
//!
//! Every operation appends a node holding its forward value and a record of
//! its inputs. Nodes are created in topological order, so `backward` walks the
//! tape once in reverse. Complex adjoints follow the real-composite
//! convention: the adjoint of `z` is `dL/d(re z) + i dL/d(im z)`.

use ndarray::{Array1, Array2, ArrayD, Axis, Dimension, IxDyn};
use num_complex::Complex64;

use super::conv::{self, PadMode};
use super::params::ParamStore;
use crate::error::{Error, Result};
use crate::grid::fft::fft_trailing;

pub type Tensor = ArrayD<f64>;
pub type CTensor = ArrayD<Complex64>;

/// Forward value of a node.
#[derive(Debug, Clone, PartialEq)]
pub enum Value {
    Real(Tensor),
    Complex(CTensor),
}

impl Value {
    pub fn shape(&self) -> &[usize] {
        match self {
            Value::Real(t) => t.shape(),
            Value::Complex(t) => t.shape(),
        }
    }

    fn zeros_like(&self) -> Value {
        match self {
            Value::Real(t) => Value::Real(Tensor::zeros(t.raw_dim())),
            Value::Complex(t) => Value::Complex(CTensor::zeros(t.raw_dim())),
        }
    }

    fn add_assign(&mut self, other: Value) {
        match (self, other) {
            (Value::Real(a), Value::Real(b)) => *a += &b,
            (Value::Complex(a), Value::Complex(b)) => *a += &b,
            _ => unreachable!("adjoint kind always matches its node"),
        }
    }
}

/// Handle to a node on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Gelu(Var),
    Abs(Var),
    Square(Var),
    Mean(Var),
    Sum(Var),
    Softmax { x: Var, axis: usize },
    Pointwise { x: Var, w: Var, b: Option<Var> },
    Conv { x: Var, w: Var, b: Option<Var>, stride: usize, pads: [PadMode; 3], rank: usize },
    ConvTranspose { x: Var, w: Var, b: Option<Var>, stride: usize },
    MaxPool2 { x: Var, argmax: Vec<usize> },
    BatchNorm { x: Var, gamma: Var, beta: Var, xhat: Tensor, inv_std: Array1<f64> },
    Affine { x: Var, scale: Array1<f64> },
    Concat { parts: Vec<Var>, axis: usize },
    Reshape { x: Var },
    Permute { x: Var, perm: Vec<usize> },
    Resample { x: Var, my: Array2<f64>, mx: Array2<f64> },
    ToComplex(Var),
    RealPart(Var),
    ComplexFromParts(Var, Var),
    Fft { x: Var, naxes: usize, inverse: bool },
    Truncate { x: Var, modes: Vec<usize> },
    Pad { x: Var, modes: Vec<usize> },
    SpectralMix { x: Var, w: Var },
}

#[derive(Debug)]
struct Node {
    value: Value,
    op: Op,
    needs_grad: bool,
}

/// A single-owner computation graph.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    params: Vec<(String, Var)>,
    grads: Option<Vec<Option<Value>>>,
}

fn shape_str(s: &[usize]) -> String {
    format!("{s:?}")
}

/// Sums `t` over the axes where `shape` has extent 1 (reverse of broadcasting).
fn sum_to_shape(t: Tensor, shape: &[usize]) -> Tensor {
    if t.shape() == shape {
        return t;
    }
    let mut out = t;
    for (axis, &n) in shape.iter().enumerate() {
        if n == 1 && out.shape()[axis] != 1 {
            out = out.sum_axis(Axis(axis)).insert_axis(Axis(axis));
        }
    }
    out
}

fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    if a.len() != b.len() {
        return None;
    }
    a.iter()
        .zip(b)
        .map(|(&x, &y)| match (x, y) {
            _ if x == y => Some(x),
            (1, y) => Some(y),
            (x, 1) => Some(x),
            _ => None,
        })
        .collect()
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044_715 * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + 0.044_715 * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * 0.044_715 * x * x)
}

/// Index along an axis of length `2m - 1` holding frequencies `0..m` then `-(m-1)..0`.
fn mode_source(o: usize, m: usize, n: usize) -> usize {
    if o < m {
        o
    } else {
        n - (2 * m - 1 - o)
    }
}

fn to5(t: &Tensor, rank: usize) -> ndarray::Array5<f64> {
    let s = t.shape();
    let dims = match rank {
        2 => (s[0], s[1], 1, s[2], s[3]),
        _ => (s[0], s[1], s[2], s[3], s[4]),
    };
    t.as_standard_layout().to_owned().into_shape_with_order(dims).expect("rank checked")
}

fn from5(t: ndarray::Array5<f64>, rank: usize) -> Tensor {
    let (b, c, _, h, w) = t.dim();
    if rank == 2 {
        t.into_shape_with_order(IxDyn(&[b, c, h, w])).expect("shape")
    } else {
        t.into_dyn()
    }
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

    fn push(&mut self, value: Value, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn push_op(&mut self, value: Value, op: Op, parents: &[Var]) -> Var {
        let needs = parents.iter().any(|p| self.nodes[p.0].needs_grad);
        self.push(value, op, needs)
    }

    /// A leaf that is never differentiated (data, fixed kernels).
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(Value::Real(t), Op::Leaf, false)
    }

    /// A leaf whose adjoint is tracked.
    pub fn input(&mut self, t: Tensor) -> Var {
        self.push(Value::Real(t), Op::Leaf, true)
    }

    pub fn complex_input(&mut self, t: CTensor) -> Var {
        self.push(Value::Complex(t), Op::Leaf, true)
    }

    /// Binds the named parameter of `store` as a differentiable leaf.
    pub fn param(&mut self, store: &ParamStore, name: &str) -> Result<Var> {
        if let Some((_, v)) = self.params.iter().find(|(n, _)| n == name) {
            return Ok(*v);
        }
        let value = store.value(name)?.clone();
        let v = self.input(value);
        self.params.push((name.to_string(), v));
        Ok(v)
    }

    pub fn bound_params(&self) -> &[(String, Var)] {
        &self.params
    }

    pub fn value(&self, v: Var) -> &Value {
        &self.nodes[v.0].value
    }

    /// Real value of `v`; panics on complex nodes.
    pub fn real(&self, v: Var) -> &Tensor {
        match &self.nodes[v.0].value {
            Value::Real(t) => t,
            Value::Complex(_) => panic!("node {} is complex", v.0),
        }
    }

    /// Shape of the node at position `index` in creation order.
    pub fn shape_at(&self, index: usize) -> Option<&[usize]> {
        self.nodes.get(index).map(|n| n.value.shape())
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn real_checked(&self, v: Var, what: &str) -> Result<&Tensor> {
        match &self.nodes[v.0].value {
            Value::Real(t) => Ok(t),
            Value::Complex(_) => Err(Error::Graph(format!("{what} expects a real operand"))),
        }
    }

    fn complex_checked(&self, v: Var, what: &str) -> Result<&CTensor> {
        match &self.nodes[v.0].value {
            Value::Complex(t) => Ok(t),
            Value::Real(_) => Err(Error::Graph(format!("{what} expects a complex operand"))),
        }
    }

    // ---- elementwise -------------------------------------------------

    fn binary_shape(&self, a: Var, b: Var, what: &str) -> Result<Vec<usize>> {
        broadcast_shape(self.shape(a), self.shape(b)).ok_or_else(|| {
            Error::shape(format!(
                "{what}: {} vs {}",
                shape_str(self.shape(a)),
                shape_str(self.shape(b))
            ))
        })
    }

    /// Broadcasting addition (equal rank, extents equal or 1).
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_shape(a, b, "add")?;
        let v = self.real_checked(a, "add")? + self.real_checked(b, "add")?;
        Ok(self.push_op(Value::Real(v), Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_shape(a, b, "sub")?;
        let v = self.real_checked(a, "sub")? - self.real_checked(b, "sub")?;
        Ok(self.push_op(Value::Real(v), Op::Sub(a, b), &[a, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_shape(a, b, "mul")?;
        let v = self.real_checked(a, "mul")? * self.real_checked(b, "mul")?;
        Ok(self.push_op(Value::Real(v), Op::Mul(a, b), &[a, b]))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Result<Var> {
        let v = self.real_checked(a, "scale")? * s;
        Ok(self.push_op(Value::Real(v), Op::Scale(a, s), &[a]))
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let v = self.real_checked(a, "relu")?.mapv(|x| x.max(0.0));
        Ok(self.push_op(Value::Real(v), Op::Relu(a), &[a]))
    }

    /// Tanh-approximated GELU.
    pub fn gelu(&mut self, a: Var) -> Result<Var> {
        let v = self.real_checked(a, "gelu")?.mapv(gelu);
        Ok(self.push_op(Value::Real(v), Op::Gelu(a), &[a]))
    }

    pub fn abs(&mut self, a: Var) -> Result<Var> {
        let v = self.real_checked(a, "abs")?.mapv(f64::abs);
        Ok(self.push_op(Value::Real(v), Op::Abs(a), &[a]))
    }

    pub fn square(&mut self, a: Var) -> Result<Var> {
        let v = self.real_checked(a, "square")?.mapv(|x| x * x);
        Ok(self.push_op(Value::Real(v), Op::Square(a), &[a]))
    }

    /// Mean of all elements, as a rank-0 tensor.
    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let t = self.real_checked(a, "mean")?;
        let v = ArrayD::from_elem(IxDyn(&[]), t.mean().unwrap_or(0.0));
        Ok(self.push_op(Value::Real(v), Op::Mean(a), &[a]))
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let v = ArrayD::from_elem(IxDyn(&[]), self.real_checked(a, "sum")?.sum());
        Ok(self.push_op(Value::Real(v), Op::Sum(a), &[a]))
    }

    /// Mean absolute value (L1 reduction).
    pub fn mean_abs(&mut self, a: Var) -> Result<Var> {
        let t = self.abs(a)?;
        self.mean(t)
    }

    /// Mean squared value (L2 reduction).
    pub fn mean_square(&mut self, a: Var) -> Result<Var> {
        let t = self.square(a)?;
        self.mean(t)
    }

    pub fn softmax(&mut self, a: Var, axis: usize) -> Result<Var> {
        let t = self.real_checked(a, "softmax")?;
        if axis >= t.ndim() {
            return Err(Error::shape(format!("softmax axis {axis} out of range for {}", shape_str(t.shape()))));
        }
        let mut v = t.clone();
        for mut lane in v.lanes_mut(Axis(axis)) {
            let m = lane.fold(f64::NEG_INFINITY, |m, &x| m.max(x));
            lane.mapv_inplace(|x| (x - m).exp());
            let s = lane.sum();
            lane.mapv_inplace(|x| x / s);
        }
        Ok(self.push_op(Value::Real(v), Op::Softmax { x: a, axis }, &[a]))
    }

    // ---- channel mixing and convolution -----------------------------

    /// 1x1 convolution: `y[b, o, ..] = sum_i w[o, i] x[b, i, ..] + bias[o]`.
    pub fn pointwise(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let xt = self.real_checked(x, "pointwise")?;
        let wt = self.real_checked(w, "pointwise")?;
        let xs = xt.shape().to_vec();
        if xs.len() < 2 || wt.ndim() != 2 || wt.shape()[1] != xs[1] {
            return Err(Error::shape(format!(
                "pointwise: input {} vs weight {}",
                shape_str(&xs),
                shape_str(wt.shape())
            )));
        }
        let co = wt.shape()[0];
        let w2 = wt.view().into_dimensionality::<ndarray::Ix2>().expect("rank 2");
        let spatial: usize = xs[2..].iter().product();
        let mut out_shape = xs.clone();
        out_shape[1] = co;
        let mut y = Tensor::zeros(IxDyn(&out_shape));
        let xstd = xt.as_standard_layout();
        for bi in 0..xs[0] {
            let xb = xstd
                .index_axis(Axis(0), bi)
                .into_shape_with_order((xs[1], spatial))
                .expect("standard layout");
            let yb = w2.dot(&xb);
            y.index_axis_mut(Axis(0), bi)
                .assign(&yb.into_shape_with_order(IxDyn(&out_shape[1..])).expect("shape"));
        }
        if let Some(b) = b {
            let bt = self.real_checked(b, "pointwise bias")?;
            if bt.len() != co {
                return Err(Error::shape(format!("pointwise bias {} vs {co} outputs", shape_str(bt.shape()))));
            }
            for (o, bv) in bt.iter().enumerate() {
                y.index_axis_mut(Axis(1), o).mapv_inplace(|v| v + bv);
            }
        }
        let mut parents = vec![x, w];
        parents.extend(b);
        Ok(self.push_op(Value::Real(y), Op::Pointwise { x, w, b }, &parents))
    }

    /// 2D correlation, `x: [B, Ci, H, W]`, `w: [Co, Ci, kh, kw]`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, pad: PadMode) -> Result<Var> {
        self.conv(x, w, b, stride, [PadMode::Valid, pad, pad], 2)
    }

    /// 3D correlation, `x: [B, Ci, D, H, W]`, `w: [Co, Ci, kd, kh, kw]`.
    pub fn conv3d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, pads: [PadMode; 3]) -> Result<Var> {
        self.conv(x, w, b, stride, pads, 3)
    }

    fn conv(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, pads: [PadMode; 3], rank: usize) -> Result<Var> {
        let xt = self.real_checked(x, "conv")?;
        let wt = self.real_checked(w, "conv")?;
        let mismatch = || {
            Error::shape(format!(
                "conv{rank}d: input {} vs kernel {}",
                shape_str(xt.shape()),
                shape_str(wt.shape())
            ))
        };
        if xt.ndim() != rank + 2 || wt.ndim() != rank + 2 || xt.shape()[1] != wt.shape()[1] {
            return Err(mismatch());
        }
        let k = &wt.shape()[2..];
        let axis_pads = &pads[3 - rank..];
        if k.iter().zip(axis_pads).any(|(&kk, &p)| kk % 2 == 0 && p != PadMode::Valid) {
            return Err(Error::shape(format!("same-padding needs odd kernels, got {}", shape_str(k))));
        }
        let bias = match b {
            Some(b) => Some(self.real_checked(b, "conv bias")?.iter().copied().collect::<Vec<_>>()),
            None => None,
        };
        if let Some(bias) = &bias {
            if bias.len() != wt.shape()[0] {
                return Err(mismatch());
            }
        }
        let y = conv::conv_forward(to5(xt, rank).view(), to5(wt, rank).view(), bias.as_deref(), stride, pads)
            .ok_or_else(mismatch)?;
        let mut parents = vec![x, w];
        parents.extend(b);
        Ok(self.push_op(Value::Real(from5(y, rank)), Op::Conv { x, w, b, stride, pads, rank }, &parents))
    }

    /// Transposed 2D convolution without padding, `w: [Ci, Co, k, k]`.
    pub fn conv_transpose2d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize) -> Result<Var> {
        let xt = self.real_checked(x, "conv_transpose2d")?.as_standard_layout().to_owned();
        let wt = self.real_checked(w, "conv_transpose2d")?.as_standard_layout().to_owned();
        let err = || {
            Error::shape(format!(
                "conv_transpose2d: input {} vs kernel {}",
                shape_str(xt.shape()),
                shape_str(wt.shape())
            ))
        };
        let x4 = xt.view().into_dimensionality::<ndarray::Ix4>().map_err(|_| err())?;
        let w4 = wt.view().into_dimensionality::<ndarray::Ix4>().map_err(|_| err())?;
        let bias = match b {
            Some(b) => Some(self.real_checked(b, "bias")?.iter().copied().collect::<Vec<_>>()),
            None => None,
        };
        let y = conv::conv_transpose_forward(x4, w4, bias.as_deref(), stride).ok_or_else(err)?;
        let mut parents = vec![x, w];
        parents.extend(b);
        Ok(self.push_op(Value::Real(y.into_dyn()), Op::ConvTranspose { x, w, b, stride }, &parents))
    }

    /// 2x2 max pooling with stride 2 over the last two axes.
    pub fn max_pool2(&mut self, x: Var) -> Result<Var> {
        let t = self.real_checked(x, "max_pool2")?.as_standard_layout().to_owned();
        let s = t.shape().to_vec();
        let n = s.len();
        if n < 2 || s[n - 1] % 2 != 0 || s[n - 2] % 2 != 0 {
            return Err(Error::shape(format!("max_pool2 needs even trailing dims, got {}", shape_str(&s))));
        }
        let (h, w) = (s[n - 2], s[n - 1]);
        let lead: usize = s[..n - 2].iter().product();
        let mut out_shape = s.clone();
        out_shape[n - 2] /= 2;
        out_shape[n - 1] /= 2;
        let src = t.as_slice().expect("standard layout");
        let (oh, ow) = (h / 2, w / 2);
        let mut out = Vec::with_capacity(lead * oh * ow);
        let mut argmax = Vec::with_capacity(lead * oh * ow);
        for l in 0..lead {
            let base = l * h * w;
            for i in 0..oh {
                for j in 0..ow {
                    let mut best = base + 2 * i * w + 2 * j;
                    for (di, dj) in [(0, 1), (1, 0), (1, 1)] {
                        let idx = base + (2 * i + di) * w + 2 * j + dj;
                        if src[idx] > src[best] {
                            best = idx;
                        }
                    }
                    out.push(src[best]);
                    argmax.push(best);
                }
            }
        }
        let v = Tensor::from_shape_vec(IxDyn(&out_shape), out).expect("shape");
        Ok(self.push_op(Value::Real(v), Op::MaxPool2 { x, argmax }, &[x]))
    }

    /// Batch normalization over every axis but the channel axis (1) using the
    /// statistics of the batch itself. Returns the output and the batch
    /// `(mean, biased variance)` for running-statistic updates.
    pub fn batchnorm_train(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<(Var, Array1<f64>, Array1<f64>)> {
        let t = self.real_checked(x, "batchnorm")?;
        let c = *t.shape().get(1).ok_or_else(|| Error::shape("batchnorm needs a channel axis"))?;
        let g = self.real_checked(gamma, "batchnorm")?.iter().copied().collect::<Vec<_>>();
        let bt = self.real_checked(beta, "batchnorm")?.iter().copied().collect::<Vec<_>>();
        if g.len() != c || bt.len() != c {
            return Err(Error::shape(format!("batchnorm affine size {} vs {c} channels", g.len())));
        }
        let mut mean = Array1::zeros(c);
        let mut var = Array1::zeros(c);
        let mut inv_std = Array1::zeros(c);
        let mut xhat = t.clone();
        let mut y = t.clone();
        for ch in 0..c {
            let lane = t.index_axis(Axis(1), ch);
            let m = lane.mean().unwrap_or(0.0);
            let v = lane.mapv(|a| (a - m) * (a - m)).mean().unwrap_or(0.0);
            let is = 1.0 / (v + eps).sqrt();
            mean[ch] = m;
            var[ch] = v;
            inv_std[ch] = is;
            xhat.index_axis_mut(Axis(1), ch).mapv_inplace(|a| (a - m) * is);
            let xh = xhat.index_axis(Axis(1), ch);
            y.index_axis_mut(Axis(1), ch).assign(&xh.mapv(|a| g[ch] * a + bt[ch]));
        }
        let node = self.push_op(
            Value::Real(y),
            Op::BatchNorm { x, gamma, beta, xhat, inv_std },
            &[x, gamma, beta],
        );
        Ok((node, mean, var))
    }

    /// Per-channel affine map `y = x * scale[c] + shift[c]` with fixed
    /// coefficients (inference-mode batch normalization).
    pub fn channel_affine(&mut self, x: Var, scale: Array1<f64>, shift: Array1<f64>) -> Result<Var> {
        let t = self.real_checked(x, "channel_affine")?;
        if t.ndim() < 2 || t.shape()[1] != scale.len() || scale.len() != shift.len() {
            return Err(Error::shape(format!("channel_affine on {} with {} coefficients", shape_str(t.shape()), scale.len())));
        }
        let mut y = t.clone();
        for ch in 0..scale.len() {
            let (s, b) = (scale[ch], shift[ch]);
            y.index_axis_mut(Axis(1), ch).mapv_inplace(|a| a * s + b);
        }
        Ok(self.push_op(Value::Real(y), Op::Affine { x, scale }, &[x]))
    }

    // ---- structural --------------------------------------------------

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::invalid("concat of zero tensors"));
        }
        let views = parts
            .iter()
            .map(|&p| self.real_checked(p, "concat").map(|t| t.view()))
            .collect::<Result<Vec<_>>>()?;
        let v = ndarray::concatenate(Axis(axis), &views).map_err(|_| {
            Error::shape(format!(
                "concat along {axis}: {}",
                parts.iter().map(|&p| shape_str(self.shape(p))).collect::<Vec<_>>().join(" vs ")
            ))
        })?;
        Ok(self.push_op(Value::Real(v), Op::Concat { parts: parts.to_vec(), axis }, parts))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let t = self.real_checked(x, "reshape")?;
        if t.len() != shape.iter().product::<usize>() {
            return Err(Error::shape(format!("reshape {} to {}", shape_str(t.shape()), shape_str(shape))));
        }
        let v = t.as_standard_layout().to_owned().into_shape_with_order(IxDyn(shape)).expect("size checked");
        Ok(self.push_op(Value::Real(v), Op::Reshape { x }, &[x]))
    }

    pub fn permute(&mut self, x: Var, perm: &[usize]) -> Result<Var> {
        let t = self.real_checked(x, "permute")?;
        let mut seen = vec![false; t.ndim()];
        if perm.len() != t.ndim() || perm.iter().any(|&p| p >= seen.len() || std::mem::replace(&mut seen[p], true)) {
            return Err(Error::shape(format!("bad permutation {perm:?} for {}", shape_str(t.shape()))));
        }
        let v = t.clone().permuted_axes(IxDyn(perm)).as_standard_layout().to_owned();
        Ok(self.push_op(Value::Real(v), Op::Permute { x, perm: perm.to_vec() }, &[x]))
    }

    /// Applies `my` along the second-to-last axis and `mx` along the last:
    /// `y = my * x * mx^T` for every leading index.
    pub fn resample(&mut self, x: Var, my: Array2<f64>, mx: Array2<f64>) -> Result<Var> {
        let t = self.real_checked(x, "resample")?;
        let n = t.ndim();
        if n < 2 || my.ncols() != t.shape()[n - 2] || mx.ncols() != t.shape()[n - 1] {
            return Err(Error::shape(format!(
                "resample {} with [{}, {}] x [{}, {}] matrices",
                shape_str(t.shape()),
                my.nrows(),
                my.ncols(),
                mx.nrows(),
                mx.ncols()
            )));
        }
        let v = apply_trailing(t, &my, &mx);
        Ok(self.push_op(Value::Real(v), Op::Resample { x, my, mx }, &[x]))
    }

    // ---- spectral ----------------------------------------------------

    pub fn to_complex(&mut self, x: Var) -> Result<Var> {
        let v = self.real_checked(x, "to_complex")?.mapv(|a| Complex64::new(a, 0.0));
        Ok(self.push_op(Value::Complex(v), Op::ToComplex(x), &[x]))
    }

    pub fn real_part(&mut self, z: Var) -> Result<Var> {
        let v = self.complex_checked(z, "real_part")?.mapv(|c| c.re);
        Ok(self.push_op(Value::Real(v), Op::RealPart(z), &[z]))
    }

    pub fn complex_from_parts(&mut self, re: Var, im: Var) -> Result<Var> {
        let (a, b) = (self.real_checked(re, "complex")?, self.real_checked(im, "complex")?);
        if a.shape() != b.shape() {
            return Err(Error::shape(format!("complex parts {} vs {}", shape_str(a.shape()), shape_str(b.shape()))));
        }
        let mut v = CTensor::zeros(a.raw_dim());
        ndarray::Zip::from(&mut v).and(a).and(b).for_each(|z, &r, &i| *z = Complex64::new(r, i));
        Ok(self.push_op(Value::Complex(v), Op::ComplexFromParts(re, im), &[re, im]))
    }

    /// Transform over the trailing `naxes` axes; unnormalized forward,
    /// `1 / N` on the inverse.
    pub fn fft(&mut self, z: Var, naxes: usize, inverse: bool) -> Result<Var> {
        let t = self.complex_checked(z, "fft")?;
        if naxes == 0 || naxes > t.ndim() {
            return Err(Error::shape(format!("fft over {naxes} axes of {}", shape_str(t.shape()))));
        }
        let mut v = t.as_standard_layout().to_owned();
        fft_trailing(v.view_mut(), naxes, inverse);
        if inverse {
            let n: usize = t.shape()[t.ndim() - naxes..].iter().product();
            v.mapv_inplace(|c| c / n as f64);
        }
        Ok(self.push_op(Value::Complex(v), Op::Fft { x: z, naxes, inverse }, &[z]))
    }

    pub fn fft2(&mut self, x: Var) -> Result<Var> {
        let z = self.to_complex(x)?;
        self.fft(z, 2, false)
    }

    pub fn ifft2(&mut self, z: Var) -> Result<Var> {
        let y = self.fft(z, 2, true)?;
        self.real_part(y)
    }

    pub fn fft3(&mut self, x: Var) -> Result<Var> {
        let z = self.to_complex(x)?;
        self.fft(z, 3, false)
    }

    pub fn ifft3(&mut self, z: Var) -> Result<Var> {
        let y = self.fft(z, 3, true)?;
        self.real_part(y)
    }

    /// Keeps frequencies `|k| < modes[a]` on each trailing axis; the result has
    /// extent `2 * modes[a] - 1` per axis, ordered like an FFT axis.
    pub fn truncate_modes(&mut self, z: Var, modes: &[usize]) -> Result<Var> {
        let t = self.complex_checked(z, "truncate_modes")?;
        let nd = t.ndim();
        if modes.len() > nd || modes.contains(&0) {
            return Err(Error::shape(format!("bad mode counts {modes:?} for {}", shape_str(t.shape()))));
        }
        let first = nd - modes.len();
        for (a, &m) in modes.iter().enumerate() {
            let n = t.shape()[first + a];
            if 2 * m > n {
                return Err(Error::shape(format!(
                    "{m} modes exceed the Nyquist limit of an axis of length {n}"
                )));
            }
        }
        let mut out_shape = t.shape().to_vec();
        for (a, &m) in modes.iter().enumerate() {
            out_shape[first + a] = 2 * m - 1;
        }
        let mut v = CTensor::zeros(IxDyn(&out_shape));
        let full = t.shape().to_vec();
        for (idx, dst) in v.indexed_iter_mut() {
            let mut src = idx.slice().to_vec();
            for (a, &m) in modes.iter().enumerate() {
                src[first + a] = mode_source(src[first + a], m, full[first + a]);
            }
            *dst = t[IxDyn(&src)];
        }
        Ok(self.push_op(Value::Complex(v), Op::Truncate { x: z, modes: modes.to_vec() }, &[z]))
    }

    /// Inverse of [`Graph::truncate_modes`]: zero-pads to `full` trailing extents.
    pub fn pad_modes(&mut self, z: Var, full: &[usize]) -> Result<Var> {
        let t = self.complex_checked(z, "pad_modes")?;
        let nd = t.ndim();
        if full.len() > nd {
            return Err(Error::shape(format!("pad to {full:?} from {}", shape_str(t.shape()))));
        }
        let first = nd - full.len();
        let mut modes = Vec::with_capacity(full.len());
        for (a, &n) in full.iter().enumerate() {
            let e = t.shape()[first + a];
            if e % 2 == 0 || e + 1 > n {
                return Err(Error::shape(format!("cannot pad extent {e} to {n}")));
            }
            modes.push(e.div_ceil(2));
        }
        let mut out_shape = t.shape().to_vec();
        out_shape[first..].copy_from_slice(full);
        let mut v = CTensor::zeros(IxDyn(&out_shape));
        for (idx, src) in t.indexed_iter() {
            let mut dst = idx.slice().to_vec();
            for (a, &m) in modes.iter().enumerate() {
                dst[first + a] = mode_source(dst[first + a], m, full[a]);
            }
            v[IxDyn(&dst)] = *src;
        }
        Ok(self.push_op(Value::Complex(v), Op::Pad { x: z, modes }, &[z]))
    }

    /// `y[b, o, k] = sum_i x[b, i, k] * w[i, o, k]` for complex `x: [B, Ci, K..]`
    /// and `w: [Ci, Co, K..]`.
    pub fn spectral_mix(&mut self, x: Var, w: Var) -> Result<Var> {
        let xt = self.complex_checked(x, "spectral_mix")?;
        let wt = self.complex_checked(w, "spectral_mix")?;
        let (xs, ws) = (xt.shape(), wt.shape());
        if xs.len() < 2 || ws.len() != xs.len() || ws[0] != xs[1] || ws[2..] != xs[2..] {
            return Err(Error::shape(format!("spectral_mix: {} vs weights {}", shape_str(xs), shape_str(ws))));
        }
        let (b, ci, co) = (xs[0], xs[1], ws[1]);
        let k: usize = xs[2..].iter().product();
        let xf = xt.as_standard_layout();
        let wf = wt.as_standard_layout();
        let (xs_, ws_) = (xf.as_slice().expect("std"), wf.as_slice().expect("std"));
        let mut out = vec![Complex64::new(0.0, 0.0); b * co * k];
        for bi in 0..b {
            for i in 0..ci {
                let xrow = &xs_[(bi * ci + i) * k..(bi * ci + i + 1) * k];
                for o in 0..co {
                    let wrow = &ws_[(i * co + o) * k..(i * co + o + 1) * k];
                    let dst = &mut out[(bi * co + o) * k..(bi * co + o + 1) * k];
                    for ((d, xv), wv) in dst.iter_mut().zip(xrow).zip(wrow) {
                        *d += xv * wv;
                    }
                }
            }
        }
        let mut shape = xs.to_vec();
        shape[1] = co;
        let v = CTensor::from_shape_vec(IxDyn(&shape), out).expect("shape");
        Ok(self.push_op(Value::Complex(v), Op::SpectralMix { x, w }, &[x, w]))
    }

    // ---- reverse pass ------------------------------------------------

    /// Populates adjoints of every node that `loss` depends on.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let lt = self.real_checked(loss, "backward")?;
        if lt.len() != 1 {
            return Err(Error::Graph(format!("backward needs a scalar loss, got {}", shape_str(lt.shape()))));
        }
        let mut grads: Vec<Option<Value>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Value::Real(Tensor::ones(lt.raw_dim())));
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if !self.nodes[i].needs_grad {
                continue;
            }
            self.propagate(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        self.grads = Some(grads);
        Ok(())
    }

    /// Adjoint of `v` after [`Graph::backward`]; zeros if `v` did not affect the loss.
    pub fn grad(&self, v: Var) -> Result<Value> {
        let grads = self
            .grads
            .as_ref()
            .ok_or_else(|| Error::Graph("gradient requested before backward".into()))?;
        Ok(grads[v.0].clone().unwrap_or_else(|| self.nodes[v.0].value.zeros_like()))
    }

    pub fn real_grad(&self, v: Var) -> Result<Tensor> {
        match self.grad(v)? {
            Value::Real(t) => Ok(t),
            Value::Complex(_) => Err(Error::Graph("real gradient requested for complex node".into())),
        }
    }

    /// Writes the adjoint of every bound parameter into `store`.
    pub fn write_grads(&self, store: &mut ParamStore) -> Result<()> {
        for (name, v) in &self.params {
            store.set_grad(name, self.real_grad(*v)?)?;
        }
        Ok(())
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn propagate(&self, i: usize, g: &Value, grads: &mut [Option<Value>]) {
        let mut acc = |v: Var, val: Value| match &mut grads[v.0] {
            Some(existing) => existing.add_assign(val),
            slot @ None => *slot = Some(val),
        };
        let gr = || match g {
            Value::Real(t) => t,
            Value::Complex(_) => unreachable!("real node with complex adjoint"),
        };
        let gc = || match g {
            Value::Complex(t) => t,
            Value::Real(_) => unreachable!("complex node with real adjoint"),
        };
        match &self.nodes[i].op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                for (v, sign) in [(*a, 1.0), (*b, 1.0)] {
                    if self.needs(v) {
                        acc(v, Value::Real(sum_to_shape(gr() * sign, self.shape(v))));
                    }
                }
            }
            Op::Sub(a, b) => {
                if self.needs(*a) {
                    acc(*a, Value::Real(sum_to_shape(gr().clone(), self.shape(*a))));
                }
                if self.needs(*b) {
                    acc(*b, Value::Real(sum_to_shape(-gr(), self.shape(*b))));
                }
            }
            Op::Mul(a, b) => {
                if self.needs(*a) {
                    acc(*a, Value::Real(sum_to_shape(gr() * self.real(*b), self.shape(*a))));
                }
                if self.needs(*b) {
                    acc(*b, Value::Real(sum_to_shape(gr() * self.real(*a), self.shape(*b))));
                }
            }
            Op::Scale(a, s) => acc(*a, Value::Real(gr() * *s)),
            Op::Relu(a) => {
                let mut d = gr().clone();
                ndarray::Zip::from(&mut d).and(self.real(*a)).for_each(|d, &x| {
                    if x <= 0.0 {
                        *d = 0.0
                    }
                });
                acc(*a, Value::Real(d));
            }
            Op::Gelu(a) => {
                let mut d = gr().clone();
                ndarray::Zip::from(&mut d).and(self.real(*a)).for_each(|d, &x| *d *= gelu_grad(x));
                acc(*a, Value::Real(d));
            }
            Op::Abs(a) => {
                let mut d = gr().clone();
                ndarray::Zip::from(&mut d).and(self.real(*a)).for_each(|d, &x| *d *= x.signum() * (x != 0.0) as u8 as f64);
                acc(*a, Value::Real(d));
            }
            Op::Square(a) => acc(*a, Value::Real(gr() * self.real(*a) * 2.0)),
            Op::Mean(a) => {
                let t = self.real(*a);
                let s = gr().iter().next().copied().unwrap_or(0.0) / t.len().max(1) as f64;
                acc(*a, Value::Real(Tensor::from_elem(t.raw_dim(), s)));
            }
            Op::Sum(a) => {
                let s = gr().iter().next().copied().unwrap_or(0.0);
                acc(*a, Value::Real(Tensor::from_elem(self.real(*a).raw_dim(), s)));
            }
            Op::Softmax { x, axis } => {
                let y = self.real(Var(i));
                let mut d = gr() * y;
                let s = d.sum_axis(Axis(*axis)).insert_axis(Axis(*axis));
                d -= &(y * &s);
                acc(*x, Value::Real(d));
            }
            Op::Pointwise { x, w, b } => {
                let xt = self.real(*x).as_standard_layout();
                let wt = self.real(*w).view().into_dimensionality::<ndarray::Ix2>().expect("rank 2");
                let g = gr().as_standard_layout();
                let xs = xt.shape().to_vec();
                let co = wt.nrows();
                let spatial: usize = xs[2..].iter().product();
                let mut gw = Array2::<f64>::zeros(wt.raw_dim());
                let mut gx = self.needs(*x).then(|| Tensor::zeros(xt.raw_dim()));
                for bi in 0..xs[0] {
                    let xb = xt.index_axis(Axis(0), bi).into_shape_with_order((xs[1], spatial)).expect("std");
                    let gb = g.index_axis(Axis(0), bi).into_shape_with_order((co, spatial)).expect("std");
                    gw += &gb.dot(&xb.t());
                    if let Some(gx) = gx.as_mut() {
                        gx.index_axis_mut(Axis(0), bi).assign(
                            &wt.t().dot(&gb).into_shape_with_order(IxDyn(&xs[1..])).expect("shape"),
                        );
                    }
                }
                if let Some(gx) = gx {
                    acc(*x, Value::Real(gx));
                }
                if self.needs(*w) {
                    acc(*w, Value::Real(gw.into_dyn()));
                }
                if let Some(b) = b {
                    if self.needs(*b) {
                        let gb: Vec<f64> = (0..co).map(|o| g.index_axis(Axis(1), o).sum()).collect();
                        acc(*b, Value::Real(Tensor::from_shape_vec(self.real(*b).raw_dim(), gb).expect("shape")));
                    }
                }
            }
            Op::Conv { x, w, b, stride, pads, rank } => {
                let (gx, gw, gb) = conv::conv_backward(
                    to5(self.real(*x), *rank).view(),
                    to5(self.real(*w), *rank).view(),
                    to5(gr(), *rank).view(),
                    *stride,
                    *pads,
                    self.needs(*x),
                );
                if let Some(gx) = gx {
                    acc(*x, Value::Real(from5(gx, *rank)));
                }
                if self.needs(*w) {
                    acc(*w, Value::Real(from5(gw, *rank)));
                }
                if let Some(b) = b {
                    if self.needs(*b) {
                        acc(*b, Value::Real(Tensor::from_shape_vec(self.real(*b).raw_dim(), gb).expect("shape")));
                    }
                }
            }
            Op::ConvTranspose { x, w, b, stride } => {
                let xt = self.real(*x).as_standard_layout().to_owned();
                let wt = self.real(*w).as_standard_layout().to_owned();
                let gt = gr().as_standard_layout().to_owned();
                let (gx, gw, gb) = conv::conv_transpose_backward(
                    xt.view().into_dimensionality().expect("rank 4"),
                    wt.view().into_dimensionality().expect("rank 4"),
                    gt.view().into_dimensionality().expect("rank 4"),
                    *stride,
                    self.needs(*x),
                );
                if let Some(gx) = gx {
                    acc(*x, Value::Real(gx.into_dyn()));
                }
                if self.needs(*w) {
                    acc(*w, Value::Real(gw.into_dyn()));
                }
                if let Some(b) = b {
                    if self.needs(*b) {
                        acc(*b, Value::Real(Tensor::from_shape_vec(self.real(*b).raw_dim(), gb).expect("shape")));
                    }
                }
            }
            Op::MaxPool2 { x, argmax } => {
                let xt = self.real(*x);
                let mut d = vec![0.0; xt.len()];
                let g = gr().as_standard_layout();
                for (src, gv) in argmax.iter().zip(g.iter()) {
                    d[*src] += gv;
                }
                acc(*x, Value::Real(Tensor::from_shape_vec(xt.raw_dim(), d).expect("shape")));
            }
            Op::BatchNorm { x, gamma, beta, xhat, inv_std } => {
                let g = gr();
                let gam = self.real(*gamma);
                let c = inv_std.len();
                let n = (g.len() / c) as f64;
                let mut gx = Tensor::zeros(g.raw_dim());
                let mut ggamma = vec![0.0; c];
                let mut gbeta = vec![0.0; c];
                for ch in 0..c {
                    let gl = g.index_axis(Axis(1), ch);
                    let xl = xhat.index_axis(Axis(1), ch);
                    let sg = gl.sum();
                    let sgx = (&gl * &xl).sum();
                    ggamma[ch] = sgx;
                    gbeta[ch] = sg;
                    let k = gam[ch] * inv_std[ch] / n;
                    ndarray::Zip::from(gx.index_axis_mut(Axis(1), ch))
                        .and(&gl)
                        .and(&xl)
                        .for_each(|d, &gv, &xv| *d = k * (n * gv - sg - xv * sgx));
                }
                if self.needs(*x) {
                    acc(*x, Value::Real(gx));
                }
                if self.needs(*gamma) {
                    acc(*gamma, Value::Real(Tensor::from_shape_vec(gam.raw_dim(), ggamma).expect("shape")));
                }
                if self.needs(*beta) {
                    acc(*beta, Value::Real(Tensor::from_shape_vec(self.real(*beta).raw_dim(), gbeta).expect("shape")));
                }
            }
            Op::Affine { x, scale } => {
                let mut d = gr().clone();
                for (ch, s) in scale.iter().enumerate() {
                    d.index_axis_mut(Axis(1), ch).mapv_inplace(|v| v * s);
                }
                acc(*x, Value::Real(d));
            }
            Op::Concat { parts, axis } => {
                let mut start = 0;
                for p in parts {
                    let len = self.shape(*p)[*axis];
                    if self.needs(*p) {
                        let piece = gr().slice_axis(Axis(*axis), ndarray::Slice::from(start..start + len)).to_owned();
                        acc(*p, Value::Real(piece));
                    }
                    start += len;
                }
            }
            Op::Reshape { x } => {
                let shape = self.shape(*x).to_vec();
                let d = gr().as_standard_layout().to_owned().into_shape_with_order(IxDyn(&shape)).expect("size");
                acc(*x, Value::Real(d));
            }
            Op::Permute { x, perm } => {
                let mut inv = vec![0; perm.len()];
                for (i, &p) in perm.iter().enumerate() {
                    inv[p] = i;
                }
                let d = gr().clone().permuted_axes(IxDyn(&inv)).as_standard_layout().to_owned();
                acc(*x, Value::Real(d));
            }
            Op::Resample { x, my, mx } => {
                let myt = my.t().to_owned();
                let mxt = mx.t().to_owned();
                acc(*x, Value::Real(apply_trailing(gr(), &myt, &mxt)));
            }
            Op::ToComplex(x) => acc(*x, Value::Real(gc().mapv(|c| c.re))),
            Op::RealPart(z) => acc(*z, Value::Complex(gr().mapv(|r| Complex64::new(r, 0.0)))),
            Op::ComplexFromParts(re, im) => {
                if self.needs(*re) {
                    acc(*re, Value::Real(gc().mapv(|c| c.re)));
                }
                if self.needs(*im) {
                    acc(*im, Value::Real(gc().mapv(|c| c.im)));
                }
            }
            Op::Fft { x, naxes, inverse } => {
                // Forward Y = F X has adjoint F^H = unnormalized inverse;
                // inverse Y = F^H X / N has adjoint F / N.
                let mut d = gc().as_standard_layout().to_owned();
                fft_trailing(d.view_mut(), *naxes, !*inverse);
                if *inverse {
                    let n: usize = d.shape()[d.ndim() - naxes..].iter().product();
                    d.mapv_inplace(|c| c / n as f64);
                }
                acc(*x, Value::Complex(d));
            }
            Op::Truncate { x, modes } => {
                let full = self.shape(*x).to_vec();
                let first = full.len() - modes.len();
                let mut d = CTensor::zeros(IxDyn(&full));
                for (idx, v) in gc().indexed_iter() {
                    let mut dst = idx.slice().to_vec();
                    for (a, &m) in modes.iter().enumerate() {
                        dst[first + a] = mode_source(dst[first + a], m, full[first + a]);
                    }
                    d[IxDyn(&dst)] += *v;
                }
                acc(*x, Value::Complex(d));
            }
            Op::Pad { x, modes } => {
                let small = self.shape(*x).to_vec();
                let full = self.shape(Var(i)).to_vec();
                let first = small.len() - modes.len();
                let g = gc();
                let mut d = CTensor::zeros(IxDyn(&small));
                for (idx, dst) in d.indexed_iter_mut() {
                    let mut src = idx.slice().to_vec();
                    for (a, &m) in modes.iter().enumerate() {
                        src[first + a] = mode_source(src[first + a], m, full[first + a]);
                    }
                    *dst = g[IxDyn(&src)];
                }
                acc(*x, Value::Complex(d));
            }
            Op::SpectralMix { x, w } => {
                let xt = match self.value(*x) {
                    Value::Complex(t) => t.as_standard_layout(),
                    _ => unreachable!(),
                };
                let wt = match self.value(*w) {
                    Value::Complex(t) => t.as_standard_layout(),
                    _ => unreachable!(),
                };
                let g = gc().as_standard_layout();
                let (xs, ws) = (xt.shape(), wt.shape());
                let (b, ci, co) = (xs[0], xs[1], ws[1]);
                let k: usize = xs[2..].iter().product();
                let (xv, wv, gv) = (xt.as_slice().unwrap(), wt.as_slice().unwrap(), g.as_slice().unwrap());
                let mut gx = vec![Complex64::new(0.0, 0.0); xv.len()];
                let mut gw = vec![Complex64::new(0.0, 0.0); wv.len()];
                for bi in 0..b {
                    for i in 0..ci {
                        let xo = (bi * ci + i) * k;
                        for o in 0..co {
                            let wo = (i * co + o) * k;
                            let go = (bi * co + o) * k;
                            for kk in 0..k {
                                let gy = gv[go + kk];
                                gx[xo + kk] += wv[wo + kk].conj() * gy;
                                gw[wo + kk] += xv[xo + kk].conj() * gy;
                            }
                        }
                    }
                }
                if self.needs(*x) {
                    acc(*x, Value::Complex(CTensor::from_shape_vec(xt.raw_dim(), gx).expect("shape")));
                }
                if self.needs(*w) {
                    acc(*w, Value::Complex(CTensor::from_shape_vec(wt.raw_dim(), gw).expect("shape")));
                }
            }
        }
    }
}

/// `my * t * mx^T` over the trailing two axes of `t`.
fn apply_trailing(t: &Tensor, my: &Array2<f64>, mx: &Array2<f64>) -> Tensor {
    let s = t.shape().to_vec();
    let n = s.len();
    let (h, w) = (s[n - 2], s[n - 1]);
    let lead: usize = s[..n - 2].iter().product();
    let src = t.as_standard_layout().to_owned().into_shape_with_order((lead, h, w)).expect("std");
    let mut out = ndarray::Array3::zeros((lead, my.nrows(), mx.nrows()));
    let mxt = mx.t();
    for l in 0..lead {
        let tmp = my.dot(&src.index_axis(Axis(0), l));
        out.index_axis_mut(Axis(0), l).assign(&tmp.dot(&mxt));
    }
    let mut shape = s;
    shape[n - 2] = my.nrows();
    shape[n - 1] = mx.nrows();
    out.into_shape_with_order(IxDyn(&shape)).expect("shape")
}
