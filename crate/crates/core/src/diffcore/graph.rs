//! Tape of primitive operations. Each builder method evaluates the forward
//! pass eagerly and records what the reverse pass needs.

use std::collections::HashMap;

use super::gemm::{gemm, MatRef};
use super::param::{ParamId, ParamStore};
use super::tensor::{shape_str, Tensor};
use crate::error::{Error, Result};

/// Norms below this are treated as zero by [`Graph::l2_normalize`].
pub const L2_EPS: f64 = 1e-12;
/// Variance epsilon of [`Graph::instance_norm`].
pub const NORM_EPS: f64 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(pub(crate) usize);

#[derive(Clone, Copy, Debug)]
pub(crate) struct Axis {
    pub i0: usize,
    pub i1: usize,
    pub w: f64,
}

/// Half-pixel source coordinates for resizing an axis of length `src` to `dst`.
pub(crate) fn resize_axis(src: usize, dst: usize) -> Vec<Axis> {
    let scale = src as f64 / dst as f64;
    (0..dst)
        .map(|o| {
            let s = ((o as f64 + 0.5) * scale - 0.5).clamp(0.0, (src - 1) as f64);
            let i0 = s.floor() as usize;
            let i1 = (i0 + 1).min(src - 1);
            Axis {
                i0,
                i1,
                w: s - i0 as f64,
            }
        })
        .collect()
}

pub(crate) enum Op {
    Leaf,
    Param,
    Conv2d {
        x: usize,
        w: usize,
        b: Option<usize>,
        stride: usize,
        pad: usize,
        cols: Vec<f64>,
    },
    Linear {
        x: usize,
        w: usize,
        b: Option<usize>,
    },
    Relu(usize),
    Sigmoid(usize),
    Softmax(usize),
    InstanceNorm {
        x: usize,
        gamma: usize,
        beta: usize,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    ChannelAffine {
        x: usize,
        scale: usize,
        shift: usize,
    },
    Resize {
        x: usize,
        ay: Vec<Axis>,
        ax: Vec<Axis>,
    },
    L2Normalize {
        x: usize,
        norms: Vec<f64>,
    },
    Concat {
        inputs: Vec<usize>,
        axis: usize,
    },
    MaxPool2 {
        x: usize,
        argmax: Vec<usize>,
    },
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    AddConst(usize),
    MatMul(usize, usize),
    Sum(usize),
    Mean(usize),
    Max {
        x: usize,
        index: usize,
    },
    Reshape(usize),
    Transpose(usize),
    Gather {
        x: usize,
        index: Vec<usize>,
    },
    PairDistance {
        a: usize,
        b: usize,
        pairs: Vec<(usize, usize)>,
    },
    PairDot {
        a: usize,
        b: usize,
        pairs: Vec<(usize, usize)>,
    },
    Abs(usize),
    LogSumExpRows {
        x: usize,
        probs: Vec<f64>,
    },
    StopGradient,
}

pub(crate) struct Node {
    pub value: Tensor,
    pub op: Op,
    pub requires_grad: bool,
}

/// A recorded composition of primitives.
#[derive(Default)]
pub struct Graph {
    pub(crate) nodes: Vec<Node>,
    param_nodes: HashMap<ParamId, NodeId>,
}

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(op, shape_str(a.shape()), shape_str(b.shape())));
    }
    Ok(())
}

fn expect_rank(op: &'static str, t: &Tensor, rank: usize) -> Result<()> {
    if t.rank() != rank {
        return Err(Error::shape(
            op,
            format!("rank {rank}"),
            format!("rank {} {}", t.rank(), shape_str(t.shape())),
        ));
    }
    Ok(())
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

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> NodeId {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn rg(&self, ids: &[usize]) -> bool {
        ids.iter().any(|&i| self.nodes[i].requires_grad)
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn shape(&self, id: NodeId) -> &[usize] {
        self.nodes[id.0].value.shape()
    }

    /// A differentiable input.
    pub fn input(&mut self, t: Tensor) -> NodeId {
        self.push(t, Op::Leaf, true)
    }

    /// A leaf that never receives a gradient.
    pub fn constant(&mut self, t: Tensor) -> NodeId {
        self.push(t, Op::Leaf, false)
    }

    /// Leaf bound to a parameter. Repeated calls with the same id share one node.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> NodeId {
        if let Some(&n) = self.param_nodes.get(&id) {
            return n;
        }
        let p = store.get(id);
        let n = self.push(p.value.clone(), Op::Param, p.trainable);
        self.param_nodes.insert(id, n);
        n
    }

    pub(crate) fn param_bindings(&self) -> impl Iterator<Item = (ParamId, NodeId)> + '_ {
        self.param_nodes.iter().map(|(&p, &n)| (p, n))
    }

    /// 2-D convolution of a `[C, H, W]` input with `[O, C, k, k]` weights,
    /// zero padding.
    pub fn conv2d(&mut self, x: NodeId, w: NodeId, b: Option<NodeId>, stride: usize, pad: usize) -> Result<NodeId> {
        let xs = self.value(x).shape().to_vec();
        let ws = self.value(w).shape().to_vec();
        expect_rank("conv2d", self.value(x), 3)?;
        expect_rank("conv2d", self.value(w), 4)?;
        let (c, h, wd) = (xs[0], xs[1], xs[2]);
        let (o, k) = (ws[0], ws[2]);
        if ws[1] != c || ws[3] != k {
            return Err(Error::shape(
                "conv2d",
                format!("weights [O, {c}, k, k]"),
                shape_str(&ws),
            ));
        }
        if stride == 0 || h + 2 * pad < k || wd + 2 * pad < k {
            return Err(Error::shape("conv2d", format!("spatial >= kernel {k}"), shape_str(&xs)));
        }
        if let Some(b) = b {
            if self.value(b).shape() != [o] {
                return Err(Error::shape(
                    "conv2d",
                    format!("bias [{o}]"),
                    shape_str(self.value(b).shape()),
                ));
            }
        }
        let ho = (h + 2 * pad - k) / stride + 1;
        let wo = (wd + 2 * pad - k) / stride + 1;
        let ckk = c * k * k;
        let hw = ho * wo;
        let mut cols = vec![0.0; ckk * hw];
        {
            let xd = self.value(x).data();
            for ci in 0..c {
                for ki in 0..k {
                    for kj in 0..k {
                        let row = (ci * k + ki) * k + kj;
                        let dst = &mut cols[row * hw..(row + 1) * hw];
                        for oy in 0..ho {
                            let iy = (oy * stride + ki) as isize - pad as isize;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            let src = &xd[(ci * h + iy as usize) * wd..(ci * h + iy as usize + 1) * wd];
                            for ox in 0..wo {
                                let ix = (ox * stride + kj) as isize - pad as isize;
                                if ix >= 0 && ix < wd as isize {
                                    dst[oy * wo + ox] = src[ix as usize];
                                }
                            }
                        }
                    }
                }
            }
        }
        let mut out = vec![0.0; o * hw];
        if let Some(b) = b {
            let bd = self.value(b).data();
            for (oi, chunk) in out.chunks_mut(hw).enumerate() {
                chunk.iter_mut().for_each(|v| *v = bd[oi]);
            }
        }
        gemm(
            o,
            ckk,
            hw,
            1.0,
            MatRef::rows(self.value(w).data(), ckk),
            MatRef::rows(&cols, hw),
            1.0,
            &mut out,
        );
        let mut ids = vec![x.0, w.0];
        ids.extend(b.map(|b| b.0));
        let rg = self.rg(&ids);
        Ok(self.push(
            Tensor::from_parts(vec![o, ho, wo], out),
            Op::Conv2d {
                x: x.0,
                w: w.0,
                b: b.map(|b| b.0),
                stride,
                pad,
                cols,
            },
            rg,
        ))
    }

    /// `y = x wᵀ (+ b)` for `x: [n, in]`, `w: [out, in]`, `b: [out]`.
    pub fn linear(&mut self, x: NodeId, w: NodeId, b: Option<NodeId>) -> Result<NodeId> {
        expect_rank("linear", self.value(x), 2)?;
        expect_rank("linear", self.value(w), 2)?;
        let (n, fin) = (self.shape(x)[0], self.shape(x)[1]);
        let (fout, win) = (self.shape(w)[0], self.shape(w)[1]);
        if win != fin {
            return Err(Error::shape(
                "linear",
                format!("weights [_, {fin}]"),
                shape_str(self.shape(w)),
            ));
        }
        let mut out = vec![0.0; n * fout];
        if let Some(b) = b {
            if self.shape(b) != [fout] {
                return Err(Error::shape(
                    "linear",
                    format!("bias [{fout}]"),
                    shape_str(self.shape(b)),
                ));
            }
            let bd = self.value(b).data();
            for row in out.chunks_mut(fout) {
                row.copy_from_slice(bd);
            }
        }
        gemm(
            n,
            fin,
            fout,
            1.0,
            MatRef::rows(self.value(x).data(), fin),
            MatRef::transposed(self.value(w).data(), fin),
            1.0,
            &mut out,
        );
        let mut ids = vec![x.0, w.0];
        ids.extend(b.map(|b| b.0));
        let rg = self.rg(&ids);
        Ok(self.push(
            Tensor::from_parts(vec![n, fout], out),
            Op::Linear {
                x: x.0,
                w: w.0,
                b: b.map(|b| b.0),
            },
            rg,
        ))
    }

    fn unary(&mut self, x: NodeId, f: impl Fn(f64) -> f64, op: Op) -> NodeId {
        let v = self.value(x);
        let data = v.data().iter().map(|&a| f(a)).collect();
        let t = Tensor::from_parts(v.shape().to_vec(), data);
        let rg = self.rg(&[x.0]);
        self.push(t, op, rg)
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        self.unary(x, |a| if a < 0.0 { 0.0 } else { a }, Op::Relu(x.0))
    }

    pub fn sigmoid(&mut self, x: NodeId) -> NodeId {
        self.unary(
            x,
            |a| {
                if a >= 0.0 {
                    1.0 / (1.0 + (-a).exp())
                } else {
                    let e = a.exp();
                    e / (1.0 + e)
                }
            },
            Op::Sigmoid(x.0),
        )
    }

    pub fn abs(&mut self, x: NodeId) -> NodeId {
        self.unary(x, f64::abs, Op::Abs(x.0))
    }

    pub fn scale(&mut self, x: NodeId, c: f64) -> NodeId {
        self.unary(x, |a| a * c, Op::Scale(x.0, c))
    }

    pub fn add_const(&mut self, x: NodeId, c: f64) -> NodeId {
        self.unary(x, |a| a + c, Op::AddConst(x.0))
    }

    /// Identity in the forward pass; blocks gradient flow.
    pub fn stop_gradient(&mut self, x: NodeId) -> NodeId {
        let t = self.value(x).clone();
        self.push(t, Op::StopGradient, false)
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, x: NodeId) -> NodeId {
        let v = self.value(x);
        let d = v.last_dim();
        let mut out = v.data().to_vec();
        for row in out.chunks_mut(d) {
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut s = 0.0;
            for a in row.iter_mut() {
                *a = (*a - m).exp();
                s += *a;
            }
            row.iter_mut().for_each(|a| *a /= s);
        }
        let t = Tensor::from_parts(v.shape().to_vec(), out);
        let rg = self.rg(&[x.0]);
        self.push(t, Op::Softmax(x.0), rg)
    }

    /// Row-wise log-sum-exp of a `[n, m]` tensor, producing `[n]`.
    pub fn logsumexp_rows(&mut self, x: NodeId) -> Result<NodeId> {
        expect_rank("logsumexp_rows", self.value(x), 2)?;
        let v = self.value(x);
        let m = v.shape()[1];
        let n = v.shape()[0];
        let mut probs = v.data().to_vec();
        let mut out = Vec::with_capacity(n);
        for row in probs.chunks_mut(m) {
            let (arg, mx) = row
                .iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |b, (i, &a)| if a > b.1 { (i, a) } else { b });
            let mut rest = 0.0;
            for (i, a) in row.iter_mut().enumerate() {
                *a = (*a - mx).exp();
                if i != arg {
                    rest += *a;
                }
            }
            let s = 1.0 + rest;
            row.iter_mut().for_each(|a| *a /= s);
            out.push(mx + rest.ln_1p());
        }
        let rg = self.rg(&[x.0]);
        Ok(self.push(
            Tensor::from_parts(vec![n], out),
            Op::LogSumExpRows { x: x.0, probs },
            rg,
        ))
    }

    /// Per-channel normalization of a `[C, ...]` tensor with statistics over
    /// all remaining axes, then affine `gamma`, `beta` of shape `[C]`.
    pub fn instance_norm(&mut self, x: NodeId, gamma: NodeId, beta: NodeId) -> Result<NodeId> {
        let v = self.value(x);
        if v.rank() < 2 {
            return Err(Error::shape("instance_norm", "rank >= 2", shape_str(v.shape())));
        }
        let c = v.shape()[0];
        if self.shape(gamma) != [c] || self.shape(beta) != [c] {
            return Err(Error::shape(
                "instance_norm",
                format!("affine [{c}]"),
                format!("{} / {}", shape_str(self.shape(gamma)), shape_str(self.shape(beta))),
            ));
        }
        let per = v.len() / c;
        let mut xhat = v.data().to_vec();
        let mut inv_std = Vec::with_capacity(c);
        for chunk in xhat.chunks_mut(per) {
            let mean = chunk.iter().sum::<f64>() / per as f64;
            let var = chunk.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / per as f64;
            let is = 1.0 / (var + NORM_EPS).sqrt();
            chunk.iter_mut().for_each(|a| *a = (*a - mean) * is);
            inv_std.push(is);
        }
        let g = self.value(gamma).data();
        let b = self.value(beta).data();
        let mut out = xhat.clone();
        for (ci, chunk) in out.chunks_mut(per).enumerate() {
            chunk.iter_mut().for_each(|a| *a = *a * g[ci] + b[ci]);
        }
        let t = Tensor::from_parts(v.shape().to_vec(), out);
        let rg = self.rg(&[x.0, gamma.0, beta.0]);
        Ok(self.push(
            t,
            Op::InstanceNorm {
                x: x.0,
                gamma: gamma.0,
                beta: beta.0,
                xhat,
                inv_std,
            },
            rg,
        ))
    }

    /// `y[.., c] = x[.., c] * scale[c] + shift[c]` over the last axis.
    pub fn channel_affine(&mut self, x: NodeId, scale: NodeId, shift: NodeId) -> Result<NodeId> {
        let v = self.value(x);
        let d = v.last_dim();
        if self.shape(scale) != [d] || self.shape(shift) != [d] {
            return Err(Error::shape(
                "channel_affine",
                format!("[{d}]"),
                format!("{} / {}", shape_str(self.shape(scale)), shape_str(self.shape(shift))),
            ));
        }
        let s = self.value(scale).data();
        let b = self.value(shift).data();
        let mut out = v.data().to_vec();
        for row in out.chunks_mut(d) {
            for (j, a) in row.iter_mut().enumerate() {
                *a = *a * s[j] + b[j];
            }
        }
        let t = Tensor::from_parts(v.shape().to_vec(), out);
        let rg = self.rg(&[x.0, scale.0, shift.0]);
        Ok(self.push(
            t,
            Op::ChannelAffine {
                x: x.0,
                scale: scale.0,
                shift: shift.0,
            },
            rg,
        ))
    }

    /// Bilinear resize of `[C, H, W]` to `[C, out_h, out_w]` with half-pixel
    /// centers; the identity when the size is unchanged.
    pub fn resize_bilinear(&mut self, x: NodeId, out_h: usize, out_w: usize) -> Result<NodeId> {
        expect_rank("resize_bilinear", self.value(x), 3)?;
        if out_h == 0 || out_w == 0 {
            return Err(Error::shape(
                "resize_bilinear",
                "positive output size",
                format!("{out_h}x{out_w}"),
            ));
        }
        let v = self.value(x);
        let (c, h, w) = (v.shape()[0], v.shape()[1], v.shape()[2]);
        let ay = resize_axis(h, out_h);
        let ax = resize_axis(w, out_w);
        let xd = v.data();
        let mut out = vec![0.0; c * out_h * out_w];
        for ci in 0..c {
            let src = &xd[ci * h * w..(ci + 1) * h * w];
            let dst = &mut out[ci * out_h * out_w..(ci + 1) * out_h * out_w];
            for (oy, ya) in ay.iter().enumerate() {
                let r0 = &src[ya.i0 * w..(ya.i0 + 1) * w];
                let r1 = &src[ya.i1 * w..(ya.i1 + 1) * w];
                for (ox, xa) in ax.iter().enumerate() {
                    let top = r0[xa.i0] * (1.0 - xa.w) + r0[xa.i1] * xa.w;
                    let bot = r1[xa.i0] * (1.0 - xa.w) + r1[xa.i1] * xa.w;
                    dst[oy * out_w + ox] = top * (1.0 - ya.w) + bot * ya.w;
                }
            }
        }
        let rg = self.rg(&[x.0]);
        Ok(self.push(
            Tensor::from_parts(vec![c, out_h, out_w], out),
            Op::Resize { x: x.0, ay, ax },
            rg,
        ))
    }

    /// Normalizes each vector along the last axis to unit L2 norm. Vectors
    /// with norm below [`L2_EPS`] map to zero.
    pub fn l2_normalize(&mut self, x: NodeId) -> NodeId {
        let v = self.value(x);
        let d = v.last_dim();
        let mut out = v.data().to_vec();
        let mut norms = Vec::with_capacity(out.len() / d);
        for row in out.chunks_mut(d) {
            let n = row.iter().map(|a| a * a).sum::<f64>().sqrt();
            if n < L2_EPS {
                row.iter_mut().for_each(|a| *a = 0.0);
            } else {
                row.iter_mut().for_each(|a| *a /= n);
            }
            norms.push(n);
        }
        let t = Tensor::from_parts(v.shape().to_vec(), out);
        let rg = self.rg(&[x.0]);
        self.push(t, Op::L2Normalize { x: x.0, norms }, rg)
    }

    /// Concatenation along `axis`; all other dimensions must agree.
    pub fn concat(&mut self, xs: &[NodeId], axis: usize) -> Result<NodeId> {
        let first = self
            .value(
                *xs.first()
                    .ok_or_else(|| Error::shape("concat", "at least one input", "none"))?,
            )
            .shape()
            .to_vec();
        if axis >= first.len() {
            return Err(Error::shape(
                "concat",
                format!("axis < {}", first.len()),
                format!("axis {axis}"),
            ));
        }
        let mut total = 0;
        for &id in xs {
            let s = self.shape(id);
            let ok = s.len() == first.len() && s.iter().zip(&first).enumerate().all(|(i, (a, b))| i == axis || a == b);
            if !ok {
                return Err(Error::shape("concat", shape_str(&first), shape_str(s)));
            }
            total += s[axis];
        }
        let outer: usize = first[..axis].iter().product();
        let inner: usize = first[axis + 1..].iter().product();
        let mut shape = first.clone();
        shape[axis] = total;
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &id in xs {
                let v = self.value(id);
                let span = v.shape()[axis] * inner;
                out.extend_from_slice(&v.data()[o * span..(o + 1) * span]);
            }
        }
        let ids: Vec<usize> = xs.iter().map(|x| x.0).collect();
        let rg = self.rg(&ids);
        Ok(self.push(Tensor::from_parts(shape, out), Op::Concat { inputs: ids, axis }, rg))
    }

    /// 2×2 max pooling with stride 2 on `[C, H, W]` (even H, W). Ties pick the
    /// first element in row-major order.
    pub fn max_pool2(&mut self, x: NodeId) -> Result<NodeId> {
        expect_rank("max_pool2", self.value(x), 3)?;
        let v = self.value(x);
        let (c, h, w) = (v.shape()[0], v.shape()[1], v.shape()[2]);
        if h % 2 != 0 || w % 2 != 0 {
            return Err(Error::shape("max_pool2", "even spatial dims", shape_str(v.shape())));
        }
        let (ho, wo) = (h / 2, w / 2);
        let xd = v.data();
        let mut out = Vec::with_capacity(c * ho * wo);
        let mut argmax = Vec::with_capacity(c * ho * wo);
        for ci in 0..c {
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut best = usize::MAX;
                    for (dy, dx) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                        let i = (ci * h + 2 * oy + dy) * w + 2 * ox + dx;
                        if best == usize::MAX || xd[i] > xd[best] || xd[i].is_nan() {
                            best = i;
                        }
                    }
                    out.push(xd[best]);
                    argmax.push(best);
                }
            }
        }
        let rg = self.rg(&[x.0]);
        Ok(self.push(
            Tensor::from_parts(vec![c, ho, wo], out),
            Op::MaxPool2 { x: x.0, argmax },
            rg,
        ))
    }

    fn binary(
        &mut self,
        op: &'static str,
        a: NodeId,
        b: NodeId,
        f: impl Fn(f64, f64) -> f64,
        rec: Op,
    ) -> Result<NodeId> {
        same_shape(op, self.value(a), self.value(b))?;
        let va = self.value(a);
        let data = va
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&p, &q)| f(p, q))
            .collect();
        let t = Tensor::from_parts(va.shape().to_vec(), data);
        let rg = self.rg(&[a.0, b.0]);
        Ok(self.push(t, rec, rg))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary("add", a, b, |p, q| p + q, Op::Add(a.0, b.0))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary("sub", a, b, |p, q| p - q, Op::Sub(a.0, b.0))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary("mul", a, b, |p, q| p * q, Op::Mul(a.0, b.0))
    }

    /// Matrix product of `[m, k]` and `[k, n]`.
    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        expect_rank("matmul", self.value(a), 2)?;
        expect_rank("matmul", self.value(b), 2)?;
        let (m, k) = (self.shape(a)[0], self.shape(a)[1]);
        let (k2, n) = (self.shape(b)[0], self.shape(b)[1]);
        if k != k2 {
            return Err(Error::shape("matmul", format!("[{k}, _]"), shape_str(self.shape(b))));
        }
        let mut out = vec![0.0; m * n];
        gemm(
            m,
            k,
            n,
            1.0,
            MatRef::rows(self.value(a).data(), k),
            MatRef::rows(self.value(b).data(), n),
            0.0,
            &mut out,
        );
        let rg = self.rg(&[a.0, b.0]);
        Ok(self.push(Tensor::from_parts(vec![m, n], out), Op::MatMul(a.0, b.0), rg))
    }

    pub fn sum(&mut self, x: NodeId) -> NodeId {
        let s = self.value(x).data().iter().sum();
        let rg = self.rg(&[x.0]);
        self.push(Tensor::scalar(s), Op::Sum(x.0), rg)
    }

    pub fn mean(&mut self, x: NodeId) -> NodeId {
        let v = self.value(x);
        let s = v.data().iter().sum::<f64>() / v.len() as f64;
        let rg = self.rg(&[x.0]);
        self.push(Tensor::scalar(s), Op::Mean(x.0), rg)
    }

    /// Maximum over all elements; the gradient goes to the first maximizer.
    pub fn max(&mut self, x: NodeId) -> NodeId {
        let v = self.value(x);
        let mut index = 0;
        for (i, &a) in v.data().iter().enumerate() {
            if a > v.data()[index] {
                index = i;
            }
        }
        let m = v.data()[index];
        let rg = self.rg(&[x.0]);
        self.push(Tensor::scalar(m), Op::Max { x: x.0, index }, rg)
    }

    pub fn reshape(&mut self, x: NodeId, shape: &[usize]) -> Result<NodeId> {
        let t = self.value(x).clone().reshaped(shape)?;
        let rg = self.rg(&[x.0]);
        Ok(self.push(t, Op::Reshape(x.0), rg))
    }

    /// Transpose of a 2-D tensor.
    pub fn transpose(&mut self, x: NodeId) -> Result<NodeId> {
        expect_rank("transpose", self.value(x), 2)?;
        let v = self.value(x);
        let (r, c) = (v.shape()[0], v.shape()[1]);
        let out = transpose_data(v.data(), r, c);
        let rg = self.rg(&[x.0]);
        Ok(self.push(Tensor::from_parts(vec![c, r], out), Op::Transpose(x.0), rg))
    }

    /// Selects rows (slices along axis 0) by index; indices may repeat.
    pub fn gather_rows(&mut self, x: NodeId, index: &[usize]) -> Result<NodeId> {
        let v = self.value(x);
        let n = v.shape()[0];
        if index.is_empty() {
            return Err(Error::shape("gather_rows", "non-empty index", "empty"));
        }
        if let Some(&bad) = index.iter().find(|&&i| i >= n) {
            return Err(Error::shape(
                "gather_rows",
                format!("index < {n}"),
                format!("index {bad}"),
            ));
        }
        let row = v.len() / n;
        let mut out = Vec::with_capacity(index.len() * row);
        for &i in index {
            out.extend_from_slice(&v.data()[i * row..(i + 1) * row]);
        }
        let mut shape = v.shape().to_vec();
        shape[0] = index.len();
        let rg = self.rg(&[x.0]);
        Ok(self.push(
            Tensor::from_parts(shape, out),
            Op::Gather {
                x: x.0,
                index: index.to_vec(),
            },
            rg,
        ))
    }

    fn check_pairs(&self, op: &'static str, a: NodeId, b: NodeId, pairs: &[(usize, usize)]) -> Result<usize> {
        expect_rank(op, self.value(a), 2)?;
        expect_rank(op, self.value(b), 2)?;
        let (na, d) = (self.shape(a)[0], self.shape(a)[1]);
        let (nb, d2) = (self.shape(b)[0], self.shape(b)[1]);
        if d != d2 {
            return Err(Error::shape(op, format!("[_, {d}]"), shape_str(self.shape(b))));
        }
        if pairs.is_empty() {
            return Err(Error::shape(op, "non-empty pair list", "empty"));
        }
        if let Some(p) = pairs.iter().find(|p| p.0 >= na || p.1 >= nb) {
            return Err(Error::shape(
                op,
                format!("pair within [{na}] x [{nb}]"),
                format!("{p:?}"),
            ));
        }
        Ok(d)
    }

    /// Euclidean distances `‖a[i] − b[j]‖` for each `(i, j)` in `pairs`.
    pub fn pair_distance(&mut self, a: NodeId, b: NodeId, pairs: &[(usize, usize)]) -> Result<NodeId> {
        let d = self.check_pairs("pair_distance", a, b, pairs)?;
        let (ad, bd) = (self.value(a).data(), self.value(b).data());
        let out = pairs
            .iter()
            .map(|&(i, j)| {
                ad[i * d..(i + 1) * d]
                    .iter()
                    .zip(&bd[j * d..(j + 1) * d])
                    .map(|(p, q)| (p - q) * (p - q))
                    .sum::<f64>()
                    .sqrt()
            })
            .collect();
        let rg = self.rg(&[a.0, b.0]);
        Ok(self.push(
            Tensor::from_parts(vec![pairs.len()], out),
            Op::PairDistance {
                a: a.0,
                b: b.0,
                pairs: pairs.to_vec(),
            },
            rg,
        ))
    }

    /// Dot products `a[i] · b[j]` for each `(i, j)` in `pairs`.
    pub fn pair_dot(&mut self, a: NodeId, b: NodeId, pairs: &[(usize, usize)]) -> Result<NodeId> {
        let d = self.check_pairs("pair_dot", a, b, pairs)?;
        let (ad, bd) = (self.value(a).data(), self.value(b).data());
        let out = pairs
            .iter()
            .map(|&(i, j)| {
                ad[i * d..(i + 1) * d]
                    .iter()
                    .zip(&bd[j * d..(j + 1) * d])
                    .map(|(p, q)| p * q)
                    .sum::<f64>()
            })
            .collect();
        let rg = self.rg(&[a.0, b.0]);
        Ok(self.push(
            Tensor::from_parts(vec![pairs.len()], out),
            Op::PairDot {
                a: a.0,
                b: b.0,
                pairs: pairs.to_vec(),
            },
            rg,
        ))
    }
}

pub(crate) fn transpose_data(src: &[f64], r: usize, c: usize) -> Vec<f64> {
    let mut out = vec![0.0; r * c];
    for i in 0..r {
        for j in 0..c {
            out[j * r + i] = src[i * c + j];
        }
    }
    out
}
