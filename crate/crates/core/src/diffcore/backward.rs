use super::gemm::{gemm, MatRef};
use super::graph::{transpose_data, Graph, NodeId, Op, L2_EPS};
use super::param::{ParamId, ParamStore};
use super::tensor::{shape_str, Tensor};
use crate::error::{Error, Result};

/// Result of a reverse pass: gradient of the output with respect to every
/// node that required one.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    params: Vec<(ParamId, NodeId)>,
}

impl Gradients {
    pub fn get(&self, id: NodeId) -> Option<&Tensor> {
        self.grads[id.0].as_ref()
    }

    pub fn param(&self, id: ParamId) -> Option<&Tensor> {
        self.params
            .iter()
            .find(|(p, _)| *p == id)
            .and_then(|(_, n)| self.grads[n.0].as_ref())
    }

    /// Adds the gradient of every trainable parameter into its `gradient` slot.
    pub fn accumulate_into(&self, store: &mut ParamStore) {
        for &(pid, node) in &self.params {
            let p = store.get_mut(pid);
            if !p.trainable {
                continue;
            }
            if let Some(g) = &self.grads[node.0] {
                p.gradient.add_assign(g);
            }
        }
    }
}

fn slot<'a>(grads: &'a mut [Option<Tensor>], graph: &Graph, i: usize) -> Option<&'a mut Tensor> {
    if !graph.nodes[i].requires_grad {
        return None;
    }
    let shape = graph.nodes[i].value.shape();
    Some(grads[i].get_or_insert_with(|| Tensor::zeros(shape)))
}

fn acc(grads: &mut [Option<Tensor>], graph: &Graph, i: usize, f: impl FnOnce(&mut [f64])) {
    if let Some(t) = slot(grads, graph, i) {
        f(t.data_mut());
    }
}

fn acc_scaled(grads: &mut [Option<Tensor>], graph: &Graph, i: usize, g: &[f64], c: f64) {
    acc(grads, graph, i, |d| {
        for (a, b) in d.iter_mut().zip(g) {
            *a += c * b;
        }
    });
}

impl Graph {
    /// Reverse pass from `output` seeded with `upstream` (same shape as the output).
    pub fn backward(&self, output: NodeId, upstream: &Tensor) -> Result<Gradients> {
        let out_shape = self.value(output).shape();
        if upstream.shape() != out_shape {
            return Err(Error::shape(
                "backward",
                shape_str(out_shape),
                shape_str(upstream.shape()),
            ));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        if self.nodes[output.0].requires_grad {
            grads[output.0] = Some(upstream.clone());
        }
        for i in (0..=output.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.backprop_node(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        let params = self.param_bindings().collect();
        Ok(Gradients { grads, params })
    }

    fn backprop_node(&self, i: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let node = &self.nodes[i];
        let gd = g.data();
        let val = |j: usize| &self.nodes[j].value;
        match &node.op {
            Op::Leaf | Op::Param | Op::StopGradient => {}
            Op::Conv2d {
                x,
                w,
                b,
                stride,
                pad,
                cols,
            } => {
                let xs = val(*x).shape();
                let (c, h, wd) = (xs[0], xs[1], xs[2]);
                let ws = val(*w).shape();
                let (o, k) = (ws[0], ws[2]);
                let os = node.value.shape();
                let (ho, wo) = (os[1], os[2]);
                let hw = ho * wo;
                let ckk = c * k * k;
                acc(grads, self, *w, |dw| {
                    gemm(
                        o,
                        hw,
                        ckk,
                        1.0,
                        MatRef::rows(gd, hw),
                        MatRef::transposed(cols, hw),
                        1.0,
                        dw,
                    );
                });
                if let Some(b) = b {
                    acc(grads, self, *b, |db| {
                        for (oi, chunk) in gd.chunks(hw).enumerate() {
                            db[oi] += chunk.iter().sum::<f64>();
                        }
                    });
                }
                if self.nodes[*x].requires_grad {
                    let mut dcols = vec![0.0; ckk * hw];
                    gemm(
                        ckk,
                        o,
                        hw,
                        1.0,
                        MatRef::transposed(val(*w).data(), ckk),
                        MatRef::rows(gd, hw),
                        0.0,
                        &mut dcols,
                    );
                    let (stride, pad) = (*stride, *pad);
                    acc(grads, self, *x, |dx| {
                        for ci in 0..c {
                            for ki in 0..k {
                                for kj in 0..k {
                                    let row = (ci * k + ki) * k + kj;
                                    let src = &dcols[row * hw..(row + 1) * hw];
                                    for oy in 0..ho {
                                        let iy = (oy * stride + ki) as isize - pad as isize;
                                        if iy < 0 || iy >= h as isize {
                                            continue;
                                        }
                                        let base = (ci * h + iy as usize) * wd;
                                        for ox in 0..wo {
                                            let ix = (ox * stride + kj) as isize - pad as isize;
                                            if ix >= 0 && ix < wd as isize {
                                                dx[base + ix as usize] += src[oy * wo + ox];
                                            }
                                        }
                                    }
                                }
                            }
                        }
                    });
                }
            }
            Op::Linear { x, w, b } => {
                let (n, fin) = (val(*x).shape()[0], val(*x).shape()[1]);
                let fout = val(*w).shape()[0];
                acc(grads, self, *x, |dx| {
                    gemm(
                        n,
                        fout,
                        fin,
                        1.0,
                        MatRef::rows(gd, fout),
                        MatRef::rows(val(*w).data(), fin),
                        1.0,
                        dx,
                    );
                });
                acc(grads, self, *w, |dw| {
                    gemm(
                        fout,
                        n,
                        fin,
                        1.0,
                        MatRef::transposed(gd, fout),
                        MatRef::rows(val(*x).data(), fin),
                        1.0,
                        dw,
                    );
                });
                if let Some(b) = b {
                    acc(grads, self, *b, |db| {
                        for row in gd.chunks(fout) {
                            for (a, r) in db.iter_mut().zip(row) {
                                *a += r;
                            }
                        }
                    });
                }
            }
            Op::Relu(x) => {
                let xv = val(*x).data();
                acc(grads, self, *x, |dx| {
                    for ((a, &xi), &gi) in dx.iter_mut().zip(xv).zip(gd) {
                        if xi > 0.0 {
                            *a += gi;
                        }
                    }
                });
            }
            Op::Sigmoid(x) => {
                let y = node.value.data();
                acc(grads, self, *x, |dx| {
                    for ((a, &yi), &gi) in dx.iter_mut().zip(y).zip(gd) {
                        *a += gi * yi * (1.0 - yi);
                    }
                });
            }
            Op::Abs(x) => {
                let xv = val(*x).data();
                acc(grads, self, *x, |dx| {
                    for ((a, &xi), &gi) in dx.iter_mut().zip(xv).zip(gd) {
                        if xi > 0.0 {
                            *a += gi;
                        } else if xi < 0.0 {
                            *a -= gi;
                        }
                    }
                });
            }
            Op::Scale(x, c) => acc_scaled(grads, self, *x, gd, *c),
            Op::AddConst(x) | Op::Reshape(x) => acc_scaled(grads, self, *x, gd, 1.0),
            Op::Softmax(x) => {
                let y = node.value.data();
                let d = node.value.last_dim();
                acc(grads, self, *x, |dx| {
                    for ((yr, gr), dr) in y.chunks(d).zip(gd.chunks(d)).zip(dx.chunks_mut(d)) {
                        let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                        for j in 0..d {
                            dr[j] += yr[j] * (gr[j] - dot);
                        }
                    }
                });
            }
            Op::LogSumExpRows { x, probs } => {
                let m = val(*x).shape()[1];
                acc(grads, self, *x, |dx| {
                    for (r, (pr, dr)) in probs.chunks(m).zip(dx.chunks_mut(m)).enumerate() {
                        for j in 0..m {
                            dr[j] += gd[r] * pr[j];
                        }
                    }
                });
            }
            Op::InstanceNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let c = inv_std.len();
                let per = xhat.len() / c;
                let gam = val(*gamma).data();
                acc(grads, self, *beta, |db| {
                    for (ci, chunk) in gd.chunks(per).enumerate() {
                        db[ci] += chunk.iter().sum::<f64>();
                    }
                });
                acc(grads, self, *gamma, |dg| {
                    for (ci, (gc, xc)) in gd.chunks(per).zip(xhat.chunks(per)).enumerate() {
                        dg[ci] += gc.iter().zip(xc).map(|(a, b)| a * b).sum::<f64>();
                    }
                });
                acc(grads, self, *x, |dx| {
                    for ci in 0..c {
                        let gc = &gd[ci * per..(ci + 1) * per];
                        let xc = &xhat[ci * per..(ci + 1) * per];
                        let mean_g = gc.iter().sum::<f64>() * gam[ci] / per as f64;
                        let mean_gx = gc.iter().zip(xc).map(|(a, b)| a * b).sum::<f64>() * gam[ci] / per as f64;
                        let s = inv_std[ci];
                        for j in 0..per {
                            dx[ci * per + j] += s * (gc[j] * gam[ci] - mean_g - xc[j] * mean_gx);
                        }
                    }
                });
            }
            Op::ChannelAffine { x, scale, shift } => {
                let d = node.value.last_dim();
                let s = val(*scale).data();
                let xv = val(*x).data();
                acc(grads, self, *x, |dx| {
                    for (dr, gr) in dx.chunks_mut(d).zip(gd.chunks(d)) {
                        for j in 0..d {
                            dr[j] += gr[j] * s[j];
                        }
                    }
                });
                acc(grads, self, *scale, |ds| {
                    for (xr, gr) in xv.chunks(d).zip(gd.chunks(d)) {
                        for j in 0..d {
                            ds[j] += gr[j] * xr[j];
                        }
                    }
                });
                acc(grads, self, *shift, |db| {
                    for gr in gd.chunks(d) {
                        for j in 0..d {
                            db[j] += gr[j];
                        }
                    }
                });
            }
            Op::Resize { x, ay, ax } => {
                let xs = val(*x).shape();
                let (c, h, w) = (xs[0], xs[1], xs[2]);
                let (oh, ow) = (ay.len(), ax.len());
                acc(grads, self, *x, |dx| {
                    for ci in 0..c {
                        let src = &gd[ci * oh * ow..(ci + 1) * oh * ow];
                        let dst = &mut dx[ci * h * w..(ci + 1) * h * w];
                        for (oy, ya) in ay.iter().enumerate() {
                            for (ox, xa) in ax.iter().enumerate() {
                                let gv = src[oy * ow + ox];
                                let top = gv * (1.0 - ya.w);
                                let bot = gv * ya.w;
                                dst[ya.i0 * w + xa.i0] += top * (1.0 - xa.w);
                                dst[ya.i0 * w + xa.i1] += top * xa.w;
                                dst[ya.i1 * w + xa.i0] += bot * (1.0 - xa.w);
                                dst[ya.i1 * w + xa.i1] += bot * xa.w;
                            }
                        }
                    }
                });
            }
            Op::L2Normalize { x, norms } => {
                let y = node.value.data();
                let d = node.value.last_dim();
                acc(grads, self, *x, |dx| {
                    for (r, &n) in norms.iter().enumerate() {
                        if n < L2_EPS {
                            continue;
                        }
                        let yr = &y[r * d..(r + 1) * d];
                        let gr = &gd[r * d..(r + 1) * d];
                        let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                        for j in 0..d {
                            dx[r * d + j] += (gr[j] - yr[j] * dot) / n;
                        }
                    }
                });
            }
            Op::Concat { inputs, axis } => {
                let shape = node.value.shape();
                let outer: usize = shape[..*axis].iter().product();
                let inner: usize = shape[axis + 1..].iter().product();
                let total = shape[*axis] * inner;
                let mut offset = 0;
                for &j in inputs {
                    let span = val(j).shape()[*axis] * inner;
                    acc(grads, self, j, |dj| {
                        for o in 0..outer {
                            let src = &gd[o * total + offset..o * total + offset + span];
                            for (a, b) in dj[o * span..(o + 1) * span].iter_mut().zip(src) {
                                *a += b;
                            }
                        }
                    });
                    offset += span;
                }
            }
            Op::MaxPool2 { x, argmax } => {
                acc(grads, self, *x, |dx| {
                    for (&src, &gv) in argmax.iter().zip(gd) {
                        dx[src] += gv;
                    }
                });
            }
            Op::Add(a, b) => {
                acc_scaled(grads, self, *a, gd, 1.0);
                acc_scaled(grads, self, *b, gd, 1.0);
            }
            Op::Sub(a, b) => {
                acc_scaled(grads, self, *a, gd, 1.0);
                acc_scaled(grads, self, *b, gd, -1.0);
            }
            Op::Mul(a, b) => {
                let (av, bv) = (val(*a).data(), val(*b).data());
                acc(grads, self, *a, |da| {
                    for ((x, &gi), &bi) in da.iter_mut().zip(gd).zip(bv) {
                        *x += gi * bi;
                    }
                });
                acc(grads, self, *b, |db| {
                    for ((x, &gi), &ai) in db.iter_mut().zip(gd).zip(av) {
                        *x += gi * ai;
                    }
                });
            }
            Op::MatMul(a, b) => {
                let (m, k) = (val(*a).shape()[0], val(*a).shape()[1]);
                let n = val(*b).shape()[1];
                acc(grads, self, *a, |da| {
                    gemm(
                        m,
                        n,
                        k,
                        1.0,
                        MatRef::rows(gd, n),
                        MatRef::transposed(val(*b).data(), n),
                        1.0,
                        da,
                    );
                });
                acc(grads, self, *b, |db| {
                    gemm(
                        k,
                        m,
                        n,
                        1.0,
                        MatRef::transposed(val(*a).data(), k),
                        MatRef::rows(gd, n),
                        1.0,
                        db,
                    );
                });
            }
            Op::Sum(x) => {
                let gv = gd[0];
                acc(grads, self, *x, |dx| dx.iter_mut().for_each(|a| *a += gv));
            }
            Op::Mean(x) => {
                let gv = gd[0] / val(*x).len() as f64;
                acc(grads, self, *x, |dx| dx.iter_mut().for_each(|a| *a += gv));
            }
            Op::Max { x, index } => {
                let gv = gd[0];
                acc(grads, self, *x, |dx| dx[*index] += gv);
            }
            Op::Transpose(x) => {
                let (r, c) = (val(*x).shape()[0], val(*x).shape()[1]);
                let gt = transpose_data(gd, c, r);
                acc_scaled(grads, self, *x, &gt, 1.0);
            }
            Op::Gather { x, index } => {
                let row = node.value.len() / index.len();
                acc(grads, self, *x, |dx| {
                    for (k, &src) in index.iter().enumerate() {
                        for j in 0..row {
                            dx[src * row + j] += gd[k * row + j];
                        }
                    }
                });
            }
            Op::PairDistance { a, b, pairs } => {
                let d = val(*a).shape()[1];
                let (av, bv) = (val(*a).data(), val(*b).data());
                let dist = node.value.data();
                let coef: Vec<f64> = gd
                    .iter()
                    .zip(dist)
                    .map(|(&gv, &dv)| if dv < L2_EPS { 0.0 } else { gv / dv })
                    .collect();
                acc(grads, self, *a, |da| {
                    for (&(i, j), &cf) in pairs.iter().zip(&coef) {
                        for t in 0..d {
                            da[i * d + t] += cf * (av[i * d + t] - bv[j * d + t]);
                        }
                    }
                });
                acc(grads, self, *b, |db| {
                    for (&(i, j), &cf) in pairs.iter().zip(&coef) {
                        for t in 0..d {
                            db[j * d + t] -= cf * (av[i * d + t] - bv[j * d + t]);
                        }
                    }
                });
            }
            Op::PairDot { a, b, pairs } => {
                let d = val(*a).shape()[1];
                let (av, bv) = (val(*a).data(), val(*b).data());
                acc(grads, self, *a, |da| {
                    for (&(i, j), &gv) in pairs.iter().zip(gd) {
                        for t in 0..d {
                            da[i * d + t] += gv * bv[j * d + t];
                        }
                    }
                });
                acc(grads, self, *b, |db| {
                    for (&(i, j), &gv) in pairs.iter().zip(gd) {
                        for t in 0..d {
                            db[j * d + t] += gv * av[i * d + t];
                        }
                    }
                });
            }
        }
    }
}
