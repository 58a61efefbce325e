use rayon::prelude::*;

use super::graph::{Graph, Op, Var};
use super::{ParamStore, Real, Tensor};
use crate::{Error, Result};

fn accumulate<T: Real>(grads: &mut [Option<Tensor<T>>], v: Var, delta: Tensor<T>) {
    match &mut grads[v.0] {
        Some(g) => g.add_assign(&delta),
        slot => *slot = Some(delta),
    }
}

impl<T: Real> Graph<T> {
    /// Reverse pass from a one-element output. Gradients of unfrozen
    /// parameters are added to `store` (not overwritten), so two passes
    /// without [`ParamStore::zero_grad`] double them.
    pub fn backward(&self, out: Var, store: &mut ParamStore<T>) -> Result<()> {
        let root = &self.nodes[out.0];
        if root.value.numel() != 1 {
            return Err(Error::NotScalar(root.value.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; out.0 + 1];
        grads[out.0] = Some(Tensor::full(root.value.shape(), T::one()));

        for idx in (0..=out.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            let wants = |v: &Var| self.nodes[v.0].needs_grad;
            match &node.op {
                Op::Input => {}
                Op::Param(id) => {
                    let p = store.get_mut(*id);
                    if !p.frozen {
                        p.grad.add_assign(&g);
                    }
                }
                Op::Conv2d { x, w, b, stride, pad } => {
                    let (gx, gw, gb) = self.conv2d_backward(&g, *x, *w, *stride, *pad, wants(x), wants(w));
                    if let Some(gx) = gx {
                        accumulate(&mut grads, *x, gx);
                    }
                    if let Some(gw) = gw {
                        accumulate(&mut grads, *w, gw);
                    }
                    if let Some(b) = b.filter(|b| wants(b)) {
                        accumulate(&mut grads, b, gb);
                    }
                }
                Op::Linear { x, w, b } => {
                    let xt = self.value(*x);
                    let wt = self.value(*w);
                    let (n, i) = (xt.shape()[0], xt.shape()[1]);
                    let o = wt.shape()[0];
                    let gs = g.data();
                    if wants(x) {
                        let mut gx = vec![T::zero(); n * i];
                        gx.par_chunks_mut(i).enumerate().for_each(|(r, row)| {
                            for k in 0..o {
                                let gk = gs[r * o + k];
                                if gk == T::zero() {
                                    continue;
                                }
                                for (dst, wv) in row.iter_mut().zip(&wt.data()[k * i..(k + 1) * i]) {
                                    *dst += gk * *wv;
                                }
                            }
                        });
                        accumulate(&mut grads, *x, Tensor::new(vec![n, i], gx)?);
                    }
                    if wants(w) {
                        let mut gw = vec![T::zero(); o * i];
                        gw.par_chunks_mut(i).enumerate().for_each(|(k, row)| {
                            for r in 0..n {
                                let gk = gs[r * o + k];
                                if gk == T::zero() {
                                    continue;
                                }
                                for (dst, xv) in row.iter_mut().zip(&xt.data()[r * i..(r + 1) * i]) {
                                    *dst += gk * *xv;
                                }
                            }
                        });
                        accumulate(&mut grads, *w, Tensor::new(vec![o, i], gw)?);
                    }
                    if let Some(b) = b.filter(|b| wants(b)) {
                        let mut gb = vec![T::zero(); o];
                        for row in gs.chunks(o) {
                            for (dst, v) in gb.iter_mut().zip(row) {
                                *dst += *v;
                            }
                        }
                        accumulate(&mut grads, b, Tensor::new(vec![o], gb)?);
                    }
                }
                Op::Relu(x) => {
                    let data = self
                        .value(*x)
                        .data()
                        .iter()
                        .zip(g.data())
                        .map(|(v, gv)| if *v > T::zero() { *gv } else { T::zero() })
                        .collect();
                    accumulate(&mut grads, *x, Tensor::new(g.shape().to_vec(), data)?);
                }
                Op::MaxPool2d { x, argmax } => {
                    let mut gx = Tensor::zeros(self.value(*x).shape());
                    for (src, gv) in argmax.iter().zip(g.data()) {
                        gx.data_mut()[*src] += *gv;
                    }
                    accumulate(&mut grads, *x, gx);
                }
                Op::GlobalAvgPool(x) => {
                    let shape = self.value(*x).shape().to_vec();
                    let area = shape[2] * shape[3];
                    let scale = T::one() / T::of(area as f64);
                    let mut gx = Vec::with_capacity(area * g.numel());
                    for gv in g.data() {
                        gx.extend(std::iter::repeat_n(*gv * scale, area));
                    }
                    accumulate(&mut grads, *x, Tensor::new(shape, gx)?);
                }
                Op::Concat { xs, axis } => {
                    let out_shape = node.value.shape();
                    let outer: usize = out_shape[..*axis].iter().product();
                    let inner: usize = out_shape[axis + 1..].iter().product();
                    let total = out_shape[*axis];
                    let mut offset = 0;
                    for v in xs {
                        let shape = self.value(*v).shape().to_vec();
                        let width = shape[*axis] * inner;
                        if wants(v) {
                            let mut part = Vec::with_capacity(outer * width);
                            for o in 0..outer {
                                let start = o * total * inner + offset;
                                part.extend_from_slice(&g.data()[start..start + width]);
                            }
                            accumulate(&mut grads, *v, Tensor::new(shape, part)?);
                        }
                        offset += width;
                    }
                }
                Op::Reshape(x) => {
                    let shape = self.value(*x).shape().to_vec();
                    accumulate(&mut grads, *x, g.reshape(&shape)?);
                }
                Op::Mul(a, b) => {
                    let (ta, tb) = (self.value(*a), self.value(*b));
                    if wants(a) {
                        let d = tb.data().iter().zip(g.data()).map(|(y, gv)| *y * *gv).collect();
                        accumulate(&mut grads, *a, Tensor::new(ta.shape().to_vec(), d)?);
                    }
                    if wants(b) {
                        let d = ta.data().iter().zip(g.data()).map(|(x, gv)| *x * *gv).collect();
                        accumulate(&mut grads, *b, Tensor::new(tb.shape().to_vec(), d)?);
                    }
                }
                Op::Sum(x) => {
                    let gv = g.data()[0];
                    accumulate(&mut grads, *x, Tensor::full(self.value(*x).shape(), gv));
                }
                Op::Mean(x) => {
                    let t = self.value(*x);
                    let gv = g.data()[0] / T::of(t.numel() as f64);
                    accumulate(&mut grads, *x, Tensor::full(t.shape(), gv));
                }
                Op::L2Normalize(x) => {
                    let xt = self.value(*x);
                    let d = xt.shape()[1];
                    let mut gx = Vec::with_capacity(xt.numel());
                    for ((xr, yr), gr) in xt.data().chunks(d).zip(node.value.data().chunks(d)).zip(g.data().chunks(d)) {
                        let norm = xr.iter().map(|v| *v * *v).sum::<T>().sqrt();
                        let dot = yr.iter().zip(gr).map(|(y, gv)| *y * *gv).sum::<T>();
                        gx.extend(yr.iter().zip(gr).map(|(y, gv)| (*gv - *y * dot) / norm));
                    }
                    accumulate(&mut grads, *x, Tensor::new(xt.shape().to_vec(), gx)?);
                }
                Op::Softmax(x) => {
                    let k = node.value.shape()[1];
                    let mut gx = Vec::with_capacity(node.value.numel());
                    for (yr, gr) in node.value.data().chunks(k).zip(g.data().chunks(k)) {
                        let dot = yr.iter().zip(gr).map(|(y, gv)| *y * *gv).sum::<T>();
                        gx.extend(yr.iter().zip(gr).map(|(y, gv)| *y * (*gv - dot)));
                    }
                    accumulate(&mut grads, *x, Tensor::new(node.value.shape().to_vec(), gx)?);
                }
                Op::PairwiseDistance { a, b, p, eps } => {
                    let (ta, tb) = (self.value(*a), self.value(*b));
                    let d = ta.shape()[1];
                    let (p, eps) = (T::of(*p), T::of(*eps));
                    let mut ga = Vec::with_capacity(ta.numel());
                    for (((u, v), dist), gv) in ta
                        .data()
                        .chunks(d)
                        .zip(tb.data().chunks(d))
                        .zip(node.value.data())
                        .zip(g.data())
                    {
                        // d/du_i = sign(u_i - v_i) (|u_i - v_i| + eps)^(p-1) D^(1-p)
                        if *dist == T::zero() {
                            ga.extend(std::iter::repeat_n(T::zero(), d));
                            continue;
                        }
                        let scale = *gv * dist.powf(T::one() - p);
                        ga.extend(u.iter().zip(v).map(|(x, y)| {
                            let diff = *x - *y;
                            let sign = if diff > T::zero() {
                                T::one()
                            } else if diff < T::zero() {
                                -T::one()
                            } else {
                                T::zero()
                            };
                            sign * (diff.abs() + eps).powf(p - T::one()) * scale
                        }));
                    }
                    let shape = ta.shape().to_vec();
                    if wants(b) {
                        let gb = ga.iter().map(|v| -*v).collect();
                        accumulate(&mut grads, *b, Tensor::new(shape.clone(), gb)?);
                    }
                    if wants(a) {
                        accumulate(&mut grads, *a, Tensor::new(shape, ga)?);
                    }
                }
                Op::MarginRanking { x1, x2, y } => {
                    let active: Vec<T> = node
                        .value
                        .data()
                        .iter()
                        .zip(g.data())
                        .map(|(l, gv)| if *l > T::zero() { *gv } else { T::zero() })
                        .collect();
                    let shape = node.value.shape().to_vec();
                    if wants(x1) {
                        let d = active.iter().map(|a| -*y * *a).collect();
                        accumulate(&mut grads, *x1, Tensor::new(shape.clone(), d)?);
                    }
                    if wants(x2) {
                        let d = active.iter().map(|a| *y * *a).collect();
                        accumulate(&mut grads, *x2, Tensor::new(shape, d)?);
                    }
                }
                Op::Focal { probs, targets, alpha, gamma } => {
                    let pt = self.value(*probs);
                    let k = pt.shape()[1];
                    let gamma = T::of(*gamma);
                    let mut gp = Tensor::zeros(pt.shape());
                    for (r, (&t, gv)) in targets.iter().zip(g.data()).enumerate() {
                        // d/dp [-a (1-p)^g ln p] = a [g (1-p)^(g-1) ln p - (1-p)^g / p]
                        let p = pt.data()[r * k + t];
                        let q = T::one() - p;
                        let lead = if gamma == T::zero() || q == T::zero() {
                            T::zero()
                        } else {
                            gamma * q.powf(gamma - T::one()) * p.ln()
                        };
                        let d = alpha[t] * (lead - q.powf(gamma) / p);
                        gp.data_mut()[r * k + t] = d * *gv;
                    }
                    accumulate(&mut grads, *probs, gp);
                }
            }
        }
        Ok(())
    }

    #[allow(clippy::too_many_arguments)]
    fn conv2d_backward(
        &self,
        g: &Tensor<T>,
        x: Var,
        w: Var,
        stride: usize,
        pad: usize,
        want_x: bool,
        want_w: bool,
    ) -> (Option<Tensor<T>>, Option<Tensor<T>>, Tensor<T>) {
        let xt = self.value(x);
        let wt = self.value(w);
        let (n, c, h, wd) = (xt.shape()[0], xt.shape()[1], xt.shape()[2], xt.shape()[3]);
        let (o, kh, kw) = (wt.shape()[0], wt.shape()[2], wt.shape()[3]);
        let (oh, ow) = (g.shape()[2], g.shape()[3]);
        let (xs, ws, gs) = (xt.data(), wt.data(), g.data());
        let tap = |o_y: usize, k: usize, limit: usize| -> Option<usize> {
            let i = (o_y * stride + k) as isize - pad as isize;
            (i >= 0 && i < limit as isize).then_some(i as usize)
        };

        let gb_data: Vec<T> = (0..o)
            .map(|oi| {
                (0..n)
                    .map(|ni| {
                        let base = (ni * o + oi) * oh * ow;
                        gs[base..base + oh * ow].iter().copied().sum::<T>()
                    })
                    .sum::<T>()
            })
            .collect();
        let gb = Tensor::from_fn(&[o], |i| gb_data[i]);

        let gw = want_w.then(|| {
            let mut gw = vec![T::zero(); o * c * kh * kw];
            gw.par_chunks_mut(c * kh * kw).enumerate().for_each(|(oi, filt)| {
                for ni in 0..n {
                    let gbase = (ni * o + oi) * oh * ow;
                    for oy in 0..oh {
                        for ox in 0..ow {
                            let gv = gs[gbase + oy * ow + ox];
                            if gv == T::zero() {
                                continue;
                            }
                            for ci in 0..c {
                                let xbase = (ni * c + ci) * h * wd;
                                for ky in 0..kh {
                                    let Some(iy) = tap(oy, ky, h) else { continue };
                                    for kx in 0..kw {
                                        let Some(ix) = tap(ox, kx, wd) else { continue };
                                        filt[(ci * kh + ky) * kw + kx] += gv * xs[xbase + iy * wd + ix];
                                    }
                                }
                            }
                        }
                    }
                }
            });
            Tensor::from_fn(&[o, c, kh, kw], |i| gw[i])
        });

        let gx = want_x.then(|| {
            let mut gx = vec![T::zero(); n * c * h * wd];
            gx.par_chunks_mut(c * h * wd).enumerate().for_each(|(ni, sample)| {
                for oi in 0..o {
                    let gbase = (ni * o + oi) * oh * ow;
                    for oy in 0..oh {
                        for ox in 0..ow {
                            let gv = gs[gbase + oy * ow + ox];
                            if gv == T::zero() {
                                continue;
                            }
                            for ci in 0..c {
                                let wbase = (oi * c + ci) * kh * kw;
                                for ky in 0..kh {
                                    let Some(iy) = tap(oy, ky, h) else { continue };
                                    for kx in 0..kw {
                                        let Some(ix) = tap(ox, kx, wd) else { continue };
                                        sample[(ci * h + iy) * wd + ix] += gv * ws[wbase + ky * kw + kx];
                                    }
                                }
                            }
                        }
                    }
                }
            });
            Tensor::from_fn(&[n, c, h, wd], |i| gx[i])
        });

        (gx, gw, gb)
    }
}
