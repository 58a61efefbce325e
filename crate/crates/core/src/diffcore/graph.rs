use rayon::prelude::*;

use super::{ParamId, ParamStore, Real, Tensor};
use crate::losses;
use crate::{Error, Result};

/// Handle to a recorded value.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

#[derive(Clone, Debug)]
pub(crate) enum Op<T> {
    Input,
    Param(ParamId),
    Conv2d {
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: usize,
        pad: usize,
    },
    Linear {
        x: Var,
        w: Var,
        b: Option<Var>,
    },
    Relu(Var),
    MaxPool2d {
        x: Var,
        argmax: Vec<usize>,
    },
    GlobalAvgPool(Var),
    Concat {
        xs: Vec<Var>,
        axis: usize,
    },
    Reshape(Var),
    Mul(Var, Var),
    Sum(Var),
    Mean(Var),
    L2Normalize(Var),
    Softmax(Var),
    PairwiseDistance {
        a: Var,
        b: Var,
        p: f64,
        eps: f64,
    },
    MarginRanking {
        x1: Var,
        x2: Var,
        y: T,
    },
    Focal {
        probs: Var,
        targets: Vec<usize>,
        alpha: Vec<T>,
        gamma: f64,
    },
}

pub(crate) struct Node<T> {
    pub value: Tensor<T>,
    pub op: Op<T>,
    pub needs_grad: bool,
}

/// Tape of evaluated operations.
pub struct Graph<T> {
    pub(crate) nodes: Vec<Node<T>>,
}

impl<T: Real> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn dims<const N: usize>(op: &'static str, t: &[usize]) -> Result<[usize; N]> {
    t.try_into()
        .map_err(|_| Error::shape(op, format!("expected rank {N}, got shape {t:?}")))
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
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

    fn push(&mut self, op: &'static str, value: Tensor<T>, kind: Op<T>, inputs: &[Var]) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite { op });
        }
        let needs_grad = inputs.iter().any(|v| self.nodes[v.0].needs_grad);
        self.nodes.push(Node {
            value,
            op: kind,
            needs_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Constant input; receives no gradient.
    pub fn input(&mut self, value: Tensor<T>) -> Result<Var> {
        self.push("input", value, Op::Input, &[])
    }

    /// Records the current value of a parameter. Every use of the same
    /// parameter in one graph accumulates into the same gradient.
    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Var {
        let p = store.get(id);
        self.nodes.push(Node {
            value: p.value.clone(),
            op: Op::Param(id),
            needs_grad: !p.frozen,
        });
        Var(self.nodes.len() - 1)
    }

    /// 2-D cross-correlation. `x: [N, C, H, W]`, `w: [O, C, KH, KW]`, `b: [O]`,
    /// zero padding `pad` on every side.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize) -> Result<Var> {
        let [n, c, h, wd] = dims("conv2d", self.value(x).shape())?;
        let [o, wc, kh, kw] = dims("conv2d", self.value(w).shape())?;
        if wc != c || stride == 0 || h + 2 * pad < kh || wd + 2 * pad < kw {
            return Err(Error::shape(
                "conv2d",
                format!(
                    "input {:?}, weight {:?}, stride {stride}, pad {pad}",
                    self.value(x).shape(),
                    self.value(w).shape()
                ),
            ));
        }
        if let Some(b) = b {
            if self.value(b).shape() != [o] {
                return Err(Error::shape("conv2d", format!("bias {:?} for {o} filters", self.value(b).shape())));
            }
        }
        let oh = (h + 2 * pad - kh) / stride + 1;
        let ow = (wd + 2 * pad - kw) / stride + 1;
        let xs = self.value(x).data();
        let ws = self.value(w).data();
        let bs = b.map(|b| self.value(b).data());
        let mut out = vec![T::zero(); n * o * oh * ow];
        out.par_chunks_mut(oh * ow).enumerate().for_each(|(no, plane)| {
            let (ni, oi) = (no / o, no % o);
            let bias = bs.map_or(T::zero(), |b| b[oi]);
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = bias;
                    for ci in 0..c {
                        let xbase = (ni * c + ci) * h * wd;
                        let wbase = (oi * c + ci) * kh * kw;
                        for ky in 0..kh {
                            let iy = (oy * stride + ky) as isize - pad as isize;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            for kx in 0..kw {
                                let ix = (ox * stride + kx) as isize - pad as isize;
                                if ix < 0 || ix >= wd as isize {
                                    continue;
                                }
                                acc += ws[wbase + ky * kw + kx] * xs[xbase + iy as usize * wd + ix as usize];
                            }
                        }
                    }
                    plane[oy * ow + ox] = acc;
                }
            }
        });
        let value = Tensor::new(vec![n, o, oh, ow], out)?;
        let mut inputs = vec![x, w];
        inputs.extend(b);
        self.push("conv2d", value, Op::Conv2d { x, w, b, stride, pad }, &inputs)
    }

    /// Affine map `x W^T + b`. `x: [N, I]`, `w: [O, I]`, `b: [O]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let [n, i] = dims("linear", self.value(x).shape())?;
        let [o, wi] = dims("linear", self.value(w).shape())?;
        if wi != i || b.is_some_and(|b| self.value(b).shape() != [o]) {
            return Err(Error::shape(
                "linear",
                format!(
                    "input {:?}, weight {:?}, bias {:?}",
                    self.value(x).shape(),
                    self.value(w).shape(),
                    b.map(|b| self.value(b).shape().to_vec())
                ),
            ));
        }
        let xs = self.value(x).data();
        let ws = self.value(w).data();
        let bs = b.map(|b| self.value(b).data());
        let mut out = vec![T::zero(); n * o];
        out.par_chunks_mut(o).enumerate().for_each(|(r, row)| {
            let xr = &xs[r * i..(r + 1) * i];
            for (k, y) in row.iter_mut().enumerate() {
                let wr = &ws[k * i..(k + 1) * i];
                let mut acc = bs.map_or(T::zero(), |b| b[k]);
                for (a, b) in xr.iter().zip(wr) {
                    acc += *a * *b;
                }
                *y = acc;
            }
        });
        let value = Tensor::new(vec![n, o], out)?;
        let mut inputs = vec![x, w];
        inputs.extend(b);
        self.push("linear", value, Op::Linear { x, w, b }, &inputs)
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        let value = Tensor::new(t.shape().to_vec(), t.data().iter().map(|v| v.max(T::zero())).collect())?;
        self.push("relu", value, Op::Relu(x), &[x])
    }

    /// Non-overlapping `k x k` max pooling (stride `k`, trailing rows/columns
    /// dropped). Ties resolve to the first maximum in raster order.
    pub fn max_pool2d(&mut self, x: Var, k: usize) -> Result<Var> {
        let [n, c, h, w] = dims("max_pool2d", self.value(x).shape())?;
        if k == 0 || h < k || w < k {
            return Err(Error::shape("max_pool2d", format!("window {k} on {h}x{w}")));
        }
        let (oh, ow) = (h / k, w / k);
        let xs = self.value(x).data();
        let mut out = Vec::with_capacity(n * c * oh * ow);
        let mut argmax = Vec::with_capacity(n * c * oh * ow);
        for plane in 0..n * c {
            let base = plane * h * w;
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = base + oy * k * w + ox * k;
                    for dy in 0..k {
                        for dx in 0..k {
                            let idx = base + (oy * k + dy) * w + ox * k + dx;
                            if xs[idx] > xs[best] {
                                best = idx;
                            }
                        }
                    }
                    out.push(xs[best]);
                    argmax.push(best);
                }
            }
        }
        let value = Tensor::new(vec![n, c, oh, ow], out)?;
        self.push("max_pool2d", value, Op::MaxPool2d { x, argmax }, &[x])
    }

    /// `[N, C, H, W] -> [N, C, 1, 1]` spatial mean.
    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let [n, c, h, w] = dims("global_avg_pool", self.value(x).shape())?;
        let area = T::of((h * w) as f64);
        let out = self
            .value(x)
            .data()
            .chunks(h * w)
            .map(|p| p.iter().copied().sum::<T>() / area)
            .collect();
        let value = Tensor::new(vec![n, c, 1, 1], out)?;
        self.push("global_avg_pool", value, Op::GlobalAvgPool(x), &[x])
    }

    /// Joins tensors along `axis`; all other extents must agree.
    pub fn concat(&mut self, xs: &[Var], axis: usize) -> Result<Var> {
        let first = xs
            .first()
            .ok_or_else(|| Error::shape("concat", "no inputs"))?;
        let base = self.value(*first).shape().to_vec();
        if axis >= base.len() {
            return Err(Error::shape("concat", format!("axis {axis} for rank {}", base.len())));
        }
        let mut total = 0;
        for v in xs {
            let s = self.value(*v).shape();
            let compatible = s.len() == base.len()
                && s.iter().zip(&base).enumerate().all(|(d, (a, b))| d == axis || a == b);
            if !compatible {
                return Err(Error::shape("concat", format!("{base:?} vs {s:?} on axis {axis}")));
            }
            total += s[axis];
        }
        let outer: usize = base[..axis].iter().product();
        let inner: usize = base[axis + 1..].iter().product();
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for v in xs {
                let t = self.value(*v);
                let block = t.shape()[axis] * inner;
                out.extend_from_slice(&t.data()[o * block..(o + 1) * block]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        let value = Tensor::new(shape, out)?;
        self.push("concat", value, Op::Concat { xs: xs.to_vec(), axis }, xs)
    }

    /// `[N, ...] -> [N, prod(...)]`.
    pub fn flatten(&mut self, x: Var) -> Result<Var> {
        let shape = self.value(x).shape().to_vec();
        let Some((&n, rest)) = shape.split_first() else {
            return Err(Error::shape("flatten", "scalar input"));
        };
        self.reshape(x, &[n, rest.iter().product()])
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(x).clone().reshape(shape)?;
        self.push("reshape", value, Op::Reshape(x), &[x])
    }

    /// Elementwise product of equal-shape tensors.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(Error::shape("mul", format!("{:?} vs {:?}", ta.shape(), tb.shape())));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| *x * *y).collect();
        let value = Tensor::new(ta.shape().to_vec(), data)?;
        self.push("mul", value, Op::Mul(a, b), &[a, b])
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).data().iter().copied().sum::<T>();
        self.push("sum", Tensor::scalar(s), Op::Sum(x), &[x])
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        if t.numel() == 0 {
            return Err(Error::shape("mean", "empty input"));
        }
        let s = t.data().iter().copied().sum::<T>() / T::of(t.numel() as f64);
        self.push("mean", Tensor::scalar(s), Op::Mean(x), &[x])
    }

    /// Rows of `[N, D]` scaled to unit Euclidean norm.
    pub fn l2_normalize(&mut self, x: Var) -> Result<Var> {
        let [_, d] = dims("l2_normalize", self.value(x).shape())?;
        let t = self.value(x);
        let mut out = Vec::with_capacity(t.numel());
        for row in t.data().chunks(d) {
            let norm = row.iter().map(|v| *v * *v).sum::<T>().sqrt();
            if norm == T::zero() {
                return Err(Error::param("l2_normalize of a zero row"));
            }
            out.extend(row.iter().map(|v| *v / norm));
        }
        let value = Tensor::new(t.shape().to_vec(), out)?;
        self.push("l2_normalize", value, Op::L2Normalize(x), &[x])
    }

    /// Row-wise softmax of `[N, K]` logits.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let [_, k] = dims("softmax", self.value(x).shape())?;
        let t = self.value(x);
        let mut out = Vec::with_capacity(t.numel());
        for row in t.data().chunks(k) {
            out.extend(losses::softmax(row));
        }
        let value = Tensor::new(t.shape().to_vec(), out)?;
        self.push("softmax", value, Op::Softmax(x), &[x])
    }

    /// Row-wise `(sum_i (|a_i - b_i| + eps)^p)^(1/p)` of `[N, D]` inputs, giving `[N]`.
    pub fn pairwise_distance(&mut self, a: Var, b: Var, p: f64, eps: f64) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let [_, d] = dims("pairwise_distance", ta.shape())?;
        if ta.shape() != tb.shape() {
            return Err(Error::shape(
                "pairwise_distance",
                format!("{:?} vs {:?}", ta.shape(), tb.shape()),
            ));
        }
        let out = ta
            .data()
            .chunks(d.max(1))
            .zip(tb.data().chunks(d.max(1)))
            .map(|(u, v)| losses::pairwise_distance(u, v, p, eps))
            .collect::<Result<Vec<T>>>()?;
        let value = Tensor::new(vec![ta.shape()[0]], out)?;
        self.push("pairwise_distance", value, Op::PairwiseDistance { a, b, p, eps }, &[a, b])
    }

    /// Elementwise `max(0, -y (x1 - x2) + margin)` of `[N]` inputs.
    pub fn margin_ranking(&mut self, x1: Var, x2: Var, y: i8, margin: f64) -> Result<Var> {
        let (t1, t2) = (self.value(x1), self.value(x2));
        if t1.shape() != t2.shape() || t1.shape().len() != 1 {
            return Err(Error::shape(
                "margin_ranking",
                format!("{:?} vs {:?}", t1.shape(), t2.shape()),
            ));
        }
        let out = t1
            .data()
            .iter()
            .zip(t2.data())
            .map(|(a, b)| losses::margin_ranking_loss(*a, *b, y, margin))
            .collect::<Result<Vec<T>>>()?;
        let value = Tensor::new(t1.shape().to_vec(), out)?;
        let y = T::of(y as f64);
        self.push("margin_ranking", value, Op::MarginRanking { x1, x2, y }, &[x1, x2])
    }

    /// Per-row focal loss of `[N, K]` probabilities against `targets`, giving `[N]`.
    pub fn focal_loss(&mut self, probs: Var, targets: &[usize], alpha: &[f64], gamma: f64) -> Result<Var> {
        let [n, k] = dims("focal_loss", self.value(probs).shape())?;
        if targets.len() != n {
            return Err(Error::shape("focal_loss", format!("{} targets for {n} rows", targets.len())));
        }
        let out = self
            .value(probs)
            .data()
            .chunks(k)
            .zip(targets)
            .map(|(row, &t)| losses::focal_loss(row, t, alpha, gamma))
            .collect::<Result<Vec<T>>>()?;
        let value = Tensor::new(vec![n], out)?;
        let op = Op::Focal {
            probs,
            targets: targets.to_vec(),
            alpha: alpha.iter().map(|a| T::of(*a)).collect(),
            gamma,
        };
        self.push("focal_loss", value, op, &[probs])
    }
}
