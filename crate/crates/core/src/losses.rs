//! Distances and losses for metric learning.
//!
//! Scalar functions here are the single source of truth; the graph ops in
//! [`crate::diffcore`] evaluate them row by row and add the derivatives.

// `!(x >= 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

use serde::{Deserialize, Serialize};

use crate::diffcore::{Graph, Real, Var};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reduction {
    Mean,
    Sum,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    /// Norm order of the pairwise distance.
    pub p: f64,
    pub margin: f64,
    pub distance_eps: f64,
    pub focal_gamma: f64,
    /// Per-class focal weights; empty means 1.0 for every class.
    pub focal_alpha: Vec<f64>,
    pub reduction: Reduction,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            p: 2.0,
            margin: 1.0,
            distance_eps: 1e-6,
            focal_gamma: 2.0,
            focal_alpha: Vec::new(),
            reduction: Reduction::Mean,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.p >= 1.0 && self.p.is_finite()) {
            return Err(Error::param(format!("loss.p must be a finite value >= 1, got {}", self.p)));
        }
        if !(self.margin >= 0.0 && self.margin.is_finite()) {
            return Err(Error::param(format!("loss.margin must be >= 0, got {}", self.margin)));
        }
        if !(self.distance_eps >= 0.0 && self.distance_eps.is_finite()) {
            return Err(Error::param("loss.distance_eps must be >= 0"));
        }
        if !(self.focal_gamma >= 0.0) {
            return Err(Error::param("loss.focal_gamma must be >= 0"));
        }
        if self.focal_alpha.iter().any(|a| !(*a > 0.0 && *a <= 1.0)) {
            return Err(Error::param("loss.focal_alpha entries must lie in (0, 1]"));
        }
        Ok(())
    }

    /// Alpha vector for `k` classes.
    pub fn alpha_for(&self, k: usize) -> Result<Vec<f64>> {
        match self.focal_alpha.len() {
            0 => Ok(vec![1.0; k]),
            n if n == k => Ok(self.focal_alpha.clone()),
            n => Err(Error::param(format!("loss.focal_alpha has {n} entries for {k} classes"))),
        }
    }
}

/// `(sum_i (|u_i - v_i| + eps)^p)^(1/p)`.
pub fn pairwise_distance<T: Real>(u: &[T], v: &[T], p: f64, eps: f64) -> Result<T> {
    if u.len() != v.len() {
        return Err(Error::shape(
            "pairwise_distance",
            format!("{} vs {} elements", u.len(), v.len()),
        ));
    }
    if !(p >= 1.0) {
        return Err(Error::param(format!("norm order must be >= 1, got {p}")));
    }
    let (pt, et) = (T::of(p), T::of(eps));
    let s = u
        .iter()
        .zip(v)
        .map(|(a, b)| ((*a - *b).abs() + et).powf(pt))
        .sum::<T>();
    Ok(s.powf(T::one() / pt))
}

/// `max(0, -y (x1 - x2) + margin)` with `y` in `{-1, +1}`.
pub fn margin_ranking_loss<T: Real>(x1: T, x2: T, y: i8, margin: f64) -> Result<T> {
    if y != 1 && y != -1 {
        return Err(Error::param(format!("ranking target must be -1 or +1, got {y}")));
    }
    let yt = T::of(y as f64);
    Ok((-yt * (x1 - x2) + T::of(margin)).max(T::zero()))
}

/// Numerically stable softmax.
pub fn softmax<T: Real>(logits: &[T]) -> Vec<T> {
    let m = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let exps: Vec<T> = logits.iter().map(|v| (*v - m).exp()).collect();
    let total = exps.iter().copied().sum::<T>();
    exps.into_iter().map(|e| e / total).collect()
}

/// `-alpha[t] (1 - p_t)^gamma ln p_t` with `p_t = probs[target]`.
pub fn focal_loss<T: Real>(probs: &[T], target: usize, alpha: &[f64], gamma: f64) -> Result<T> {
    if target >= probs.len() {
        return Err(Error::param(format!("target {target} outside {} classes", probs.len())));
    }
    if alpha.len() != probs.len() {
        return Err(Error::param(format!("{} alpha weights for {} classes", alpha.len(), probs.len())));
    }
    let total: f64 = probs.iter().map(|p| p.f64()).sum();
    if (total - 1.0).abs() > 1e-6 || probs.iter().any(|p| !(*p > T::zero())) {
        return Err(Error::param(format!(
            "probabilities must be positive and sum to 1 (sum {total})"
        )));
    }
    let pt = probs[target];
    Ok(-T::of(alpha[target]) * (T::one() - pt).powf(T::of(gamma)) * pt.ln())
}

/// `u . v / (|u| |v|)`, evaluated in `f64`.
pub fn cosine_similarity<T: Real>(u: &[T], v: &[T]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::shape("cosine_similarity", format!("{} vs {} elements", u.len(), v.len())));
    }
    let (mut dot, mut nu, mut nv) = (0.0f64, 0.0f64, 0.0f64);
    for (a, b) in u.iter().zip(v) {
        let (a, b) = (a.f64(), b.f64());
        dot += a * b;
        nu += a * a;
        nv += b * b;
    }
    if nu == 0.0 || nv == 0.0 {
        return Err(Error::param("cosine similarity of a zero vector"));
    }
    Ok((dot / (nu.sqrt() * nv.sqrt())).clamp(-1.0, 1.0))
}

/// Margin ranking loss on `(d(a, p), d(a, n))` with `y = -1`, i.e.
/// `max(0, d_ap - d_an + margin)`.
pub fn triplet_objective<T: Real>(ea: &[T], ep: &[T], en: &[T], cfg: &LossConfig) -> Result<T> {
    let dap = pairwise_distance(ea, ep, cfg.p, cfg.distance_eps)?;
    let dan = pairwise_distance(ea, en, cfg.p, cfg.distance_eps)?;
    margin_ranking_loss(dap, dan, -1, cfg.margin)
}

/// Per-triplet losses `[N]` from `[N, D]` embeddings.
pub fn triplet_losses<T: Real>(g: &mut Graph<T>, ea: Var, ep: Var, en: Var, cfg: &LossConfig) -> Result<Var> {
    let dap = g.pairwise_distance(ea, ep, cfg.p, cfg.distance_eps)?;
    let dan = g.pairwise_distance(ea, en, cfg.p, cfg.distance_eps)?;
    g.margin_ranking(dap, dan, -1, cfg.margin)
}

/// Batched triplet objective reduced to a scalar per `cfg.reduction`.
pub fn triplet_objective_batch<T: Real>(
    g: &mut Graph<T>,
    ea: Var,
    ep: Var,
    en: Var,
    cfg: &LossConfig,
) -> Result<Var> {
    let per = triplet_losses(g, ea, ep, en, cfg)?;
    reduce(g, per, cfg.reduction)
}

pub fn reduce<T: Real>(g: &mut Graph<T>, per: Var, reduction: Reduction) -> Result<Var> {
    match reduction {
        Reduction::Mean => g.mean(per),
        Reduction::Sum => g.sum(per),
    }
}
