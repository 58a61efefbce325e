use serde::{Deserialize, Serialize};

use super::Rate;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    /// `None` for the origin point that precedes every threshold.
    pub threshold: Option<f64>,
    pub fpr: f64,
    pub tpr: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrPoint {
    pub threshold: Option<f64>,
    pub recall: f64,
    pub precision: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RocAuc {
    pub per_class: Vec<Rate>,
    /// Mean of the defined per-class values.
    pub macro_avg: Rate,
    /// Pooled over every (sample, class) decision.
    pub micro: Rate,
}

/// Mann–Whitney AUC with half credit for tied scores, via average ranks.
fn binary_auc(scores: &[f64], positive: &[bool]) -> Rate {
    let n_pos = positive.iter().filter(|&&p| p).count();
    let n_neg = positive.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Rate::undefined();
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Twice the rank sum keeps every quantity integral.
    let mut rank_sum2 = 0u64;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // Ranks i+1..=j+1 share the average (i + j + 2) / 2.
        let avg2 = (i + j + 2) as u64;
        let pos_in_group = order[i..=j].iter().filter(|&&k| positive[k]).count() as u64;
        rank_sum2 += avg2 * pos_in_group;
        i = j + 1;
    }
    let n_pos = n_pos as u64;
    let u2 = rank_sum2 - n_pos * (n_pos + 1);
    Rate::defined(u2 as f64 / 2.0 / (n_pos as f64 * n_neg as f64))
}

fn check(scores: &[Vec<f64>], truth: &[usize]) -> Result<usize> {
    if scores.len() != truth.len() {
        return Err(Error::shape(
            "roc_auc",
            format!("{} score rows for {} labels", scores.len(), truth.len()),
        ));
    }
    let k = scores.first().map_or(0, Vec::len);
    if let Some((i, _)) = scores.iter().enumerate().find(|(_, r)| r.len() != k) {
        return Err(Error::shape("roc_auc", format!("score row {i} has the wrong width")));
    }
    if let Some((i, t)) = truth.iter().enumerate().find(|(_, &t)| t >= k) {
        return Err(Error::param(format!("label {t} at index {i} outside {k} classes")));
    }
    Ok(k)
}

/// One-vs-rest AUC per class plus macro and micro aggregates.
pub fn roc_auc(scores: &[Vec<f64>], truth: &[usize]) -> Result<RocAuc> {
    let k = check(scores, truth)?;
    let per_class: Vec<Rate> = (0..k)
        .map(|c| {
            let col: Vec<f64> = scores.iter().map(|r| r[c]).collect();
            let pos: Vec<bool> = truth.iter().map(|&t| t == c).collect();
            binary_auc(&col, &pos)
        })
        .collect();
    let defined: Vec<f64> = per_class.iter().filter(|r| r.defined).map(|r| r.value).collect();
    let macro_avg = Rate::ratio(defined.iter().sum(), defined.len() as f64);
    let flat: Vec<f64> = scores.iter().flatten().copied().collect();
    let pos: Vec<bool> = truth
        .iter()
        .flat_map(|&t| (0..k).map(move |c| c == t))
        .collect();
    Ok(RocAuc {
        per_class,
        macro_avg,
        micro: binary_auc(&flat, &pos),
    })
}

/// Distinct thresholds in descending order with cumulative (tp, fp) counts
/// when predicting positive for every score >= threshold.
fn sweep(scores: &[f64], positive: &[bool]) -> Vec<(f64, u64, u64)> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut out = Vec::new();
    let (mut tp, mut fp) = (0u64, 0u64);
    for (idx, &i) in order.iter().enumerate() {
        if positive[i] {
            tp += 1;
        } else {
            fp += 1;
        }
        let last_of_group = order.get(idx + 1).is_none_or(|&j| scores[j] != scores[i]);
        if last_of_group {
            out.push((scores[i], tp, fp));
        }
    }
    out
}

/// ROC points for one class, starting at the origin.
pub fn roc_curve(scores: &[f64], positive: &[bool]) -> Vec<RocPoint> {
    let p = positive.iter().filter(|&&b| b).count() as f64;
    let n = positive.len() as f64 - p;
    let rate = |x: u64, d: f64| if d == 0.0 { 0.0 } else { x as f64 / d };
    std::iter::once(RocPoint {
        threshold: None,
        fpr: 0.0,
        tpr: 0.0,
    })
    .chain(sweep(scores, positive).into_iter().map(|(t, tp, fp)| RocPoint {
        threshold: Some(t),
        fpr: rate(fp, n),
        tpr: rate(tp, p),
    }))
    .collect()
}

/// Precision–recall points for one class, one per distinct threshold in
/// descending order, preceded by `(recall 0, precision 1)` for the empty
/// prediction set.
pub fn pr_curve(scores: &[f64], positive: &[bool]) -> Vec<PrPoint> {
    let p = positive.iter().filter(|&&b| b).count() as f64;
    std::iter::once(PrPoint {
        threshold: None,
        recall: 0.0,
        precision: 1.0,
    })
    .chain(sweep(scores, positive).into_iter().map(|(t, tp, fp)| PrPoint {
        threshold: Some(t),
        recall: if p == 0.0 { 0.0 } else { tp as f64 / p },
        precision: tp as f64 / (tp + fp) as f64,
    }))
    .collect()
}
