use serde::{Deserialize, Serialize};

use super::Rate;
use crate::{Error, Result};

/// `K x K` counts, rows = true class, columns = predicted class.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    k: usize,
    counts: Vec<u64>,
}

/// One-vs-rest tallies for a single class.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct OneVsRest {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
}

impl ConfusionMatrix {
    pub fn from_counts(k: usize, counts: Vec<u64>) -> Result<Self> {
        if counts.len() != k * k {
            return Err(Error::shape("confusion", format!("{} counts for {k} classes", counts.len())));
        }
        Ok(Self { k, counts })
    }

    pub fn num_classes(&self) -> usize {
        self.k
    }

    pub fn get(&self, truth: usize, pred: usize) -> u64 {
        self.counts[truth * self.k + pred]
    }

    pub fn rows(&self) -> Vec<Vec<u64>> {
        self.counts.chunks(self.k.max(1)).map(<[u64]>::to_vec).collect()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.k).map(|c| self.get(c, c)).sum()
    }

    /// Number of samples whose true class is `c`.
    pub fn support(&self, c: usize) -> u64 {
        (0..self.k).map(|p| self.get(c, p)).sum()
    }

    pub fn one_vs_rest(&self, c: usize) -> OneVsRest {
        let tp = self.get(c, c);
        let fn_ = self.support(c) - tp;
        let fp = (0..self.k).map(|t| self.get(t, c)).sum::<u64>() - tp;
        let tn = self.total() - tp - fn_ - fp;
        OneVsRest { tp, fp, fn_, tn }
    }

    pub fn accuracy(&self) -> Rate {
        Rate::ratio(self.trace() as f64, self.total() as f64)
    }
}

pub fn confusion(truth: &[usize], predicted: &[usize], k: usize) -> Result<ConfusionMatrix> {
    if truth.len() != predicted.len() {
        return Err(Error::shape(
            "confusion",
            format!("{} true labels vs {} predictions", truth.len(), predicted.len()),
        ));
    }
    let mut counts = vec![0u64; k * k];
    for (i, (&t, &p)) in truth.iter().zip(predicted).enumerate() {
        if t >= k || p >= k {
            return Err(Error::param(format!(
                "label out of range at index {i}: true {t}, predicted {p}, classes {k}"
            )));
        }
        counts[t * k + p] += 1;
    }
    Ok(ConfusionMatrix { k, counts })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub precision: Rate,
    pub recall: Rate,
    pub f1: Rate,
    pub specificity: Rate,
    pub accuracy: Rate,
}

impl ClassMetrics {
    pub fn from_tallies(t: OneVsRest) -> Self {
        let (tp, fp, fn_, tn) = (t.tp as f64, t.fp as f64, t.fn_ as f64, t.tn as f64);
        let precision = Rate::ratio(tp, tp + fp);
        let recall = Rate::ratio(tp, tp + fn_);
        let f1 = Rate::ratio(
            2.0 * precision.value * recall.value,
            precision.value + recall.value,
        );
        let f1 = Rate {
            defined: f1.defined && precision.defined && recall.defined,
            ..f1
        };
        Self {
            precision,
            recall,
            f1,
            specificity: Rate::ratio(tn, tn + fp),
            accuracy: Rate::ratio(tp + tn, tp + fp + tn + fn_),
        }
    }
}

pub fn class_metrics(cm: &ConfusionMatrix, c: usize) -> ClassMetrics {
    ClassMetrics::from_tallies(cm.one_vs_rest(c))
}

/// Precision, recall, F1 and specificity under one averaging scheme.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Averages {
    pub precision: Rate,
    pub recall: Rate,
    pub f1: Rate,
    pub specificity: Rate,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AveragedMetrics {
    pub micro: Averages,
    pub macro_avg: Averages,
    pub weighted: Averages,
    /// Sample average; identical to micro for single-label data.
    pub samples: Averages,
}

fn mean_rate(values: impl Iterator<Item = (Rate, f64)>) -> Rate {
    let (mut num, mut den, mut defined) = (0.0, 0.0, true);
    for (r, w) in values {
        num += r.value * w;
        den += w;
        defined &= r.defined || w == 0.0;
    }
    let r = Rate::ratio(num, den);
    Rate {
        defined: r.defined && defined,
        ..r
    }
}

/// Micro (pooled tallies), macro (unweighted class mean) and weighted
/// (support-weighted class mean) aggregates. Undefined class values count as 0.
pub fn averaged_metrics(cm: &ConfusionMatrix) -> AveragedMetrics {
    let k = cm.num_classes();
    let per: Vec<ClassMetrics> = (0..k).map(|c| class_metrics(cm, c)).collect();
    let pooled = (0..k).map(|c| cm.one_vs_rest(c)).fold(OneVsRest::default(), |a, t| OneVsRest {
        tp: a.tp + t.tp,
        fp: a.fp + t.fp,
        fn_: a.fn_ + t.fn_,
        tn: a.tn + t.tn,
    });
    let micro_m = ClassMetrics::from_tallies(pooled);
    let micro = Averages {
        precision: micro_m.precision,
        recall: micro_m.recall,
        f1: micro_m.f1,
        specificity: micro_m.specificity,
    };
    let avg = |weight: &dyn Fn(usize) -> f64| Averages {
        precision: mean_rate(per.iter().enumerate().map(|(c, m)| (m.precision, weight(c)))),
        recall: mean_rate(per.iter().enumerate().map(|(c, m)| (m.recall, weight(c)))),
        f1: mean_rate(per.iter().enumerate().map(|(c, m)| (m.f1, weight(c)))),
        specificity: mean_rate(per.iter().enumerate().map(|(c, m)| (m.specificity, weight(c)))),
    };
    AveragedMetrics {
        micro,
        macro_avg: avg(&|_| 1.0),
        weighted: avg(&|c| cm.support(c) as f64),
        samples: micro,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_predictions_are_diagonal() {
        let cm = confusion(&[0, 1, 2, 1], &[0, 1, 2, 1], 3).unwrap();
        assert_eq!(cm.rows(), vec![vec![1, 0, 0], vec![0, 2, 0], vec![0, 0, 1]]);
        for c in 0..3 {
            let m = class_metrics(&cm, c);
            for r in [m.precision, m.recall, m.f1, m.specificity, m.accuracy] {
                assert_eq!(r, Rate::defined(1.0));
            }
        }
    }

    #[test]
    fn all_predicted_zero() {
        let cm = confusion(&[0, 1, 2, 2], &[0, 0, 0, 0], 3).unwrap();
        assert_eq!(cm.rows(), vec![vec![1, 0, 0], vec![1, 0, 0], vec![2, 0, 0]]);
    }

    #[test]
    fn hand_tally() {
        let truth = [0, 0, 1, 1, 2, 2];
        let pred = [0, 1, 1, 2, 2, 0];
        let cm = confusion(&truth, &pred, 3).unwrap();
        assert_eq!(cm.rows(), vec![vec![1, 1, 0], vec![0, 1, 1], vec![1, 0, 1]]);
        assert!(confusion(&[0, 3], &[0, 0], 3).is_err());
        assert!(confusion(&[0], &[0, 0], 3).is_err());
    }

    #[test]
    fn nine_nine_one_one() {
        let t = OneVsRest { tp: 9, fp: 1, fn_: 1, tn: 9 };
        let m = ClassMetrics::from_tallies(t);
        for r in [m.precision, m.recall, m.f1, m.specificity, m.accuracy] {
            assert!(r.defined);
            assert!((r.value - 0.9).abs() < 1e-15);
        }
    }

    #[test]
    fn absent_class_is_flagged() {
        let cm = confusion(&[0, 1], &[0, 1], 3).unwrap();
        let m = class_metrics(&cm, 2);
        assert_eq!(m.recall, Rate::undefined());
        assert_eq!(m.precision, Rate::undefined());
        assert!(!m.f1.defined);
        assert_eq!(m.specificity, Rate::defined(1.0));
    }

    #[test]
    fn micro_equals_accuracy_and_balanced_macro_equals_weighted() {
        let cm = ConfusionMatrix::from_counts(3, vec![5, 2, 1, 1, 6, 1, 0, 3, 5]).unwrap();
        let a = averaged_metrics(&cm);
        let acc = cm.accuracy().value;
        assert!((a.micro.precision.value - acc).abs() < 1e-15);
        assert!((a.micro.recall.value - acc).abs() < 1e-15);
        assert!((a.micro.f1.value - acc).abs() < 1e-15);
        assert_eq!(a.samples, a.micro);
        for (x, y) in [
            (a.macro_avg.precision, a.weighted.precision),
            (a.macro_avg.recall, a.weighted.recall),
            (a.macro_avg.f1, a.weighted.f1),
        ] {
            assert!((x.value - y.value).abs() < 1e-15);
        }
    }
}
