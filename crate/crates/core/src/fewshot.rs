//! Support-set construction and cosine-similarity classification.
//!
//! Per-class scores are either the best cosine similarity to any support
//! sample of the class (`nearest`) or the cosine similarity to the class mean
//! embedding (`class_mean`). The predicted class maximises the score; ties go
//! to the lower class index. Within a class, the reported support sample is
//! the most similar one, ties going to the lexicographically smaller id.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::datamodel::Manifest;
use crate::diffcore::Real;
use crate::ensemble::{EnsembleModel, ImageSource};
use crate::losses::cosine_similarity;
use crate::metrics::{build_report, MetricsReport};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rule {
    #[default]
    Nearest,
    ClassMean,
}

impl std::str::FromStr for Rule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "nearest" => Ok(Rule::Nearest),
            "class_mean" => Ok(Rule::ClassMean),
            _ => Err(Error::param(format!("unknown rule `{s}` (expected nearest or class_mean)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SupportEntry {
    pub id: String,
    pub embedding: Vec<f32>,
}

/// Labelled reference embeddings, grouped by class in manifest class order.
#[derive(Clone, Debug, PartialEq)]
pub struct SupportSet {
    classes: Vec<String>,
    groups: Vec<Vec<SupportEntry>>,
    means: Vec<Vec<f64>>,
}

impl SupportSet {
    /// `entries` are `(class index, id, embedding)`; every class needs at
    /// least one entry and all embeddings share one width.
    pub fn new(classes: Vec<String>, entries: Vec<(usize, String, Vec<f32>)>) -> Result<Self> {
        let mut groups = vec![Vec::new(); classes.len()];
        let width = entries.first().map(|e| e.2.len());
        for (c, id, embedding) in entries {
            if Some(embedding.len()) != width {
                return Err(Error::shape("support set", format!("`{id}` has width {}", embedding.len())));
            }
            let group = groups
                .get_mut(c)
                .ok_or_else(|| Error::param(format!("`{id}` has class index {c} outside {}", classes.len())))?;
            group.push(SupportEntry { id, embedding });
        }
        if let Some(c) = groups.iter().position(Vec::is_empty) {
            return Err(Error::Constraint(format!("support set has no samples of class `{}`", classes[c])));
        }
        let means = groups
            .iter()
            .map(|g| {
                let mut m = vec![0.0f64; width.unwrap_or(0)];
                for e in g {
                    for (a, &v) in m.iter_mut().zip(&e.embedding) {
                        *a += v as f64;
                    }
                }
                m.iter_mut().for_each(|a| *a /= g.len() as f64);
                m
            })
            .collect();
        Ok(Self { classes, groups, means })
    }

    pub fn classes(&self) -> &[String] {
        &self.classes
    }

    pub fn group(&self, class: usize) -> &[SupportEntry] {
        &self.groups[class]
    }

    pub fn len(&self) -> usize {
        self.groups.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.groups[0][0].embedding.len()
    }
}

/// Embeds every record of `manifest` with `model`.
pub fn build_support_set<T: Real>(
    model: &EnsembleModel<T>,
    manifest: &Manifest,
    images: &dyn ImageSource,
    batch: usize,
) -> Result<SupportSet> {
    let ids: Vec<&str> = manifest.records().iter().map(|r| r.id.as_str()).collect();
    let vectors = model.embed_vectors(&ids, images, batch)?;
    let entries = manifest
        .records()
        .iter()
        .zip(vectors)
        .map(|(r, v)| (r.label, r.id.clone(), to_f32(&v)))
        .collect();
    SupportSet::new(manifest.classes().to_vec(), entries)
}

fn to_f32<T: Real>(v: &[T]) -> Vec<f32> {
    v.iter().map(|x| x.f64() as f32).collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub label: usize,
    pub similarity: f64,
    pub nearest_support_id: String,
    pub scores: Vec<f64>,
}

/// Classifies an already computed embedding.
pub fn classify_embedding(query: &[f32], support: &SupportSet, rule: Rule) -> Result<Prediction> {
    if query.len() != support.dim() {
        return Err(Error::shape(
            "classify",
            format!("query width {} vs support width {}", query.len(), support.dim()),
        ));
    }
    let mut scores = Vec::with_capacity(support.classes.len());
    let mut nearest = Vec::with_capacity(support.classes.len());
    for (c, group) in support.groups.iter().enumerate() {
        let mut best: Option<(f64, &str)> = None;
        for e in group {
            let s = cosine_similarity(query, &e.embedding)?;
            let better = match best {
                None => true,
                Some((bs, bid)) => s > bs || (s == bs && e.id.as_str() < bid),
            };
            if better {
                best = Some((s, &e.id));
            }
        }
        let (s, id) = best.expect("support groups are non-empty");
        nearest.push(id);
        scores.push(match rule {
            Rule::Nearest => s,
            Rule::ClassMean => {
                let q: Vec<f64> = query.iter().map(|&v| v as f64).collect();
                cosine_similarity(&q, &support.means[c])?
            }
        });
    }
    let mut label = 0;
    for (c, &s) in scores.iter().enumerate().skip(1) {
        if s > scores[label] {
            label = c;
        }
    }
    Ok(Prediction {
        label,
        similarity: scores[label],
        nearest_support_id: nearest[label].to_string(),
        scores,
    })
}

pub fn classify<T: Real>(
    model: &EnsembleModel<T>,
    id: &str,
    images: &dyn ImageSource,
    support: &SupportSet,
    rule: Rule,
) -> Result<Prediction> {
    let v = model.embed_vectors(&[id], images, 1)?;
    classify_embedding(&to_f32(&v[0]), support, rule)
}

#[derive(Clone, Debug, PartialEq)]
pub struct LabeledPrediction {
    pub sample_id: String,
    /// Known class of the query, if any.
    pub true_label: Option<usize>,
    pub prediction: Prediction,
}

/// Classifies every record of `test` and builds a metrics report whose ROC/PR
/// rankings use the per-class scores.
pub fn batch_evaluate<T: Real>(
    model: &EnsembleModel<T>,
    test: &Manifest,
    images: &dyn ImageSource,
    support: &SupportSet,
    rule: Rule,
    batch: usize,
) -> Result<(Vec<LabeledPrediction>, MetricsReport)> {
    if test.classes() != support.classes() {
        return Err(Error::Constraint(format!(
            "test classes {:?} differ from support classes {:?}",
            test.classes(),
            support.classes()
        )));
    }
    let mut preds = Vec::with_capacity(test.len());
    for chunk in test.records().chunks(batch.max(1)) {
        let ids: Vec<&str> = chunk.iter().map(|r| r.id.as_str()).collect();
        let vectors = model.embed_vectors(&ids, images, batch)?;
        for (r, v) in chunk.iter().zip(vectors) {
            let prediction = classify_embedding(&to_f32(&v), support, rule)
                .map_err(|e| Error::param(format!("sample `{}`: {e}", r.id)))?;
            preds.push(LabeledPrediction {
                sample_id: r.id.clone(),
                true_label: Some(r.label),
                prediction,
            });
        }
    }
    let report = report_for(&preds, support.classes())?;
    Ok((preds, report))
}

/// Metrics over predictions that all carry a true label.
pub fn report_for(preds: &[LabeledPrediction], classes: &[String]) -> Result<MetricsReport> {
    let truth = preds
        .iter()
        .map(|p| {
            p.true_label
                .ok_or_else(|| Error::param(format!("prediction for `{}` has no true label", p.sample_id)))
        })
        .collect::<Result<Vec<usize>>>()?;
    let predicted: Vec<usize> = preds.iter().map(|p| p.prediction.label).collect();
    let scores: Vec<Vec<f64>> = preds.iter().map(|p| p.prediction.scores.clone()).collect();
    build_report(classes, &truth, &predicted, Some(&scores))
}

/// `sample_id,true_label,pred_label,similarity,nearest_support_id,score_0..`
/// with labels written as class names; an unknown true label is left empty.
pub fn write_predictions<W: Write>(preds: &[LabeledPrediction], classes: &[String], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let mut header: Vec<String> = ["sample_id", "true_label", "pred_label", "similarity", "nearest_support_id"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    header.extend((0..classes.len()).map(|c| format!("score_{c}")));
    out.write_record(&header)?;
    for p in preds {
        let mut row = vec![
            p.sample_id.clone(),
            p.true_label.map(|c| classes[c].clone()).unwrap_or_default(),
            classes[p.prediction.label].clone(),
            p.prediction.similarity.to_string(),
            p.prediction.nearest_support_id.clone(),
        ];
        row.extend(p.prediction.scores.iter().map(f64::to_string));
        out.write_record(&row)?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SplitMix64;
    use proptest::prelude::*;

    fn classes(k: usize) -> Vec<String> {
        (0..k).map(|c| format!("c{c}")).collect()
    }

    fn basis(i: usize, d: usize) -> Vec<f32> {
        (0..d).map(|j| if j == i { 1.0 } else { 0.0 }).collect()
    }

    #[test]
    fn identical_query_matches_its_sample() {
        let s = SupportSet::new(
            classes(2),
            vec![
                (0, "a".into(), vec![1.0, 2.0, 0.5]),
                (1, "b".into(), vec![-1.0, 0.3, 2.0]),
                (1, "c".into(), vec![0.2, 0.1, -0.4]),
            ],
        )
        .unwrap();
        let p = classify_embedding(&[-1.0, 0.3, 2.0], &s, Rule::Nearest).unwrap();
        assert_eq!((p.label, p.nearest_support_id.as_str()), (1, "b"));
        assert!((p.similarity - 1.0).abs() < 1e-12);
    }

    #[test]
    fn small_perturbation_stays_in_class() {
        let s = SupportSet::new(classes(2), vec![(0, "x".into(), basis(0, 4)), (1, "y".into(), basis(1, 4))]).unwrap();
        for eps in [1e-3f32, 0.1, 0.9] {
            let p = classify_embedding(&[1.0, eps, 0.0, 0.0], &s, Rule::Nearest).unwrap();
            assert_eq!(p.label, 0);
        }
    }

    #[test]
    fn ties_prefer_lower_class_then_smaller_id() {
        let s = SupportSet::new(
            classes(2),
            vec![(1, "q".into(), basis(0, 2)), (0, "z".into(), basis(1, 2)), (0, "m".into(), basis(1, 2))],
        )
        .unwrap();
        let p = classify_embedding(&[1.0, 1.0], &s, Rule::Nearest).unwrap();
        assert_eq!(p.scores[0], p.scores[1]);
        assert_eq!((p.label, p.nearest_support_id.as_str()), (0, "m"));
    }

    #[test]
    fn class_mean_rule() {
        let s = SupportSet::new(
            classes(2),
            vec![
                (0, "a".into(), vec![1.0, 1.0]),
                (0, "b".into(), vec![1.0, -1.0]),
                (1, "c".into(), vec![0.6, 0.8]),
            ],
        )
        .unwrap();
        let q = [0.5f32, 1.0];
        assert_eq!(classify_embedding(&q, &s, Rule::Nearest).unwrap().label, 1);
        let p = classify_embedding(&[1.0, 0.1], &s, Rule::ClassMean).unwrap();
        assert_eq!(p.label, 0);
        assert!((p.scores[0] - 1.0 / (1.01f64).sqrt()).abs() < 1e-7);
    }

    #[test]
    fn zero_query_errors() {
        let s = SupportSet::new(classes(1), vec![(0, "a".into(), basis(0, 2))]).unwrap();
        assert!(classify_embedding(&[0.0, 0.0], &s, Rule::Nearest).is_err());
    }

    #[test]
    fn empty_class_rejected() {
        let err = SupportSet::new(classes(2), vec![(0, "a".into(), basis(0, 2))]).unwrap_err();
        assert!(err.to_string().contains("c1"));
    }

    fn random_vec(rng: &mut SplitMix64, d: usize) -> Vec<f32> {
        (0..d).map(|_| rng.uniform(-1.0, 1.0) as f32).collect()
    }

    #[test]
    fn single_sample_nearest_is_one_nn() {
        for seed in 0..100u64 {
            let mut rng = SplitMix64::new(seed);
            let k = 2 + rng.below(4);
            let d = 2 + rng.below(6);
            let vs: Vec<Vec<f32>> = (0..k).map(|_| random_vec(&mut rng, d)).collect();
            let s = SupportSet::new(
                classes(k),
                vs.iter().enumerate().map(|(c, v)| (c, format!("s{c}"), v.clone())).collect(),
            )
            .unwrap();
            let q = random_vec(&mut rng, d);
            let brute = (0..k)
                .map(|c| (c, cosine_similarity(&q, &vs[c]).unwrap()))
                .fold((0, f64::NEG_INFINITY), |b, (c, v)| if v > b.1 { (c, v) } else { b });
            let p = classify_embedding(&q, &s, Rule::Nearest).unwrap();
            assert_eq!(p.label, brute.0);
            assert_eq!(p.nearest_support_id, format!("s{}", brute.0));
        }
    }

    proptest! {
        #[test]
        fn scale_invariance(seed in any::<u64>(), exp in -8i32..8, class_mean in any::<bool>()) {
            let mut rng = SplitMix64::new(seed);
            let entries = (0..6).map(|i| (i % 3, format!("s{i}"), random_vec(&mut rng, 5))).collect();
            let s = SupportSet::new(classes(3), entries).unwrap();
            let q = random_vec(&mut rng, 5);
            let c = 2f32.powi(exp);
            let scaled: Vec<f32> = q.iter().map(|v| v * c).collect();
            let rule = if class_mean { Rule::ClassMean } else { Rule::Nearest };
            let a = classify_embedding(&q, &s, rule).unwrap();
            let b = classify_embedding(&scaled, &s, rule).unwrap();
            prop_assert_eq!(a, b);
        }

        #[test]
        fn label_is_tie_broken_argmax(seed in any::<u64>()) {
            let mut rng = SplitMix64::new(seed);
            let entries = (0..8).map(|i| (i % 4, format!("s{i}"), random_vec(&mut rng, 3))).collect();
            let s = SupportSet::new(classes(4), entries).unwrap();
            let p = classify_embedding(&random_vec(&mut rng, 3), &s, Rule::Nearest).unwrap();
            let max = p.scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            prop_assert_eq!(p.label, p.scores.iter().position(|&v| v == max).unwrap());
        }
    }

    #[test]
    fn predictions_csv_layout() {
        let preds = vec![LabeledPrediction {
            sample_id: "q1".into(),
            true_label: Some(1),
            prediction: Prediction {
                label: 0,
                similarity: 0.5,
                nearest_support_id: "s9".into(),
                scores: vec![0.5, 0.25],
            },
        }];
        let mut buf = Vec::new();
        write_predictions(&preds, &classes(2), &mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "sample_id,true_label,pred_label,similarity,nearest_support_id,score_0,score_1\nq1,c1,c0,0.5,s9,0.5,0.25\n"
        );
    }
}
