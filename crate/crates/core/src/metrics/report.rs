use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::confusion::{averaged_metrics, class_metrics, confusion, Averages};
use super::ranking::{pr_curve, roc_auc, roc_curve, PrPoint, RocPoint};
use super::Rate;
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassReport {
    pub name: String,
    pub support: u64,
    pub precision: Rate,
    pub recall: Rate,
    pub f1: Rate,
    pub specificity: Rate,
    pub accuracy: Rate,
    pub auc: Rate,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassCurve<P> {
    pub class: String,
    pub points: Vec<P>,
}

/// Everything an evaluation produces. Field names are stable.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub classes: Vec<String>,
    pub total: u64,
    /// Rows = true class, columns = predicted class.
    pub confusion: Vec<Vec<u64>>,
    pub accuracy: Rate,
    pub per_class: Vec<ClassReport>,
    pub micro: Averages,
    pub macro_avg: Averages,
    pub weighted: Averages,
    pub samples: Averages,
    pub auc_macro: Rate,
    pub auc_micro: Rate,
    pub roc: Vec<ClassCurve<RocPoint>>,
    pub pr: Vec<ClassCurve<PrPoint>>,
}

/// Assembles a report. Without `scores` the AUC fields are undefined and the
/// curve lists are empty.
pub fn build_report(
    classes: &[String],
    truth: &[usize],
    predicted: &[usize],
    scores: Option<&[Vec<f64>]>,
) -> Result<MetricsReport> {
    let k = classes.len();
    let cm = confusion(truth, predicted, k)?;
    let avg = averaged_metrics(&cm);
    let (aucs, roc, pr) = match scores {
        Some(s) if !s.is_empty() => {
            if s.iter().any(|r| r.len() != k) {
                return Err(Error::shape("report", format!("score rows must have {k} entries")));
            }
            let aucs = roc_auc(s, truth)?;
            let mut roc = Vec::with_capacity(k);
            let mut pr = Vec::with_capacity(k);
            for (c, name) in classes.iter().enumerate() {
                let col: Vec<f64> = s.iter().map(|r| r[c]).collect();
                let pos: Vec<bool> = truth.iter().map(|&t| t == c).collect();
                roc.push(ClassCurve {
                    class: name.clone(),
                    points: roc_curve(&col, &pos),
                });
                pr.push(ClassCurve {
                    class: name.clone(),
                    points: pr_curve(&col, &pos),
                });
            }
            (Some(aucs), roc, pr)
        }
        _ => (None, Vec::new(), Vec::new()),
    };
    let per_class = classes
        .iter()
        .enumerate()
        .map(|(c, name)| {
            let m = class_metrics(&cm, c);
            ClassReport {
                name: name.clone(),
                support: cm.support(c),
                precision: m.precision,
                recall: m.recall,
                f1: m.f1,
                specificity: m.specificity,
                accuracy: m.accuracy,
                auc: aucs.as_ref().map_or(Rate::undefined(), |a| a.per_class[c]),
            }
        })
        .collect();
    Ok(MetricsReport {
        classes: classes.to_vec(),
        total: cm.total(),
        confusion: cm.rows(),
        accuracy: cm.accuracy(),
        per_class,
        micro: avg.micro,
        macro_avg: avg.macro_avg,
        weighted: avg.weighted,
        samples: avg.samples,
        auc_macro: aucs.as_ref().map_or(Rate::undefined(), |a| a.macro_avg),
        auc_micro: aucs.as_ref().map_or(Rate::undefined(), |a| a.micro),
        roc,
        pr,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportFormat {
    Json,
    Csv,
}

fn create(path: &Path) -> Result<std::io::BufWriter<fs::File>> {
    fs::File::create(path)
        .map(std::io::BufWriter::new)
        .map_err(|source| Error::File {
            path: path.to_path_buf(),
            source,
        })
}

/// Rates in CSV: the value, or empty when undefined.
fn cell(r: Rate) -> String {
    if r.defined {
        r.value.to_string()
    } else {
        String::new()
    }
}

fn opt(t: Option<f64>) -> String {
    t.map(|v| v.to_string()).unwrap_or_default()
}

/// Writes the report into `dir`.
///
/// * `Json`: `metrics.json` (the whole report).
/// * `Csv`: `confusion.csv`, `per_class.csv`, `averages.csv`, `roc.csv`
///   (`class,threshold,fpr,tpr`) and `pr.csv` (`class,threshold,recall,precision`).
///   Undefined rates are written as empty cells; the origin point of each
///   curve has an empty threshold.
pub fn render_report(report: &MetricsReport, format: ReportFormat, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|source| Error::File {
        path: dir.to_path_buf(),
        source,
    })?;
    match format {
        ReportFormat::Json => {
            let path = dir.join("metrics.json");
            let mut w = create(&path)?;
            serde_json::to_writer_pretty(&mut w, report)?;
            w.write_all(b"\n")?;
            w.flush()?;
            Ok(vec![path])
        }
        ReportFormat::Csv => {
            let mut paths = Vec::new();

            let path = dir.join("confusion.csv");
            let mut w = csv::Writer::from_writer(create(&path)?);
            let mut header = vec!["true\\pred".to_string()];
            header.extend(report.classes.iter().cloned());
            w.write_record(&header)?;
            for (name, row) in report.classes.iter().zip(&report.confusion) {
                let mut rec = vec![name.clone()];
                rec.extend(row.iter().map(u64::to_string));
                w.write_record(&rec)?;
            }
            w.flush()?;
            paths.push(path);

            let path = dir.join("per_class.csv");
            let mut w = csv::Writer::from_writer(create(&path)?);
            w.write_record(["class", "support", "precision", "recall", "f1", "specificity", "accuracy", "auc"])?;
            for c in &report.per_class {
                w.write_record([
                    c.name.clone(),
                    c.support.to_string(),
                    cell(c.precision),
                    cell(c.recall),
                    cell(c.f1),
                    cell(c.specificity),
                    cell(c.accuracy),
                    cell(c.auc),
                ])?;
            }
            w.flush()?;
            paths.push(path);

            let path = dir.join("averages.csv");
            let mut w = csv::Writer::from_writer(create(&path)?);
            w.write_record(["average", "precision", "recall", "f1", "specificity"])?;
            for (name, a) in [
                ("micro", &report.micro),
                ("macro", &report.macro_avg),
                ("weighted", &report.weighted),
                ("samples", &report.samples),
            ] {
                w.write_record([name.to_string(), cell(a.precision), cell(a.recall), cell(a.f1), cell(a.specificity)])?;
            }
            w.write_record(["accuracy".to_string(), cell(report.accuracy), String::new(), String::new(), String::new()])?;
            w.flush()?;
            paths.push(path);

            let path = dir.join("roc.csv");
            let mut w = csv::Writer::from_writer(create(&path)?);
            w.write_record(["class", "threshold", "fpr", "tpr"])?;
            for curve in &report.roc {
                for p in &curve.points {
                    w.write_record([curve.class.clone(), opt(p.threshold), p.fpr.to_string(), p.tpr.to_string()])?;
                }
            }
            w.flush()?;
            paths.push(path);

            let path = dir.join("pr.csv");
            let mut w = csv::Writer::from_writer(create(&path)?);
            w.write_record(["class", "threshold", "recall", "precision"])?;
            for curve in &report.pr {
                for p in &curve.points {
                    w.write_record([curve.class.clone(), opt(p.threshold), p.recall.to_string(), p.precision.to_string()])?;
                }
            }
            w.flush()?;
            paths.push(path);
            Ok(paths)
        }
    }
}

pub fn read_report_json(path: &Path) -> Result<MetricsReport> {
    let f = fs::File::open(path).map_err(|source| Error::File {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(serde_json::from_reader(std::io::BufReader::new(f))?)
}
