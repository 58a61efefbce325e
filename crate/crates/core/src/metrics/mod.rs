//! Classification metrics: confusion matrix, one-vs-rest rates, multiclass
//! averages, ROC AUC and precision–recall curves.
//!
//! Every ratio is a [`Rate`]. A `0/0` ratio evaluates to `0.0` with
//! `defined = false`, so sparse evaluations still produce complete reports
//! while the undefined entries stay visible.

mod confusion;
mod ranking;
mod report;

use serde::{Deserialize, Serialize};

pub use confusion::{averaged_metrics, class_metrics, confusion, AveragedMetrics, Averages, ClassMetrics, ConfusionMatrix, OneVsRest};
pub use ranking::{pr_curve, roc_auc, roc_curve, PrPoint, RocAuc, RocPoint};
pub use report::{
    build_report, read_report_json, render_report, ClassCurve, ClassReport, MetricsReport, ReportFormat,
};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rate {
    pub value: f64,
    pub defined: bool,
}

impl Rate {
    pub fn ratio(num: f64, den: f64) -> Self {
        if den == 0.0 {
            Self::undefined()
        } else {
            Self {
                value: num / den,
                defined: true,
            }
        }
    }

    pub fn undefined() -> Self {
        Self {
            value: 0.0,
            defined: false,
        }
    }

    pub fn defined(value: f64) -> Self {
        Self { value, defined: true }
    }
}
