//! Classification metrics and per-database reports.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use log::warn;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{Database, Label};

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("{scores} scores for {labels} labels")]
    Length { scores: usize, labels: usize },
    #[error("score {index} is not finite")]
    NonFinite { index: usize },
    #[error("nothing to evaluate")]
    Empty,
}

fn check(scores: &[f64], labels: &[Label]) -> Result<(), EvalError> {
    if scores.len() != labels.len() {
        return Err(EvalError::Length {
            scores: scores.len(),
            labels: labels.len(),
        });
    }
    if scores.is_empty() {
        return Err(EvalError::Empty);
    }
    if let Some(index) = scores.iter().position(|s| !s.is_finite()) {
        return Err(EvalError::NonFinite { index });
    }
    Ok(())
}

/// Area under the ROC curve through the rank-sum statistic, ties counted as
/// half. `None` when either class is absent.
pub fn auc_roc(scores: &[f64], labels: &[Label]) -> Result<Option<f64>, EvalError> {
    check(scores, labels)?;
    let n_pos = labels.iter().filter(|&&l| l == Label::Depressed).count() as u64;
    let n_neg = labels.len() as u64 - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Ok(None);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // doubled ranks keep tie averages integral
    let mut pos_rank_sum2 = 0u64;
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        let rank2 = (i + 1 + j) as u64;
        let pos_in_group = order[i..j].iter().filter(|&&k| labels[k] == Label::Depressed).count() as u64;
        pos_rank_sum2 += rank2 * pos_in_group;
        i = j;
    }
    let u2 = pos_rank_sum2 - n_pos * (n_pos + 1);
    Ok(Some(u2 as f64 / (2 * n_pos * n_neg) as f64))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl Confusion {
    /// Depressed is positive; `score >= threshold` predicts it.
    pub fn at_threshold(scores: &[f64], labels: &[Label], threshold: f64) -> Result<Self, EvalError> {
        check(scores, labels)?;
        let mut c = Confusion::default();
        for (&s, &l) in scores.iter().zip(labels) {
            match (s >= threshold, l) {
                (true, Label::Depressed) => c.tp += 1,
                (true, Label::NonDepressed) => c.fp += 1,
                (false, Label::NonDepressed) => c.tn += 1,
                (false, Label::Depressed) => c.fn_ += 1,
            }
        }
        Ok(c)
    }

    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn accuracy(&self) -> f64 {
        (self.tp + self.tn) as f64 / self.total().max(1) as f64
    }
}

/// `2TP / (2TP + FP + FN)`; the flag is set when the ratio is undefined and
/// 0 is returned instead.
pub fn f1_score(tp: usize, fp: usize, fn_: usize) -> (f64, bool) {
    let denom = 2 * tp + fp + fn_;
    if denom == 0 {
        (0.0, true)
    } else {
        (2.0 * tp as f64 / denom as f64, false)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassF1 {
    pub depressed: f64,
    pub nondepressed: f64,
}

/// F1 with each class in turn taken as positive.
pub fn f1_per_class(c: &Confusion) -> (ClassF1, Vec<String>) {
    let mut warnings = Vec::new();
    let (d, d_bad) = f1_score(c.tp, c.fp, c.fn_);
    let (nd, nd_bad) = f1_score(c.tn, c.fn_, c.fp);
    if d_bad {
        warnings.push("F1 for the depressed class is undefined; reported as 0".to_string());
    }
    if nd_bad {
        warnings.push("F1 for the non-depressed class is undefined; reported as 0".to_string());
    }
    (
        ClassF1 {
            depressed: d,
            nondepressed: nd,
        },
        warnings,
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub n: usize,
    pub accuracy: f64,
    pub auc_roc: Option<f64>,
    pub f1: ClassF1,
    pub confusion: Confusion,
    pub warnings: Vec<String>,
}

pub fn metrics(scores: &[f64], labels: &[Label], threshold: f64) -> Result<Metrics, EvalError> {
    let confusion = Confusion::at_threshold(scores, labels, threshold)?;
    let auc = auc_roc(scores, labels)?;
    let (f1, mut warnings) = f1_per_class(&confusion);
    if auc.is_none() {
        warnings.push("AUC undefined with a single class present".to_string());
    }
    for w in &warnings {
        warn!("{w}");
    }
    Ok(Metrics {
        n: scores.len(),
        accuracy: confusion.accuracy(),
        auc_roc: auc,
        f1,
        confusion,
        warnings,
    })
}

/// Overall metrics plus one block per database present.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub overall: Metrics,
    pub per_database: BTreeMap<Database, Metrics>,
}

pub fn evaluate(
    scores: &[f64],
    labels: &[Label],
    databases: &[Database],
    threshold: f64,
) -> Result<EvaluationReport, EvalError> {
    if databases.len() != scores.len() {
        return Err(EvalError::Length {
            scores: scores.len(),
            labels: databases.len(),
        });
    }
    let overall = metrics(scores, labels, threshold)?;
    let mut groups: BTreeMap<Database, (Vec<f64>, Vec<Label>)> = BTreeMap::new();
    for ((&s, &l), &db) in scores.iter().zip(labels).zip(databases) {
        let g = groups.entry(db).or_default();
        g.0.push(s);
        g.1.push(l);
    }
    let per_database = groups
        .into_iter()
        .map(|(db, (s, l))| metrics(&s, &l, threshold).map(|m| (db, m)))
        .collect::<Result<_, _>>()?;
    Ok(EvaluationReport { overall, per_database })
}

/// Mean segment score per recording, in first-seen order.
pub fn recording_scores<'a>(
    recording_ids: impl IntoIterator<Item = &'a str>,
    scores: &[f64],
) -> Vec<(String, f64)> {
    let mut order: Vec<String> = Vec::new();
    let mut acc: HashMap<String, (f64, usize)> = HashMap::new();
    for (id, &s) in recording_ids.into_iter().zip(scores) {
        let e = acc.entry(id.to_string()).or_insert_with(|| {
            order.push(id.to_string());
            (0.0, 0)
        });
        e.0 += s;
        e.1 += 1;
    }
    order
        .into_iter()
        .map(|id| {
            let (sum, n) = acc[&id];
            (id, sum / n as f64)
        })
        .collect()
}

/// One line of the results table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultsRow {
    pub features: String,
    pub train: String,
    pub test: String,
    pub accuracy: f64,
    pub auc_roc: Option<f64>,
    pub f1_d: f64,
    pub f1_nd: f64,
}

impl ResultsRow {
    pub fn from_metrics(features: &str, train: &str, test: &str, m: &Metrics) -> Self {
        Self {
            features: features.to_string(),
            train: train.to_string(),
            test: test.to_string(),
            accuracy: m.accuracy,
            auc_roc: m.auc_roc,
            f1_d: m.f1.depressed,
            f1_nd: m.f1.nondepressed,
        }
    }
}

/// Markdown table with a fixed column order.
pub fn results_table(rows: &[ResultsRow]) -> String {
    let mut out = String::from("| Feats | Train | Test | Accuracy | AUC-ROC | F1(D) | F1(ND) |\n");
    out.push_str("|---|---|---|---|---|---|---|\n");
    for r in rows {
        let auc = r.auc_roc.map_or("n/a".to_string(), |a| format!("{a:.2}"));
        let _ = writeln!(
            out,
            "| {} | {} | {} | {:.2} | {} | {:.2} | {:.2} |",
            r.features, r.train, r.test, r.accuracy, auc, r.f1_d, r.f1_nd
        );
    }
    out
}
