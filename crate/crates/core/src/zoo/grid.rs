use std::collections::BTreeSet;

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::ModelConfig;
use super::data::ExampleSet;
use super::model::Model;
use super::train::{predict, TrainReport, Trainer};
use super::ZooError;
use crate::eval::{metrics, Metrics};

/// Validation statistic used to pick the winning grid point.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Selection {
    #[default]
    ValLoss,
    ValAuc,
    ValAccuracy,
}

impl std::str::FromStr for Selection {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "val-loss" | "loss" => Ok(Selection::ValLoss),
            "val-auc" | "auc" => Ok(Selection::ValAuc),
            "val-accuracy" | "accuracy" => Ok(Selection::ValAccuracy),
            other => Err(format!("unknown selection criterion {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridEntry {
    pub config: ModelConfig,
    pub best_val_loss: Option<f64>,
    /// Validation AUC-ROC and accuracy of the restored best weights.
    pub val_auc: Option<f64>,
    pub val_accuracy: Option<f64>,
    pub best_epoch: Option<usize>,
    pub stopped_epoch: Option<usize>,
    pub error: Option<String>,
}

impl GridEntry {
    /// Score where larger is better; `None` if unavailable.
    fn score(&self, selection: Selection) -> Option<f64> {
        let v = match selection {
            Selection::ValLoss => self.best_val_loss.map(|l| -l),
            Selection::ValAuc => self.val_auc,
            Selection::ValAccuracy => self.val_accuracy,
        };
        v.filter(|x| x.is_finite())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridResult {
    pub entries: Vec<GridEntry>,
    pub selection: Selection,
    /// Index of the winning entry; ties go to the earlier point.
    pub best: Option<usize>,
}

pub fn select_best(entries: &[GridEntry], selection: Selection) -> Option<usize> {
    entries
        .iter()
        .enumerate()
        .filter_map(|(i, e)| e.score(selection).map(|s| (i, s)))
        .fold(None, |acc: Option<(usize, f64)>, (i, s)| match acc {
            Some((_, b)) if b >= s => acc,
            _ => Some((i, s)),
        })
        .map(|(i, _)| i)
}

fn run_point(
    config: &ModelConfig,
    train: &ExampleSet,
    val: &ExampleSet,
    norm_fitted_on: &BTreeSet<String>,
) -> Result<(TrainReport, Metrics), ZooError> {
    let mut trainer = Trainer::new(Model::new(config)?);
    let report = trainer.fit(train, val, norm_fitted_on)?;
    let probs = predict(&mut trainer.model, val)?;
    let m = metrics(&probs, &val.labels(), 0.5).map_err(|e| ZooError::Data(e.to_string()))?;
    Ok((report, m))
}

/// Trains every grid point derived from `base` and ranks them on the
/// validation set. A failing point is recorded and the search continues.
pub fn grid_search(
    base: &ModelConfig,
    train: &ExampleSet,
    val: &ExampleSet,
    norm_fitted_on: &BTreeSet<String>,
    selection: Selection,
) -> GridResult {
    let entries: Vec<GridEntry> = ModelConfig::grid(base)
        .into_par_iter()
        .map(|config| match run_point(&config, train, val, norm_fitted_on) {
            Ok((r, m)) => GridEntry {
                config,
                best_val_loss: Some(r.best_val_loss),
                val_auc: m.auc_roc,
                val_accuracy: Some(m.accuracy),
                best_epoch: Some(r.best_epoch),
                stopped_epoch: Some(r.stopped_epoch),
                error: None,
            },
            Err(e) => {
                warn!("grid point failed: {e}");
                GridEntry {
                    config,
                    best_val_loss: None,
                    val_auc: None,
                    val_accuracy: None,
                    best_epoch: None,
                    stopped_epoch: None,
                    error: Some(e.to_string()),
                }
            }
        })
        .collect();
    let best = select_best(&entries, selection);
    GridResult {
        entries,
        selection,
        best,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entry(loss: Option<f64>, auc: Option<f64>) -> GridEntry {
        GridEntry {
            config: ModelConfig::default(),
            best_val_loss: loss,
            val_auc: auc,
            val_accuracy: None,
            best_epoch: None,
            stopped_epoch: None,
            error: None,
        }
    }

    #[test]
    fn selection_prefers_low_loss_and_high_auc_with_early_ties() {
        let e = vec![
            entry(Some(0.5), Some(0.7)),
            entry(None, None),
            entry(Some(0.3), Some(0.9)),
            entry(Some(0.3), Some(0.9)),
            entry(Some(f64::NAN), Some(0.8)),
        ];
        assert_eq!(select_best(&e, Selection::ValLoss), Some(2));
        assert_eq!(select_best(&e, Selection::ValAuc), Some(2));
        assert_eq!(select_best(&e, Selection::ValAccuracy), None);
        assert_eq!("auc".parse::<Selection>(), Ok(Selection::ValAuc));
    }
}
