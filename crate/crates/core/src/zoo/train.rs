use std::collections::BTreeSet;

use log::{debug, info};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::data::ExampleSet;
use super::model::Model;
use super::ZooError;
use crate::ingest::{class_weights, ClassWeights};
use crate::nn::{mix_seed, weighted_bce, weighted_bce_batch, Adam, AdamConfig, Ctx};

const SHUFFLE_STREAM: u64 = 1 << 32;
const DROPOUT_STREAM: u64 = 2 << 32;
const EVAL_CHUNK: usize = 128;

/// Patience-based stopping on a validation loss that must strictly improve.
#[derive(Debug, Clone, PartialEq)]
pub struct EarlyStopping {
    pub patience: usize,
    pub max_epochs: usize,
    pub epoch: usize,
    pub best: f64,
    pub best_epoch: usize,
    pub wait: usize,
    pub stopped: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StopDecision {
    pub improved: bool,
    pub stop: bool,
}

impl EarlyStopping {
    pub fn new(patience: usize, max_epochs: usize) -> Self {
        Self {
            patience,
            max_epochs,
            epoch: 0,
            best: f64::INFINITY,
            best_epoch: 0,
            wait: 0,
            stopped: max_epochs == 0,
        }
    }

    /// Records the loss of the next epoch.
    pub fn observe(&mut self, val_loss: f64) -> StopDecision {
        self.epoch += 1;
        let improved = val_loss < self.best;
        if improved {
            self.best = val_loss;
            self.best_epoch = self.epoch;
            self.wait = 0;
        } else {
            self.wait += 1;
        }
        self.stopped = self.wait >= self.patience || self.epoch >= self.max_epochs;
        StopDecision {
            improved,
            stop: self.stopped,
        }
    }
}

/// Training position, persisted with checkpoints so a resumed run continues
/// the epoch count and the patience counter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct TrainProgress {
    pub epochs_done: usize,
    pub best_val_loss: Option<f64>,
    pub best_epoch: usize,
    pub wait: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub improved: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochLog>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub stopped_epoch: usize,
    pub class_weights: ClassWeights,
}

/// Checks that no validation speaker or segment reached the training set or
/// the normalization statistics.
pub fn check_leakage(
    train: &ExampleSet,
    val: &ExampleSet,
    norm_fitted_on: &BTreeSet<String>,
) -> Result<(), ZooError> {
    let shared: Vec<String> = train.speakers().intersection(&val.speakers()).cloned().collect();
    if !shared.is_empty() {
        return Err(ZooError::Leakage(format!(
            "speakers in both training and validation: {shared:?}"
        )));
    }
    let train_ids = train.ids();
    if norm_fitted_on != &train_ids {
        let foreign: Vec<&String> = norm_fitted_on.difference(&train_ids).take(5).collect();
        return Err(ZooError::Leakage(format!(
            "normalization fitted on {} segments, training set has {} (outside training: {foreign:?})",
            norm_fitted_on.len(),
            train_ids.len()
        )));
    }
    Ok(())
}

/// Eval-mode probabilities for every example.
pub fn predict(model: &mut Model<f32>, set: &ExampleSet) -> Result<Vec<f64>, ZooError> {
    let rows: Vec<usize> = (0..set.len()).collect();
    let mut out = Vec::with_capacity(set.len());
    for chunk in rows.chunks(EVAL_CHUNK) {
        let inputs = set.batch(chunk);
        let refs: Vec<_> = inputs.iter().collect();
        out.extend(model.predict(&refs)?);
    }
    Ok(out)
}

/// Mean class-weighted cross-entropy, without regularization.
pub fn weighted_loss(probs: &[f64], set: &ExampleSet, weights: &ClassWeights) -> f64 {
    let total: f64 = probs
        .iter()
        .zip(set.examples())
        .map(|(&p, e)| weighted_bce(p, e.label.target(), weights.weight(e.label)))
        .sum();
    total / probs.len().max(1) as f64
}

/// Model plus optimizer state.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub model: Model<f32>,
    pub adam: Adam<f32>,
    pub progress: TrainProgress,
}

impl Trainer {
    pub fn new(model: Model<f32>) -> Self {
        let shapes = model.param_shapes();
        let refs: Vec<&[usize]> = shapes.iter().map(Vec::as_slice).collect();
        let adam = Adam::new(
            AdamConfig {
                lr: model.config.lr,
                ..AdamConfig::default()
            },
            &refs,
        );
        Self {
            model,
            adam,
            progress: TrainProgress::default(),
        }
    }

    fn check_shapes(&self, set: &ExampleSet, what: &str) -> Result<(), ZooError> {
        let cfg = &self.model.config;
        let want: Vec<[usize; 2]> = cfg
            .feature_mode
            .tower_channels()
            .iter()
            .map(|m| [m * m, cfg.input_height()])
            .collect();
        if set.shapes() != want.as_slice() {
            return Err(ZooError::Data(format!(
                "{what} inputs {:?} do not fit a {} model expecting {want:?}",
                set.shapes(),
                cfg.feature_mode
            )));
        }
        Ok(())
    }

    fn train_epoch(&mut self, train: &ExampleSet, weights: &ClassWeights, epoch: usize) -> Result<f64, ZooError> {
        let seed = self.model.config.seed;
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(mix_seed(seed, SHUFFLE_STREAM + epoch as u64)));
        let mut total = 0.0;
        for rows in order.chunks(self.model.config.batch_size) {
            let inputs = train.batch(rows);
            let refs: Vec<_> = inputs.iter().collect();
            let targets: Vec<f64> = rows.iter().map(|&i| train.examples()[i].label.target()).collect();
            let w: Vec<f64> = rows.iter().map(|&i| weights.weight(train.examples()[i].label)).collect();
            self.model.zero_grad();
            let mut ctx = Ctx::train(mix_seed(seed, DROPOUT_STREAM + self.adam.step));
            let probs = self.model.forward(&refs, &mut ctx)?;
            let (loss, dprob) = weighted_bce_batch(&probs, &targets, &w)?;
            self.model.backward(&dprob)?;
            let mut params = self.model.named_params_mut();
            self.adam.step(&mut params)?;
            total += (loss + self.model.penalty()) * rows.len() as f64;
        }
        Ok(total / train.len() as f64)
    }

    /// Trains until early stopping or the epoch limit, then restores the
    /// weights of the best validation epoch.
    pub fn fit(
        &mut self,
        train: &ExampleSet,
        val: &ExampleSet,
        norm_fitted_on: &BTreeSet<String>,
    ) -> Result<TrainReport, ZooError> {
        if train.is_empty() || val.is_empty() {
            return Err(ZooError::Data(format!(
                "training needs examples in both sets ({} train, {} validation)",
                train.len(),
                val.len()
            )));
        }
        self.check_shapes(train, "training")?;
        self.check_shapes(val, "validation")?;
        check_leakage(train, val, norm_fitted_on)?;
        let weights = class_weights(&train.labels())?;
        let cfg = self.model.config.clone();

        let mut stopper = EarlyStopping::new(cfg.patience, cfg.max_epochs);
        stopper.epoch = self.progress.epochs_done;
        stopper.best = self.progress.best_val_loss.unwrap_or(f64::INFINITY);
        stopper.best_epoch = self.progress.best_epoch;
        stopper.wait = self.progress.wait;
        stopper.stopped = stopper.epoch >= cfg.max_epochs || (stopper.epoch > 0 && stopper.wait >= cfg.patience);

        let mut best_state = self.model.state();
        let mut epochs = Vec::new();
        while !stopper.stopped {
            let epoch = stopper.epoch + 1;
            let train_loss = self.train_epoch(train, &weights, epoch)?;
            let val_loss = weighted_loss(&predict(&mut self.model, val)?, val, &weights);
            let decision = stopper.observe(val_loss);
            if decision.improved {
                best_state = self.model.state();
            }
            debug!("epoch {epoch}: train {train_loss:.5} val {val_loss:.5}");
            epochs.push(EpochLog {
                epoch,
                train_loss,
                val_loss,
                improved: decision.improved,
            });
            self.progress = TrainProgress {
                epochs_done: stopper.epoch,
                best_val_loss: stopper.best.is_finite().then_some(stopper.best),
                best_epoch: stopper.best_epoch,
                wait: stopper.wait,
            };
        }
        self.model.load_state(&best_state)?;
        info!(
            "stopped after epoch {} (best epoch {}, validation loss {:.5})",
            stopper.epoch, stopper.best_epoch, stopper.best
        );
        Ok(TrainReport {
            epochs,
            best_epoch: stopper.best_epoch,
            best_val_loss: stopper.best,
            stopped_epoch: stopper.epoch,
            class_weights: weights,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{Database, Label};
    use crate::zoo::{Example, FeatureMode, ModelConfig};

    #[test]
    fn constant_loss_stops_after_patience() {
        let mut s = EarlyStopping::new(15, 300);
        let mut n = 0;
        while !s.observe(1.0).stop {
            n += 1;
        }
        assert_eq!(n + 1, 16);
        assert_eq!(s.best_epoch, 1);
    }

    #[test]
    fn improving_loss_runs_to_the_cap() {
        let mut s = EarlyStopping::new(15, 300);
        let mut last = StopDecision { improved: false, stop: false };
        for k in 0..300 {
            assert!(!last.stop);
            last = s.observe(1.0 / (k + 1) as f64);
        }
        assert!(last.stop && last.improved);
        assert_eq!(s.epoch, 300);
    }

    #[test]
    fn equal_loss_is_not_an_improvement() {
        let mut s = EarlyStopping::new(2, 10);
        assert!(s.observe(0.5).improved);
        assert!(!s.observe(0.5).improved);
        assert!(s.observe(0.5).stop);
    }

    fn tiny_set(n: usize, speaker_offset: usize, seed: u64) -> ExampleSet {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut set = ExampleSet::new(vec![[64, 11]]);
        for i in 0..n {
            let label = if i % 2 == 0 { Label::Depressed } else { Label::NonDepressed };
            let shift = if label == Label::Depressed { 0.8f32 } else { -0.8 };
            set.push(Example {
                id: format!("s{}#{i:03}", i + speaker_offset),
                recording_id: format!("r{i}"),
                speaker_id: format!("s{}", i + speaker_offset),
                database: Database::Synth,
                label,
                inputs: vec![(0..64 * 11).map(|_| rng.random_range(-1.0f32..1.0) + shift).collect()],
            })
            .unwrap();
        }
        set
    }

    fn tiny_config() -> ModelConfig {
        ModelConfig {
            delays: 10,
            o1: 4,
            o2: 4,
            o3: 4,
            d1_units: 8,
            c5_filters: 4,
            lr: 1e-2,
            batch_size: 8,
            max_epochs: 6,
            patience: 3,
            ..ModelConfig::best(FeatureMode::Tv8)
        }
    }

    #[test]
    fn fit_is_deterministic_and_restores_best() {
        let train = tiny_set(24, 0, 1);
        let val = tiny_set(8, 100, 2);
        let run = || {
            let mut t = Trainer::new(Model::new(&tiny_config()).unwrap());
            let report = t.fit(&train, &val, &train.ids()).unwrap();
            (t.model.state(), report)
        };
        let (a, ra) = run();
        let (b, rb) = run();
        assert_eq!(a, b);
        assert_eq!(ra, rb);
        assert!(ra.best_val_loss <= ra.epochs.iter().map(|e| e.val_loss).fold(f64::INFINITY, f64::min));
        let mut model = Model::<f32>::new(&tiny_config()).unwrap();
        model.load_state(&a).unwrap();
        let loss = weighted_loss(&predict(&mut model, &val).unwrap(), &val, &ra.class_weights);
        assert!((loss - ra.best_val_loss).abs() < 1e-9);
    }

    #[test]
    fn leakage_is_refused() {
        let train = tiny_set(8, 0, 1);
        let val = tiny_set(4, 0, 2);
        let mut t = Trainer::new(Model::new(&tiny_config()).unwrap());
        assert!(matches!(t.fit(&train, &val, &train.ids()), Err(ZooError::Leakage(_))));
        let val = tiny_set(4, 50, 2);
        let mut fitted = train.ids();
        fitted.extend(val.ids());
        assert!(matches!(t.fit(&train, &val, &fitted), Err(ZooError::Leakage(_))));
    }

    #[test]
    fn resume_continues_epoch_numbering() {
        let train = tiny_set(16, 0, 1);
        let val = tiny_set(8, 100, 2);
        let cfg = ModelConfig { patience: 100, max_epochs: 2, ..tiny_config() };
        let mut t = Trainer::new(Model::new(&cfg).unwrap());
        t.fit(&train, &val, &train.ids()).unwrap();
        assert_eq!(t.progress.epochs_done, 2);
        t.model.config.max_epochs = 4;
        let report = t.fit(&train, &val, &train.ids()).unwrap();
        let numbers: Vec<usize> = report.epochs.iter().map(|e| e.epoch).collect();
        assert_eq!(numbers, vec![3, 4]);
    }
}
