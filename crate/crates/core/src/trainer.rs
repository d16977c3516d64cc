//! The training loop: mini-batches over the training split, a mixed batch
//! per step, one optimizer step on the total objective, and early stopping
//! on validation accuracy.

use std::io::Write;
use std::path::Path;

use ndarray::{Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{MultiViewDataset, Standardizer};
use crate::diffnet::{Activation, AdamState, Tensors};
use crate::error::{Error, Result};
use crate::graph::{aggregate, build_graph, default_k};
use crate::mass::OMixConfig;
use crate::model::{total_loss, Bandwidth, BatchInputs, LossBreakdown, ModelConfig, ModelState};
use crate::omix::{mix_batch_indices, OMixBatch};

/// Which virtual samples feed the perception encoder.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MixupMode {
    None,
    /// Plain interpolated labels (zero uncertainty budget).
    Vanilla,
    OMix,
}

/// Switches for the ablation grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Components {
    pub structural: bool,
    pub mixup: MixupMode,
    pub debias: bool,
}

impl Default for Components {
    fn default() -> Self {
        Self {
            structural: true,
            mixup: MixupMode::OMix,
            debias: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub tau: f64,
    pub c: f64,
    pub gamma: f64,
    pub learnable_gamma: bool,
    pub alpha: f64,
    pub beta: f64,
    /// Graph neighborhood size; `None` uses `min(10, n - 2)`.
    pub k_neighbors: Option<usize>,
    pub seed: u64,
    pub hidden: Vec<usize>,
    pub apn_hidden: Vec<usize>,
    pub activation: Activation,
    /// Epochs without validation improvement before stopping.
    pub patience: Option<usize>,
    pub bandwidth: Bandwidth,
    pub components: Components,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            batch_size: 64,
            learning_rate: 0.003,
            tau: 1.0,
            c: 0.5,
            gamma: 0.7,
            learnable_gamma: false,
            alpha: 1.0,
            beta: 1.0,
            k_neighbors: None,
            seed: 0,
            hidden: vec![256, 64],
            apn_hidden: vec![128, 32],
            activation: Activation::Relu,
            patience: Some(30),
            bandwidth: Bandwidth::Median,
            components: Components::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size < 2 {
            return Err(Error::domain("epochs must be positive and batch_size at least 2"));
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::domain("learning_rate must be positive"));
        }
        if !(self.alpha >= 0.0 && self.beta >= 0.0) {
            return Err(Error::domain("alpha and beta must be non-negative"));
        }
        if self.patience == Some(0) || self.k_neighbors == Some(0) {
            return Err(Error::domain("patience and k_neighbors must be positive when given"));
        }
        OMixConfig::new(self.tau, self.c)?;
        Ok(())
    }

    /// Perception weight actually in effect (zero without mixing).
    pub fn effective_alpha(&self) -> f64 {
        if self.components.mixup == MixupMode::None {
            0.0
        } else {
            self.alpha
        }
    }

    pub fn effective_beta(&self) -> f64 {
        if self.components.debias {
            self.beta
        } else {
            0.0
        }
    }

    fn omix_config(&self) -> Result<Option<OMixConfig>> {
        Ok(match self.components.mixup {
            MixupMode::None => None,
            MixupMode::Vanilla => Some(OMixConfig::vanilla(self.tau)?),
            MixupMode::OMix => Some(OMixConfig::new(self.tau, self.c)?),
        })
    }

    pub fn model_config(&self, classes: usize, view_dims: Vec<usize>, train_samples: usize) -> ModelConfig {
        ModelConfig {
            classes,
            view_dims,
            hidden: self.hidden.clone(),
            apn_hidden: self.apn_hidden.clone(),
            activation: self.activation,
            gamma: self.gamma,
            learnable_gamma: self.learnable_gamma,
            structural: self.components.structural,
            alpha: self.effective_alpha(),
            beta: self.effective_beta(),
            bandwidth: self.bandwidth,
            k_neighbors: self.k_neighbors.unwrap_or_else(|| default_k(train_samples)),
        }
    }
}

/// Epoch averages of the loss components.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss_cc: f64,
    pub loss_om: f64,
    pub loss_cd: f64,
    pub loss_total: f64,
    /// Closed-set validation accuracy; NaN without a validation split.
    pub val_acc: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainHistory {
    pub records: Vec<EpochRecord>,
    /// Epoch whose parameters were kept.
    pub best_epoch: usize,
}

pub const HISTORY_HEADER: &str = "epoch,loss_cc,loss_om,loss_cd,loss_total,val_acc";

impl EpochRecord {
    pub fn csv_line(&self) -> String {
        format!(
            "{},{},{},{},{},{}",
            self.epoch, self.loss_cc, self.loss_om, self.loss_cd, self.loss_total, self.val_acc
        )
    }
}

impl TrainHistory {
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(f, "{HISTORY_HEADER}")?;
        for r in &self.records {
            writeln!(f, "{}", r.csv_line())?;
        }
        f.flush()?;
        Ok(())
    }
}

/// Fraction of samples whose fused argmax matches the label.
pub fn evaluate_closed(model: &ModelState, split: &MultiViewDataset) -> Result<f64> {
    if split.is_empty() {
        return Err(Error::domain("cannot evaluate an empty split"));
    }
    let prediction = model.predict(&split.view_refs())?;
    let correct = prediction
        .predicted()
        .iter()
        .zip(&split.labels)
        .filter(|(p, y)| p == y)
        .count();
    Ok(correct as f64 / split.len() as f64)
}

/// Standardized rows, their aggregated rows, and labels of one batch.
type BatchRows = (Vec<Array2<f64>>, Option<Vec<Array2<f64>>>, Vec<usize>);

/// Optimization state over one training split.
pub struct Trainer {
    pub config: TrainConfig,
    pub model: ModelState,
    pub adam: AdamState,
    rng: ChaCha8Rng,
    features: Vec<Array2<f64>>,
    aggregated: Option<Vec<Array2<f64>>>,
    labels: Vec<usize>,
    omix: Option<OMixConfig>,
}

impl Trainer {
    /// Standardizes the training views, builds the per-view training graphs,
    /// and initializes the model from `config.seed`.
    pub fn new(train: &MultiViewDataset, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let n = train.len();
        if n < config.batch_size {
            return Err(Error::domain(format!(
                "training split has {n} samples, fewer than batch size {}",
                config.batch_size
            )));
        }
        let distinct: std::collections::BTreeSet<_> = train.labels.iter().collect();
        if distinct.len() < 2 {
            return Err(Error::domain("training split needs at least two classes"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let model_config = config.model_config(train.class_count, train.view_dims(), n);
        let mut model = ModelState::init(model_config, &mut rng)?;
        model.standardizer = Standardizer::fit(&train.view_refs())?;
        let features = train
            .views
            .iter()
            .enumerate()
            .map(|(v, x)| model.standardizer.apply(v, x.view()))
            .collect::<Result<Vec<_>>>()?;
        let aggregated = if config.components.structural {
            let k = model.config.k_neighbors.min(n.saturating_sub(2)).max(1);
            Some(
                features
                    .iter()
                    .map(|x| aggregate(&build_graph(x.view(), k)?, x.view()))
                    .collect::<Result<Vec<_>>>()?,
            )
        } else {
            None
        };
        let omix = config.omix_config()?;
        Ok(Self {
            adam: AdamState::new(config.learning_rate),
            config,
            model,
            rng,
            features,
            aggregated,
            labels: train.labels.clone(),
            omix,
        })
    }

    /// Shuffled mini-batches; a singleton tail joins the previous batch.
    pub fn batches(&mut self) -> Vec<Vec<usize>> {
        let mut order: Vec<usize> = (0..self.labels.len()).collect();
        order.shuffle(&mut self.rng);
        let mut batches: Vec<Vec<usize>> = order.chunks(self.config.batch_size).map(<[usize]>::to_vec).collect();
        if batches.len() > 1 && batches.last().is_some_and(|b| b.len() == 1) {
            let tail = batches.pop().expect("non-empty");
            batches.last_mut().expect("non-empty").extend(tail);
        }
        batches
    }

    fn rows(&self, indices: &[usize]) -> BatchRows {
        let pick = |m: &Vec<Array2<f64>>| m.iter().map(|x| x.select(Axis(0), indices)).collect::<Vec<_>>();
        (
            pick(&self.features),
            self.aggregated.as_ref().map(pick),
            indices.iter().map(|&i| self.labels[i]).collect(),
        )
    }

    /// One optimizer step on the given training rows, drawing the mixed
    /// batch from the trainer's generator.
    pub fn step(&mut self, indices: &[usize]) -> Result<LossBreakdown> {
        let (x, _, y) = self.rows(indices);
        let omix = match &self.omix {
            Some(cfg) => {
                let views: Vec<ArrayView2<f64>> = x.iter().map(|m| m.view()).collect();
                Some(mix_batch_indices(
                    &views,
                    &y,
                    self.model.config.classes,
                    cfg,
                    &mut self.rng,
                )?)
            }
            None => None,
        };
        self.step_with(indices, omix.as_ref())
    }

    /// One optimizer step with a caller-supplied mixed batch.
    pub fn step_with(&mut self, indices: &[usize], omix: Option<&OMixBatch>) -> Result<LossBreakdown> {
        let (x, agg, y) = self.rows(indices);
        let views: Vec<ArrayView2<f64>> = x.iter().map(|m| m.view()).collect();
        let agg_views: Option<Vec<ArrayView2<f64>>> = agg.as_ref().map(|a| a.iter().map(|m| m.view()).collect());
        let inputs = BatchInputs {
            views: &views,
            aggregated: agg_views.as_deref(),
            labels: &y,
            omix,
        };
        let (loss, grads) = total_loss(&self.model, &inputs)?;
        if !loss.total.is_finite() || !grads.all_finite() {
            return Err(Error::state(format!("non-finite loss {}", loss.total)));
        }
        self.adam.step(&mut self.model.params, &grads)?;
        Ok(loss)
    }

    /// One pass over the training split; returns batch-averaged losses.
    pub fn run_epoch(&mut self, epoch: usize) -> Result<LossBreakdown> {
        let batches = self.batches();
        let mut sum = LossBreakdown::default();
        for (b, indices) in batches.iter().enumerate() {
            let loss = self.step(indices).map_err(|e| Error::Training {
                epoch,
                batch: b,
                msg: e.to_string(),
            })?;
            sum.cc += loss.cc;
            sum.om += loss.om;
            sum.cd += loss.cd;
        }
        let m = batches.len() as f64;
        let (cc, om, cd) = (sum.cc / m, sum.om / m, sum.cd / m);
        let cfg = &self.model.config;
        Ok(LossBreakdown {
            cc,
            om,
            cd,
            total: cc + cfg.alpha * om + cfg.beta * cd,
        })
    }

    pub fn train(self, val: Option<&MultiViewDataset>) -> Result<(ModelState, TrainHistory)> {
        self.train_observed(val, |_| Ok(()))
    }

    /// Trains for up to `epochs` epochs, calling `observer` after each one,
    /// and returns the parameters of the best validation epoch.
    pub fn train_observed<F>(
        mut self,
        val: Option<&MultiViewDataset>,
        mut observer: F,
    ) -> Result<(ModelState, TrainHistory)>
    where
        F: FnMut(&EpochRecord) -> Result<()>,
    {
        let mut history = TrainHistory::default();
        let mut best: Option<(f64, usize, ModelState)> = None;
        for epoch in 1..=self.config.epochs {
            let loss = self.run_epoch(epoch)?;
            let val_acc = match val {
                Some(v) => evaluate_closed(&self.model, v)?,
                None => f64::NAN,
            };
            let record = EpochRecord {
                epoch,
                loss_cc: loss.cc,
                loss_om: loss.om,
                loss_cd: loss.cd,
                loss_total: loss.total,
                val_acc,
            };
            observer(&record)?;
            history.records.push(record);
            if val.is_some() {
                if best.as_ref().is_none_or(|(acc, _, _)| val_acc >= *acc) {
                    best = Some((val_acc, epoch, self.model.clone()));
                }
                let since = epoch - best.as_ref().map_or(epoch, |b| b.1);
                if self.config.patience.is_some_and(|p| since >= p) {
                    log::info!("early stop at epoch {epoch}, best epoch {}", epoch - since);
                    break;
                }
            }
        }
        let model = match best {
            Some((_, epoch, model)) => {
                history.best_epoch = epoch;
                model
            }
            None => {
                history.best_epoch = history.records.len();
                self.model
            }
        };
        Ok((model, history))
    }
}

/// Builds a trainer and runs it.
pub fn train(
    train: &MultiViewDataset,
    val: Option<&MultiViewDataset>,
    config: TrainConfig,
) -> Result<(ModelState, TrainHistory)> {
    Trainer::new(train, config)?.train(val)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_json_is_strict() {
        let cfg: TrainConfig = serde_json::from_str(
            r#"{"epochs": 5, "components": {"structural": false, "mixup": "vanilla", "debias": false}}"#,
        )
        .unwrap();
        assert_eq!(cfg.epochs, 5);
        assert_eq!(cfg.batch_size, 64);
        assert_eq!(cfg.effective_beta(), 0.0);
        assert!(serde_json::from_str::<TrainConfig>(r#"{"epoch": 5}"#).is_err());
    }

    #[test]
    fn effective_weights() {
        let mut cfg = TrainConfig::default();
        assert_eq!((cfg.effective_alpha(), cfg.effective_beta()), (1.0, 1.0));
        cfg.components.mixup = MixupMode::None;
        assert_eq!(cfg.effective_alpha(), 0.0);
    }
}
