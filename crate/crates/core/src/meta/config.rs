use serde::{Deserialize, Serialize};

use crate::embedder::FreezeSelector;
use crate::error::{Error, Result};
use crate::triplet::TripletLossConfig;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InnerOptimizer {
    #[default]
    Adam,
    Sgd,
}

/// Meta-training hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MetaConfig {
    /// Meta-iterations M.
    pub meta_iterations: usize,
    /// Tasks per meta-iteration B.
    pub meta_batch: usize,
    /// Mini-batch size b.
    pub batch_size: usize,
    /// Epochs per task e.
    pub epochs: usize,
    /// Meta step size.
    pub epsilon: f64,
    pub inner_lr: f64,
    pub optimizer: InnerOptimizer,
    /// Shots per class of training tasks.
    pub k_train: usize,
    pub alpha: f64,
    pub mean_reduction: bool,
    /// Seeds the initial parameters and meta-task sampling.
    pub seed: u64,
    /// Meta-iterations between validation passes; 0 disables validation.
    pub validation_every: usize,
    pub validation_tasks: usize,
    /// Meta-iterations between checkpoints; 0 writes only the final one.
    pub checkpoint_every: usize,
    /// Solve the tasks of a meta-batch on the rayon pool.
    pub parallel: bool,
}

impl Default for MetaConfig {
    fn default() -> Self {
        Self {
            meta_iterations: 2000,
            meta_batch: 5,
            batch_size: 10,
            epochs: 4,
            epsilon: 1.0,
            inner_lr: 1e-4,
            optimizer: InnerOptimizer::Adam,
            k_train: 10,
            alpha: 0.5,
            mean_reduction: false,
            seed: 0,
            validation_every: 50,
            validation_tasks: 100,
            checkpoint_every: 0,
            parallel: true,
        }
    }
}

impl MetaConfig {
    pub fn triplet(&self) -> TripletLossConfig {
        TripletLossConfig {
            alpha: self.alpha,
            mean_reduction: self.mean_reduction,
        }
    }

    pub fn inner(&self) -> InnerConfig {
        InnerConfig {
            batch_size: self.batch_size,
            lr: self.inner_lr,
            optimizer: self.optimizer,
            triplet: self.triplet(),
        }
    }

    /// A zero step size or learning rate is accepted and makes training a no-op.
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("meta_iterations", self.meta_iterations),
            ("meta_batch", self.meta_batch),
            ("batch_size", self.batch_size),
            ("epochs", self.epochs),
            ("k_train", self.k_train),
        ] {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be at least 1")));
            }
        }
        if !(0.0..=1.0).contains(&self.epsilon) {
            return Err(Error::Config(format!("epsilon must lie in [0, 1], got {}", self.epsilon)));
        }
        check_lr(self.inner_lr)?;
        self.triplet().validate()
    }
}

fn check_lr(lr: f64) -> Result<()> {
    if !(lr >= 0.0 && lr.is_finite()) {
        return Err(Error::Config(format!("learning rate must be finite and non-negative, got {lr}")));
    }
    Ok(())
}

/// Settings shared by every mini-batch training loop.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InnerConfig {
    pub batch_size: usize,
    pub lr: f64,
    pub optimizer: InnerOptimizer,
    pub triplet: TripletLossConfig,
}

/// Test-task fine-tuning settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FineTuneConfig {
    /// Epochs e'; 0 skips fine-tuning.
    pub epochs: usize,
    pub inner_lr: f64,
    pub optimizer: InnerOptimizer,
    pub batch_size: usize,
    /// Lowest conv layers kept fixed.
    pub freeze: usize,
    pub alpha: f64,
    pub mean_reduction: bool,
}

impl Default for FineTuneConfig {
    fn default() -> Self {
        Self {
            epochs: 16,
            inner_lr: 1e-4,
            optimizer: InnerOptimizer::Adam,
            batch_size: 10,
            freeze: 0,
            alpha: 0.5,
            mean_reduction: false,
        }
    }
}

impl FineTuneConfig {
    /// The FS-2 default of 8 epochs.
    pub fn sequential() -> Self {
        Self {
            epochs: 8,
            ..Self::default()
        }
    }

    pub fn freeze_selector(&self) -> FreezeSelector {
        FreezeSelector::new(self.freeze)
    }

    pub fn inner(&self) -> InnerConfig {
        InnerConfig {
            batch_size: self.batch_size,
            lr: self.inner_lr,
            optimizer: self.optimizer,
            triplet: TripletLossConfig {
                alpha: self.alpha,
                mean_reduction: self.mean_reduction,
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        check_lr(self.inner_lr)?;
        self.inner().triplet.validate()
    }
}
