//! Mini-batch triplet training on one task's training split.

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::config::{InnerConfig, InnerOptimizer};
use crate::data::TrainSplit;
use crate::embedder::ResNetModel;
use crate::error::{Error, Result};
use crate::numeric::{sgd_step, AdamConfig, AdamState, ParamSet};
use crate::seed::rng_from_seed;
use crate::triplet::{enumerate_valid_triplets, has_triplet, triplet_loss, triplet_loss_grad};

/// Attempts at drawing a mini-batch that admits a triplet.
pub const MAX_BATCH_ATTEMPTS: usize = 100;

/// `max(1, floor(k * n_way / b)) * epochs`.
pub fn iterations_for_task(k: usize, n_way: usize, batch_size: usize, epochs: usize) -> usize {
    steps_for_size(k * n_way, batch_size, epochs)
}

/// Step count for a split of `n` series: `max(1, floor(n / b)) * epochs`.
pub fn steps_for_size(n: usize, batch_size: usize, epochs: usize) -> usize {
    (n / batch_size.max(1)).max(1) * epochs
}

/// Draws `min(b, n)` distinct indices: one from each of `ceil(b / 2)` random
/// classes (all classes if there are fewer), then uniform fill from those
/// classes. Batches without a valid triplet are redrawn. Indices come back
/// sorted.
pub fn stratified_minibatch<R: Rng + ?Sized>(labels: &[usize], batch_size: usize, rng: &mut R) -> Result<Vec<usize>> {
    if !has_triplet(labels) {
        return Err(Error::TaskDegenerate {
            task: format!("{} series", labels.len()),
            reason: "needs two classes and a class with two members".into(),
        });
    }
    let size = batch_size.min(labels.len());
    let mut classes: Vec<usize> = labels.to_vec();
    classes.sort_unstable();
    classes.dedup();
    let members: Vec<Vec<usize>> = classes
        .iter()
        .map(|&c| (0..labels.len()).filter(|&i| labels[i] == c).collect())
        .collect();
    let want = batch_size.div_ceil(2).min(classes.len()).min(size);
    for _ in 0..MAX_BATCH_ATTEMPTS {
        let mut order: Vec<usize> = sample(rng, classes.len(), classes.len()).into_vec();
        let mut chosen: Vec<usize> = order.drain(..want).collect();
        let mut pool_size: usize = chosen.iter().map(|&c| members[c].len()).sum();
        // Widen the class set until it holds enough series.
        while pool_size < size {
            let c = order.remove(0);
            pool_size += members[c].len();
            chosen.push(c);
        }
        let mut batch = Vec::with_capacity(size);
        let mut rest = Vec::new();
        for &c in &chosen {
            let m = &members[c];
            let first = rng.random_range(0..m.len());
            batch.push(m[first]);
            rest.extend(m.iter().enumerate().filter(|&(j, _)| j != first).map(|(_, &i)| i));
        }
        batch.truncate(size);
        let fill = size - batch.len();
        batch.extend(sample(rng, rest.len(), fill).into_iter().map(|j| rest[j]));
        let batch_labels: Vec<usize> = batch.iter().map(|&i| labels[i]).collect();
        if has_triplet(&batch_labels) {
            batch.sort_unstable();
            return Ok(batch);
        }
    }
    Err(Error::TaskDegenerate {
        task: format!("{} series", labels.len()),
        reason: format!("no triplet in {MAX_BATCH_ATTEMPTS} mini-batch draws"),
    })
}

/// Per-step trace of a training loop.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TaskSolveReport {
    pub task: String,
    pub iterations: usize,
    pub losses: Vec<f64>,
    pub violations: Vec<usize>,
}

impl TaskSolveReport {
    pub fn final_loss(&self) -> Option<f64> {
        self.losses.last().copied()
    }

    pub fn mean_loss(&self) -> f64 {
        if self.losses.is_empty() {
            0.0
        } else {
            self.losses.iter().sum::<f64>() / self.losses.len() as f64
        }
    }
}

/// Runs `steps` optimizer steps on `model` in place with a fresh optimizer
/// state, honoring the model's freeze mask.
pub fn train_steps(
    model: &mut ResNetModel,
    split: &TrainSplit,
    steps: usize,
    config: &InnerConfig,
    seed: u64,
    task: &str,
) -> Result<TaskSolveReport> {
    let mut report = TaskSolveReport {
        task: task.to_string(),
        iterations: steps,
        ..Default::default()
    };
    if steps == 0 {
        return Ok(report);
    }
    let labels = split.labels();
    if !has_triplet(&labels) {
        return Err(Error::TaskDegenerate {
            task: task.to_string(),
            reason: "needs two classes and a class with two members".into(),
        });
    }
    let mut rng = rng_from_seed(seed);
    let mask = model.freeze_mask().to_vec();
    let frozen = mask.iter().any(|&f| f).then_some(mask.as_slice());
    let mut adam = AdamState::new(model.params().len(), AdamConfig::with_lr(config.lr));
    for _ in 0..steps {
        let idx = stratified_minibatch(&labels, config.batch_size, &mut rng)?;
        let batch: Vec<&[f64]> = idx.iter().map(|&i| split.series()[i].values.as_slice()).collect();
        let batch_labels: Vec<usize> = idx.iter().map(|&i| labels[i]).collect();
        let triplets = enumerate_valid_triplets(&batch_labels);
        let (z, cache) = model.forward_train(&batch)?;
        let loss = triplet_loss(&z, &triplets, &config.triplet)?;
        let upstream = triplet_loss_grad(&z, &triplets, &config.triplet)?;
        let grads = model.backward_batch(&cache, &upstream)?;
        match config.optimizer {
            InnerOptimizer::Adam => adam.step(model.params_mut().values_mut(), grads.values(), frozen)?,
            InnerOptimizer::Sgd => sgd_step(model.params_mut().values_mut(), grads.values(), config.lr, frozen)?,
        }
        report.losses.push(loss.loss);
        report.violations.push(loss.violations);
    }
    Ok(report)
}

/// Adapts a copy of `model` to one task and returns the adapted parameters.
/// `model` itself is not modified.
pub fn inner_solve(
    model: &ResNetModel,
    split: &TrainSplit,
    steps: usize,
    config: &InnerConfig,
    seed: u64,
    task: &str,
) -> Result<(ParamSet, TaskSolveReport)> {
    let mut local = model.clone();
    let report = train_steps(&mut local, split, steps, config, seed, task)?;
    Ok((local.params().clone(), report))
}
