//! Fine-tuning on a test task and nearest-neighbor inference over embeddings.

use serde::{Deserialize, Serialize};

use super::config::FineTuneConfig;
use super::inner::{steps_for_size, train_steps, TaskSolveReport};
use crate::data::{FewShotTask, TrainSplit};
use crate::embedder::{ArchSpec, ResNetModel};
use crate::error::{Error, Result};
use crate::numeric::Tensor;
use crate::seed::{derive_seed, rng_from_seed};

/// Re-estimates every batch-norm running statistic from one train-mode pass
/// over `split`.
pub fn estimate_bn(model: &mut ResNetModel, split: &TrainSplit) -> Result<()> {
    if split.is_empty() {
        return Err(Error::Usage("cannot estimate batch-norm statistics from an empty split".into()));
    }
    model.reset_bn();
    let batch: Vec<&[f64]> = split.series().iter().map(|s| s.values.as_slice()).collect();
    model.forward_train(&batch)?;
    Ok(())
}

/// Adapts a copy of `model` to `split` for `epochs` epochs, honoring the
/// configured freeze, then re-estimates batch-norm statistics on `split`.
pub fn finetune(
    model: &ResNetModel,
    split: &TrainSplit,
    config: &FineTuneConfig,
    seed: u64,
) -> Result<(ResNetModel, TaskSolveReport)> {
    config.validate()?;
    let mut tuned = model.clone();
    tuned.apply_freeze(config.freeze_selector())?;
    let steps = if config.epochs == 0 {
        0
    } else {
        steps_for_size(split.len(), config.batch_size, config.epochs)
    };
    let report = train_steps(&mut tuned, split, steps, &config.inner(), seed, "finetune")?;
    estimate_bn(&mut tuned, split)?;
    Ok((tuned, report))
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Labels of the nearest training embedding for every query row; ties go to
/// the lowest training index.
pub fn nearest_labels(train_z: &Tensor, train_labels: &[usize], query_z: &Tensor) -> Vec<usize> {
    query_z
        .rows()
        .map(|q| {
            let mut best = (0, f64::INFINITY);
            for (i, t) in train_z.rows().enumerate() {
                let d = sq_dist(q, t);
                if d < best.1 {
                    best = (i, d);
                }
            }
            train_labels[best.0]
        })
        .collect()
}

/// Predicts each query's class by 1NN over inference-mode embeddings.
pub fn classify_1nn<S: AsRef<[f64]>>(model: &ResNetModel, train: &TrainSplit, queries: &[S]) -> Result<Vec<usize>> {
    if train.is_empty() {
        return Err(Error::Usage("1NN over an empty training split".into()));
    }
    let train_z = model.embed_infer(train.series())?;
    let query_z = model.embed_infer(queries)?;
    Ok(nearest_labels(&train_z, &train.labels(), &query_z))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskEvaluation {
    pub accuracy: f64,
    pub correct: usize,
    pub total: usize,
    pub finetune_steps: usize,
}

/// Fine-tunes on the task's training split, then scores 1NN on its test split.
pub fn evaluate_task(model: &ResNetModel, task: &FewShotTask, config: &FineTuneConfig) -> Result<TaskEvaluation> {
    if task.test.is_empty() {
        return Err(Error::Usage(format!("task on {} has no test series", task.dataset)));
    }
    let (tuned, report) = finetune(model, &task.train, config, derive_seed(task.seed, "finetune", 0))?;
    let predicted = classify_1nn(&tuned, &task.train, task.test.series())?;
    let correct = predicted
        .iter()
        .zip(task.test.series())
        .filter(|(p, s)| **p == s.label)
        .count();
    let total = task.test.len();
    Ok(TaskEvaluation {
        accuracy: correct as f64 / total as f64,
        correct,
        total,
        finetune_steps: report.iterations,
    })
}

/// Trains a freshly initialized network on the task alone and evaluates it.
pub fn evaluate_scratch(spec: &ArchSpec, task: &FewShotTask, config: &FineTuneConfig) -> Result<TaskEvaluation> {
    let mut rng = rng_from_seed(derive_seed(task.seed, "scratch-init", 0));
    let model = ResNetModel::build(spec.clone(), &mut rng)?;
    evaluate_task(&model, task, config)
}
