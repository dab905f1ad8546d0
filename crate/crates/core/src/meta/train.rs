//! Meta-training loops.
//!
//! FS-1 adapts a copy of the shared initialization to each task of a
//! meta-batch and moves the initialization toward the mean adapted
//! parameters. FS-2 trains one running parameter vector on every task in
//! turn.

use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{InnerConfig, MetaConfig};
use super::inner::{inner_solve, steps_for_size, train_steps, TaskSolveReport};
use crate::data::{TaskRecord, TaskSource, TrainTask};
use crate::embedder::{checkpoint, ResNetModel};
use crate::error::{Error, Result};
use crate::jsonl::to_jsonl;
use crate::numeric::ParamSet;
use crate::seed::derive_seed;
use crate::triplet::{enumerate_valid_triplets, triplet_loss, TripletLossConfig};

/// Consecutive degenerate tasks tolerated before giving up.
const MAX_SKIPPED_TASKS: usize = 1000;

/// `phi + epsilon * mean_j(adapted_j - phi)`. Each coordinate's deltas are
/// sorted before summation, so the result does not depend on the order of
/// `adapted`.
pub fn meta_update(phi: &ParamSet, adapted: &[ParamSet], epsilon: f64) -> Result<ParamSet> {
    if adapted.is_empty() {
        return Err(Error::Usage("meta-update over an empty meta-batch".into()));
    }
    if adapted.iter().any(|a| a.layout() != phi.layout()) {
        return Err(Error::Shape("adapted parameters do not share the initialization's layout".into()));
    }
    let b = adapted.len() as f64;
    let mut out = phi.clone();
    let mut deltas = vec![0.0; adapted.len()];
    for (i, p) in out.values_mut().iter_mut().enumerate() {
        for (d, a) in deltas.iter_mut().zip(adapted) {
            *d = a.values()[i] - *p;
        }
        deltas.sort_by(f64::total_cmp);
        let sum: f64 = deltas.iter().sum();
        *p += epsilon * (sum / b);
    }
    Ok(out)
}

/// One line of the run log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub mean_task_loss: f64,
    pub wall_time_s: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub validation_loss: Option<f64>,
}

/// The checkpoint picked by validation loss.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub iteration: usize,
    pub validation_loss: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<PathBuf>,
}

/// Optional side channels of a training run.
#[derive(Default)]
pub struct TrainHooks<'a> {
    /// Validation tasks; indices `0..validation_tasks` form the fixed pool.
    pub validation: Option<&'a dyn TaskSource>,
    /// Where checkpoints, the run log and the selection manifest go.
    pub output_dir: Option<&'a Path>,
    pub on_iteration: Option<Box<dyn FnMut(&IterationRecord) + 'a>>,
}

pub struct TrainOutcome {
    /// Parameters after the last iteration.
    pub model: ResNetModel,
    /// Best validation checkpoint, when validation ran.
    pub best: Option<(Selection, ParamSet)>,
    pub log: Vec<IterationRecord>,
    /// Every task trained on, in order.
    pub tasks: Vec<TaskRecord>,
    /// Total optimizer steps taken.
    pub steps: usize,
    pub skipped_tasks: usize,
}

impl TrainOutcome {
    /// The validation-selected parameters, or the final ones.
    pub fn selected_params(&self) -> &ParamSet {
        self.best.as_ref().map_or(self.model.params(), |(_, p)| p)
    }
}

/// Pulls tasks in index order, skipping those that cannot form a triplet.
struct TaskStream<'a> {
    source: &'a dyn TaskSource,
    next: u64,
    skipped: usize,
}

impl TaskStream<'_> {
    fn next_task(&mut self) -> Result<TrainTask> {
        let mut run = 0;
        loop {
            let task = self.source.task(self.next)?;
            self.next += 1;
            if task.train.has_triplet() {
                return Ok(task);
            }
            log::warn!("skipping task {} on {}: no valid triplet", self.next - 1, task.dataset);
            self.skipped += 1;
            run += 1;
            if run >= MAX_SKIPPED_TASKS {
                return Err(Error::TaskDegenerate {
                    task: task.dataset,
                    reason: format!("{MAX_SKIPPED_TASKS} consecutive tasks without a valid triplet"),
                });
            }
        }
    }
}

fn task_seed(task: &TrainTask) -> u64 {
    derive_seed(task.seed, "inner", 0)
}

fn task_id(task: &TrainTask) -> String {
    format!("{}#{:016x}", task.dataset, task.seed)
}

/// Mean per-triplet loss of a task's whole split after adapting to it.
fn validation_loss(model: &ResNetModel, task: &TrainTask, config: &MetaConfig) -> Result<f64> {
    let inner = config.inner();
    let steps = steps_for_size(task.train.len(), config.batch_size, config.epochs);
    let (params, _) = inner_solve(model, &task.train, steps, &inner, task_seed(task), &task_id(task))?;
    let mut adapted = model.clone();
    adapted.set_params(params)?;
    let batch: Vec<&[f64]> = task.train.series().iter().map(|s| s.values.as_slice()).collect();
    let (z, _) = adapted.forward_train(&batch)?;
    let triplets = enumerate_valid_triplets(&task.train.labels());
    let cfg = TripletLossConfig {
        alpha: config.alpha,
        mean_reduction: true,
    };
    Ok(triplet_loss(&z, &triplets, &cfg)?.loss)
}

struct Validator<'a> {
    pool: Vec<TrainTask>,
    config: &'a MetaConfig,
}

impl<'a> Validator<'a> {
    fn new(source: Option<&dyn TaskSource>, config: &'a MetaConfig) -> Result<Option<Self>> {
        let Some(source) = source else { return Ok(None) };
        if config.validation_every == 0 || config.validation_tasks == 0 {
            return Ok(None);
        }
        let mut stream = TaskStream {
            source,
            next: 0,
            skipped: 0,
        };
        let pool = (0..config.validation_tasks)
            .map(|_| stream.next_task())
            .collect::<Result<Vec<_>>>()?;
        Ok(Some(Self { pool, config }))
    }

    fn due(&self, iteration: usize) -> bool {
        iteration % self.config.validation_every == 0 || iteration == self.config.meta_iterations
    }

    fn mean_loss(&self, model: &ResNetModel) -> Result<f64> {
        let losses: Vec<f64> = if self.config.parallel {
            self.pool
                .par_iter()
                .map(|t| validation_loss(model, t, self.config))
                .collect::<Result<_>>()?
        } else {
            self.pool
                .iter()
                .map(|t| validation_loss(model, t, self.config))
                .collect::<Result<_>>()?
        };
        Ok(losses.iter().sum::<f64>() / losses.len() as f64)
    }
}

/// Bookkeeping shared by both loops: logging, validation, checkpoints.
struct Run<'a, 'h> {
    config: &'a MetaConfig,
    hooks: TrainHooks<'h>,
    validator: Option<Validator<'a>>,
    log: Vec<IterationRecord>,
    best: Option<(Selection, ParamSet)>,
    started: Instant,
}

impl<'a, 'h> Run<'a, 'h> {
    fn new(config: &'a MetaConfig, hooks: TrainHooks<'h>) -> Result<Self> {
        let validator = Validator::new(hooks.validation, config)?;
        if let Some(dir) = hooks.output_dir {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        Ok(Self {
            config,
            hooks,
            validator,
            log: Vec::new(),
            best: None,
            started: Instant::now(),
        })
    }

    fn checkpoint_path(&self, iteration: usize) -> Option<PathBuf> {
        self.hooks
            .output_dir
            .map(|d| d.join(format!("checkpoint-{iteration:06}.ckpt")))
    }

    fn end_iteration(&mut self, iteration: usize, model: &ResNetModel, reports: &[TaskSolveReport]) -> Result<()> {
        let mean_task_loss = reports.iter().map(TaskSolveReport::mean_loss).sum::<f64>() / reports.len().max(1) as f64;
        let validation_loss = match &self.validator {
            Some(v) if v.due(iteration) => Some(v.mean_loss(model)?),
            _ => None,
        };
        let periodic = self.config.checkpoint_every > 0 && iteration % self.config.checkpoint_every == 0;
        if periodic || iteration == self.config.meta_iterations {
            if let Some(path) = self.checkpoint_path(iteration) {
                checkpoint::save(model, &path)?;
            }
        }
        if let Some(loss) = validation_loss {
            let improved = self.best.as_ref().is_none_or(|(s, _)| loss < s.validation_loss);
            if improved {
                let checkpoint = self.hooks.output_dir.map(|d| d.join("best.ckpt"));
                if let Some(path) = &checkpoint {
                    checkpoint::save(model, path)?;
                }
                self.best = Some((
                    Selection {
                        iteration,
                        validation_loss: loss,
                        checkpoint,
                    },
                    model.params().clone(),
                ));
            }
        }
        let record = IterationRecord {
            iteration,
            mean_task_loss,
            wall_time_s: self.started.elapsed().as_secs_f64(),
            validation_loss,
        };
        log::info!(
            "iteration {iteration}: task loss {mean_task_loss:.6}{}",
            validation_loss.map_or(String::new(), |v| format!(", validation loss {v:.6}"))
        );
        if let Some(cb) = self.hooks.on_iteration.as_mut() {
            cb(&record);
        }
        self.log.push(record);
        Ok(())
    }

    fn finish(self, model: ResNetModel, tasks: Vec<TaskRecord>, steps: usize, skipped: usize) -> Result<TrainOutcome> {
        if let Some(dir) = self.hooks.output_dir {
            let write = |name: &str, text: String| {
                let path = dir.join(name);
                std::fs::write(&path, text).map_err(|e| Error::io(path, e))
            };
            write("run_log.jsonl", to_jsonl(&self.log))?;
            write("task_log.jsonl", to_jsonl(&tasks))?;
            if let Some((sel, _)) = &self.best {
                write(
                    "selection.json",
                    serde_json::to_string_pretty(sel).expect("selection serializes") + "\n",
                )?;
            }
        }
        Ok(TrainOutcome {
            model,
            best: self.best,
            log: self.log,
            tasks,
            steps,
            skipped_tasks: skipped,
        })
    }
}

fn solve_all(
    model: &ResNetModel,
    tasks: &[TrainTask],
    config: &MetaConfig,
    inner: &InnerConfig,
) -> Result<Vec<(ParamSet, TaskSolveReport)>> {
    let solve = |t: &TrainTask| {
        let steps = steps_for_size(t.train.len(), config.batch_size, config.epochs);
        inner_solve(model, &t.train, steps, inner, task_seed(t), &task_id(t))
    };
    if config.parallel {
        tasks.par_iter().map(solve).collect()
    } else {
        tasks.iter().map(solve).collect()
    }
}

/// FS-1: Reptile-style meta-training from `init`.
pub fn fs1_train(init: &ResNetModel, config: &MetaConfig, source: &dyn TaskSource, hooks: TrainHooks<'_>) -> Result<TrainOutcome> {
    config.validate()?;
    let inner = config.inner();
    let mut run = Run::new(config, hooks)?;
    let mut stream = TaskStream {
        source,
        next: 0,
        skipped: 0,
    };
    let mut model = init.clone();
    let mut records = Vec::new();
    let mut steps = 0;
    for iteration in 1..=config.meta_iterations {
        let tasks = (0..config.meta_batch)
            .map(|_| stream.next_task())
            .collect::<Result<Vec<_>>>()?;
        let solved = solve_all(&model, &tasks, config, &inner)?;
        let (adapted, reports): (Vec<ParamSet>, Vec<TaskSolveReport>) = solved.into_iter().unzip();
        steps += reports.iter().map(|r| r.iterations).sum::<usize>();
        let next = meta_update(model.params(), &adapted, config.epsilon)?;
        model.set_params(next)?;
        records.extend(tasks.iter().map(TrainTask::record));
        run.end_iteration(iteration, &model, &reports)?;
    }
    run.finish(model, records, steps, stream.skipped)
}

/// FS-2: sequential training of one parameter vector. Every task gets a
/// fresh optimizer state.
pub fn fs2_train(init: &ResNetModel, config: &MetaConfig, source: &dyn TaskSource, hooks: TrainHooks<'_>) -> Result<TrainOutcome> {
    config.validate()?;
    let inner = config.inner();
    let mut run = Run::new(config, hooks)?;
    let mut stream = TaskStream {
        source,
        next: 0,
        skipped: 0,
    };
    let mut model = init.clone();
    let mut records = Vec::new();
    let mut steps = 0;
    for iteration in 1..=config.meta_iterations {
        let mut reports = Vec::with_capacity(config.meta_batch);
        for _ in 0..config.meta_batch {
            let task = stream.next_task()?;
            let k = steps_for_size(task.train.len(), config.batch_size, config.epochs);
            let report = train_steps(&mut model, &task.train, k, &inner, task_seed(&task), &task_id(&task))?;
            steps += report.iterations;
            records.push(task.record());
            reports.push(report);
        }
        run.end_iteration(iteration, &model, &reports)?;
    }
    run.finish(model, records, steps, stream.skipped)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::ParamLayout;

    fn set(values: &[f64]) -> ParamSet {
        let mut layout = ParamLayout::new();
        layout.push("w", &[values.len()]);
        ParamSet::from_values(layout, values.to_vec()).unwrap()
    }

    #[test]
    fn update_is_mean_delta() {
        let phi = set(&[1.0, 2.0]);
        let out = meta_update(&phi, &[set(&[2.0, 2.0]), set(&[0.0, 4.0])], 1.0).unwrap();
        assert_eq!(out.values(), &[1.0, 3.0]);
        let half = meta_update(&phi, &[set(&[2.0, 2.0]), set(&[0.0, 4.0])], 0.5).unwrap();
        assert_eq!(half.values(), &[1.0, 2.5]);
    }

    #[test]
    fn zero_epsilon_keeps_phi() {
        let phi = set(&[0.1, -0.3]);
        let out = meta_update(&phi, &[set(&[5.0, 5.0])], 0.0).unwrap();
        assert_eq!(out, phi);
    }

    #[test]
    fn empty_batch_rejected() {
        assert!(meta_update(&set(&[1.0]), &[], 1.0).is_err());
    }
}
