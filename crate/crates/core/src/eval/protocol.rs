//! Task-by-task evaluation of several methods on identical tasks.

use std::collections::BTreeMap;
use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::ProtocolConfig;
use super::stats::RankTable;
use crate::baselines::{dtw_task_accuracy, ed_task_accuracy, DtwConfig};
use crate::data::{full_task, sample_task, task_seed, FewShotTask, TaskRecord, UcrDataset};
use crate::embedder::{ArchSpec, ResNetModel};
use crate::error::{Error, Result};
use crate::meta::{evaluate_scratch, evaluate_task, FineTuneConfig};

/// Outcome of one method on one task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskResult {
    pub dataset: String,
    pub task_index: usize,
    pub method: String,
    pub accuracy: f64,
    pub correct: usize,
    pub total: usize,
    pub wall_time_s: f64,
}

pub enum Runner {
    /// Fine-tune trained parameters, then 1NN over embeddings.
    Meta { model: ResNetModel, finetune: FineTuneConfig },
    /// Train a fresh network on the task, then 1NN over embeddings.
    Scratch { spec: ArchSpec, finetune: FineTuneConfig },
    Ed,
    Dtw(DtwConfig),
}

pub struct MethodRun {
    pub name: String,
    pub runner: Runner,
}

impl MethodRun {
    pub fn new(name: impl Into<String>, runner: Runner) -> Self {
        Self {
            name: name.into(),
            runner,
        }
    }

    fn run(&self, task: &FewShotTask) -> Result<(usize, usize)> {
        let total = task.test.len();
        let from_accuracy = |acc: f64| ((acc * total as f64).round() as usize, total);
        match &self.runner {
            Runner::Meta { model, finetune } => evaluate_task(model, task, finetune).map(|e| (e.correct, e.total)),
            Runner::Scratch { spec, finetune } => evaluate_scratch(spec, task, finetune).map(|e| (e.correct, e.total)),
            Runner::Ed => ed_task_accuracy(task).map(from_accuracy),
            Runner::Dtw(cfg) => dtw_task_accuracy(task, cfg).map(|(a, _)| from_accuracy(a)),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ProtocolOutput {
    /// Ordered by dataset, task index, then method.
    pub results: Vec<TaskResult>,
    /// One record per task, shared by every method.
    pub tasks: Vec<TaskRecord>,
}

/// Evaluates every method on tasks `0..n_tasks` built by `make_task`.
pub fn evaluate_tasks<F>(n_tasks: usize, make_task: F, methods: &[MethodRun]) -> Result<ProtocolOutput>
where
    F: Fn(usize) -> Result<FewShotTask> + Sync,
{
    let per_task: Vec<(Vec<TaskResult>, TaskRecord)> = (0..n_tasks)
        .into_par_iter()
        .map(|index| {
            let task = make_task(index)?;
            let results = methods
                .iter()
                .map(|m| {
                    let started = Instant::now();
                    let (correct, total) = m.run(&task)?;
                    Ok(TaskResult {
                        dataset: task.dataset.clone(),
                        task_index: index,
                        method: m.name.clone(),
                        accuracy: correct as f64 / total as f64,
                        correct,
                        total,
                        wall_time_s: started.elapsed().as_secs_f64(),
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            Ok((results, task.record()))
        })
        .collect::<Result<_>>()?;
    let mut out = ProtocolOutput::default();
    for (results, record) in per_task {
        out.results.extend(results);
        out.tasks.push(record);
    }
    Ok(out)
}

/// The sampled tasks of one dataset: task `i` is seeded by
/// `(run seed, dataset name, i)`, so every method sees the same tasks.
pub fn dataset_task(ds: &UcrDataset, protocol: &ProtocolConfig, seed: u64, index: usize) -> Result<FewShotTask> {
    if protocol.full_split {
        Ok(full_task(ds))
    } else {
        sample_task(ds, None, protocol.k, protocol.k_query, task_seed(seed, &ds.name, index as u64))
    }
}

/// Runs the protocol over every dataset, in the given order.
pub fn run_protocol(
    datasets: &[Arc<UcrDataset>],
    protocol: &ProtocolConfig,
    seed: u64,
    methods: &[MethodRun],
) -> Result<ProtocolOutput> {
    if methods.is_empty() {
        return Err(Error::Config("no methods to evaluate".into()));
    }
    let n_tasks = if protocol.full_split { 1 } else { protocol.tasks_per_dataset };
    let mut out = ProtocolOutput::default();
    for ds in datasets {
        log::info!("evaluating {} on {n_tasks} tasks", ds.name);
        let part = evaluate_tasks(n_tasks, |i| dataset_task(ds, protocol, seed, i), methods)?;
        out.results.extend(part.results);
        out.tasks.extend(part.tasks);
    }
    Ok(out)
}

/// Per-dataset mean accuracy of each method, in order of first appearance.
/// Every (dataset, method) cell must hold the same number of tasks.
pub fn aggregate(records: &[TaskResult]) -> Result<RankTable> {
    let mut datasets: Vec<String> = Vec::new();
    let mut methods: Vec<String> = Vec::new();
    let mut cells: BTreeMap<(usize, usize), Vec<(usize, f64)>> = BTreeMap::new();
    for r in records {
        if !(0.0..=1.0).contains(&r.accuracy) {
            return Err(Error::Stats(format!("accuracy {} outside [0, 1]", r.accuracy)));
        }
        let d = index_of(&mut datasets, &r.dataset);
        let m = index_of(&mut methods, &r.method);
        cells.entry((d, m)).or_default().push((r.task_index, r.accuracy));
    }
    if methods.is_empty() {
        return Err(Error::Stats("no records".into()));
    }
    let expected = cells.values().next().map_or(0, Vec::len);
    let mut accuracy = vec![vec![0.0; methods.len()]; datasets.len()];
    for (d, row) in accuracy.iter_mut().enumerate() {
        for (m, slot) in row.iter_mut().enumerate() {
            let cell = cells.get_mut(&(d, m)).ok_or_else(|| {
                Error::Stats(format!("no results for {} on {}", methods[m], datasets[d]))
            })?;
            if cell.len() != expected {
                return Err(Error::Stats(format!(
                    "{} on {} has {} tasks, expected {expected}",
                    methods[m],
                    datasets[d],
                    cell.len()
                )));
            }
            cell.sort_by_key(|&(i, _)| i);
            *slot = cell.iter().map(|&(_, a)| a).sum::<f64>() / expected as f64;
        }
    }
    RankTable::new(datasets, methods, accuracy)
}

fn index_of(list: &mut Vec<String>, name: &str) -> usize {
    list.iter().position(|n| n == name).unwrap_or_else(|| {
        list.push(name.to_string());
        list.len() - 1
    })
}
