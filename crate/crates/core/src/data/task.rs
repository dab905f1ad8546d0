//! K-shot task sampling.
//!
//! Sample indices are positions in a dataset's pooled sequence: the original
//! train split first, then the original test split. Test-pool indices are
//! therefore offset by the train-split size, which makes the train and test
//! halves of an evaluation task disjoint as index sets.

use std::sync::Arc;

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::ucr::{TimeSeries, UcrDataset};
use crate::error::{Error, Result};
use crate::seed::{derive_seed, rng_from_seed};
use crate::triplet::has_triplet;

/// Labeled series a solver may train on.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainSplit(Vec<TimeSeries>);

/// Held-out query series; only accuracy computation reads these.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TestSplit(Vec<TimeSeries>);

macro_rules! split_impl {
    ($t:ident) => {
        impl $t {
            pub fn new(series: Vec<TimeSeries>) -> Self {
                Self(series)
            }

            pub fn series(&self) -> &[TimeSeries] {
                &self.0
            }

            pub fn labels(&self) -> Vec<usize> {
                self.0.iter().map(|s| s.label).collect()
            }

            pub fn len(&self) -> usize {
                self.0.len()
            }

            pub fn is_empty(&self) -> bool {
                self.0.is_empty()
            }

            /// Number of distinct labels.
            pub fn n_classes(&self) -> usize {
                let mut l = self.labels();
                l.sort_unstable();
                l.dedup();
                l.len()
            }
        }
    };
}

split_impl!(TrainSplit);
split_impl!(TestSplit);

impl TrainSplit {
    pub fn has_triplet(&self) -> bool {
        has_triplet(&self.labels())
    }
}

/// A task used only for training: one labeled split.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainTask {
    pub dataset: String,
    pub seed: u64,
    pub k: usize,
    pub classes: Vec<usize>,
    pub indices: Vec<usize>,
    pub train: TrainSplit,
}

/// A K-shot N-way evaluation episode.
#[derive(Debug, Clone, PartialEq)]
pub struct FewShotTask {
    pub dataset: String,
    pub seed: u64,
    pub k: usize,
    pub k_query: usize,
    pub classes: Vec<usize>,
    pub train_indices: Vec<usize>,
    pub test_indices: Vec<usize>,
    pub train: TrainSplit,
    pub test: TestSplit,
}

impl FewShotTask {
    pub fn n_way(&self) -> usize {
        self.classes.len()
    }

    pub fn record(&self) -> TaskRecord {
        TaskRecord {
            dataset: self.dataset.clone(),
            seed: self.seed,
            k: self.k,
            k_query: Some(self.k_query),
            classes: self.classes.clone(),
            train_indices: self.train_indices.clone(),
            test_indices: self.test_indices.clone(),
        }
    }
}

impl TrainTask {
    pub fn record(&self) -> TaskRecord {
        TaskRecord {
            dataset: self.dataset.clone(),
            seed: self.seed,
            k: self.k,
            k_query: None,
            classes: self.classes.clone(),
            train_indices: self.indices.clone(),
            test_indices: Vec::new(),
        }
    }
}

/// One task-log line: enough to rebuild the task exactly.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskRecord {
    pub dataset: String,
    pub seed: u64,
    pub k: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k_query: Option<usize>,
    pub classes: Vec<usize>,
    pub train_indices: Vec<usize>,
    #[serde(default)]
    pub test_indices: Vec<usize>,
}

fn draw(rng: &mut impl Rng, members: &[usize], count: usize) -> Vec<usize> {
    let take = count.min(members.len());
    let mut picked: Vec<usize> = sample(rng, members.len(), take).into_iter().map(|i| members[i]).collect();
    picked.sort_unstable();
    picked
}

fn pooled_members(ds: &UcrDataset, class: usize) -> Vec<usize> {
    ds.pooled()
        .enumerate()
        .filter(|(_, s)| s.label == class)
        .map(|(i, _)| i)
        .collect()
}

fn check_classes(ds: &UcrDataset, classes: &[usize]) -> Result<()> {
    if classes.len() < 2 {
        return Err(Error::Sampling(format!("{}: a task needs at least 2 classes", ds.name)));
    }
    if let Some(c) = classes.iter().find(|&&c| c >= ds.n_classes()) {
        return Err(Error::Sampling(format!("{}: class {c} does not exist", ds.name)));
    }
    let mut sorted = classes.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    if sorted.len() != classes.len() {
        return Err(Error::Sampling(format!("{}: duplicate classes in task", ds.name)));
    }
    Ok(())
}

fn class_label(ds: &UcrDataset, class: usize) -> String {
    format!("class {} (label {})", class, ds.train.classes[class])
}

fn gather(ds: &UcrDataset, indices: &[usize]) -> Result<Vec<TimeSeries>> {
    let n_train = ds.train.len();
    indices
        .iter()
        .map(|&i| {
            if i < n_train {
                Ok(ds.train.series[i].clone())
            } else {
                ds.test
                    .series
                    .get(i - n_train)
                    .cloned()
                    .ok_or_else(|| Error::Sampling(format!("{}: sample index {i} out of range", ds.name)))
            }
        })
        .collect()
}

fn all_classes(ds: &UcrDataset) -> Vec<usize> {
    (0..ds.n_classes()).collect()
}

/// Samples an evaluation task: `k` per class from the original train split
/// and `k_query` per class from the original test split. Classes smaller
/// than the request contribute all their members.
pub fn sample_task(
    ds: &UcrDataset,
    classes: Option<&[usize]>,
    k: usize,
    k_query: usize,
    seed: u64,
) -> Result<FewShotTask> {
    let classes = classes.map_or_else(|| all_classes(ds), <[usize]>::to_vec);
    check_classes(ds, &classes)?;
    let mut rng = rng_from_seed(seed);
    let n_train = ds.train.len();
    let mut train_indices = Vec::new();
    let mut test_indices = Vec::new();
    for &c in &classes {
        let train_members = ds.train.class_members(c);
        let test_members = ds.test.class_members(c);
        if train_members.is_empty() {
            return Err(Error::Sampling(format!(
                "{}: {} has no members in the original train split",
                ds.name,
                class_label(ds, c)
            )));
        }
        if test_members.is_empty() {
            return Err(Error::Sampling(format!(
                "{}: {} has no members in the original test split",
                ds.name,
                class_label(ds, c)
            )));
        }
        train_indices.extend(draw(&mut rng, &train_members, k));
        test_indices.extend(draw(&mut rng, &test_members, k_query).into_iter().map(|i| i + n_train));
    }
    Ok(FewShotTask {
        dataset: ds.name.clone(),
        seed,
        k,
        k_query,
        train: TrainSplit::new(gather(ds, &train_indices)?),
        test: TestSplit::new(gather(ds, &test_indices)?),
        classes,
        train_indices,
        test_indices,
    })
}

/// Evaluation task holding the complete original splits.
pub fn full_task(ds: &UcrDataset) -> FewShotTask {
    let n_train = ds.train.len();
    let train_indices: Vec<usize> = (0..n_train).collect();
    let test_indices: Vec<usize> = (n_train..n_train + ds.test.len()).collect();
    FewShotTask {
        dataset: ds.name.clone(),
        seed: 0,
        k: 0,
        k_query: 0,
        classes: all_classes(ds),
        train: TrainSplit::new(ds.train.series.clone()),
        test: TestSplit::new(ds.test.series.clone()),
        train_indices,
        test_indices,
    }
}

/// Samples a training-only task with `k` per class from both original
/// splits pooled.
pub fn sample_train_task(ds: &UcrDataset, classes: Option<&[usize]>, k: usize, seed: u64) -> Result<TrainTask> {
    let classes = classes.map_or_else(|| all_classes(ds), <[usize]>::to_vec);
    check_classes(ds, &classes)?;
    let mut rng = rng_from_seed(seed);
    let mut indices = Vec::new();
    for &c in &classes {
        let members = pooled_members(ds, c);
        if members.is_empty() {
            return Err(Error::Sampling(format!("{}: {} is empty", ds.name, class_label(ds, c))));
        }
        indices.extend(draw(&mut rng, &members, k));
    }
    Ok(TrainTask {
        dataset: ds.name.clone(),
        seed,
        k,
        train: TrainSplit::new(gather(ds, &indices)?),
        classes,
        indices,
    })
}

/// Rebuilds a task from its log record without resampling.
pub fn task_from_record(ds: &UcrDataset, record: &TaskRecord) -> Result<FewShotTask> {
    if record.dataset != ds.name {
        return Err(Error::Sampling(format!(
            "record is for dataset {}, not {}",
            record.dataset, ds.name
        )));
    }
    Ok(FewShotTask {
        dataset: ds.name.clone(),
        seed: record.seed,
        k: record.k,
        k_query: record.k_query.unwrap_or(0),
        classes: record.classes.clone(),
        train: TrainSplit::new(gather(ds, &record.train_indices)?),
        test: TestSplit::new(gather(ds, &record.test_indices)?),
        train_indices: record.train_indices.clone(),
        test_indices: record.test_indices.clone(),
    })
}

/// Resamples from the record's seed and checks the indices agree.
pub fn verify_replay(ds: &UcrDataset, record: &TaskRecord) -> Result<()> {
    let replayed = match record.k_query {
        Some(kq) => sample_task(ds, Some(&record.classes), record.k, kq, record.seed)?.record(),
        None => sample_train_task(ds, Some(&record.classes), record.k, record.seed)?.record(),
    };
    if &replayed != record {
        return Err(Error::Sampling(format!(
            "{}: task with seed {} does not replay to the logged indices",
            ds.name, record.seed
        )));
    }
    Ok(())
}

/// An indexable stream of training tasks. `task(i)` must be a pure function
/// of `i` so that parallel callers agree.
pub trait TaskSource: Sync {
    fn task(&self, index: u64) -> Result<TrainTask>;
}

/// Draws a dataset uniformly, then a task with all of its classes.
#[derive(Debug, Clone)]
pub struct MetaSetSampler {
    datasets: Vec<Arc<UcrDataset>>,
    k: usize,
    seed: u64,
}

impl MetaSetSampler {
    pub fn new(datasets: Vec<Arc<UcrDataset>>, k: usize, seed: u64) -> Result<Self> {
        if datasets.is_empty() {
            return Err(Error::Config("meta-set sampler needs at least one dataset".into()));
        }
        if k == 0 {
            return Err(Error::Config("shots per class must be at least 1".into()));
        }
        Ok(Self { datasets, k, seed })
    }

    pub fn datasets(&self) -> &[Arc<UcrDataset>] {
        &self.datasets
    }
}

impl TaskSource for MetaSetSampler {
    fn task(&self, index: u64) -> Result<TrainTask> {
        let task_seed = derive_seed(self.seed, "meta-task", index);
        let mut rng = rng_from_seed(task_seed);
        let ds = &self.datasets[rng.random_range(0..self.datasets.len())];
        sample_train_task(ds, None, self.k, derive_seed(task_seed, &ds.name, index))
    }
}

/// A finite list of tasks; asking past the end is an error.
#[derive(Debug, Clone, Default)]
pub struct FixedTasks(pub Vec<TrainTask>);

impl TaskSource for FixedTasks {
    fn task(&self, index: u64) -> Result<TrainTask> {
        usize::try_from(index)
            .ok()
            .and_then(|i| self.0.get(i))
            .cloned()
            .ok_or_else(|| Error::Sampling(format!("task source exhausted at task {index}")))
    }
}

/// Seed of evaluation task `index` on `dataset`; shared by every method.
pub fn task_seed(run_seed: u64, dataset: &str, index: u64) -> u64 {
    derive_seed(run_seed, dataset, index)
}
