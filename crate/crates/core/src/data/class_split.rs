//! Within-dataset protocol: the class inventory of one dataset is split into
//! disjoint train, validation and test class sets.

use std::sync::Arc;

use rand::seq::index::sample;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::task::{sample_task, sample_train_task, FewShotTask, TaskSource, TrainTask};
use super::ucr::UcrDataset;
use crate::error::{Error, Result};
use crate::seed::{derive_seed, rng_from_seed};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Partition {
    Train,
    Validation,
    Test,
}

impl Partition {
    fn tag(self) -> &'static str {
        match self {
            Partition::Train => "class-split-train",
            Partition::Validation => "class-split-validation",
            Partition::Test => "class-split-test",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassPartition {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
}

impl ClassPartition {
    /// Shuffles the class ids and cuts them into halves and quarters:
    /// `n/2` train, `n/4` validation, the rest test.
    pub fn new(n_classes: usize, seed: u64) -> Self {
        let mut ids: Vec<usize> = (0..n_classes).collect();
        ids.shuffle(&mut rng_from_seed(derive_seed(seed, "class-partition", 0)));
        let n_train = n_classes / 2;
        let n_val = n_classes / 4;
        let mut train = ids[..n_train].to_vec();
        let mut validation = ids[n_train..n_train + n_val].to_vec();
        let mut test = ids[n_train + n_val..].to_vec();
        train.sort_unstable();
        validation.sort_unstable();
        test.sort_unstable();
        Self { train, validation, test }
    }

    pub fn get(&self, part: Partition) -> &[usize] {
        match part {
            Partition::Train => &self.train,
            Partition::Validation => &self.validation,
            Partition::Test => &self.test,
        }
    }
}

/// Emits N-way tasks drawn from one partition of a dataset's classes.
#[derive(Debug, Clone)]
pub struct ClassSplitSampler {
    dataset: Arc<UcrDataset>,
    partition: ClassPartition,
    k: usize,
    n_way: usize,
    seed: u64,
}

impl ClassSplitSampler {
    pub fn new(dataset: Arc<UcrDataset>, k: usize, n_way: usize, seed: u64) -> Result<Self> {
        let partition = ClassPartition::new(dataset.n_classes(), seed);
        for part in [Partition::Train, Partition::Validation, Partition::Test] {
            let size = partition.get(part).len();
            if size < n_way {
                return Err(Error::Sampling(format!(
                    "{}: {part:?} partition has {size} classes, fewer than {n_way}-way",
                    dataset.name
                )));
            }
        }
        if n_way < 2 {
            return Err(Error::Config("class-split tasks need at least 2 ways".into()));
        }
        Ok(Self {
            dataset,
            partition,
            k,
            n_way,
            seed,
        })
    }

    pub fn partition(&self) -> &ClassPartition {
        &self.partition
    }

    pub fn dataset(&self) -> &UcrDataset {
        &self.dataset
    }

    fn draw_classes(&self, part: Partition, index: u64) -> (Vec<usize>, u64) {
        let seed = derive_seed(self.seed, part.tag(), index);
        let pool = self.partition.get(part);
        let mut rng = rng_from_seed(seed);
        let mut classes: Vec<usize> = sample(&mut rng, pool.len(), self.n_way).into_iter().map(|i| pool[i]).collect();
        classes.sort_unstable();
        (classes, derive_seed(seed, "samples", index))
    }

    /// Evaluation task `index` from `part`: `k` shots from the original train
    /// split and `k_query` from the original test split per class.
    pub fn task(&self, part: Partition, index: u64, k_query: usize) -> Result<FewShotTask> {
        let (classes, seed) = self.draw_classes(part, index);
        sample_task(&self.dataset, Some(&classes), self.k, k_query, seed)
    }

    /// Training task `index` from `part`, sampled from both splits pooled.
    pub fn train_task(&self, part: Partition, index: u64) -> Result<TrainTask> {
        let (classes, seed) = self.draw_classes(part, index);
        sample_train_task(&self.dataset, Some(&classes), self.k, seed)
    }

    /// A [`TaskSource`] view over one partition.
    pub fn source(&self, part: Partition) -> PartitionSource<'_> {
        PartitionSource { sampler: self, part }
    }
}

pub struct PartitionSource<'a> {
    sampler: &'a ClassSplitSampler,
    part: Partition,
}

impl TaskSource for PartitionSource<'_> {
    fn task(&self, index: u64) -> Result<TrainTask> {
        self.sampler.train_task(self.part, index)
    }
}
