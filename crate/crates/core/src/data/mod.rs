//! Dataset ingestion, normalization, meta-set splits and task sampling.

pub mod class_split;
pub mod manifest;
mod normalize;
pub mod synthetic;
pub mod task;
pub mod ucr;

pub use class_split::{ClassPartition, ClassSplitSampler, Partition};
pub use manifest::{parse_manifest, split_meta_sets, MetaSetSplit};
pub use normalize::{znormalize, STD_FLOOR};
pub use task::{
    full_task, sample_task, sample_train_task, task_from_record, task_seed, verify_replay, FewShotTask, FixedTasks,
    MetaSetSampler, TaskRecord, TaskSource, TestSplit, TrainSplit, TrainTask,
};
pub use ucr::{parse_ucr_file, parse_ucr_str, Dataset, Delimiter, ParseError, ParseOptions, Provenance, TimeSeries, UcrDataset};

use crate::error::Result;

/// Parses a task log: one [`TaskRecord`] per line.
pub fn parse_task_log(text: &str) -> Result<Vec<TaskRecord>> {
    crate::jsonl::parse_jsonl(text)
}
