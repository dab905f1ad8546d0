//! Task adaptation, meta-training (FS-1 and FS-2), fine-tuning and 1NN
//! inference over embeddings.

mod config;
mod infer;
mod inner;
mod train;

pub use config::{FineTuneConfig, InnerConfig, InnerOptimizer, MetaConfig};
pub use infer::{classify_1nn, estimate_bn, evaluate_scratch, evaluate_task, finetune, nearest_labels, TaskEvaluation};
pub use inner::{
    inner_solve, iterations_for_task, steps_for_size, stratified_minibatch, train_steps, TaskSolveReport,
    MAX_BATCH_ATTEMPTS,
};
pub use train::{fs1_train, fs2_train, meta_update, IterationRecord, Selection, TrainHooks, TrainOutcome};
