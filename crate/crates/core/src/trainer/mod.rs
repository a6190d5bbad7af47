//! Trainable heads over fixed embeddings: projection, contrastive objective,
//! hard-negative queue, and the per-module training loop.

mod head;
mod loss;
mod optim;
mod queue;
mod train;

pub use head::{Forward, Mechanisms, ModuleHead, ModuleId, RVHD_HEADER_LEN, RVHD_MAGIC, RVHD_VERSION};
pub use loss::{batch_objective, contrastive_loss, Batch, BatchLoss, Gradients, QueueSource};
pub use optim::Adam;
pub use queue::{is_eligible, select_hard_negatives, HardNegativeQueue, QueueEntry, DEFAULT_QUEUE_CAPACITY};
pub use train::{
    evaluate_head, train_module, train_with_mechanisms, EpochRecord, LabeledRows, TrainConfig, TrainOutcome,
    TrainReport, TrainingInputs,
};
