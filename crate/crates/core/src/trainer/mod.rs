//! Pretraining: schedule, optimizer, training step, persistence and
//! feature extraction.

mod adam;
mod checkpoint;
mod container;
mod extract;
mod schedule;
mod step;

pub use adam::{adam_step, clip_global_norm, global_norm, AdamHyper, AdamState};
pub use checkpoint::{Checkpoint, TrainState};
pub use container::{NamedTensors, StoredTensor, FORMAT_VERSION, MAGIC};
pub use extract::{encode_utterances, extract_features};
pub use schedule::{lr_at, TrainConfig};
pub use step::{epoch_order, steps_per_epoch, train, train_step, PreparedView, StepMetrics, Utterance, ViewPipeline};
