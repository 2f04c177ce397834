//! Joint training: configuration, the generator/discriminator bundle, the
//! loss accounting, checkpoints and the alternating GAN step.

mod checkpoint;
mod config;
mod duration;
mod loss;
mod model;
mod trainer;

pub use checkpoint::{load_generator, Checkpoint, CheckpointMeta, SCHEMA_VERSION};
pub use config::{lr_at, ModelConfig, RunConfig, TrainingConfig};
pub use duration::{DurationStep, DurationTrainer};
pub use loss::{total_loss, LossComponents, LossParts};
pub use model::{seeded_normal, FnhTts, ModelBundle, Synthesis, MAX_SYNTH_FRAMES};
pub use trainer::{append_ndjson, moving_average, ForwardPass, StepReport, Trainer};
