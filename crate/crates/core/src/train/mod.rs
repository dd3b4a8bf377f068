//! Optimization of the full objective: alternating generator and
//! discriminator updates, Adam, replay buffers and checkpoints.

pub mod checkpoint;
mod config;
mod optim;
mod replay;
mod runner;
mod state;
mod step;

pub use config::{fnv1a, Precision, TrainingConfig};
pub use optim::{grad_norm, lr_schedule, AdamState, ADAM_EPS, BETA1, BETA2};
pub use replay::ReplayBuffer;
pub use runner::{final_checkpoint, run, sample_grid, steps_per_epoch, FINAL_CHECKPOINT, METRICS_FILE, METRICS_HEADER};
pub use state::{build_extractor, ModelState};
pub(crate) use step::generator_pass;
pub use step::{generator_gradients, train_step, StepReport};
