//! Translation generators, patch discriminators and the adversarial/cycle losses.

mod discriminator;
mod generator;
pub mod losses;
mod params;

pub use discriminator::{Discriminator, DiscriminatorConfig};
pub use generator::{Generator, GeneratorConfig};
pub use losses::{cycle_loss, cyclegan_objective, lsgan_d_loss, lsgan_g_loss, lsgan_losses, weighted_sum, LossWeights};
pub use params::ParamSet;
