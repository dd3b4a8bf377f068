use super::config::TrainingConfig;
use super::optim::AdamState;
use super::replay::ReplayBuffer;
use crate::error::Result;
use crate::features::{CnnProxy, Extractor, ExtractorKind, HistogramConfig};
use crate::nets::{Discriminator, Generator};
use crate::rng::{substream, Stream};
use crate::tensor::Real;

/// Everything a training run mutates, plus the frozen feature extractor.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelState<T: Real = f64> {
    pub config: TrainingConfig,
    /// A -> B.
    pub g: Generator<T>,
    /// B -> A.
    pub f: Generator<T>,
    /// Judges domain A.
    pub dx: Discriminator<T>,
    /// Judges domain B.
    pub dy: Discriminator<T>,
    pub adam_g: AdamState<T>,
    pub adam_f: AdamState<T>,
    pub adam_dx: AdamState<T>,
    pub adam_dy: AdamState<T>,
    /// Generated domain-A images shown to `dx`.
    pub pool_a: ReplayBuffer<T>,
    /// Generated domain-B images shown to `dy`.
    pub pool_b: ReplayBuffer<T>,
    /// Completed training steps.
    pub step: u64,
    pub extractor: Extractor,
}

pub fn build_extractor(config: &TrainingConfig) -> Result<Extractor> {
    Ok(match config.extractor {
        ExtractorKind::Histogram => Extractor::Histogram(HistogramConfig::new(config.hist_bins, 0.0, 255.0)?),
        ExtractorKind::CnnProxy => Extractor::CnnProxy(match &config.proxy_weights {
            Some(path) => CnnProxy::load(path)?,
            None => {
                CnnProxy::seeded(config.channels, config.proxy_channels, &mut substream(config.seed, Stream::Init, 1))
            }
        }),
    })
}

impl<T: Real> ModelState<T> {
    /// Fresh networks initialized from the `init` stream of `config.seed`.
    /// `epochs_constant` is resolved so that checkpoints record it.
    pub fn new(mut config: TrainingConfig) -> Result<Self> {
        config.validate()?;
        config.epochs_constant = Some(config.constant_epochs());
        let mut rng = substream(config.seed, Stream::Init, 0);
        let g = Generator::new(config.generator(), &mut rng)?;
        let f = Generator::new(config.generator(), &mut rng)?;
        let dx = Discriminator::new(config.discriminator(), &mut rng)?;
        let dy = Discriminator::new(config.discriminator(), &mut rng)?;
        let extractor = build_extractor(&config)?;
        Ok(ModelState {
            adam_g: AdamState::new(&g.params),
            adam_f: AdamState::new(&f.params),
            adam_dx: AdamState::new(&dx.params),
            adam_dy: AdamState::new(&dy.params),
            pool_a: ReplayBuffer::new(config.replay_buffer_size),
            pool_b: ReplayBuffer::new(config.replay_buffer_size),
            g,
            f,
            dx,
            dy,
            step: 0,
            extractor,
            config,
        })
    }
}
