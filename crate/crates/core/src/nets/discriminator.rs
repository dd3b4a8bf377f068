use rand::Rng;

use super::generator::{INIT_STD, NORM_EPS};
use super::params::{Cursor, ParamSet};
use crate::error::{Error, Result};
use crate::tensor::{Real, Tape, Tensor, Var};

const SLOPE: f64 = 0.2;
const MAX_MULT: usize = 8;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DiscriminatorConfig {
    pub in_channels: usize,
    pub base_channels: usize,
    pub n_layers: usize,
}

impl Default for DiscriminatorConfig {
    fn default() -> Self {
        DiscriminatorConfig { in_channels: 1, base_channels: 32, n_layers: 3 }
    }
}

impl DiscriminatorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.in_channels == 0 || self.base_channels == 0 || self.n_layers == 0 {
            return Err(Error::Config("discriminator sizes must be positive".into()));
        }
        Ok(())
    }

    /// Side of the logit map for a square input of side `n`, if it is non-empty.
    pub fn output_side(&self, n: usize) -> Option<usize> {
        let mut s = n;
        for _ in 0..self.n_layers {
            s = (s + 2).checked_sub(4)? / 2 + 1;
        }
        for _ in 0..2 {
            s = (s + 2).checked_sub(4)? + 1;
        }
        Some(s)
    }

    /// Receptive field side of one logit.
    pub fn receptive_field(&self) -> usize {
        // walk back from one output pixel: two stride-1 k4 layers, then stride-2 k4 layers
        let mut rf = 1;
        for _ in 0..2 {
            rf += 3;
        }
        for _ in 0..self.n_layers {
            rf = (rf - 1) * 2 + 4;
        }
        rf
    }
}

/// Fully convolutional patch discriminator producing a spatial logit map.
#[derive(Clone, Debug, PartialEq)]
pub struct Discriminator<T: Real = f64> {
    pub config: DiscriminatorConfig,
    pub params: ParamSet<T>,
}

impl<T: Real> Discriminator<T> {
    pub fn new<R: Rng + ?Sized>(config: DiscriminatorConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let b = config.base_channels;
        let mut p = ParamSet::new();
        let mut push = |name: String, cout: usize, cin: usize, rng: &mut R| {
            p.push(format!("{name}.weight"), Tensor::randn(vec![cout, cin, 4, 4], INIT_STD, rng));
            p.push(format!("{name}.bias"), Tensor::zeros(vec![cout]));
        };
        push("layer0".into(), b, config.in_channels, rng);
        let mut ch = b;
        for i in 1..=config.n_layers {
            let next = b * (1 << i).min(MAX_MULT);
            let name = if i < config.n_layers { format!("layer{i}") } else { "penult".into() };
            push(name, next, ch, rng);
            ch = next;
        }
        push("logits".into(), 1, ch, rng);
        Ok(Discriminator { config, params: p })
    }

    pub fn forward(&self, tape: &mut Tape<T>, vars: &[Var], x: Var) -> Result<Var> {
        let s = tape.shape(x).to_vec();
        if s.len() != 4 || s[1] != self.config.in_channels {
            return Err(Error::InvalidShape {
                op: "discriminator",
                shape: s,
                reason: format!("expected [N, {}, H, W]", self.config.in_channels),
            });
        }
        let mut p = Cursor::new(vars);
        let (w, b) = (p.take()?, p.take()?);
        let mut h = tape.conv2d(x, w, Some(b), 2, 1)?;
        h = tape.leaky_relu(h, SLOPE)?;
        for i in 1..=self.config.n_layers {
            let stride = if i < self.config.n_layers { 2 } else { 1 };
            let (w, b) = (p.take()?, p.take()?);
            h = tape.conv2d(h, w, Some(b), stride, 1)?;
            h = tape.instance_norm(h, NORM_EPS)?;
            h = tape.leaky_relu(h, SLOPE)?;
        }
        let (w, b) = (p.take()?, p.take()?);
        let out = tape.conv2d(h, w, Some(b), 1, 1)?;
        p.finish()?;
        Ok(out)
    }

    pub fn logits(&self, image: &Tensor<T>) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let vars = self.params.attach(&mut tape, false);
        let x = tape.constant(image.clone());
        let y = self.forward(&mut tape, &vars, x)?;
        Ok(tape.value(y).clone())
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    #[test]
    fn logit_map_is_spatial() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let cfg = DiscriminatorConfig { base_channels: 4, ..Default::default() };
        let d = Discriminator::<f64>::new(cfg, &mut rng).unwrap();
        for side in [32, 48, 64] {
            let x = Tensor::randn(vec![1, 1, side, side], 0.5, &mut rng);
            let y = d.logits(&x).unwrap();
            let o = cfg.output_side(side).unwrap();
            assert_eq!(y.shape(), &[1, 1, o, o]);
            assert!(o > 1);
        }
        assert_eq!(cfg.receptive_field(), 70);
    }

    #[test]
    fn conv_window_is_a_proper_sub_window() {
        // instance-norm statistics are global; locality refers to the conv window
        let cfg = DiscriminatorConfig { n_layers: 2, ..Default::default() };
        assert_eq!(cfg.receptive_field(), 34);
        for side in [48, 64] {
            assert!(cfg.receptive_field() < side);
            assert!(cfg.output_side(side).unwrap() > 1);
        }
        assert!(DiscriminatorConfig::default().output_side(16).is_none());
    }
}
