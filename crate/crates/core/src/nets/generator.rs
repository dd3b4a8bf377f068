use rand::Rng;

use super::params::{Cursor, ParamSet};
use crate::error::{Error, Result};
use crate::tensor::{Real, Tape, Tensor, Var};

pub(crate) const INIT_STD: f64 = 0.02;
pub(crate) const NORM_EPS: f64 = 1e-5;

/// Shape of a residual encoder/decoder generator.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GeneratorConfig {
    pub in_channels: usize,
    pub base_channels: usize,
    pub n_downsample: usize,
    pub n_res_blocks: usize,
    pub out_channels: usize,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig { in_channels: 1, base_channels: 32, n_downsample: 2, n_res_blocks: 3, out_channels: 1 }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.in_channels == 0 || self.base_channels == 0 || self.out_channels == 0 {
            return Err(Error::Config("generator channel counts must be positive".into()));
        }
        if self.n_downsample == 0 || self.n_res_blocks == 0 {
            return Err(Error::Config("generator needs at least one downsampling stage and one residual block".into()));
        }
        Ok(())
    }

    /// Spatial dims must be divisible by this.
    pub fn spatial_multiple(&self) -> usize {
        1 << self.n_downsample
    }
}

/// Conv stem, strided downsampling, residual blocks, transposed-conv
/// upsampling and a tanh head. Instance norm everywhere but the head.
#[derive(Clone, Debug, PartialEq)]
pub struct Generator<T: Real = f64> {
    pub config: GeneratorConfig,
    pub params: ParamSet<T>,
}

fn conv_param<T: Real, R: Rng + ?Sized>(
    params: &mut ParamSet<T>,
    name: &str,
    shape: [usize; 4],
    bias_len: usize,
    rng: &mut R,
) {
    params.push(format!("{name}.weight"), Tensor::randn(shape.to_vec(), INIT_STD, rng));
    params.push(format!("{name}.bias"), Tensor::zeros(vec![bias_len]));
}

impl<T: Real> Generator<T> {
    /// Weights drawn from N(0, 0.02), biases zero.
    pub fn new<R: Rng + ?Sized>(config: GeneratorConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let b = config.base_channels;
        let mut p = ParamSet::new();
        conv_param(&mut p, "stem", [b, config.in_channels, 7, 7], b, rng);
        let mut ch = b;
        for i in 0..config.n_downsample {
            conv_param(&mut p, &format!("down{i}"), [ch * 2, ch, 3, 3], ch * 2, rng);
            ch *= 2;
        }
        for i in 0..config.n_res_blocks {
            conv_param(&mut p, &format!("res{i}.conv1"), [ch, ch, 3, 3], ch, rng);
            conv_param(&mut p, &format!("res{i}.conv2"), [ch, ch, 3, 3], ch, rng);
        }
        for i in 0..config.n_downsample {
            // transposed weights are [in, out, kh, kw]
            conv_param(&mut p, &format!("up{i}"), [ch, ch / 2, 3, 3], ch / 2, rng);
            ch /= 2;
        }
        conv_param(&mut p, "head", [config.out_channels, ch, 7, 7], config.out_channels, rng);
        Ok(Generator { config, params: p })
    }

    /// Zeroes the output layer, making the network output identically zero.
    pub fn zero_head(&mut self) {
        for name in ["head.weight", "head.bias"] {
            if let Some(t) = self.params.get_mut(name) {
                t.data_mut().iter_mut().for_each(|v| *v = T::zero());
            }
        }
    }

    pub fn check_input(&self, shape: &[usize]) -> Result<()> {
        let m = self.config.spatial_multiple();
        if shape.len() != 4 || shape[1] != self.config.in_channels {
            return Err(Error::InvalidShape {
                op: "generator",
                shape: shape.to_vec(),
                reason: format!("expected [N, {}, H, W]", self.config.in_channels),
            });
        }
        if !shape[2].is_multiple_of(m) || !shape[3].is_multiple_of(m) {
            return Err(Error::InvalidShape {
                op: "generator",
                shape: shape.to_vec(),
                reason: format!("spatial dims must be divisible by {m}"),
            });
        }
        Ok(())
    }

    /// Forward pass on a tape; `vars` come from `self.params.attach`.
    pub fn forward(&self, tape: &mut Tape<T>, vars: &[Var], x: Var) -> Result<Var> {
        self.check_input(tape.shape(x))?;
        let mut p = Cursor::new(vars);
        let mut h = conv_norm_relu(tape, &mut p, x, 1, 3)?;
        for _ in 0..self.config.n_downsample {
            h = conv_norm_relu(tape, &mut p, h, 2, 1)?;
        }
        for _ in 0..self.config.n_res_blocks {
            let r = conv_norm_relu(tape, &mut p, h, 1, 1)?;
            let (w, b) = (p.take()?, p.take()?);
            let r = tape.conv2d(r, w, Some(b), 1, 1)?;
            let r = tape.instance_norm(r, NORM_EPS)?;
            h = tape.add(h, r)?;
        }
        for _ in 0..self.config.n_downsample {
            let (w, b) = (p.take()?, p.take()?);
            h = tape.conv2d_transpose(h, w, Some(b), 2, 1, 1)?;
            h = tape.instance_norm(h, NORM_EPS)?;
            h = tape.relu(h)?;
        }
        let (w, b) = (p.take()?, p.take()?);
        let out = tape.conv2d(h, w, Some(b), 1, 3)?;
        p.finish()?;
        tape.tanh(out)
    }

    /// Inference on a frozen copy of the parameters.
    pub fn translate(&self, image: &Tensor<T>) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let vars = self.params.attach(&mut tape, false);
        let x = tape.constant(image.clone());
        let y = self.forward(&mut tape, &vars, x)?;
        Ok(tape.value(y).clone())
    }
}

fn conv_norm_relu<T: Real>(tape: &mut Tape<T>, p: &mut Cursor, x: Var, stride: usize, pad: usize) -> Result<Var> {
    let (w, b) = (p.take()?, p.take()?);
    let h = tape.conv2d(x, w, Some(b), stride, pad)?;
    let h = tape.instance_norm(h, NORM_EPS)?;
    tape.relu(h)
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn small() -> GeneratorConfig {
        GeneratorConfig { base_channels: 4, n_res_blocks: 1, ..Default::default() }
    }

    #[test]
    fn output_shape_matches_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let g = Generator::<f64>::new(small(), &mut rng).unwrap();
        let x = Tensor::randn(vec![2, 1, 16, 12], 0.5, &mut rng);
        let y = g.translate(&x).unwrap();
        assert_eq!(y.shape(), x.shape());
        assert!(y.data().iter().all(|v| v.abs() <= 1.0));
    }

    #[test]
    fn zero_head_gives_zero_output() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut g = Generator::<f64>::new(small(), &mut rng).unwrap();
        g.zero_head();
        let x = Tensor::randn(vec![1, 1, 8, 8], 0.5, &mut rng);
        assert!(g.translate(&x).unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn rejects_indivisible_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let g = Generator::<f64>::new(small(), &mut rng).unwrap();
        let x = Tensor::zeros(vec![1, 1, 10, 8]);
        assert!(matches!(g.translate(&x), Err(Error::InvalidShape { .. })));
    }

    #[test]
    fn golden_checksum() {
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let g = Generator::<f64>::new(small(), &mut rng).unwrap();
        let x = Tensor::from_fn(vec![1, 1, 16, 16], |i| ((i * 7919) % 256) as f64 / 127.5 - 1.0).unwrap();
        let y = g.translate(&x).unwrap();
        let sum = y.sum();
        let abs_sum: f64 = y.data().iter().map(|v| v.abs()).sum();
        assert!((sum - GOLDEN_SUM).abs() < 1e-12, "{sum:.17e}");
        assert!((abs_sum - GOLDEN_ABS_SUM).abs() < 1e-12, "{abs_sum:.17e}");
    }

    const GOLDEN_SUM: f64 = -2.695_178_231_176_333;
    const GOLDEN_ABS_SUM: f64 = 29.959_259_320_371_604;
}
