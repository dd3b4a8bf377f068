use std::io::{Read, Write};
use std::path::Path;

use rand::Rng;

use super::grid::PatchGrid;
use crate::error::{Error, Result};
use crate::tensor::{Real, Tape, Tensor, Var};

const MAGIC: &[u8; 4] = b"HGFW";
const VERSION: u32 = 1;

/// One frozen convolution of the proxy extractor.
#[derive(Clone, Debug, PartialEq)]
pub struct ProxyLayer {
    /// `[out, in, kh, kw]`
    pub weight: Tensor<f64>,
    pub bias: Tensor<f64>,
    pub stride: usize,
    pub pad: usize,
}

/// Fixed-weight convolutional feature extractor. Each layer is followed by a
/// relu; the total stride equals the patch size so every output column lines
/// up with one grid patch.
#[derive(Clone, Debug, PartialEq)]
pub struct CnnProxy {
    pub layers: Vec<ProxyLayer>,
}

impl CnnProxy {
    /// Three stride-2 3x3 convs and a 1x1 conv, He-initialized from `rng`.
    pub fn seeded<R: Rng + ?Sized>(in_channels: usize, out_channels: usize, rng: &mut R) -> Self {
        let widths = [in_channels, 16, 32, out_channels, out_channels];
        let mut layers = Vec::new();
        for i in 0..4 {
            let (cin, cout) = (widths[i], widths[i + 1]);
            let (k, stride, pad) = if i < 3 { (3, 2, 1) } else { (1, 1, 0) };
            let std = (2.0 / (cin * k * k) as f64).sqrt();
            layers.push(ProxyLayer {
                weight: Tensor::randn(vec![cout, cin, k, k], std, rng),
                bias: Tensor::zeros(vec![cout]),
                stride,
                pad,
            });
        }
        CnnProxy { layers }
    }

    pub fn total_stride(&self) -> usize {
        self.layers.iter().map(|l| l.stride).product()
    }

    pub fn in_channels(&self) -> usize {
        self.layers.first().map_or(0, |l| l.weight.shape()[1])
    }

    pub fn out_channels(&self) -> usize {
        self.layers.last().map_or(0, |l| l.weight.shape()[0])
    }

    /// Unnormalized features `[N, M, D]` (post-relu activations).
    pub fn features<T: Real>(&self, tape: &mut Tape<T>, image: Var, grid: &PatchGrid) -> Result<Var> {
        grid.check(tape.shape(image))?;
        if self.total_stride() != grid.patch {
            return Err(Error::invalid(format!(
                "proxy stride {} does not match patch size {}",
                self.total_stride(),
                grid.patch
            )));
        }
        let n = tape.shape(image)[0];
        let mut h = image;
        for layer in &self.layers {
            let w = tape.constant(layer.weight.cast());
            let b = tape.constant(layer.bias.cast());
            h = tape.conv2d(h, w, Some(b), layer.stride, layer.pad)?;
            h = tape.relu(h)?;
        }
        let d = self.out_channels();
        let flat = tape.reshape(h, &[n, d, grid.len()])?;
        tape.permute(flat, &[0, 2, 1])
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.layers.len() as u32).to_le_bytes());
        for l in &self.layers {
            let s = l.weight.shape();
            for v in [s[0], s[1], s[2], s[3], l.stride, l.pad] {
                out.extend_from_slice(&(v as u32).to_le_bytes());
            }
        }
        for l in &self.layers {
            for v in l.weight.data().iter().chain(l.bias.data()) {
                out.extend_from_slice(&(*v as f32).to_le_bytes());
            }
        }
        std::fs::File::create(path)?.write_all(&out)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        let mut r = Reader { bytes: &bytes, pos: 0, path };
        if r.take(4)? != MAGIC {
            return Err(Error::format(path, "bad magic, not an extractor-weights file"));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::format(path, format!("unsupported version {version}")));
        }
        let count = r.u32()? as usize;
        if count == 0 || count > 64 {
            return Err(Error::format(path, format!("implausible layer count {count}")));
        }
        let mut shapes = Vec::with_capacity(count);
        for _ in 0..count {
            let mut s = [0usize; 6];
            for v in &mut s {
                *v = r.u32()? as usize;
            }
            if s[..5].contains(&0) {
                return Err(Error::format(path, "zero-sized layer dimension"));
            }
            shapes.push(s);
        }
        let mut layers = Vec::with_capacity(count);
        for (i, s) in shapes.iter().enumerate() {
            if i > 0 && s[1] != shapes[i - 1][0] {
                return Err(Error::format(path, format!("layer {i} input channels do not chain")));
            }
            let weight = Tensor::new(vec![s[0], s[1], s[2], s[3]], r.f32s(s[0] * s[1] * s[2] * s[3])?)
                .map_err(|e| Error::format(path, e.to_string()))?;
            let bias = Tensor::new(vec![s[0]], r.f32s(s[0])?).map_err(|e| Error::format(path, e.to_string()))?;
            layers.push(ProxyLayer { weight, bias, stride: s[4], pad: s[5] });
        }
        if r.pos != bytes.len() {
            return Err(Error::format(path, "trailing bytes"));
        }
        Ok(CnnProxy { layers })
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::format(self.path, "truncated file"))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f64>> {
        let raw = self.take(n.checked_mul(4).ok_or_else(|| Error::format(self.path, "size overflow"))?)?;
        Ok(raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64).collect())
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    #[test]
    fn weights_file_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let proxy = CnnProxy::seeded(1, 8, &mut rng);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("proxy.bin");
        proxy.save(&path).unwrap();
        let back = CnnProxy::load(&path).unwrap();
        for (a, b) in proxy.layers.iter().zip(&back.layers) {
            assert_eq!(a.stride, b.stride);
            assert!(a.weight.max_abs_diff(&b.weight) < 1e-6);
        }
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[0] = b'X';
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(CnnProxy::load(&path), Err(Error::Format { .. })));
        bytes[0] = b'H';
        bytes.truncate(bytes.len() - 3);
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(CnnProxy::load(&path), Err(Error::Format { .. })));
    }

    #[test]
    fn features_are_deterministic_and_grid_aligned() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let proxy = CnnProxy::seeded(1, 8, &mut rng);
        let img = Tensor::<f64>::randn(vec![1, 1, 16, 24], 0.5, &mut rng);
        let grid = PatchGrid::new(16, 24, 8).unwrap();
        let run = || {
            let mut tape = Tape::new();
            let x = tape.constant(img.clone());
            let f = proxy.features(&mut tape, x, &grid).unwrap();
            tape.value(f).clone()
        };
        let a = run();
        assert_eq!(a.shape(), &[1, 6, 8]);
        assert_eq!(a, run());
        let bad = PatchGrid::new(16, 24, 4).unwrap();
        let mut tape = Tape::new();
        let x = tape.constant(img.clone());
        assert!(proxy.features(&mut tape, x, &bad).is_err());
    }
}
