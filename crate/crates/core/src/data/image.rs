use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// 8-bit image, channel-planar (`[C, H, W]`).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Image8 {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<u8>,
}

impl Image8 {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<u8>) -> Result<Self> {
        if !(channels == 1 || channels == 3) || height == 0 || width == 0 {
            return Err(Error::invalid(format!("unsupported image {channels}x{height}x{width}")));
        }
        if data.len() != channels * height * width {
            return Err(Error::invalid("image buffer length does not match dims"));
        }
        Ok(Image8 { channels, height, width, data })
    }

    pub fn filled(channels: usize, height: usize, width: usize, v: u8) -> Self {
        Image8 { channels, height, width, data: vec![v; channels * height * width] }
    }

    pub fn area(&self) -> usize {
        self.height * self.width
    }

    /// Pixel values as `f64` in `[0, 255]`.
    pub fn to_f64(&self) -> Vec<f64> {
        self.data.iter().map(|&v| v as f64).collect()
    }

    /// `[1, C, H, W]` tensor in internal units `[-1, 1]`.
    pub fn to_tensor<T: Real>(&self) -> Tensor<T> {
        let data = self.data.iter().map(|&v| T::of(v as f64 / 127.5 - 1.0)).collect();
        Tensor::new(vec![1, self.channels, self.height, self.width], data).expect("image dims are positive")
    }

    /// Quantizes batch item 0 of an internal-unit tensor.
    pub fn from_tensor<T: Real>(t: &Tensor<T>) -> Result<Self> {
        let s = t.shape();
        if s.len() != 4 || s[0] != 1 {
            return Err(Error::InvalidShape {
                op: "image_from_tensor",
                shape: s.to_vec(),
                reason: "expected [1, C, H, W]".into(),
            });
        }
        let data = t.data().iter().map(|&v| to_u8((v.f64() + 1.0) * 127.5)).collect();
        Image8::new(s[1], s[2], s[3], data)
    }

    /// Channel-mean intensity of each pixel in `[0, 1]`.
    pub fn intensity(&self) -> Vec<f64> {
        let area = self.area();
        (0..area)
            .map(|i| {
                (0..self.channels).map(|c| self.data[c * area + i] as f64).sum::<f64>() / (self.channels as f64 * 255.0)
            })
            .collect()
    }

    /// Binary PGM (one channel) or PPM (three channels).
    pub fn write_pnm(&self, path: &Path) -> Result<()> {
        let mut out = Vec::with_capacity(self.data.len() + 32);
        let magic = if self.channels == 1 { "P5" } else { "P6" };
        write!(out, "{magic}\n{} {}\n255\n", self.width, self.height)?;
        if self.channels == 1 {
            out.extend_from_slice(&self.data);
        } else {
            let area = self.area();
            for i in 0..area {
                for c in 0..3 {
                    out.push(self.data[c * area + i]);
                }
            }
        }
        std::fs::write(path, out)?;
        Ok(())
    }

    pub fn read_pnm(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        let mut r = BufReader::new(file);
        let bad = |why: &str| Error::format(path, why.to_string());
        let mut fields = Vec::new();
        while fields.len() < 4 {
            let mut line = String::new();
            if r.read_line(&mut line)? == 0 {
                return Err(bad("truncated header"));
            }
            let line = line.split('#').next().unwrap_or("");
            fields.extend(line.split_whitespace().map(str::to_owned));
        }
        if fields.len() > 4 {
            return Err(bad("unexpected data after header"));
        }
        let channels = match fields[0].as_str() {
            "P5" => 1,
            "P6" => 3,
            _ => return Err(bad("only binary P5/P6 images are supported")),
        };
        let num = |s: &str| s.parse::<usize>().map_err(|_| bad("bad header number"));
        let (width, height, maxval) = (num(&fields[1])?, num(&fields[2])?, num(&fields[3])?);
        if maxval != 255 {
            return Err(bad("only 8-bit images (maxval 255) are supported"));
        }
        if width == 0 || height == 0 || width > 1 << 15 || height > 1 << 15 {
            return Err(bad("implausible image size"));
        }
        let mut raw = vec![0u8; channels * width * height];
        r.read_exact(&mut raw).map_err(|_| bad("truncated pixel data"))?;
        let data = if channels == 1 {
            raw
        } else {
            let area = width * height;
            let mut planar = vec![0u8; raw.len()];
            for i in 0..area {
                for c in 0..3 {
                    planar[c * area + i] = raw[i * 3 + c];
                }
            }
            planar
        };
        Image8::new(channels, height, width, data)
    }
}

pub(crate) fn to_u8(v: f64) -> u8 {
    v.round().clamp(0.0, 255.0) as u8
}

/// Tiles same-sized images left to right into one image.
pub fn hstack(images: &[Image8]) -> Result<Image8> {
    let first = images.first().ok_or_else(|| Error::invalid("nothing to tile"))?;
    let (c, h, w) = (first.channels, first.height, first.width);
    if images.iter().any(|i| (i.channels, i.height, i.width) != (c, h, w)) {
        return Err(Error::invalid("tiled images must share dims"));
    }
    let total_w = w * images.len();
    let mut data = vec![0u8; c * h * total_w];
    for (k, img) in images.iter().enumerate() {
        for ch in 0..c {
            for y in 0..h {
                let src = &img.data[(ch * h + y) * w..(ch * h + y + 1) * w];
                let dst = (ch * h + y) * total_w + k * w;
                data[dst..dst + w].copy_from_slice(src);
            }
        }
    }
    Image8::new(c, h, total_w, data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pnm_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        for c in [1, 3] {
            let data = (0..c * 5 * 7).map(|i| (i * 37 % 256) as u8).collect();
            let img = Image8::new(c, 5, 7, data).unwrap();
            let p = dir.path().join(format!("x{c}.pnm"));
            img.write_pnm(&p).unwrap();
            assert_eq!(Image8::read_pnm(&p).unwrap(), img);
        }
        let p = dir.path().join("bad.pgm");
        std::fs::write(&p, b"P5\n4 4\n255\nab").unwrap();
        assert!(matches!(Image8::read_pnm(&p), Err(Error::Format { .. })));
    }

    #[test]
    fn tensor_round_trip_is_exact() {
        let img = Image8::new(1, 2, 128, (0..=255).collect()).unwrap();
        let t = img.to_tensor::<f64>();
        assert_eq!(Image8::from_tensor(&t).unwrap(), img);
        let t32 = img.to_tensor::<f32>();
        assert_eq!(Image8::from_tensor(&t32).unwrap(), img);
    }
}
