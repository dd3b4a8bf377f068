//! Synthetic two-domain scenes with exact pixel correspondence.
//!
//! Domain A: dark background, mid-grey textured tissue, optional bright
//! elliptical lesion. Domain B renders the same scene with inverted contrast
//! plus a fixed high-frequency texture, so the lesion appears dark.

use std::f64::consts::TAU;
use std::fmt;
use std::str::FromStr;

use rand::Rng;

use super::image::{to_u8, Image8};
use crate::error::{Error, Result};
use crate::rng::{substream, Stream};

/// Spatial dims must be a multiple of this (patch size 8 and 2 downsamplings).
pub const SIZE_MULTIPLE: usize = 8;

/// Channel-mean intensity above which a domain-A pixel is lesion.
pub const LESION_MIN_A: f64 = 0.7;
/// Channel-mean intensity below which a domain-B pixel is lesion.
pub const LESION_MAX_B: f64 = 0.35;

const TINT: [f64; 3] = [1.0, 0.95, 0.9];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Domain {
    A,
    B,
}

impl Domain {
    pub fn other(self) -> Domain {
        match self {
            Domain::A => Domain::B,
            Domain::B => Domain::A,
        }
    }

    /// Lesion pixels of an image from this domain, by the rendering thresholds.
    pub fn lesion_pixels(self, img: &Image8) -> Vec<bool> {
        img.intensity()
            .into_iter()
            .map(|v| match self {
                Domain::A => v > LESION_MIN_A,
                Domain::B => v < LESION_MAX_B,
            })
            .collect()
    }
}

impl fmt::Display for Domain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Domain::A => "a",
            Domain::B => "b",
        })
    }
}

impl FromStr for Domain {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "a" | "A" => Ok(Domain::A),
            "b" | "B" => Ok(Domain::B),
            _ => Err(Error::invalid(format!("unknown domain {s:?}"))),
        }
    }
}

/// One rendered scene in both domains.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticSample {
    pub scene: u64,
    pub image_a: Image8,
    pub image_b: Image8,
    /// Single channel, 255 inside the lesion.
    pub lesion_mask: Image8,
    pub has_lesion: bool,
}

impl SyntheticSample {
    pub fn image(&self, d: Domain) -> &Image8 {
        match d {
            Domain::A => &self.image_a,
            Domain::B => &self.image_b,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SynthConfig {
    pub n_train: usize,
    pub n_test: usize,
    pub size: usize,
    pub channels: usize,
    pub lesion_prob: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig { n_train: 400, n_test: 100, size: 64, channels: 1, lesion_prob: 0.5, seed: 0 }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.size == 0 || !self.size.is_multiple_of(SIZE_MULTIPLE) {
            return Err(Error::Config(format!(
                "image size {} must be a positive multiple of {SIZE_MULTIPLE}",
                self.size
            )));
        }
        if !(0.0..=1.0).contains(&self.lesion_prob) {
            return Err(Error::Config(format!("lesion probability {} outside [0, 1]", self.lesion_prob)));
        }
        if !(self.channels == 1 || self.channels == 3) {
            return Err(Error::Config(format!("channels must be 1 or 3, got {}", self.channels)));
        }
        if self.n_train == 0 {
            return Err(Error::Config("n_train must be positive".into()));
        }
        Ok(())
    }
}

/// Unpaired training pools and paired test scenes, all from disjoint scenes.
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetSplit {
    pub train_a: Vec<SyntheticSample>,
    pub train_b: Vec<SyntheticSample>,
    pub test: Vec<SyntheticSample>,
}

/// Scenes `0..n` feed domain A, `n..2n` domain B, the next `n_test` the test pairs.
pub fn gen_synthetic_dataset(cfg: &SynthConfig) -> Result<DatasetSplit> {
    cfg.validate()?;
    let n = cfg.n_train as u64;
    let render = |k: u64| render_scene(cfg, k);
    Ok(DatasetSplit {
        train_a: (0..n).map(render).collect(),
        train_b: (n..2 * n).map(render).collect(),
        test: (2 * n..2 * n + cfg.n_test as u64).map(render).collect(),
    })
}

struct Ellipse {
    cx: f64,
    cy: f64,
    rx: f64,
    ry: f64,
    angle: f64,
}

impl Ellipse {
    fn contains(&self, x: f64, y: f64) -> bool {
        let (s, c) = self.angle.sin_cos();
        let (dx, dy) = (x - self.cx, y - self.cy);
        let u = (c * dx + s * dy) / self.rx;
        let v = (-s * dx + c * dy) / self.ry;
        u * u + v * v <= 1.0
    }
}

/// Sum of a few random low-frequency waves, in `[-1, 1]`.
struct Waves(Vec<(f64, f64, f64)>);

impl Waves {
    fn random<R: Rng>(rng: &mut R, size: f64) -> Self {
        Waves(
            (0..3)
                .map(|_| {
                    let f = rng.random_range(0.5..2.0) * TAU / size;
                    let dir = rng.random_range(0.0..TAU);
                    (f * dir.cos(), f * dir.sin(), rng.random_range(0.0..TAU))
                })
                .collect(),
        )
    }

    fn at(&self, x: f64, y: f64) -> f64 {
        self.0.iter().map(|(fx, fy, p)| (fx * x + fy * y + p).sin()).sum::<f64>() / self.0.len() as f64
    }
}

/// Fixed high-frequency texture of domain B, in `[-1, 1]`.
fn b_texture(x: usize, y: usize) -> f64 {
    let (x, y) = (x as f64, y as f64);
    0.5 * ((2.1 * x + 0.9 * y).sin() + (2.9 * y - 1.1 * x).cos())
}

/// The ground-truth A-to-B rendering rule, applied per channel.
pub fn render_b(a: &Image8) -> Image8 {
    let area = a.area();
    let data = a
        .data
        .iter()
        .enumerate()
        .map(|(k, &v)| {
            let i = k % area;
            let (y, x) = (i / a.width, i % a.width);
            let b = 0.95 - 0.9 * (v as f64 / 255.0) + 0.08 * b_texture(x, y);
            to_u8(b.clamp(0.0, 1.0) * 255.0)
        })
        .collect();
    Image8 { data, ..a.clone() }
}

/// Renders scene `scene` of the dataset described by `cfg`.
pub fn render_scene(cfg: &SynthConfig, scene: u64) -> SyntheticSample {
    let mut rng = substream(cfg.seed, Stream::Data, scene);
    let s = cfg.size as f64;
    let tissue = Ellipse {
        cx: s * rng.random_range(0.42..0.58),
        cy: s * rng.random_range(0.42..0.58),
        rx: s * rng.random_range(0.30..0.42),
        ry: s * rng.random_range(0.30..0.42),
        angle: rng.random_range(0.0..TAU),
    };
    let inner = Ellipse {
        cx: tissue.cx + s * rng.random_range(-0.08..0.08),
        cy: tissue.cy + s * rng.random_range(-0.08..0.08),
        rx: s * rng.random_range(0.06..0.14),
        ry: s * rng.random_range(0.06..0.14),
        angle: rng.random_range(0.0..TAU),
    };
    let texture = Waves::random(&mut rng, s);
    let shade = Waves::random(&mut rng, s);
    let has_lesion = rng.random_bool(cfg.lesion_prob);
    let lesion = {
        let t = rng.random_range(0.0..TAU);
        let r = rng.random_range(0.0..0.5);
        Ellipse {
            cx: tissue.cx + r * tissue.rx * t.cos(),
            cy: tissue.cy + r * tissue.ry * t.sin(),
            rx: (s * rng.random_range(0.06..0.14)).max(1.0),
            ry: (s * rng.random_range(0.06..0.14)).max(1.0),
            angle: rng.random_range(0.0..TAU),
        }
    };
    let area = cfg.size * cfg.size;
    let mut base = vec![0.0; area];
    let mut mask = vec![0u8; area];
    for y in 0..cfg.size {
        for x in 0..cfg.size {
            let (fx, fy) = (x as f64 + 0.5, y as f64 + 0.5);
            let i = y * cfg.size + x;
            base[i] = if has_lesion && lesion.contains(fx, fy) {
                mask[i] = 255;
                0.88 + 0.04 * texture.at(fx, fy)
            } else if inner.contains(fx, fy) {
                0.18 + 0.03 * shade.at(fx, fy)
            } else if tissue.contains(fx, fy) {
                0.32 + 0.11 * texture.at(fx, fy) + 0.02 * shade.at(fx, fy)
            } else {
                0.025 + 0.02 * shade.at(fx, fy)
            };
        }
    }
    let mut a = Vec::with_capacity(area * cfg.channels);
    for &tint in TINT.iter().take(cfg.channels) {
        a.extend(base.iter().map(|v| to_u8(v * tint * 255.0)));
    }
    let image_a = Image8 { channels: cfg.channels, height: cfg.size, width: cfg.size, data: a };
    let image_b = render_b(&image_a);
    let lesion_mask = Image8 { channels: 1, height: cfg.size, width: cfg.size, data: mask };
    SyntheticSample { scene, image_a, image_b, lesion_mask, has_lesion }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(lesion_prob: f64) -> SynthConfig {
        SynthConfig { n_train: 6, n_test: 4, size: 32, lesion_prob, ..Default::default() }
    }

    #[test]
    fn lesion_rule_matches_mask_in_both_domains() {
        for channels in [1, 3] {
            let cfg = SynthConfig { channels, ..small(1.0) };
            let d = gen_synthetic_dataset(&cfg).unwrap();
            for s in d.test.iter().chain(&d.train_a) {
                assert!(s.has_lesion);
                let want: Vec<bool> = s.lesion_mask.data.iter().map(|&v| v == 255).collect();
                assert!(want.iter().any(|&v| v));
                assert_eq!(Domain::A.lesion_pixels(&s.image_a), want);
                assert_eq!(Domain::B.lesion_pixels(&s.image_b), want);
            }
        }
    }

    #[test]
    fn no_lesions_when_probability_zero() {
        let d = gen_synthetic_dataset(&small(0.0)).unwrap();
        for s in d.train_a.iter().chain(&d.train_b).chain(&d.test) {
            assert!(!s.has_lesion);
            assert!(s.lesion_mask.data.iter().all(|&v| v == 0));
        }
    }

    #[test]
    fn b_is_the_rendering_rule_of_a() {
        let d = gen_synthetic_dataset(&small(0.5)).unwrap();
        for s in &d.test {
            assert_eq!(render_b(&s.image_a), s.image_b);
        }
        assert_eq!(d, gen_synthetic_dataset(&small(0.5)).unwrap());
        assert!(gen_synthetic_dataset(&SynthConfig { size: 36, ..small(0.5) }).is_err());
    }
}
