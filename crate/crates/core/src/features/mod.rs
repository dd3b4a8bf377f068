//! Differentiable per-patch descriptors and the distance between them.

mod cnn_proxy;
mod grid;
mod histogram;

use std::fmt;
use std::str::FromStr;

pub use cnn_proxy::{CnnProxy, ProxyLayer};
pub use grid::PatchGrid;
pub use histogram::{patch_histogram, soft_bin, HistogramConfig};

use crate::error::{Error, Result};
use crate::tensor::{Real, Tape, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ExtractorKind {
    Histogram,
    CnnProxy,
}

impl ExtractorKind {
    pub fn name(self) -> &'static str {
        match self {
            ExtractorKind::Histogram => "histogram",
            ExtractorKind::CnnProxy => "cnn_proxy",
        }
    }
}

impl fmt::Display for ExtractorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ExtractorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "histogram" => Ok(ExtractorKind::Histogram),
            "cnn_proxy" => Ok(ExtractorKind::CnnProxy),
            other => Err(Error::Config(format!("unknown extractor {other:?} (expected histogram or cnn_proxy)"))),
        }
    }
}

/// Patch descriptors for a batch: `values` is `[N, M, D]` on a tape.
#[derive(Clone, Copy, Debug)]
pub struct PatchFeatures {
    pub values: Var,
    pub kind: ExtractorKind,
    pub normalized: bool,
    patch_pixels: usize,
}

impl PatchFeatures {
    /// Wraps an `[N, M, D]` node whose entries are already in `[0, 1]`.
    pub fn normalized_values(values: Var, kind: ExtractorKind) -> Self {
        PatchFeatures { values, kind, normalized: true, patch_pixels: 0 }
    }

    /// Wraps raw `[N, M, D]` descriptors of patches with `patch_pixels` pixels.
    pub fn raw_values(values: Var, kind: ExtractorKind, patch_pixels: usize) -> Self {
        PatchFeatures { values, kind, normalized: false, patch_pixels }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Extractor {
    Histogram(HistogramConfig),
    CnnProxy(CnnProxy),
}

impl Extractor {
    pub fn kind(&self) -> ExtractorKind {
        match self {
            Extractor::Histogram(_) => ExtractorKind::Histogram,
            Extractor::CnnProxy(_) => ExtractorKind::CnnProxy,
        }
    }

    /// Raw descriptors of an `[N, C, H, W]` image.
    pub fn extract<T: Real>(&self, tape: &mut Tape<T>, image: Var, grid: &PatchGrid) -> Result<PatchFeatures> {
        let values = match self {
            Extractor::Histogram(cfg) => patch_histogram(tape, image, grid, cfg)?,
            Extractor::CnnProxy(proxy) => proxy.features(tape, image, grid)?,
        };
        Ok(PatchFeatures { values, kind: self.kind(), normalized: false, patch_pixels: grid.pixels_per_patch() })
    }

    /// Descriptors scaled into `[0, 1]`.
    pub fn features<T: Real>(&self, tape: &mut Tape<T>, image: Var, grid: &PatchGrid) -> Result<PatchFeatures> {
        let raw = self.extract(tape, image, grid)?;
        normalize_features(tape, raw)
    }
}

/// Histograms are divided by the patch pixel count; proxy activations are
/// squashed with `v / (1 + v)`.
pub fn normalize_features<T: Real>(tape: &mut Tape<T>, f: PatchFeatures) -> Result<PatchFeatures> {
    if f.normalized {
        return Err(Error::AlreadyNormalized);
    }
    let values = match f.kind {
        ExtractorKind::Histogram => tape.scalar_mul(f.values, 1.0 / f.patch_pixels as f64)?,
        ExtractorKind::CnnProxy => {
            // v / (1 + v) = 1 - 1 / (1 + v)
            let d = tape.add_scalar(f.values, 1.0)?;
            let r = tape.recip(d)?;
            let r = tape.neg(r)?;
            tape.add_scalar(r, 1.0)?
        }
    };
    Ok(PatchFeatures { values, normalized: true, ..f })
}

/// `[M, D]` descriptors of image `n`.
pub fn image_features<T: Real>(tape: &mut Tape<T>, f: &PatchFeatures, n: usize) -> Result<Var> {
    let s = tape.shape(f.values).to_vec();
    if tape.shape(f.values).len() != 3 {
        return Err(Error::InvalidShape { op: "image_features", shape: s, reason: "expected [N, M, D]".into() });
    }
    let one = tape.index_select(f.values, 0, &[n])?;
    tape.reshape(one, &[s[1], s[2]])
}

/// Mean absolute difference between rows `i` and `j` of `rows` (`[M, D]`),
/// one value per pair, `[K]`.
pub fn row_distances<T: Real>(tape: &mut Tape<T>, rows: Var, pairs: &[(usize, usize)]) -> Result<Var> {
    let (is, js): (Vec<usize>, Vec<usize>) = pairs.iter().copied().unzip();
    let a = tape.index_select(rows, 0, &is)?;
    let b = tape.index_select(rows, 0, &js)?;
    let d = tape.sub(a, b)?;
    let d = tape.abs(d)?;
    tape.mean_axis(d, 1)
}

/// Distances of the given patch pairs within image `n`, `[K]`. Both rows
/// must be normalized, so every distance lies in `[0, 1]`.
pub fn pair_distances<T: Real>(
    tape: &mut Tape<T>,
    f: &PatchFeatures,
    n: usize,
    pairs: &[(usize, usize)],
) -> Result<Var> {
    if !f.normalized {
        return Err(Error::NotNormalized("pair_distances"));
    }
    let rows = image_features(tape, f, n)?;
    row_distances(tape, rows, pairs)
}

/// Distance between patches `i` and `j` of image `n`, a scalar.
pub fn feature_distance<T: Real>(tape: &mut Tape<T>, f: &PatchFeatures, n: usize, i: usize, j: usize) -> Result<Var> {
    let d = pair_distances(tape, f, n, &[(i, j)])?;
    tape.reshape(d, &[])
}
