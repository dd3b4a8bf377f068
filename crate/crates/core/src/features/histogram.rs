use super::grid::PatchGrid;
use crate::error::{Error, Result};
use crate::tensor::{Real, Tape, Var};

/// Soft histogram with triangular bins over a mapped intensity range.
///
/// Images are stored in `[-1, 1]`; before binning they are mapped affinely
/// onto `[lo, hi]` and clamped. Bin `b` (0-based) is centred at
/// `lo + (b + 0.5) * (hi - lo) / B` and falls to zero at the adjacent centres.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HistogramConfig {
    pub n_bins: usize,
    pub lo: f64,
    pub hi: f64,
}

impl Default for HistogramConfig {
    fn default() -> Self {
        HistogramConfig { n_bins: 16, lo: 0.0, hi: 255.0 }
    }
}

impl HistogramConfig {
    pub fn new(n_bins: usize, lo: f64, hi: f64) -> Result<Self> {
        if n_bins == 0 || !lo.is_finite() || !hi.is_finite() || hi <= lo {
            return Err(Error::Config(format!("bad histogram range {n_bins} bins over [{lo}, {hi}]")));
        }
        Ok(HistogramConfig { n_bins, lo, hi })
    }

    pub fn center(&self, b: usize) -> f64 {
        self.lo + (b as f64 + 0.5) * (self.hi - self.lo) / self.n_bins as f64
    }

    pub fn centers(&self) -> Vec<f64> {
        (0..self.n_bins).map(|b| self.center(b)).collect()
    }

    /// Inverse bin width, shared by every bin.
    pub fn inv_width(&self) -> f64 {
        self.n_bins as f64 / (self.hi - self.lo)
    }

    /// Maps an internal `[-1, 1]` value onto the binning range (unclamped).
    pub fn to_mapped(&self, v: f64) -> f64 {
        self.lo + (v + 1.0) * 0.5 * (self.hi - self.lo)
    }

    /// Inverse of [`HistogramConfig::to_mapped`].
    pub fn to_internal(&self, mapped: f64) -> f64 {
        (mapped - self.lo) / (self.hi - self.lo) * 2.0 - 1.0
    }
}

/// Vote of a mapped value for bin `b` (0-based): `max(0, 1 - |v - center| * inv_width)`.
pub fn soft_bin(v: f64, b: usize, cfg: &HistogramConfig) -> f64 {
    (1.0 - (v - cfg.center(b)).abs() * cfg.inv_width()).max(0.0)
}

/// Unnormalized per-patch histograms of an `[N, C, H, W]` image in internal
/// units. Returns `[N, M, C * B]`, column `c * B + b`.
pub fn patch_histogram<T: Real>(
    tape: &mut Tape<T>,
    image: Var,
    grid: &PatchGrid,
    cfg: &HistogramConfig,
) -> Result<Var> {
    grid.check(tape.shape(image))?;
    let (n, c) = (tape.shape(image)[0], tape.shape(image)[1]);
    let half_span = 0.5 * (cfg.hi - cfg.lo);
    let mapped = tape.scalar_mul(image, half_span)?;
    let mapped = tape.add_scalar(mapped, cfg.lo + half_span)?;
    let mapped = tape.clamp(mapped, cfg.lo, cfg.hi)?;
    let patches = tape.patch_extract(mapped, grid.patch)?;
    let patches = sort_within_patches(tape, patches)?;
    let m = grid.len();
    let w = cfg.inv_width();
    let mut bins = Vec::with_capacity(cfg.n_bins);
    for b in 0..cfg.n_bins {
        let d = tape.add_scalar(patches, -cfg.center(b))?;
        let d = tape.abs(d)?;
        let d = tape.scalar_mul(d, -w)?;
        let d = tape.add_scalar(d, 1.0)?;
        let vote = tape.max_with_zero(d)?;
        let count = tape.sum_axis(vote, 3)?;
        bins.push(tape.reshape(count, &[n, m, c, 1])?);
    }
    let h = tape.concat(&bins, 3)?;
    tape.reshape(h, &[n, m, c * cfg.n_bins])
}

/// Reorders each `[.., P*P]` patch row by value so the vote sums run in a
/// canonical order and the histogram is exactly invariant to pixel order.
fn sort_within_patches<T: Real>(tape: &mut Tape<T>, patches: Var) -> Result<Var> {
    let shape = tape.shape(patches).to_vec();
    let len = shape[3];
    let data = tape.data(patches);
    let mut order: Vec<usize> = (0..data.len()).collect();
    for row in order.chunks_mut(len) {
        row.sort_by(|&i, &j| data[i].f64().total_cmp(&data[j].f64()));
    }
    let flat = tape.reshape(patches, &[data.len()])?;
    let sorted = tape.index_select(flat, 0, &order)?;
    tape.reshape(sorted, &shape)
}
