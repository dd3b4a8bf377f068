//! Image-quality metrics on `[0, 255]` pixel values.

use super::image::Image8;
use super::synth::Domain;
use crate::error::{Error, Result};
use crate::features::{row_distances, Extractor, PatchGrid};
use crate::tensor::Tape;

pub const PSNR_CAP: f64 = 99.0;
pub const SSIM_WINDOW: usize = 8;

fn check(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::invalid(format!("metric inputs of length {} and {}", a.len(), b.len())));
    }
    Ok(())
}

pub fn mae(a: &[f64], b: &[f64]) -> Result<f64> {
    check(a, b)?;
    Ok(a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.len() as f64)
}

pub fn mse(a: &[f64], b: &[f64]) -> Result<f64> {
    check(a, b)?;
    Ok(a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64)
}

/// `10 log10(peak^2 / mse)`, capped at 99 dB.
pub fn psnr_from_mse(mse: f64, peak: f64) -> f64 {
    if mse <= 0.0 {
        return PSNR_CAP;
    }
    (10.0 * (peak * peak / mse).log10()).min(PSNR_CAP)
}

pub fn psnr(a: &[f64], b: &[f64], peak: f64) -> Result<f64> {
    Ok(psnr_from_mse(mse(a, b)?, peak))
}

/// Mean SSIM over every 8x8 window position of every channel, with uniform
/// window weights (population moments), K1 = 0.01, K2 = 0.03, L = 255.
/// Images are channel-planar `[C, H, W]`.
pub fn ssim(a: &[f64], b: &[f64], channels: usize, height: usize, width: usize) -> Result<f64> {
    check(a, b)?;
    if channels * height * width != a.len() || height < SSIM_WINDOW || width < SSIM_WINDOW {
        return Err(Error::invalid(format!(
            "ssim needs [C, H, W] with H, W >= {SSIM_WINDOW}, got {channels}x{height}x{width}"
        )));
    }
    let c1 = (0.01 * 255.0f64).powi(2);
    let c2 = (0.03 * 255.0f64).powi(2);
    let n = (SSIM_WINDOW * SSIM_WINDOW) as f64;
    let area = height * width;
    let (oh, ow) = (height - SSIM_WINDOW + 1, width - SSIM_WINDOW + 1);
    let mut total = 0.0;
    for c in 0..channels {
        let pa = &a[c * area..(c + 1) * area];
        let pb = &b[c * area..(c + 1) * area];
        let tables = [
            Integral::new(pa, height, width, |x, _| x),
            Integral::new(pb, height, width, |_, y| y),
            Integral::with(pa, pb, height, width, |x, _| x * x),
            Integral::with(pa, pb, height, width, |_, y| y * y),
            Integral::with(pa, pb, height, width, |x, y| x * y),
        ];
        for y in 0..oh {
            for x in 0..ow {
                let [sa, sb, saa, sbb, sab] = tables.each_ref().map(|t| t.window(y, x, SSIM_WINDOW) / n);
                let va = saa - sa * sa;
                let vb = sbb - sb * sb;
                let cov = sab - sa * sb;
                total += ((2.0 * sa * sb + c1) * (2.0 * cov + c2)) / ((sa * sa + sb * sb + c1) * (va + vb + c2));
            }
        }
    }
    Ok(total / (channels * oh * ow) as f64)
}

/// Summed-area table.
struct Integral {
    w: usize,
    sums: Vec<f64>,
}

impl Integral {
    fn new(a: &[f64], h: usize, w: usize, f: impl Fn(f64, f64) -> f64) -> Self {
        Self::with(a, a, h, w, f)
    }

    fn with(a: &[f64], b: &[f64], h: usize, w: usize, f: impl Fn(f64, f64) -> f64) -> Self {
        let mut sums = vec![0.0; (h + 1) * (w + 1)];
        for y in 0..h {
            let mut row = 0.0;
            for x in 0..w {
                row += f(a[y * w + x], b[y * w + x]);
                sums[(y + 1) * (w + 1) + x + 1] = sums[y * (w + 1) + x + 1] + row;
            }
        }
        Integral { w: w + 1, sums }
    }

    fn window(&self, y: usize, x: usize, k: usize) -> f64 {
        let s = &self.sums;
        s[(y + k) * self.w + x + k] - s[y * self.w + x + k] - s[(y + k) * self.w + x] + s[y * self.w + x]
    }
}

/// Intersection over union of two masks; 1 when both are empty.
pub fn mask_iou(a: &[bool], b: &[bool]) -> f64 {
    let inter = a.iter().zip(b).filter(|(x, y)| **x && **y).count();
    let union = a.iter().zip(b).filter(|(x, y)| **x || **y).count();
    if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    }
}

/// Lesion overlap between a translation into `domain` and the ground-truth
/// image of that domain, both thresholded with the rendering rule. For a
/// healthy ground truth the score is `1 - false lesion area / image area`.
pub fn lesion_preservation_iou(translated: &Image8, truth: &Image8, domain: Domain) -> Result<f64> {
    if (translated.channels, translated.height, translated.width) != (truth.channels, truth.height, truth.width) {
        return Err(Error::invalid("lesion iou on images of different dims"));
    }
    let pred = domain.lesion_pixels(translated);
    let gt = domain.lesion_pixels(truth);
    if gt.iter().any(|&v| v) {
        Ok(mask_iou(&pred, &gt))
    } else {
        Ok(1.0 - pred.iter().filter(|&&v| v).count() as f64 / pred.len() as f64)
    }
}

/// Mean translated-space distance over the `k_top` most similar source
/// patch pairs (lower means neighbourhoods were preserved). Ties in source
/// distance are broken by translated distance, which keeps the value
/// independent of patch numbering.
pub fn neighborhood_preservation(
    source: &Image8,
    translated: &Image8,
    k_top: usize,
    extractor: &Extractor,
    patch: usize,
) -> Result<f64> {
    let grid = PatchGrid::new(source.height, source.width, patch)?;
    let m = grid.len();
    let pairs: Vec<(usize, usize)> = (0..m).flat_map(|i| (i + 1..m).map(move |j| (i, j))).collect();
    if k_top == 0 || k_top > pairs.len() {
        return Err(Error::invalid(format!("k_top {k_top} outside 1..={}", pairs.len())));
    }
    let dists = |img: &Image8| -> Result<Vec<f64>> {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(img.to_tensor());
        let f = extractor.features(&mut tape, x, &grid)?;
        let rows = crate::features::image_features(&mut tape, &f, 0)?;
        let d = row_distances(&mut tape, rows, &pairs)?;
        Ok(tape.data(d).to_vec())
    };
    let ds = dists(source)?;
    let dt = dists(translated)?;
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    order.sort_by(|&p, &q| ds[p].total_cmp(&ds[q]).then(dt[p].total_cmp(&dt[q])));
    Ok(order[..k_top].iter().map(|&p| dt[p]).sum::<f64>() / k_top as f64)
}

/// Pixel metrics of one translated image against its ground truth.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PairScores {
    pub mae: f64,
    pub mse: f64,
    pub psnr: f64,
    pub ssim: f64,
}

pub fn pair_scores(translated: &Image8, truth: &Image8) -> Result<PairScores> {
    let (a, b) = (translated.to_f64(), truth.to_f64());
    let mse = mse(&a, &b)?;
    Ok(PairScores {
        mae: mae(&a, &b)?,
        mse,
        psnr: psnr_from_mse(mse, 255.0),
        ssim: ssim(&a, &b, truth.channels, truth.height, truth.width)?,
    })
}
