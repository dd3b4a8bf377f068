//! Loop oracles shared by the integration and acceptance targets.
#![allow(dead_code)]

use harmonic_gan::tensor::Tensor;

/// `(mae, mse, psnr)` by plain loops.
pub fn pixel_loops(a: &[f64], b: &[f64], peak: f64) -> (f64, f64, f64) {
    let (mut abs, mut sq) = (0.0, 0.0);
    for i in 0..a.len() {
        abs += (a[i] - b[i]).abs();
        sq += (a[i] - b[i]) * (a[i] - b[i]);
    }
    let n = a.len() as f64;
    let mse = sq / n;
    (abs / n, mse, 10.0 * (peak * peak / mse).log10())
}

pub fn naive_ssim(a: &[f64], b: &[f64], c: usize, h: usize, w: usize) -> f64 {
    let (c1, c2) = ((0.01f64 * 255.0).powi(2), (0.03f64 * 255.0).powi(2));
    let k = 8;
    let mut total = 0.0;
    let mut count = 0;
    for ch in 0..c {
        for y in 0..=h - k {
            for x in 0..=w - k {
                let at = |img: &[f64], dy: usize, dx: usize| img[ch * h * w + (y + dy) * w + x + dx];
                let (mut ma, mut mb) = (0.0, 0.0);
                for dy in 0..k {
                    for dx in 0..k {
                        ma += at(a, dy, dx);
                        mb += at(b, dy, dx);
                    }
                }
                ma /= (k * k) as f64;
                mb /= (k * k) as f64;
                let (mut va, mut vb, mut cov) = (0.0, 0.0, 0.0);
                for dy in 0..k {
                    for dx in 0..k {
                        let (p, q) = (at(a, dy, dx) - ma, at(b, dy, dx) - mb);
                        va += p * p;
                        vb += q * q;
                        cov += p * q;
                    }
                }
                let n = (k * k) as f64;
                let (va, vb, cov) = (va / n, vb / n, cov / n);
                total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
                count += 1;
            }
        }
    }
    total / count as f64
}

pub fn naive_vote(v: f64, b: usize, n_bins: usize) -> f64 {
    let width = 255.0 / n_bins as f64;
    let center = (b as f64 + 0.5) * width;
    let d = (v - center).abs() / width;
    if d >= 1.0 {
        0.0
    } else {
        1.0 - d
    }
}

/// Normalized per-patch histograms `[image][patch][bin]` by loops.
pub fn loop_features(img: &Tensor, p: usize, bins: usize) -> Vec<Vec<Vec<f64>>> {
    let s = img.shape();
    let side = s[2];
    let per = side / p;
    (0..s[0])
        .map(|n| {
            (0..per * per)
                .map(|m| {
                    let (py, px) = (m / per, m % per);
                    (0..bins)
                        .map(|b| {
                            let mut acc = 0.0;
                            for y in 0..p {
                                for x in 0..p {
                                    let v = img.data()[n * side * side + (py * p + y) * side + px * p + x];
                                    acc += naive_vote((v + 1.0) * 127.5, b, bins);
                                }
                            }
                            acc / (p * p) as f64
                        })
                        .collect()
                })
                .collect()
        })
        .collect()
}

pub fn loop_term(from: &[Vec<f64>], to: &[Vec<f64>], sigma_sq: f64) -> f64 {
    let dist = |a: &Vec<f64>, b: &Vec<f64>| a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.len() as f64;
    let mut sum = 0.0;
    let mut k = 0;
    for i in 0..from.len() {
        for j in 0..from.len() {
            if i < j {
                sum += (-dist(&from[i], &from[j]) / sigma_sq).exp() * dist(&to[i], &to[j]);
                k += 1;
            }
        }
    }
    sum / k as f64
}
