//! Library results against naive loop implementations written here.

use harmonic_gan::data::{mae, mse, psnr, ssim};
use harmonic_gan::features::{feature_distance, patch_histogram, CnnProxy, Extractor, HistogramConfig, PatchGrid};
use harmonic_gan::smooth::{max_pairs, smoothness_loss, SmoothnessConfig};
use harmonic_gan::tensor::{Tape, Tensor};
mod common;

use common::{loop_features, loop_term, naive_ssim, naive_vote, pixel_loops};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn pixels(n: usize, r: &mut ChaCha8Rng) -> Vec<f64> {
    (0..n).map(|_| r.random_range(0..=255) as f64).collect()
}

#[test]
fn pixel_metrics_match_loops() {
    let mut r = rng(1);
    for (c, h, w) in [(1, 8, 8), (1, 16, 24), (3, 12, 10), (1, 64, 64)] {
        let n = c * h * w;
        let a = pixels(n, &mut r);
        let b = pixels(n, &mut r);
        let (want_mae, want_mse, want_psnr) = pixel_loops(&a, &b, 255.0);
        assert!((mae(&a, &b).unwrap() - want_mae).abs() < 1e-9);
        assert!((mse(&a, &b).unwrap() - want_mse).abs() < 1e-9);
        assert!((psnr(&a, &b, 255.0).unwrap() - want_psnr).abs() < 1e-9);
        let got = ssim(&a, &b, c, h, w).unwrap();
        let want = naive_ssim(&a, &b, c, h, w);
        assert!((got - want).abs() < 1e-9, "{c}x{h}x{w}: {got} vs {want}");
        // correlated pair exercises the high-SSIM regime
        let near: Vec<f64> = a.iter().map(|v| (v + r.random_range(-3.0..3.0)).clamp(0.0, 255.0)).collect();
        let got = ssim(&a, &near, c, h, w).unwrap();
        assert!((got - naive_ssim(&a, &near, c, h, w)).abs() < 1e-9);
    }
}

#[test]
fn histogram_matches_scalar_loop() {
    let mut r = rng(2);
    let (c, side, p, bins) = (3, 16, 8, 16);
    let img = Tensor::from_fn(vec![1, c, side, side], |_| r.random_range(-1.0..1.0)).unwrap();
    let mut tape = Tape::new();
    let x = tape.constant(img.clone());
    let grid = PatchGrid::new(side, side, p).unwrap();
    let h = patch_histogram(&mut tape, x, &grid, &HistogramConfig::default()).unwrap();
    let got = tape.data(h);
    let per = side / p;
    for m in 0..per * per {
        let (py, px) = (m / per, m % per);
        for ch in 0..c {
            for b in 0..bins {
                let mut want = 0.0;
                for y in 0..p {
                    for xx in 0..p {
                        let v = img.data()[ch * side * side + (py * p + y) * side + px * p + xx];
                        want += naive_vote((v + 1.0) * 127.5, b, bins);
                    }
                }
                let g = got[m * c * bins + ch * bins + b];
                assert!((g - want).abs() < 1e-9, "patch {m} ch {ch} bin {b}: {g} vs {want}");
            }
        }
    }
}

#[test]
fn feature_distance_matches_loop() {
    let mut r = rng(3);
    let img = Tensor::from_fn(vec![2, 1, 16, 16], |_| r.random_range(-1.0..1.0)).unwrap();
    let mut tape = Tape::new();
    let x = tape.constant(img);
    let grid = PatchGrid::new(16, 16, 4).unwrap();
    let f = Extractor::Histogram(HistogramConfig::default()).features(&mut tape, x, &grid).unwrap();
    let rows: Vec<f64> = tape.data(f.values).to_vec();
    let (m, d) = (16, 16);
    for n in 0..2 {
        for _ in 0..20 {
            let (i, j) = (r.random_range(0..m), r.random_range(0..m));
            let mut want = 0.0;
            for k in 0..d {
                want += (rows[(n * m + i) * d + k] - rows[(n * m + j) * d + k]).abs();
            }
            want /= d as f64;
            let v = feature_distance(&mut tape, &f, n, i, j).unwrap();
            assert!((tape.item(v).unwrap() - want).abs() < 1e-12);
        }
    }
}

#[test]
fn all_pairs_smoothness_matches_double_loop() {
    let mut r = rng(4);
    for (m_side, p) in [(2, 8), (3, 8), (4, 4)] {
        let side = m_side * p;
        let m = m_side * m_side;
        for _ in 0..3 {
            let imgs: Vec<Tensor> = (0..3)
                .map(|_| Tensor::from_fn(vec![2, 1, side, side], |_| r.random_range(-1.0..1.0)).unwrap())
                .collect();
            let cfg = SmoothnessConfig { sigma_sq: 0.1, n_pairs: max_pairs(m), stop_gradient: true };
            let mut tape = Tape::new();
            let v: Vec<_> = imgs.iter().map(|t| tape.constant(t.clone())).collect();
            let grid = PatchGrid::new(side, side, p).unwrap();
            let ex = Extractor::Histogram(HistogramConfig::default());
            let got = smoothness_loss(&mut tape, &ex, &grid, &cfg, v[0], v[1], v[2], &mut r).unwrap();
            let got = tape.item(got).unwrap();
            let f: Vec<_> = imgs.iter().map(|t| loop_features(t, p, 16)).collect();
            let want =
                (0..2).map(|n| loop_term(&f[0][n], &f[1][n], 0.1) + loop_term(&f[1][n], &f[2][n], 0.1)).sum::<f64>()
                    / 2.0;
            assert!((got - want).abs() < 1e-9, "M = {m}: {got} vs {want}");
        }
    }
}

#[test]
fn proxy_features_shift_with_the_image() {
    let mut r = rng(5);
    let proxy = CnnProxy::seeded(1, 8, &mut r);
    let (side, p) = (64, proxy.total_stride());
    let per = side / p;
    // content sits on a zero background so a one-patch shift loses nothing
    let content: Vec<f64> = (0..24 * 24).map(|_| r.random_range(-1.0..1.0)).collect();
    let place = |at: usize| {
        let mut img = vec![0.0; side * side];
        for y in 0..24 {
            for x in 0..24 {
                img[(at + y) * side + at + x] = content[y * 24 + x];
            }
        }
        img
    };
    let feats = |data: Vec<f64>| {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::new(vec![1, 1, side, side], data).unwrap());
        let grid = PatchGrid::new(side, side, p).unwrap();
        let f = Extractor::CnnProxy(proxy.clone()).features(&mut tape, x, &grid).unwrap();
        tape.data(f.values).to_vec()
    };
    let base = feats(place(16));
    let shifted = feats(place(16 + p));
    let d = proxy.out_channels();
    let mut moved = 0.0f64;
    for py in 2..=4 {
        for px in 2..=4 {
            let (a, b) = (py * per + px, (py + 1) * per + px + 1);
            for k in 0..d {
                moved = moved.max((base[a * d + k] - shifted[b * d + k]).abs());
            }
        }
    }
    assert!(moved < 1e-12, "{moved}");
    assert_ne!(base, shifted);
}
