//! Randomized invariants of features, smoothness, metrics, training helpers and I/O.

use harmonic_gan::data::metrics::psnr_from_mse;
use harmonic_gan::data::{
    gen_synthetic_dataset, mae, mse, neighborhood_preservation, render_b, ssim, Image8, SynthConfig,
};
use harmonic_gan::features::{
    feature_distance, patch_histogram, soft_bin, CnnProxy, Extractor, HistogramConfig, PatchGrid,
};
use harmonic_gan::nets::lsgan_d_loss;
use harmonic_gan::smooth::{max_pairs, sample_pair_indices, smoothness_loss, SmoothnessConfig};
use harmonic_gan::tensor::{Tape, Tensor};
use harmonic_gan::train::{lr_schedule, ReplayBuffer};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn image(seed: u64, shape: Vec<usize>, lo: f64, hi: f64) -> Tensor {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape, |_| r.random_range(lo..=hi)).unwrap()
}

fn histogram_rows(img: &Tensor, p: usize) -> Vec<f64> {
    let s = img.shape();
    let mut tape = Tape::new();
    let x = tape.constant(img.clone());
    let grid = PatchGrid::new(s[2], s[3], p).unwrap();
    let h = patch_histogram(&mut tape, x, &grid, &HistogramConfig::default()).unwrap();
    tape.data(h).to_vec()
}

#[test]
fn partition_of_unity_on_ten_thousand_values() {
    let cfg = HistogramConfig::default();
    let (lo, hi) = (cfg.center(0), cfg.center(cfg.n_bins - 1));
    let mut r = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..10_000 {
        let v = r.random_range(lo..=hi);
        let total: f64 = (0..cfg.n_bins).map(|b| soft_bin(v, b, &cfg)).sum();
        assert!((total - 1.0).abs() < 1e-12, "{v}: {total}");
    }
}

#[test]
fn replay_returns_stored_images_half_the_time() {
    let mut r = ChaCha8Rng::seed_from_u64(12);
    let mut pool = ReplayBuffer::new(50);
    let item = |k: usize| Tensor::new(vec![1, 1, 1, 1], vec![k as f64]).unwrap();
    for k in 0..50 {
        pool.query(item(k), &mut r);
    }
    let stored = (0..10_000).filter(|k| pool.query(item(50 + k), &mut r).1).count();
    let frac = stored as f64 / 10_000.0;
    assert!((frac - 0.5).abs() <= 0.05, "{frac}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn bins_partition_unity(n_bins in 2usize..40, lo in -50.0f64..50.0, span in 1.0f64..500.0, t in 0.0f64..=1.0) {
        let cfg = HistogramConfig::new(n_bins, lo, lo + span).unwrap();
        let (a, b) = (cfg.center(0), cfg.center(n_bins - 1));
        let v = a + t * (b - a);
        let total: f64 = (0..n_bins).map(|k| soft_bin(v, k, &cfg)).sum();
        prop_assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn histogram_mass_is_at_most_patch_area(seed: u64, channels in 1usize..4, inside: bool) {
        let cfg = HistogramConfig::default();
        let (lo, hi) = if inside {
            (cfg.to_internal(cfg.center(0)), cfg.to_internal(cfg.center(cfg.n_bins - 1)))
        } else {
            (-1.0, 1.0)
        };
        let p = 4;
        let img = image(seed, vec![1, channels, 8, 8], lo, hi);
        let rows = histogram_rows(&img, p);
        let bins = cfg.n_bins;
        for m in 0..4 {
            for c in 0..channels {
                let start = (m * channels + c) * bins;
                let mass: f64 = rows[start..start + bins].iter().sum();
                prop_assert!(mass <= (p * p) as f64 + 1e-9);
                if inside {
                    prop_assert!((mass - (p * p) as f64).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn permuting_pixels_within_a_patch_keeps_its_row(seed: u64, perm_seed: u64) {
        let p = 4;
        let img = image(seed, vec![1, 1, 8, 8], -1.0, 1.0);
        let mut order: Vec<usize> = (0..p * p).collect();
        let mut r = ChaCha8Rng::seed_from_u64(perm_seed);
        for i in (1..order.len()).rev() {
            order.swap(i, r.random_range(0..=i));
        }
        // shuffle the top-left patch only
        let mut data = img.data().to_vec();
        for (k, &src) in order.iter().enumerate() {
            data[(k / p) * 8 + k % p] = img.data()[(src / p) * 8 + src % p];
        }
        let shuffled = Tensor::new(vec![1, 1, 8, 8], data).unwrap();
        prop_assert_eq!(histogram_rows(&img, p), histogram_rows(&shuffled, p));
    }

    #[test]
    fn normalized_features_lie_in_unit_interval(seed: u64, proxy: bool, scale in 0.1f64..50.0) {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let (ex, p) = if proxy {
            (Extractor::CnnProxy(CnnProxy::seeded(1, 6, &mut r)), 8)
        } else {
            (Extractor::Histogram(HistogramConfig::default()), 4)
        };
        // values far outside [-1, 1] exercise clamping and the squash
        let img = image(seed ^ 1, vec![2, 1, 16, 16], -scale, scale);
        let mut tape = Tape::new();
        let x = tape.constant(img);
        let f = ex.features(&mut tape, x, &PatchGrid::new(16, 16, p).unwrap()).unwrap();
        for &v in tape.data(f.values) {
            prop_assert!((0.0..=1.0).contains(&v), "{}", v);
        }
    }

    #[test]
    fn feature_distance_is_a_metric(seed: u64, i in 0usize..16, j in 0usize..16, k in 0usize..16) {
        let img = image(seed, vec![1, 1, 16, 16], -1.0, 1.0);
        let mut tape = Tape::new();
        let x = tape.constant(img);
        let f = Extractor::Histogram(HistogramConfig::default())
            .features(&mut tape, x, &PatchGrid::new(16, 16, 4).unwrap())
            .unwrap();
        let mut d = |a, b| {
            let v = feature_distance(&mut tape, &f, 0, a, b).unwrap();
            tape.item(v).unwrap()
        };
        prop_assert_eq!(d(i, i), 0.0);
        prop_assert_eq!(d(i, j), d(j, i));
        prop_assert!(d(i, k) <= d(i, j) + d(j, k) + 1e-12);
    }

    #[test]
    fn sampled_pairs_are_distinct_and_ordered(m in 2usize..40, frac in 0.0f64..=1.0, seed: u64) {
        let total = max_pairs(m);
        let k = ((total as f64) * frac) as usize;
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let pairs = sample_pair_indices(m, k, &mut r).unwrap();
        prop_assert_eq!(pairs.len(), k);
        let mut seen = std::collections::BTreeSet::new();
        for &(i, j) in &pairs {
            prop_assert!(i < j && j < m);
            prop_assert!(seen.insert((i, j)));
        }
        prop_assert!(sample_pair_indices(m, total + 1, &mut r).is_err());
    }

    #[test]
    fn smoothness_is_non_negative(seed: u64, n_pairs in 1usize..=120, sigma_sq in 0.01f64..2.0) {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let imgs: Vec<Tensor> = (0..3).map(|k| image(seed.wrapping_add(k), vec![1, 1, 16, 16], -1.0, 1.0)).collect();
        let mut tape = Tape::new();
        let v: Vec<_> = imgs.into_iter().map(|t| tape.constant(t)).collect();
        let cfg = SmoothnessConfig { sigma_sq, n_pairs, stop_gradient: true };
        let ex = Extractor::Histogram(HistogramConfig::default());
        let grid = PatchGrid::new(16, 16, 4).unwrap();
        let l = smoothness_loss(&mut tape, &ex, &grid, &cfg, v[0], v[1], v[2], &mut r).unwrap();
        prop_assert!(tape.item(l).unwrap() >= 0.0);
    }

    #[test]
    fn discriminator_loss_is_label_symmetric(seed: u64, n in 1usize..20) {
        let real = image(seed, vec![n], -2.0, 2.0);
        let fake = image(seed ^ 7, vec![n], -2.0, 2.0);
        let flip = |t: &Tensor| Tensor::from_fn(vec![n], |i| 1.0 - t.data()[i]).unwrap();
        let mut tape = Tape::new();
        let (r, f) = (tape.constant(real.clone()), tape.constant(fake.clone()));
        let a = lsgan_d_loss(&mut tape, r, f).unwrap();
        let (r2, f2) = (tape.constant(flip(&fake)), tape.constant(flip(&real)));
        let b = lsgan_d_loss(&mut tape, r2, f2).unwrap();
        prop_assert!((tape.item(a).unwrap() - tape.item(b).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn lr_never_increases(total in 1usize..300, constant_frac in 0.0f64..=1.0, base in 1e-6f64..1.0) {
        let constant = ((total as f64) * constant_frac) as usize;
        let mut prev = f64::INFINITY;
        for e in 0..total {
            let lr = lr_schedule(e, base, total, constant).unwrap();
            prop_assert!(lr <= prev && lr >= 0.0 && lr <= base);
            prev = lr;
        }
    }

    #[test]
    fn replay_never_exceeds_capacity(capacity in 0usize..20, queries in 0usize..60, seed: u64) {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let mut pool = ReplayBuffer::new(capacity);
        for k in 0..queries {
            pool.query(Tensor::new(vec![1, 1, 1, 1], vec![k as f64]).unwrap(), &mut r);
            prop_assert!(pool.len() <= capacity);
        }
        prop_assert_eq!(pool.len(), queries.min(capacity));
    }

    #[test]
    fn pixel_metric_ordering(a in prop::collection::vec(0u8..=255, 64), b in prop::collection::vec(0u8..=255, 64)) {
        let (a, b): (Vec<f64>, Vec<f64>) = (a.iter().map(|&v| v as f64).collect(), b.iter().map(|&v| v as f64).collect());
        let (l1, l2) = (mae(&a, &b).unwrap(), mse(&a, &b).unwrap());
        prop_assert!(l1 <= l2.sqrt() + 1e-9);
        prop_assert!(l2.sqrt() <= 255.0);
        prop_assert!((ssim(&a, &b, 1, 8, 8).unwrap() - ssim(&b, &a, 1, 8, 8).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn psnr_falls_as_mse_grows(m1 in 1e-3f64..1e5, factor in 1.0001f64..100.0) {
        prop_assert!(psnr_from_mse(m1 * factor, 255.0) < psnr_from_mse(m1, 255.0));
    }

    #[test]
    fn neighborhood_ignores_patch_labels(seed: u64, swap_a in 0usize..16, swap_b in 0usize..16) {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let src = Image8::new(1, 16, 16, (0..256).map(|_| r.random()).collect()).unwrap();
        let out = Image8::new(1, 16, 16, (0..256).map(|_| r.random()).collect()).unwrap();
        // exchanging two 4x4 blocks in both images relabels those patches
        let relabel = |img: &Image8| {
            let mut d = img.data.clone();
            let (ay, ax, by, bx) = (swap_a / 4 * 4, swap_a % 4 * 4, swap_b / 4 * 4, swap_b % 4 * 4);
            for y in 0..4 {
                for x in 0..4 {
                    d.swap((ay + y) * 16 + ax + x, (by + y) * 16 + bx + x);
                }
            }
            Image8::new(1, 16, 16, d).unwrap()
        };
        let ex = Extractor::Histogram(HistogramConfig::default());
        let before = neighborhood_preservation(&src, &out, 32, &ex, 4).unwrap();
        let after = neighborhood_preservation(&relabel(&src), &relabel(&out), 32, &ex, 4).unwrap();
        prop_assert!((before - after).abs() < 1e-12);
    }

    #[test]
    fn test_pairs_follow_the_rendering_rule(seed: u64, channels in prop::sample::select(vec![1usize, 3])) {
        let cfg = SynthConfig { n_train: 2, n_test: 3, size: 16, channels, lesion_prob: 0.5, seed };
        let split = gen_synthetic_dataset(&cfg).unwrap();
        for s in &split.test {
            prop_assert_eq!(&render_b(&s.image_a), &s.image_b);
            prop_assert_eq!(s.has_lesion, s.lesion_mask.data.iter().any(|&v| v > 0));
        }
    }

    #[test]
    fn pnm_round_trip(channels in prop::sample::select(vec![1usize, 3]), h in 1usize..20, w in 1usize..20, seed: u64) {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let img = Image8::new(channels, h, w, (0..channels * h * w).map(|_| r.random()).collect()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join(if channels == 1 { "x.pgm" } else { "x.ppm" });
        img.write_pnm(&path).unwrap();
        prop_assert_eq!(Image8::read_pnm(&path).unwrap(), img);
    }
}
