//! Acceptance gate: one pass/fail line per criterion.
//!
//! The directional comparison needs hours of single-core compute, so it only
//! runs with `HGAN_ACCEPTANCE_FULL=1`; otherwise it reports NOT RUN.

mod common;

use std::path::Path;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use common::{loop_features, loop_term, naive_ssim, pixel_loops};
use harmonic_gan::data::{gen_synthetic_dataset, mae, mse, psnr, ssim, Dataset, SynthConfig};
use harmonic_gan::eval::{aggregate, evaluate_model, Direction, EvalRow};
use harmonic_gan::features::{feature_distance, patch_histogram, soft_bin, Extractor, HistogramConfig, PatchGrid};
use harmonic_gan::gradsuite::{run_suite, SuiteModule, SuiteOptions};
use harmonic_gan::smooth::{max_pairs, smoothness_loss, SmoothnessConfig};
use harmonic_gan::tensor::{Tape, Tensor};
use harmonic_gan::train::{run, ModelState, StepReport, TrainingConfig, METRICS_FILE};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Verdict = Result<String, String>;
type Criterion = (&'static str, fn() -> Status);

enum Status {
    Pass(String),
    Fail(String),
    NotRun(String),
}

fn check(ok: bool, detail: String) -> Verdict {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn gradient_suite() -> Verdict {
    let start = Instant::now();
    let cases = run_suite(SuiteModule::All, &SuiteOptions::default()).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    let failed: Vec<&str> = cases.iter().filter(|c| !c.passed()).map(|c| c.name.as_str()).collect();
    let detail = format!("{} cases, {} failed {:?}, {:.1}s", cases.len(), failed.len(), failed, elapsed.as_secs_f64());
    check(failed.is_empty() && elapsed < Duration::from_secs(300), detail)
}

fn oracle_equivalence() -> Verdict {
    let mut r = rng(20);
    let mut worst = 0.0f64;
    let mut note = |v: f64| worst = worst.max(v);
    for (m_side, p) in [(2, 8), (3, 8), (4, 4)] {
        let side = m_side * p;
        let imgs: Vec<Tensor> =
            (0..3).map(|_| Tensor::from_fn(vec![2, 1, side, side], |_| r.random_range(-1.0..1.0)).unwrap()).collect();
        let m = m_side * m_side;
        let cfg = SmoothnessConfig { sigma_sq: 0.1, n_pairs: max_pairs(m), stop_gradient: true };
        let mut tape = Tape::new();
        let v: Vec<_> = imgs.iter().map(|t| tape.constant(t.clone())).collect();
        let grid = PatchGrid::new(side, side, p).unwrap();
        let ex = Extractor::Histogram(HistogramConfig::default());
        let got = smoothness_loss(&mut tape, &ex, &grid, &cfg, v[0], v[1], v[2], &mut r).map_err(|e| e.to_string())?;
        let f: Vec<_> = imgs.iter().map(|t| loop_features(t, p, 16)).collect();
        let want =
            (0..2).map(|n| loop_term(&f[0][n], &f[1][n], 0.1) + loop_term(&f[1][n], &f[2][n], 0.1)).sum::<f64>() / 2.0;
        note((tape.item(got).unwrap() - want).abs());

        let rows = &f[0][0];
        let feats = ex.features(&mut tape, v[0], &grid).unwrap();
        for i in 0..m {
            for j in 0..m {
                let d = feature_distance(&mut tape, &feats, 0, i, j).unwrap();
                let want = rows[i].iter().zip(&rows[j]).map(|(a, b)| (a - b).abs()).sum::<f64>() / rows[i].len() as f64;
                note((tape.item(d).unwrap() - want).abs());
            }
        }
    }
    for (c, h, w) in [(1, 16, 16), (3, 12, 20), (1, 64, 64)] {
        let n = c * h * w;
        let a: Vec<f64> = (0..n).map(|_| r.random_range(0..=255) as f64).collect();
        let b: Vec<f64> = (0..n).map(|_| r.random_range(0..=255) as f64).collect();
        let (l1, l2, db) = pixel_loops(&a, &b, 255.0);
        note((mae(&a, &b).unwrap() - l1).abs());
        note((mse(&a, &b).unwrap() - l2).abs());
        note((psnr(&a, &b, 255.0).unwrap() - db).abs());
        note((ssim(&a, &b, c, h, w).unwrap() - naive_ssim(&a, &b, c, h, w)).abs());
    }
    check(worst < 1e-9, format!("max deviation {worst:.2e}"))
}

fn histogram_properties() -> Verdict {
    let cfg = HistogramConfig::default();
    let mut r = rng(30);
    let (lo, hi) = (cfg.center(0), cfg.center(cfg.n_bins - 1));
    let mut unity = 0.0f64;
    for _ in 0..10_000 {
        let v = r.random_range(lo..=hi);
        unity = unity.max(((0..cfg.n_bins).map(|b| soft_bin(v, b, &cfg)).sum::<f64>() - 1.0).abs());
    }

    let mut in_range = true;
    let mut permutation_exact = true;
    for trial in 0..20 {
        let scale = if trial % 2 == 0 { 1.0 } else { 3.0 };
        let img = Tensor::from_fn(vec![1, 2, 16, 16], |_| r.random_range(-scale..scale)).unwrap();
        let grid = PatchGrid::new(16, 16, 8).unwrap();
        let mut tape = Tape::new();
        let x = tape.constant(img.clone());
        let f = Extractor::Histogram(cfg).features(&mut tape, x, &grid).unwrap();
        in_range &= tape.data(f.values).iter().all(|v| (0.0..=1.0).contains(v));

        // reverse the pixel order inside every patch
        let mut flipped = img.data().to_vec();
        for ch in 0..2 {
            for py in 0..2 {
                for px in 0..2 {
                    for k in 0..64 {
                        let (y, x) = (py * 8 + k / 8, px * 8 + k % 8);
                        let (y2, x2) = (py * 8 + (63 - k) / 8, px * 8 + (63 - k) % 8);
                        flipped[ch * 256 + y * 16 + x] = img.data()[ch * 256 + y2 * 16 + x2];
                    }
                }
            }
        }
        let flipped = Tensor::new(vec![1, 2, 16, 16], flipped).unwrap();
        let hist = |t: Tensor| {
            let mut tape = Tape::new();
            let x = tape.constant(t);
            let h = patch_histogram(&mut tape, x, &grid, &cfg).unwrap();
            tape.data(h).to_vec()
        };
        permutation_exact &= hist(img) == hist(flipped);
    }
    check(
        unity < 1e-12 && in_range && permutation_exact,
        format!("unity error {unity:.1e}, features in [0,1]: {in_range}, permutation exact: {permutation_exact}"),
    )
}

fn small_config(epochs: usize) -> TrainingConfig {
    TrainingConfig {
        gen_base_channels: 8,
        gen_res_blocks: 1,
        disc_base_channels: 8,
        disc_layers: 2,
        n_pairs: 32,
        epochs_total: epochs,
        replay_buffer_size: 4,
        checkpoint_every: 1,
        sample_every: 1,
        ..TrainingConfig::default()
    }
}

fn train_once(
    cfg: &TrainingConfig,
    data: &Dataset,
    out: &Path,
    on_step: impl FnMut(&StepReport),
) -> Result<ModelState<f64>, String> {
    let state = ModelState::<f64>::new(cfg.clone()).map_err(|e| e.to_string())?;
    run(state, data, out, on_step).map_err(|e| e.to_string())
}

fn determinism() -> Verdict {
    let split =
        gen_synthetic_dataset(&SynthConfig { n_train: 6, n_test: 2, size: 32, seed: 4, ..SynthConfig::default() })
            .map_err(|e| e.to_string())?;
    let data = Dataset::from(&split);
    let cfg = small_config(2);
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    train_once(&cfg, &data, a.path(), |_| {})?;
    train_once(&cfg, &data, b.path(), |_| {})?;
    let ma = std::fs::read(a.path().join(METRICS_FILE)).map_err(|e| e.to_string())?;
    let mb = std::fs::read(b.path().join(METRICS_FILE)).map_err(|e| e.to_string())?;
    check(ma == mb && !ma.is_empty(), format!("metrics.csv {} bytes, identical: {}", ma.len(), ma == mb))
}

struct Protocol {
    size: usize,
    n_train: usize,
    n_test: usize,
    epochs: usize,
    seeds: u64,
}

/// Per direction `[mse, lesion_iou, neighborhood]`, averaged over seeds.
fn directional_arm(p: &Protocol, lambda_smooth: f64) -> Result<[[f64; 3]; 2], String> {
    let mut acc = [[0.0; 3]; 2];
    for seed in 0..p.seeds {
        let split = gen_synthetic_dataset(&SynthConfig {
            n_train: p.n_train,
            n_test: p.n_test,
            size: p.size,
            seed,
            ..SynthConfig::default()
        })
        .map_err(|e| e.to_string())?;
        let data = Dataset::from(&split);
        let cfg = TrainingConfig { lambda_smooth, seed, epochs_total: p.epochs, ..TrainingConfig::default() };
        let dir = tempfile::tempdir().unwrap();
        let start = Instant::now();
        let state = train_once(&cfg, &data, dir.path(), |_| {})?;
        eprintln!("  lambda_smooth {lambda_smooth} seed {seed}: trained in {:.0}s", start.elapsed().as_secs_f64());
        let rows = evaluate_model(&state, &data.test, 32).map_err(|e| e.to_string())?;
        for mean in aggregate(&rows).map_err(|e| e.to_string())? {
            let k = usize::from(mean.direction == Direction::BA);
            let EvalRow { scores, lesion_iou, neighborhood, .. } = mean;
            for (slot, v) in acc[k].iter_mut().zip([scores.mse, lesion_iou, neighborhood]) {
                *slot += v / p.seeds as f64;
            }
        }
    }
    Ok(acc)
}

fn directional() -> Status {
    if std::env::var("HGAN_ACCEPTANCE_FULL").as_deref() != Ok("1") {
        return Status::NotRun("needs ~16 h single-core compute; set HGAN_ACCEPTANCE_FULL=1".into());
    }
    let p = Protocol { size: 64, n_train: 400, n_test: 100, epochs: 40, seeds: 3 };
    let arms = directional_arm(&p, 0.0).and_then(|base| Ok((base, directional_arm(&p, 1.0)?)));
    let (base, smooth) = match arms {
        Ok(v) => v,
        Err(e) => return Status::Fail(e),
    };
    let mse_ok = (0..2).all(|k| smooth[k][0] <= 0.85 * base[k][0]);
    let mean = |arm: &[[f64; 3]; 2], i: usize| (arm[0][i] + arm[1][i]) / 2.0;
    let iou_gain = mean(&smooth, 1) - mean(&base, 1);
    let nb_ratio = mean(&smooth, 2) / mean(&base, 2);
    let detail = format!(
        "mse ab {:.1} vs {:.1}, ba {:.1} vs {:.1}; lesion iou gain {iou_gain:+.3}; neighborhood ratio {nb_ratio:.3}",
        smooth[0][0], base[0][0], smooth[1][0], base[1][0]
    );
    if mse_ok && iou_gain >= 0.05 && nb_ratio <= 0.9 {
        Status::Pass(detail)
    } else {
        Status::Fail(detail)
    }
}

fn smoke_gate() -> Verdict {
    let split =
        gen_synthetic_dataset(&SynthConfig { n_train: 8, n_test: 2, size: 64, seed: 6, ..SynthConfig::default() })
            .map_err(|e| e.to_string())?;
    let data = Dataset::from(&split);
    let cfg = TrainingConfig { epochs_total: 2, ..TrainingConfig::default() };
    let (lg, lc, ls) = (cfg.lambda_gan, cfg.lambda_cyc, cfg.lambda_smooth);
    let (mut steps, mut finite, mut worst) = (0, true, 0.0f64);
    let dir = tempfile::tempdir().unwrap();
    train_once(&cfg, &data, dir.path(), |r| {
        steps += 1;
        finite &= r.losses().iter().all(|(_, v)| v.is_finite());
        let sum = lg * (r.gan_g + r.gan_f) + lc * r.cyc + ls * r.smooth;
        worst = worst.max((r.total - sum).abs());
    })?;
    check(
        steps == 16 && finite && worst <= 1e-12,
        format!("{steps} steps, losses finite: {finite}, max |total - weighted sum| {worst:.1e}"),
    )
}

fn main() -> ExitCode {
    let criteria: [Criterion; 6] = [
        ("gradient suite", || gradient_suite().into_status()),
        ("oracle equivalence", || oracle_equivalence().into_status()),
        ("histogram properties", || histogram_properties().into_status()),
        ("training determinism", || determinism().into_status()),
        ("directional reproduction", directional),
        ("smoke gate", || smoke_gate().into_status()),
    ];
    let mut failed = 0;
    for (k, (name, f)) in criteria.iter().enumerate() {
        let (tag, detail) = match f() {
            Status::Pass(d) => ("PASS", d),
            Status::Fail(d) => {
                failed += 1;
                ("FAIL", d)
            }
            Status::NotRun(d) => ("NOT RUN", d),
        };
        println!("criterion {} {name}: {tag} ({detail})", k + 1);
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

trait IntoStatus {
    fn into_status(self) -> Status;
}

impl IntoStatus for Verdict {
    fn into_status(self) -> Status {
        match self {
            Ok(d) => Status::Pass(d),
            Err(d) => Status::Fail(d),
        }
    }
}
