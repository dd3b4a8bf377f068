//! Finite-difference suites over every primitive and composite loss, plus the
//! sampled-vs-naive smoothness equivalence check. Shared by the `gradcheck`
//! subcommand and the acceptance harness.

use std::fmt;
use std::str::FromStr;

use rand::seq::index::sample;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::features::{feature_distance, soft_bin, CnnProxy, Extractor, HistogramConfig, PatchGrid};
use crate::nets::{cycle_loss, lsgan_d_loss, lsgan_g_loss, ParamSet};
use crate::rng::{substream, Stream};
use crate::smooth::{
    max_pairs, sample_pairs, smoothness_loss, smoothness_term, smoothness_term_through_weights, SmoothnessConfig,
};
use crate::tensor::{GradCheckReport, GradChecker, Primitive, Tape, Tensor, Var};
use crate::train::{generator_pass, ModelState, TrainingConfig};

pub const PRIMITIVE_TOLERANCE: f64 = 1e-4;
pub const COMPOSITE_TOLERANCE: f64 = 1e-3;
pub const ORACLE_TOLERANCE: f64 = 1e-9;
const PRIMITIVE_EPS: f64 = 1e-6;
const COMPOSITE_EPS: f64 = 1e-5;
/// Coordinates checked per composite trial.
const COMPOSITE_COORDS: usize = 12;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SuiteModule {
    All,
    Tensor,
    Features,
    Smooth,
}

impl SuiteModule {
    fn includes(self, other: SuiteModule) -> bool {
        self == SuiteModule::All || self == other
    }
}

impl fmt::Display for SuiteModule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SuiteModule::All => "all",
            SuiteModule::Tensor => "tensor",
            SuiteModule::Features => "features",
            SuiteModule::Smooth => "smooth",
        })
    }
}

impl FromStr for SuiteModule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "all" => Ok(SuiteModule::All),
            "tensor" => Ok(SuiteModule::Tensor),
            "features" => Ok(SuiteModule::Features),
            "smooth" => Ok(SuiteModule::Smooth),
            _ => Err(Error::invalid(format!("unknown suite module {s:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CaseKind {
    Primitive,
    Composite,
    /// Absolute difference against a naive implementation.
    Oracle,
}

/// Worst result of one case over all trials.
#[derive(Clone, Debug, PartialEq)]
pub struct CaseOutcome {
    pub name: String,
    pub kind: CaseKind,
    pub tolerance: f64,
    /// Max relative gradient error, or max absolute difference for oracles.
    pub worst: f64,
    pub checked: usize,
    pub skipped: usize,
    pub trials: usize,
}

impl CaseOutcome {
    pub fn passed(&self) -> bool {
        self.checked > 0 && self.worst < self.tolerance
    }
}

#[derive(Clone, Debug)]
pub struct SuiteOptions {
    pub trials: usize,
    pub seed: u64,
    /// Corrupt this primitive's backward rule in every gradient check.
    pub fault: Option<Primitive>,
}

impl Default for SuiteOptions {
    fn default() -> Self {
        SuiteOptions { trials: 100, seed: 0, fault: None }
    }
}

type Objective = Box<dyn Fn(&mut Tape, &[Var]) -> Result<Var>>;

fn uniform(shape: &[usize], lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::rand_uniform(shape.to_vec(), lo, hi, rng)
}

/// `sum(out * w)` with fixed random weights, so no output coordinate is
/// privileged.
fn project(t: &mut Tape, out: Var, w: &Tensor) -> Result<Var> {
    let w = t.constant(w.clone());
    let m = t.mul(out, w)?;
    t.sum(m)
}

/// Inputs and a scalar objective exercising primitive `p`.
fn primitive_case(p: Primitive, rng: &mut ChaCha8Rng) -> (Vec<Tensor>, Objective) {
    let m = [3, 4];
    let unary =
        |rng: &mut ChaCha8Rng, lo: f64, hi: f64, op: fn(&mut Tape, Var) -> Result<Var>| -> (Vec<Tensor>, Objective) {
            let w = uniform(&m, -1.0, 1.0, rng);
            let f: Objective = Box::new(move |t, v| {
                let o = op(t, v[0])?;
                project(t, o, &w)
            });
            (vec![uniform(&m, lo, hi, rng)], f)
        };
    let binary = |rng: &mut ChaCha8Rng, op: fn(&mut Tape, Var, Var) -> Result<Var>| -> (Vec<Tensor>, Objective) {
        let w = uniform(&m, -1.0, 1.0, rng);
        let f: Objective = Box::new(move |t, v| {
            let o = op(t, v[0], v[1])?;
            project(t, o, &w)
        });
        (vec![uniform(&m, -1.0, 1.0, rng), uniform(&m, -1.0, 1.0, rng)], f)
    };
    match p {
        Primitive::Add => binary(rng, |t, a, b| t.add(a, b)),
        Primitive::Sub => binary(rng, |t, a, b| t.sub(a, b)),
        Primitive::Mul => binary(rng, |t, a, b| t.mul(a, b)),
        Primitive::ScalarMul => {
            let s = rng.random_range(-2.0..2.0);
            let f: Objective = Box::new(move |t, v| {
                let o = t.scalar_mul(v[0], s)?;
                let o = t.square(o)?;
                t.sum(o)
            });
            (vec![uniform(&m, -1.0, 1.0, rng)], f)
        }
        Primitive::AddScalar => {
            let s = rng.random_range(-2.0..2.0);
            let f: Objective = Box::new(move |t, v| {
                let o = t.add_scalar(v[0], s)?;
                let o = t.square(o)?;
                t.sum(o)
            });
            (vec![uniform(&m, -1.0, 1.0, rng)], f)
        }
        Primitive::Negate => unary(rng, -1.0, 1.0, |t, a| t.neg(a)),
        Primitive::Abs => unary(rng, -1.0, 1.0, |t, a| t.abs(a)),
        Primitive::Square => unary(rng, -1.0, 1.0, |t, a| t.square(a)),
        Primitive::Exp => unary(rng, -2.0, 2.0, |t, a| t.exp(a)),
        Primitive::Recip => unary(rng, 0.5, 1.5, |t, a| t.recip(a)),
        Primitive::Relu => unary(rng, -1.0, 1.0, |t, a| t.relu(a)),
        Primitive::LeakyRelu => unary(rng, -1.0, 1.0, |t, a| t.leaky_relu(a, 0.2)),
        Primitive::Tanh => unary(rng, -2.0, 2.0, |t, a| t.tanh(a)),
        Primitive::MaxWithZero => unary(rng, -1.0, 1.0, |t, a| t.max_with_zero(a)),
        Primitive::Clamp => unary(rng, -1.0, 1.0, |t, a| t.clamp(a, -0.5, 0.5)),
        Primitive::Sum => {
            let f: Objective = Box::new(|t, v| {
                let s = t.sum(v[0])?;
                t.square(s)
            });
            (vec![uniform(&m, -1.0, 1.0, rng)], f)
        }
        Primitive::Mean => {
            let f: Objective = Box::new(|t, v| {
                let s = t.mean(v[0])?;
                t.square(s)
            });
            (vec![uniform(&m, -1.0, 1.0, rng)], f)
        }
        Primitive::SumAxis | Primitive::MeanAxis => {
            let axis = rng.random_range(0..3);
            let mut out = vec![2, 3, 4];
            out.remove(axis);
            let w = uniform(&out, -1.0, 1.0, rng);
            let mean = p == Primitive::MeanAxis;
            let f: Objective = Box::new(move |t, v| {
                let o = if mean { t.mean_axis(v[0], axis)? } else { t.sum_axis(v[0], axis)? };
                let o = t.square(o)?;
                project(t, o, &w)
            });
            (vec![uniform(&[2, 3, 4], -1.0, 1.0, rng)], f)
        }
        Primitive::Concat => {
            let w = uniform(&[2, 5], -1.0, 1.0, rng);
            let f: Objective = Box::new(move |t, v| {
                let o = t.concat(&[v[0], v[1]], 1)?;
                let o = t.square(o)?;
                project(t, o, &w)
            });
            (vec![uniform(&[2, 3], -1.0, 1.0, rng), uniform(&[2, 2], -1.0, 1.0, rng)], f)
        }
        Primitive::Reshape => {
            let w = uniform(&[3, 4], -1.0, 1.0, rng);
            let f: Objective = Box::new(move |t, v| {
                let o = t.reshape(v[0], &[3, 4])?;
                let o = t.square(o)?;
                project(t, o, &w)
            });
            (vec![uniform(&[2, 6], -1.0, 1.0, rng)], f)
        }
        Primitive::Permute => {
            let w = uniform(&[4, 2, 3], -1.0, 1.0, rng);
            let f: Objective = Box::new(move |t, v| {
                let o = t.permute(v[0], &[2, 0, 1])?;
                let o = t.square(o)?;
                project(t, o, &w)
            });
            (vec![uniform(&[2, 3, 4], -1.0, 1.0, rng)], f)
        }
        Primitive::Slice => {
            let w = uniform(&[4, 3], -1.0, 1.0, rng);
            let f: Objective = Box::new(move |t, v| {
                let o = t.slice(v[0], 1, 1, 3)?;
                let o = t.square(o)?;
                project(t, o, &w)
            });
            (vec![uniform(&[4, 5], -1.0, 1.0, rng)], f)
        }
        Primitive::IndexSelect => {
            let w = uniform(&[4, 3], -1.0, 1.0, rng);
            let f: Objective = Box::new(move |t, v| {
                // repeated index exercises gradient accumulation
                let o = t.index_select(v[0], 0, &[2, 0, 2, 3])?;
                let o = t.square(o)?;
                project(t, o, &w)
            });
            (vec![uniform(&[4, 3], -1.0, 1.0, rng)], f)
        }
        Primitive::Conv2d => {
            let stride = rng.random_range(1..=2);
            let pad = rng.random_range(0..=1);
            let side = (5 + 2 * pad - 3) / stride + 1;
            let w = uniform(&[2, 3, side, side], -1.0, 1.0, rng);
            let f: Objective = Box::new(move |t, v| {
                let o = t.conv2d(v[0], v[1], Some(v[2]), stride, pad)?;
                project(t, o, &w)
            });
            let inputs = vec![
                uniform(&[2, 2, 5, 5], -1.0, 1.0, rng),
                uniform(&[3, 2, 3, 3], -1.0, 1.0, rng),
                uniform(&[3], -1.0, 1.0, rng),
            ];
            (inputs, f)
        }
        Primitive::Conv2dTranspose => {
            let w = uniform(&[1, 3, 6, 6], -1.0, 1.0, rng);
            let f: Objective = Box::new(move |t, v| {
                let o = t.conv2d_transpose(v[0], v[1], Some(v[2]), 2, 1, 1)?;
                project(t, o, &w)
            });
            let inputs = vec![
                uniform(&[1, 2, 3, 3], -1.0, 1.0, rng),
                uniform(&[2, 3, 3, 3], -1.0, 1.0, rng),
                uniform(&[3], -1.0, 1.0, rng),
            ];
            (inputs, f)
        }
        Primitive::InstanceNorm => {
            let w = uniform(&[2, 2, 3, 3], -1.0, 1.0, rng);
            let f: Objective = Box::new(move |t, v| {
                let o = t.instance_norm(v[0], 1e-5)?;
                project(t, o, &w)
            });
            (vec![uniform(&[2, 2, 3, 3], -1.0, 1.0, rng)], f)
        }
        Primitive::L1Distance | Primitive::SquaredError => {
            let l1 = p == Primitive::L1Distance;
            let f: Objective = Box::new(move |t, v| {
                let d = if l1 { t.l1_distance(v[0], v[1])? } else { t.squared_error(v[0], v[1])? };
                t.square(d)
            });
            (vec![uniform(&m, -1.0, 1.0, rng), uniform(&m, -1.0, 1.0, rng)], f)
        }
        Primitive::Leaf => unreachable!("leaves have no backward rule"),
    }
}

/// Up to `k` random `(input, coordinate)` pairs.
fn pick_coords(inputs: &[Tensor], k: usize, rng: &mut ChaCha8Rng) -> Vec<(usize, usize)> {
    let flat: Vec<(usize, usize)> =
        inputs.iter().enumerate().flat_map(|(i, t)| (0..t.numel()).map(move |c| (i, c))).collect();
    let k = k.min(flat.len());
    let mut picked: Vec<_> = sample(rng, flat.len(), k).into_iter().map(|r| flat[r]).collect();
    picked.sort_unstable();
    picked
}

/// Histogram features `[1, M, D]` projected to a scalar.
fn histogram_case(rng: &mut ChaCha8Rng) -> (Vec<Tensor>, Objective) {
    let cfg = HistogramConfig::new(8, 0.0, 255.0).expect("valid histogram");
    let w = uniform(&[1, 4, 8], -1.0, 1.0, rng);
    let f: Objective = Box::new(move |t, v| {
        let grid = PatchGrid::new(8, 8, 4)?;
        let feats = Extractor::Histogram(cfg).features(t, v[0], &grid)?;
        project(t, feats.values, &w)
    });
    (vec![uniform(&[1, 1, 8, 8], -0.95, 0.95, rng)], f)
}

fn proxy_case(rng: &mut ChaCha8Rng) -> (Vec<Tensor>, Objective) {
    let proxy = CnnProxy::seeded(1, 4, rng);
    let w = uniform(&[1, 4, 4], -1.0, 1.0, rng);
    let f: Objective = Box::new(move |t, v| {
        let grid = PatchGrid::new(16, 16, 8)?;
        let feats = Extractor::CnnProxy(proxy.clone()).features(t, v[0], &grid)?;
        project(t, feats.values, &w)
    });
    (vec![uniform(&[1, 1, 16, 16], -1.0, 1.0, rng)], f)
}

fn distance_case(rng: &mut ChaCha8Rng) -> (Vec<Tensor>, Objective) {
    let (i, j) = (rng.random_range(0..2), rng.random_range(2..4));
    let f: Objective = Box::new(move |t, v| {
        let grid = PatchGrid::new(8, 8, 4)?;
        let feats = Extractor::Histogram(HistogramConfig::new(8, 0.0, 255.0)?).features(t, v[0], &grid)?;
        feature_distance(t, &feats, 0, i, j)
    });
    (vec![uniform(&[1, 1, 8, 8], -0.95, 0.95, rng)], f)
}

fn smoothness_config(stop_gradient: bool) -> SmoothnessConfig {
    SmoothnessConfig { sigma_sq: 0.1, n_pairs: 8, stop_gradient }
}

/// One weighted term. With detached weights the source image is a constant,
/// since the weights are not differentiated.
fn smooth_term_case(through_weights: bool, trial_seed: u64, rng: &mut ChaCha8Rng) -> (Vec<Tensor>, Objective) {
    let source = uniform(&[1, 1, 8, 8], -0.95, 0.95, rng);
    let target = uniform(&[1, 1, 8, 8], -0.95, 0.95, rng);
    let fixed = source.clone();
    let f: Objective = Box::new(move |t, v| {
        let grid = PatchGrid::new(8, 8, 2)?;
        let ex = Extractor::Histogram(HistogramConfig::new(4, 0.0, 255.0)?);
        let (src, dst) = if through_weights { (v[0], v[1]) } else { (t.constant(fixed.clone()), v[0]) };
        let src = ex.features(t, src, &grid)?;
        let dst = ex.features(t, dst, &grid)?;
        let cfg = smoothness_config(!through_weights);
        let set = sample_pairs(t, &src, 0, &cfg, &mut substream(trial_seed, Stream::Pairs, 0))?;
        if through_weights {
            smoothness_term_through_weights(t, &src, &dst, 0, &set, cfg.sigma_sq)
        } else {
            smoothness_term(t, &dst, 0, &set)
        }
    });
    if through_weights {
        (vec![source, target], f)
    } else {
        (vec![target], f)
    }
}

/// Both directional terms with on-tape weights, so the objective's true
/// gradient is what the tape computes.
fn smooth_loss_case(trial_seed: u64, rng: &mut ChaCha8Rng) -> (Vec<Tensor>, Objective) {
    let f: Objective = Box::new(move |t, v| {
        let grid = PatchGrid::new(8, 8, 2)?;
        let ex = Extractor::Histogram(HistogramConfig::new(4, 0.0, 255.0)?);
        smoothness_loss(
            t,
            &ex,
            &grid,
            &smoothness_config(false),
            v[0],
            v[1],
            v[2],
            &mut substream(trial_seed, Stream::Pairs, 0),
        )
    });
    let inputs = (0..3).map(|_| uniform(&[2, 1, 8, 8], -0.95, 0.95, rng)).collect();
    (inputs, f)
}

fn gan_case(discriminator: bool, rng: &mut ChaCha8Rng) -> (Vec<Tensor>, Objective) {
    if discriminator {
        let f: Objective = Box::new(|t, v| lsgan_d_loss(t, v[0], v[1]));
        (vec![uniform(&[1, 1, 3, 3], -1.5, 1.5, rng), uniform(&[1, 1, 3, 3], -1.5, 1.5, rng)], f)
    } else {
        let f: Objective = Box::new(|t, v| lsgan_g_loss(t, v[0]));
        (vec![uniform(&[1, 1, 3, 3], -1.5, 1.5, rng)], f)
    }
}

fn cycle_case(rng: &mut ChaCha8Rng) -> (Vec<Tensor>, Objective) {
    let f: Objective = Box::new(|t, v| cycle_loss(t, v[0], v[1], v[2], v[3]));
    ((0..4).map(|_| uniform(&[1, 1, 4, 4], -1.0, 1.0, rng)).collect(), f)
}

/// Conv biases followed by instance norm cancel out of the objective: their
/// true gradient is exactly zero, so relative error there measures only
/// round-off. They are held constant.
fn norm_cancels(name: &str) -> bool {
    name.ends_with(".bias") && !name.starts_with("head")
}

/// The full generator objective of a miniature model, differentiated with
/// respect to the generator parameters. Smoothness weights stay on the tape
/// so finite differences see the same function.
fn objective_case(trial_seed: u64, rng: &mut ChaCha8Rng) -> Result<(Vec<Tensor>, Objective)> {
    let config = TrainingConfig {
        seed: trial_seed,
        gen_base_channels: 2,
        gen_downsample: 1,
        gen_res_blocks: 1,
        disc_base_channels: 2,
        disc_layers: 1,
        patch_size: 4,
        hist_bins: 8,
        n_pairs: 4,
        stop_gradient_weights: false,
        ..TrainingConfig::default()
    };
    let state = ModelState::<f64>::new(config)?;
    let (xa, yb) = (uniform(&[1, 1, 8, 8], -0.95, 0.95, rng), uniform(&[1, 1, 8, 8], -0.95, 0.95, rng));
    let inputs: Vec<Tensor> = state
        .g
        .params
        .iter()
        .chain(state.f.params.iter())
        .filter(|(name, _)| !norm_cancels(name))
        .map(|(_, t)| t.clone())
        .collect();
    let f: Objective = Box::new(move |t, v| {
        let mut free = v.iter().copied();
        let mut bind = |params: &ParamSet, t: &mut Tape| -> Vec<Var> {
            params
                .iter()
                .map(|(name, p)| {
                    if norm_cancels(name) {
                        t.constant(p.clone())
                    } else {
                        free.next().expect("one input per free parameter")
                    }
                })
                .collect()
        };
        let gv = bind(&state.g.params, t);
        let fv = bind(&state.f.params, t);
        let dxv: Vec<Var> = state.dx.params.tensors().map(|p| t.constant(p.clone())).collect();
        let dyv: Vec<Var> = state.dy.params.tensors().map(|p| t.constant(p.clone())).collect();
        let (x, y) = (t.constant(xa.clone()), t.constant(yb.clone()));
        let mut pairs = substream(trial_seed, Stream::Pairs, 1);
        Ok(generator_pass(&state, t, [&gv, &fv, &dxv, &dyv], x, y, &mut pairs)?.total)
    });
    Ok((inputs, f))
}

struct Accumulator {
    outcome: CaseOutcome,
}

impl Accumulator {
    fn new(name: impl Into<String>, kind: CaseKind, tolerance: f64) -> Self {
        Accumulator {
            outcome: CaseOutcome { name: name.into(), kind, tolerance, worst: 0.0, checked: 0, skipped: 0, trials: 0 },
        }
    }

    fn add(&mut self, r: &GradCheckReport) {
        self.outcome.worst = self.outcome.worst.max(r.max_rel_error);
        self.outcome.checked += r.checked;
        self.outcome.skipped += r.skipped;
        self.outcome.trials += 1;
    }
}

fn run_cases(
    opts: &SuiteOptions,
    name: &str,
    kind: CaseKind,
    mut build: impl FnMut(u64, &mut ChaCha8Rng) -> Result<(Vec<Tensor>, Objective)>,
) -> Result<CaseOutcome> {
    let (tolerance, eps) = match kind {
        CaseKind::Primitive => (PRIMITIVE_TOLERANCE, PRIMITIVE_EPS),
        _ => (COMPOSITE_TOLERANCE, COMPOSITE_EPS),
    };
    let mut acc = Accumulator::new(name, kind, tolerance);
    for trial in 0..opts.trials {
        let trial_seed = opts.seed.wrapping_mul(1_000_003).wrapping_add(trial as u64);
        let mut rng = substream(opts.seed, Stream::Data, (name_tag(name) << 20) | trial as u64);
        let (inputs, f) = build(trial_seed, &mut rng)?;
        let mut checker = GradChecker::new(eps).fault(opts.fault);
        if kind == CaseKind::Composite {
            checker = checker.coords(pick_coords(&inputs, COMPOSITE_COORDS, &mut rng));
        }
        let report = checker.run(f, &inputs)?;
        acc.add(&report);
    }
    Ok(acc.outcome)
}

fn name_tag(name: &str) -> u64 {
    crate::train::fnv1a(name.as_bytes()) & 0xff_ffff
}

/// Sampled smoothness loss with every pair versus a naive double loop.
fn oracle_case(m_side: usize, trials: usize, seed: u64) -> Result<CaseOutcome> {
    let m = m_side * m_side;
    let mut acc = Accumulator::new(format!("smoothness_oracle_m{m}"), CaseKind::Oracle, ORACLE_TOLERANCE);
    let patch = 2;
    let side = m_side * patch;
    let hist = HistogramConfig::new(16, 0.0, 255.0)?;
    for trial in 0..trials {
        let mut rng = substream(seed, Stream::Data, (0x0a4c << 20) | trial as u64);
        let imgs: Vec<Tensor> = (0..3).map(|_| uniform(&[2, 1, side, side], -1.0, 1.0, &mut rng)).collect();
        let cfg = SmoothnessConfig { sigma_sq: 0.1, n_pairs: max_pairs(m), stop_gradient: true };
        let mut tape = Tape::new();
        let v: Vec<Var> = imgs.iter().map(|t| tape.constant(t.clone())).collect();
        let grid = PatchGrid::new(side, side, patch)?;
        let got = smoothness_loss(&mut tape, &Extractor::Histogram(hist), &grid, &cfg, v[0], v[1], v[2], &mut rng)?;
        let got = tape.item(got)?;
        let want = naive_smoothness(&imgs, &hist, patch, cfg.sigma_sq);
        acc.outcome.worst = acc.outcome.worst.max((got - want).abs());
        acc.outcome.checked += 1;
        acc.outcome.trials += 1;
    }
    Ok(acc.outcome)
}

/// Per-patch normalized histograms by explicit loops, `[n][patch][bin]`.
fn naive_histograms(img: &Tensor, hist: &HistogramConfig, patch: usize) -> Vec<Vec<Vec<f64>>> {
    let s = img.shape();
    let (n, side) = (s[0], s[2]);
    let per = side / patch;
    let mut out = vec![vec![vec![0.0; hist.n_bins]; per * per]; n];
    for (b, image) in out.iter_mut().enumerate() {
        for py in 0..per {
            for px in 0..per {
                let row = &mut image[py * per + px];
                for y in 0..patch {
                    for x in 0..patch {
                        let v = img.data()[b * side * side + (py * patch + y) * side + px * patch + x];
                        let mapped = hist.to_mapped(v).clamp(hist.lo, hist.hi);
                        for (k, r) in row.iter_mut().enumerate() {
                            *r += soft_bin(mapped, k, hist);
                        }
                    }
                }
                row.iter_mut().for_each(|r| *r /= (patch * patch) as f64);
            }
        }
    }
    out
}

fn naive_term(from: &[Vec<f64>], to: &[Vec<f64>], sigma_sq: f64) -> f64 {
    let dist = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.len() as f64;
    let (mut total, mut k) = (0.0, 0usize);
    for i in 0..from.len() {
        for j in i + 1..from.len() {
            total += (-dist(&from[i], &from[j]) / sigma_sq).exp() * dist(&to[i], &to[j]);
            k += 1;
        }
    }
    total / k as f64
}

fn naive_smoothness(imgs: &[Tensor], hist: &HistogramConfig, patch: usize, sigma_sq: f64) -> f64 {
    let h: Vec<_> = imgs.iter().map(|t| naive_histograms(t, hist, patch)).collect();
    let n = h[0].len();
    (0..n).map(|b| naive_term(&h[0][b], &h[1][b], sigma_sq) + naive_term(&h[1][b], &h[2][b], sigma_sq)).sum::<f64>()
        / n as f64
}

/// Runs every case belonging to `module`.
pub fn run_suite(module: SuiteModule, opts: &SuiteOptions) -> Result<Vec<CaseOutcome>> {
    if opts.trials == 0 {
        return Err(Error::invalid("at least one trial is required"));
    }
    let mut out = Vec::new();
    if module.includes(SuiteModule::Tensor) {
        for p in Primitive::ALL {
            out.push(run_cases(opts, p.name(), CaseKind::Primitive, |_, rng| Ok(primitive_case(p, rng)))?);
        }
        out.push(run_cases(opts, "lsgan_d_loss", CaseKind::Composite, |_, rng| Ok(gan_case(true, rng)))?);
        out.push(run_cases(opts, "lsgan_g_loss", CaseKind::Composite, |_, rng| Ok(gan_case(false, rng)))?);
        out.push(run_cases(opts, "cycle_loss", CaseKind::Composite, |_, rng| Ok(cycle_case(rng)))?);
        out.push(run_cases(opts, "full_objective", CaseKind::Composite, objective_case)?);
    }
    if module.includes(SuiteModule::Features) {
        out.push(run_cases(opts, "histogram_features", CaseKind::Composite, |_, rng| Ok(histogram_case(rng)))?);
        out.push(run_cases(opts, "cnn_proxy_features", CaseKind::Composite, |_, rng| Ok(proxy_case(rng)))?);
        out.push(run_cases(opts, "feature_distance", CaseKind::Composite, |_, rng| Ok(distance_case(rng)))?);
    }
    if module.includes(SuiteModule::Smooth) {
        out.push(run_cases(opts, "smoothness_term", CaseKind::Composite, |s, rng| {
            Ok(smooth_term_case(false, s, rng))
        })?);
        out.push(run_cases(opts, "smoothness_term_through_weights", CaseKind::Composite, |s, rng| {
            Ok(smooth_term_case(true, s, rng))
        })?);
        out.push(run_cases(opts, "smoothness_loss", CaseKind::Composite, |s, rng| Ok(smooth_loss_case(s, rng)))?);
        for side in [2, 3, 4] {
            out.push(oracle_case(side, opts.trials.min(10), opts.seed)?);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn short_suite_passes() {
        let opts = SuiteOptions { trials: 2, ..SuiteOptions::default() };
        for c in run_suite(SuiteModule::All, &opts).unwrap() {
            assert!(c.passed(), "{c:?}");
        }
    }

    #[test]
    fn fault_is_caught() {
        let opts = SuiteOptions { trials: 2, fault: Some(Primitive::Conv2d), ..SuiteOptions::default() };
        let cases = run_suite(SuiteModule::Tensor, &opts).unwrap();
        let conv = cases.iter().find(|c| c.name == "conv2d").unwrap();
        assert!(!conv.passed());
        assert!(cases.iter().find(|c| c.name == "tanh").unwrap().passed());
    }
}
