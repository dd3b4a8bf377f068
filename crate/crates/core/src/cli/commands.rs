use std::path::Path;

use anyhow::{bail, Context, Result};
use harmonic_gan::data::{gen_synthetic_dataset, load_dataset, write_dataset, Image8, SynthConfig};
use harmonic_gan::eval::{evaluate, evaluate_model, write_report, Direction};
use harmonic_gan::features::{Extractor, ExtractorKind, HistogramConfig};
use harmonic_gan::gradsuite::{run_suite, CaseKind, SuiteModule, SuiteOptions};
use harmonic_gan::tensor::Real;
use harmonic_gan::train::{self, checkpoint, ModelState, Precision, TrainingConfig};

use super::*;

pub fn run(cli: Cli) -> Result<Outcome> {
    match cli.command {
        Command::GenData(a) => gen_data(a),
        Command::Train(a) => train_cmd(a),
        Command::Translate(a) => translate(a),
        Command::Eval(a) => eval(a),
        Command::Gradcheck(a) => gradcheck(a),
    }
}

fn gen_data(a: GenDataArgs) -> Result<Outcome> {
    let cfg = SynthConfig {
        n_train: a.n_train,
        n_test: a.n_test,
        size: a.size,
        channels: a.channels,
        lesion_prob: a.lesion_prob,
        seed: a.seed,
    };
    let split = gen_synthetic_dataset(&cfg)?;
    write_dataset(&a.out, &split, a.force)?;
    println!(
        "wrote {} + {} training images and {} test pairs to {}",
        split.train_a.len(),
        split.train_b.len(),
        split.test.len(),
        a.out.display()
    );
    Ok(Outcome::Success)
}

fn training_config(a: &TrainArgs) -> Result<TrainingConfig> {
    let mut cfg = match &a.config {
        Some(p) => TrainingConfig::load(p)?,
        None => TrainingConfig::default(),
    };
    for kv in &a.set {
        let (k, v) = kv.split_once('=').with_context(|| format!("--set expects KEY=VALUE, got {kv:?}"))?;
        cfg.set(k.trim(), v.trim())?;
    }
    if let Some(v) = a.lambda_smooth {
        cfg.lambda_smooth = v;
    }
    if let Some(e) = a.extractor {
        cfg.extractor = match e {
            ExtractorArg::Histogram => ExtractorKind::Histogram,
            ExtractorArg::CnnProxy => ExtractorKind::CnnProxy,
        };
    }
    if let Some(n) = a.epochs {
        cfg.epochs_total = n;
        cfg.epochs_constant = None;
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn train_with<T: Real>(state: ModelState<T>, a: &TrainArgs) -> Result<()> {
    let data = load_dataset(&a.data)?;
    let start = state.step;
    let mut last = None;
    let done = train::run(state, &data, &a.out, |r| {
        if r.step % 100 == 0 {
            eprintln!("step {} cyc {:.4} smooth {:.4} total {:.4}", r.step, r.cyc, r.smooth, r.total);
        }
        last = Some(r.clone());
    })?;
    if let Some(r) = last {
        println!(
            "trained steps {}..{}: gan_G {:.4} gan_F {:.4} D_X {:.4} D_Y {:.4} cyc {:.4} smooth {:.4}",
            start + 1,
            done.step,
            r.gan_g,
            r.gan_f,
            r.d_x,
            r.d_y,
            r.cyc,
            r.smooth
        );
    }
    println!("final checkpoint: {}", train::final_checkpoint(&a.out).display());
    Ok(())
}

fn train_cmd(a: TrainArgs) -> Result<Outcome> {
    match &a.resume {
        Some(ckpt) => match checkpoint::read_config(ckpt)?.precision {
            Precision::F32 => train_with(checkpoint::load::<f32>(ckpt)?, &a)?,
            Precision::F64 => train_with(checkpoint::load::<f64>(ckpt)?, &a)?,
        },
        None => {
            let cfg = training_config(&a)?;
            match cfg.precision {
                Precision::F32 => train_with(ModelState::<f32>::new(cfg)?, &a)?,
                Precision::F64 => train_with(ModelState::<f64>::new(cfg)?, &a)?,
            }
        }
    }
    Ok(Outcome::Success)
}

fn direction(d: DirectionArg) -> Direction {
    match d {
        DirectionArg::Ab => Direction::AB,
        DirectionArg::Ba => Direction::BA,
    }
}

fn translate_with<T: Real>(state: &ModelState<T>, dir: Direction, img: &Image8) -> Result<Image8> {
    let net = match dir {
        Direction::AB => &state.g,
        Direction::BA => &state.f,
    };
    Ok(Image8::from_tensor(&net.translate(&img.to_tensor::<T>())?)?)
}

fn translate(a: TranslateArgs) -> Result<Outcome> {
    let img = Image8::read_pnm(&a.input)?;
    let dir = direction(a.direction);
    let out = match checkpoint::read_config(&a.ckpt)?.precision {
        Precision::F32 => translate_with(&checkpoint::load::<f32>(&a.ckpt)?, dir, &img)?,
        Precision::F64 => translate_with(&checkpoint::load::<f64>(&a.ckpt)?, dir, &img)?,
    };
    out.write_pnm(&a.out)?;
    Ok(Outcome::Success)
}

fn eval_model_at(
    ckpt: &Path,
    a: &EvalArgs,
    test: &[harmonic_gan::data::TestPair],
) -> Result<Vec<harmonic_gan::eval::EvalRow>> {
    Ok(match checkpoint::read_config(ckpt)?.precision {
        Precision::F32 => evaluate_model(&checkpoint::load::<f32>(ckpt)?, test, a.k_top)?,
        Precision::F64 => evaluate_model(&checkpoint::load::<f64>(ckpt)?, test, a.k_top)?,
    })
}

fn eval(a: EvalArgs) -> Result<Outcome> {
    let data = load_dataset(&a.data)?;
    if data.test.is_empty() {
        bail!("{} has no test pairs", a.data.display());
    }
    let rows = match &a.ckpt {
        Some(ckpt) => eval_model_at(ckpt, &a, &data.test)?,
        None => {
            let defaults = TrainingConfig::default();
            let ex = Extractor::Histogram(HistogramConfig::new(defaults.hist_bins, 0.0, 255.0)?);
            evaluate(&data.test, &ex, defaults.patch_size, a.k_top, |dir, img| {
                let pair = data.test.iter().find(|p| dir.split(p).0 == img).expect("image comes from the test split");
                Ok(dir.split(pair).1.clone())
            })?
        }
    };
    write_report(&a.out, &rows)?;
    println!("wrote {} per-image rows and 2 aggregates to {}", rows.len(), a.out.display());
    Ok(Outcome::Success)
}

fn gradcheck(a: GradcheckArgs) -> Result<Outcome> {
    let fault = a.inject_fault;
    let module = match a.module {
        ModuleArg::All => SuiteModule::All,
        ModuleArg::Tensor => SuiteModule::Tensor,
        ModuleArg::Features => SuiteModule::Features,
        ModuleArg::Smooth => SuiteModule::Smooth,
    };
    let opts = SuiteOptions { trials: a.trials, seed: a.seed, fault };
    let cases = run_suite(module, &opts)?;
    let mut failed = 0;
    println!("{:<34} {:<9} {:>12} {:>9} {:>8} {:>8}  result", "case", "kind", "worst", "tol", "checked", "skipped");
    for c in &cases {
        let kind = match c.kind {
            CaseKind::Primitive => "primitive",
            CaseKind::Composite => "composite",
            CaseKind::Oracle => "oracle",
        };
        let ok = c.passed();
        failed += usize::from(!ok);
        println!(
            "{:<34} {:<9} {:>12.3e} {:>9.0e} {:>8} {:>8}  {}",
            c.name,
            kind,
            c.worst,
            c.tolerance,
            c.checked,
            c.skipped,
            if ok { "ok" } else { "FAIL" }
        );
    }
    println!("{} cases, {} failed", cases.len(), failed);
    Ok(if failed == 0 { Outcome::Success } else { Outcome::Failed })
}
