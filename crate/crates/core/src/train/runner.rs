use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;

use super::checkpoint;
use super::optim::lr_schedule;
use super::state::ModelState;
use super::step::{train_step, StepReport};
use crate::data::{hstack, Dataset, Image8};
use crate::error::{Error, Result};
use crate::rng::{substream, Stream};
use crate::tensor::{Real, Tensor};

pub const METRICS_FILE: &str = "metrics.csv";
pub const METRICS_HEADER: [&str; 9] =
    ["step", "epoch", "loss_gan_G", "loss_gan_F", "loss_D_X", "loss_D_Y", "loss_cyc", "loss_smooth", "lr"];
pub const FINAL_CHECKPOINT: &str = "final.ckpt";

/// Steps in one epoch: one pass over the larger pool, optionally capped.
pub fn steps_per_epoch(n_a: usize, n_b: usize, batch: usize, cap: usize) -> Result<usize> {
    if n_a == 0 || n_b == 0 {
        return Err(Error::invalid("both training pools must be non-empty"));
    }
    let n = (n_a.max(n_b) / batch).max(1);
    Ok(if cap > 0 { n.min(cap) } else { n })
}

fn epoch_order(seed: u64, epoch: usize, pool: u64, n: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut substream(seed, Stream::Shuffle, 2 * epoch as u64 + pool));
    order
}

fn batch<T: Real>(pool: &[Tensor<T>], order: &[usize], start: usize, size: usize) -> Result<Tensor<T>> {
    let items: Vec<Tensor<T>> = (start..start + size).map(|k| pool[order[k % order.len()]].clone()).collect();
    Tensor::stack_batch(&items)
}

fn metrics_row(r: &StepReport, epoch: usize) -> [String; 9] {
    [
        r.step.to_string(),
        epoch.to_string(),
        r.gan_g.to_string(),
        r.gan_f.to_string(),
        r.d_x.to_string(),
        r.d_y.to_string(),
        r.cyc.to_string(),
        r.smooth.to_string(),
        r.lr.to_string(),
    ]
}

/// Opens the metrics log, keeping only rows up to `step` from an earlier run.
fn open_metrics(path: &Path, step: u64) -> Result<csv::Writer<fs::File>> {
    let mut kept = Vec::new();
    if step > 0 && path.exists() {
        let mut r = csv::Reader::from_path(path).map_err(|e| Error::format(path, e.to_string()))?;
        for rec in r.records() {
            let rec = rec.map_err(|e| Error::format(path, e.to_string()))?;
            let s: u64 =
                rec.get(0).and_then(|v| v.parse().ok()).ok_or_else(|| Error::format(path, "bad step column"))?;
            if s <= step {
                kept.push(rec);
            }
        }
    }
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::format(path, e.to_string()))?;
    w.write_record(METRICS_HEADER).map_err(|e| Error::format(path, e.to_string()))?;
    for rec in &kept {
        w.write_record(rec).map_err(|e| Error::format(path, e.to_string()))?;
    }
    Ok(w)
}

/// Input, translation and reconstruction side by side, for both directions.
pub fn sample_grid<T: Real>(state: &ModelState<T>, a: &Image8, b: &Image8) -> Result<Image8> {
    let ta = a.to_tensor::<T>();
    let tb = b.to_tensor::<T>();
    let gb = state.g.translate(&ta)?;
    let fa = state.f.translate(&tb)?;
    let row_a = [a.clone(), Image8::from_tensor(&gb)?, Image8::from_tensor(&state.f.translate(&gb)?)?];
    let row_b = [b.clone(), Image8::from_tensor(&fa)?, Image8::from_tensor(&state.g.translate(&fa)?)?];
    let (top, bottom) = (hstack(&row_a)?, hstack(&row_b)?);
    let mut data = Vec::with_capacity(top.data.len() * 2);
    let plane = top.height * top.width;
    for c in 0..top.channels {
        data.extend_from_slice(&top.data[c * plane..(c + 1) * plane]);
        data.extend_from_slice(&bottom.data[c * plane..(c + 1) * plane]);
    }
    Image8::new(top.channels, top.height * 2, top.width, data)
}

fn sample_ext(channels: usize) -> &'static str {
    if channels == 1 {
        "pgm"
    } else {
        "ppm"
    }
}

/// Trains `state` on `data` until `epochs_total`, writing `metrics.csv`,
/// checkpoints and sample grids under `out`. A state loaded from a
/// checkpoint resumes at its step; `on_step` sees every report.
pub fn run<T: Real>(
    mut state: ModelState<T>,
    data: &Dataset,
    out: &Path,
    mut on_step: impl FnMut(&StepReport),
) -> Result<ModelState<T>> {
    let cfg = state.config.clone();
    for img in data.train_a.iter().chain(&data.train_b) {
        if img.channels != cfg.channels {
            return Err(Error::Config(format!(
                "images have {} channels, config expects {}",
                img.channels, cfg.channels
            )));
        }
    }
    let spe = steps_per_epoch(data.train_a.len(), data.train_b.len(), cfg.batch_size, cfg.steps_per_epoch)?;
    let pool_a: Vec<Tensor<T>> = data.train_a.iter().map(Image8::to_tensor).collect();
    let pool_b: Vec<Tensor<T>> = data.train_b.iter().map(Image8::to_tensor).collect();
    let total_steps = (spe * cfg.epochs_total) as u64;
    if state.step > total_steps {
        return Err(Error::Config(format!(
            "checkpoint step {} is past the end of training ({total_steps})",
            state.step
        )));
    }
    fs::create_dir_all(out.join("checkpoints"))?;
    fs::create_dir_all(out.join("samples"))?;
    let metrics_path = out.join(METRICS_FILE);
    let mut metrics = open_metrics(&metrics_path, state.step)?;
    let csv_err = |e: csv::Error| Error::format(&metrics_path, e.to_string());
    let (sample_a, sample_b) = match data.test.first() {
        Some(p) => (p.a.clone(), p.b.clone()),
        None => (data.train_a[0].clone(), data.train_b[0].clone()),
    };

    let first_epoch = (state.step / spe as u64) as usize;
    for epoch in first_epoch..cfg.epochs_total {
        let lr = lr_schedule(epoch, cfg.lr, cfg.epochs_total, cfg.constant_epochs())?;
        let order_a = epoch_order(cfg.seed, epoch, 0, pool_a.len());
        let order_b = epoch_order(cfg.seed, epoch, 1, pool_b.len());
        let first_k = state.step as usize - epoch * spe;
        for k in first_k..spe {
            let xa = batch(&pool_a, &order_a, k * cfg.batch_size, cfg.batch_size)?;
            let xb = batch(&pool_b, &order_b, k * cfg.batch_size, cfg.batch_size)?;
            let report = train_step(&mut state, &xa, &xb, lr)?;
            metrics.write_record(metrics_row(&report, epoch)).map_err(csv_err)?;
            on_step(&report);
        }
        metrics.flush()?;
        let done = epoch + 1;
        if cfg.checkpoint_every > 0 && done % cfg.checkpoint_every == 0 {
            checkpoint::save(&state, &out.join("checkpoints").join(format!("epoch_{done:03}.ckpt")))?;
        }
        if cfg.sample_every > 0 && done % cfg.sample_every == 0 {
            let name = format!("epoch_{done:03}.{}", sample_ext(cfg.channels));
            sample_grid(&state, &sample_a, &sample_b)?.write_pnm(&out.join("samples").join(name))?;
        }
    }
    metrics.flush()?;
    checkpoint::save(&state, &out.join(FINAL_CHECKPOINT))?;
    Ok(state)
}

/// Path of the checkpoint written at the end of a run.
pub fn final_checkpoint(out: &Path) -> PathBuf {
    out.join(FINAL_CHECKPOINT)
}
