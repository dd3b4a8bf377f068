use rand::Rng;

use super::optim::grad_norm;
use super::state::ModelState;
use crate::error::{Error, Result};
use crate::features::PatchGrid;
use crate::nets::{cycle_loss, lsgan_d_loss, lsgan_g_loss, weighted_sum, Discriminator};
use crate::rng::{substream, Stream};
use crate::smooth::{smoothness_loss, smoothness_total};
use crate::tensor::{Real, Tape, Tensor, Var};

/// Loss components and gradient norms of one optimization step.
#[derive(Clone, Debug, PartialEq)]
pub struct StepReport {
    /// 1-based index of the step this report describes.
    pub step: u64,
    pub lr: f64,
    /// Adversarial loss of G (fooling `dy`).
    pub gan_g: f64,
    /// Adversarial loss of F (fooling `dx`).
    pub gan_f: f64,
    pub cyc: f64,
    /// Both smoothness directions summed; logged even when its weight is 0.
    pub smooth: f64,
    /// The minimized generator objective.
    pub total: f64,
    pub d_x: f64,
    pub d_y: f64,
    pub grad_norm_g: f64,
    pub grad_norm_f: f64,
    pub grad_norm_dx: f64,
    pub grad_norm_dy: f64,
}

impl StepReport {
    pub fn losses(&self) -> [(&'static str, f64); 7] {
        [
            ("gan_G", self.gan_g),
            ("gan_F", self.gan_f),
            ("cyc", self.cyc),
            ("smooth", self.smooth),
            ("total", self.total),
            ("D_X", self.d_x),
            ("D_Y", self.d_y),
        ]
    }

    fn check(&self) -> Result<()> {
        let norms = [self.grad_norm_g, self.grad_norm_f, self.grad_norm_dx, self.grad_norm_dy];
        if self.losses().iter().all(|(_, v)| v.is_finite()) && norms.iter().all(|v| v.is_finite()) {
            return Ok(());
        }
        Err(self.diverged("non-finite loss or gradient"))
    }

    fn diverged(&self, why: &str) -> Error {
        let losses: Vec<String> = self.losses().iter().map(|(k, v)| format!("{k}={v}")).collect();
        Error::Diverged {
            iteration: self.step,
            detail: format!(
                "{why}; {}; grad norms G={} F={} D_X={} D_Y={}",
                losses.join(" "),
                self.grad_norm_g,
                self.grad_norm_f,
                self.grad_norm_dx,
                self.grad_norm_dy
            ),
        }
    }
}

fn grads<T: Real>(tape: &Tape<T>, vars: &[Var]) -> Vec<Vec<T>> {
    vars.iter().map(|&v| tape.grad(v).map(<[T]>::to_vec).unwrap_or_default()).collect()
}

fn value<T: Real>(tape: &Tape<T>, v: Var) -> Result<f64> {
    Ok(tape.item(v)?.f64())
}

/// The generator objective and its parts, as built on one tape.
pub(crate) struct GeneratorPass {
    pub gan_g: Var,
    pub gan_f: Var,
    pub cyc: Var,
    pub smooth: Var,
    pub total: Var,
    pub fake_a: Var,
    pub fake_b: Var,
}

/// Builds the full generator objective for a batch pair on `tape`.
pub(crate) fn generator_pass<T: Real, R: Rng + ?Sized>(
    state: &ModelState<T>,
    tape: &mut Tape<T>,
    vars: [&[Var]; 4],
    x: Var,
    y: Var,
    rng: &mut R,
) -> Result<GeneratorPass> {
    let [gv, fv, dxv, dyv] = vars;
    let cfg = &state.config;
    let fake_b = state.g.forward(tape, gv, x)?;
    let rec_a = state.f.forward(tape, fv, fake_b)?;
    let fake_a = state.f.forward(tape, fv, y)?;
    let rec_b = state.g.forward(tape, gv, fake_a)?;
    let dy_fake = state.dy.forward(tape, dyv, fake_b)?;
    let dx_fake = state.dx.forward(tape, dxv, fake_a)?;
    let gan_g = lsgan_g_loss(tape, dy_fake)?;
    let gan_f = lsgan_g_loss(tape, dx_fake)?;
    let cyc = cycle_loss(tape, x, rec_a, y, rec_b)?;
    let grid = PatchGrid::for_shape(tape.shape(x), cfg.patch_size)?;
    let smooth_cfg = cfg.smoothness();
    let fwd = smoothness_loss(tape, &state.extractor, &grid, &smooth_cfg, x, fake_b, rec_a, rng)?;
    let bwd = smoothness_loss(tape, &state.extractor, &grid, &smooth_cfg, y, fake_a, rec_b, rng)?;
    let smooth = smoothness_total(tape, fwd, bwd)?;
    let gan = tape.add(gan_g, gan_f)?;
    let total = weighted_sum(tape, &[(cfg.lambda_gan, gan), (cfg.lambda_cyc, cyc), (cfg.lambda_smooth, smooth)])?;
    Ok(GeneratorPass { gan_g, gan_f, cyc, smooth, total, fake_a, fake_b })
}

fn discriminator_step<T: Real>(
    d: &Discriminator<T>,
    real: &Tensor<T>,
    fake: Tensor<T>,
    weight: f64,
) -> Result<(f64, Vec<Vec<T>>)> {
    let mut tape = Tape::new();
    let dv = d.params.attach(&mut tape, true);
    let real = tape.constant(real.clone());
    let fake = tape.constant(fake);
    let r = d.forward(&mut tape, &dv, real)?;
    let f = d.forward(&mut tape, &dv, fake)?;
    let loss = lsgan_d_loss(&mut tape, r, f)?;
    let scaled = weighted_sum(&mut tape, &[(weight, loss)])?;
    tape.backward(scaled)?;
    Ok((value(&tape, loss)?, grads(&tape, &dv)))
}

fn finite<T: Real>(g: &[Vec<T>]) -> bool {
    g.iter().flatten().all(|v| v.is_finite())
}

/// One G/F update, then one `dx` update, then one `dy` update.
///
/// Randomness (pair sampling, replay draws) comes from substreams indexed by
/// the step number, so a resumed run repeats an uninterrupted one.
pub fn train_step<T: Real>(
    state: &mut ModelState<T>,
    real_a: &Tensor<T>,
    real_b: &Tensor<T>,
    lr: f64,
) -> Result<StepReport> {
    let step = state.step + 1;
    let seed = state.config.seed;
    let mut pair_rng = substream(seed, Stream::Pairs, step);
    let mut buffer_rng = substream(seed, Stream::Buffer, step);
    let diverged = |e: Error| match e {
        Error::NonFinite { op } => {
            Error::Diverged { iteration: step, detail: format!("{op} produced a non-finite value") }
        }
        e => e,
    };

    let mut tape = Tape::new();
    let gv = state.g.params.attach(&mut tape, true);
    let fv = state.f.params.attach(&mut tape, true);
    let dxv = state.dx.params.attach(&mut tape, false);
    let dyv = state.dy.params.attach(&mut tape, false);
    let x = tape.constant(real_a.clone());
    let y = tape.constant(real_b.clone());
    let pass = generator_pass(state, &mut tape, [&gv, &fv, &dxv, &dyv], x, y, &mut pair_rng).map_err(diverged)?;
    tape.backward(pass.total).map_err(diverged)?;
    let (g_grads, f_grads) = (grads(&tape, &gv), grads(&tape, &fv));
    let mut report = StepReport {
        step,
        lr,
        gan_g: value(&tape, pass.gan_g)?,
        gan_f: value(&tape, pass.gan_f)?,
        cyc: value(&tape, pass.cyc)?,
        smooth: value(&tape, pass.smooth)?,
        total: value(&tape, pass.total)?,
        d_x: 0.0,
        d_y: 0.0,
        grad_norm_g: grad_norm(&g_grads),
        grad_norm_f: grad_norm(&f_grads),
        grad_norm_dx: 0.0,
        grad_norm_dy: 0.0,
    };
    let fake_a = tape.tensor(pass.fake_a);
    let fake_b = tape.tensor(pass.fake_b);
    drop(tape);
    if !finite(&g_grads) || !finite(&f_grads) {
        return Err(report.diverged("non-finite generator gradient"));
    }
    report.check()?;
    state.adam_g.update(&mut state.g.params, &g_grads, lr)?;
    state.adam_f.update(&mut state.f.params, &f_grads, lr)?;

    let w = state.config.lambda_gan;
    let pooled_a = state.pool_a.query_batch(&fake_a, &mut buffer_rng);
    let (d_x, dx_grads) = discriminator_step(&state.dx, real_a, pooled_a, w).map_err(diverged)?;
    let pooled_b = state.pool_b.query_batch(&fake_b, &mut buffer_rng);
    let (d_y, dy_grads) = discriminator_step(&state.dy, real_b, pooled_b, w).map_err(diverged)?;
    report.d_x = d_x;
    report.d_y = d_y;
    report.grad_norm_dx = grad_norm(&dx_grads);
    report.grad_norm_dy = grad_norm(&dy_grads);
    report.check()?;
    state.adam_dx.update(&mut state.dx.params, &dx_grads, lr)?;
    state.adam_dy.update(&mut state.dy.params, &dy_grads, lr)?;
    state.step = step;
    Ok(report)
}

/// One buffer per parameter tensor.
pub type Grads<T> = Vec<Vec<T>>;

/// Generator gradients for one batch pair without updating anything.
pub fn generator_gradients<T: Real>(
    state: &ModelState<T>,
    real_a: &Tensor<T>,
    real_b: &Tensor<T>,
    step: u64,
) -> Result<(Grads<T>, Grads<T>)> {
    let mut rng = substream(state.config.seed, Stream::Pairs, step);
    let mut tape = Tape::new();
    let gv = state.g.params.attach(&mut tape, true);
    let fv = state.f.params.attach(&mut tape, true);
    let dxv = state.dx.params.attach(&mut tape, false);
    let dyv = state.dy.params.attach(&mut tape, false);
    let x = tape.constant(real_a.clone());
    let y = tape.constant(real_b.clone());
    let pass = generator_pass(state, &mut tape, [&gv, &fv, &dxv, &dyv], x, y, &mut rng)?;
    tape.backward(pass.total)?;
    Ok((grads(&tape, &gv), grads(&tape, &fv)))
}
