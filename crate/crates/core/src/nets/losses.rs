//! Least-squares adversarial losses, cycle consistency and their weighted sum.

use crate::error::{Error, Result};
use crate::tensor::{Real, Tape, Var};

fn mean_sq_from<T: Real>(tape: &mut Tape<T>, v: Var, target: f64) -> Result<Var> {
    let d = if target == 0.0 { v } else { tape.add_scalar(v, -target)? };
    let sq = tape.square(d)?;
    tape.mean(sq)
}

/// `mean((d_real - 1)^2) + mean(d_fake^2)`.
pub fn lsgan_d_loss<T: Real>(tape: &mut Tape<T>, d_real: Var, d_fake: Var) -> Result<Var> {
    let real = mean_sq_from(tape, d_real, 1.0)?;
    let fake = mean_sq_from(tape, d_fake, 0.0)?;
    tape.add(real, fake)
}

/// `mean((d_fake - 1)^2)`. Discriminator parameters should be attached as
/// constants when this drives a generator update.
pub fn lsgan_g_loss<T: Real>(tape: &mut Tape<T>, d_fake: Var) -> Result<Var> {
    mean_sq_from(tape, d_fake, 1.0)
}

/// `(loss_D, loss_G)` for one discriminator's logit maps.
pub fn lsgan_losses<T: Real>(tape: &mut Tape<T>, d_real: Var, d_fake: Var) -> Result<(Var, Var)> {
    let d = lsgan_d_loss(tape, d_real, d_fake)?;
    let g = lsgan_g_loss(tape, d_fake)?;
    Ok((d, g))
}

/// `mean|F(G(x)) - x| + mean|G(F(y)) - y|`.
pub fn cycle_loss<T: Real>(tape: &mut Tape<T>, x: Var, fgx: Var, y: Var, gfy: Var) -> Result<Var> {
    let a = tape.l1_distance(fgx, x)?;
    let b = tape.l1_distance(gfy, y)?;
    tape.add(a, b)
}

/// Objective weights. All must be non-negative.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub gan: f64,
    pub cyc: f64,
    pub smooth: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights { gan: 1.0, cyc: 10.0, smooth: 1.0 }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("gan", self.gan), ("cyc", self.cyc), ("smooth", self.smooth)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("loss weight {name} must be finite and >= 0, got {v}")));
            }
        }
        Ok(())
    }
}

/// `Σ weight · term`, left to right. Terms with weight exactly zero are left out
/// of the graph entirely.
pub fn weighted_sum<T: Real>(tape: &mut Tape<T>, terms: &[(f64, Var)]) -> Result<Var> {
    let mut acc: Option<Var> = None;
    for &(w, v) in terms {
        if !(w >= 0.0 && w.is_finite()) {
            return Err(Error::invalid(format!("negative or non-finite loss weight {w}")));
        }
        if w == 0.0 {
            continue;
        }
        let s = tape.scalar_mul(v, w)?;
        acc = Some(match acc {
            Some(a) => tape.add(a, s)?,
            None => s,
        });
    }
    match acc {
        Some(a) => Ok(a),
        None => {
            // every weight is zero: a zero that still depends on the first term
            let &(_, v) = terms.first().ok_or_else(|| Error::invalid("empty objective"))?;
            tape.scalar_mul(v, 0.0)
        }
    }
}

/// `λ_gan · L_gan + λ_cyc · L_cyc`.
pub fn cyclegan_objective<T: Real>(tape: &mut Tape<T>, gan: Var, cyc: Var, weights: &LossWeights) -> Result<Var> {
    weights.validate()?;
    weighted_sum(tape, &[(weights.gan, gan), (weights.cyc, cyc)])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn full(tape: &mut Tape<f64>, v: f64) -> Var {
        tape.constant(Tensor::full(vec![1, 1, 3, 3], v))
    }

    #[test]
    fn lsgan_examples() {
        let mut t = Tape::<f64>::new();
        let (one, zero, half) = (full(&mut t, 1.0), full(&mut t, 0.0), full(&mut t, 0.5));
        let (d, _) = lsgan_losses(&mut t, one, zero).unwrap();
        assert_eq!(t.item(d).unwrap(), 0.0);
        let g = lsgan_g_loss(&mut t, one).unwrap();
        assert_eq!(t.item(g).unwrap(), 0.0);
        let (d, g) = lsgan_losses(&mut t, half, half).unwrap();
        assert_eq!(t.item(d).unwrap(), 0.5);
        assert_eq!(t.item(g).unwrap(), 0.25);
    }

    #[test]
    fn cycle_loss_offset() {
        let mut t = Tape::<f64>::new();
        let x = t.constant(Tensor::from_fn(vec![1, 1, 4, 4], |i| i as f64 / 16.0).unwrap());
        let fgx = t.add_scalar(x, 0.1).unwrap();
        let y = full(&mut t, 0.3);
        let l = cycle_loss(&mut t, x, fgx, y, y).unwrap();
        assert!((t.item(l).unwrap() - 0.1).abs() < 1e-12);
        let l = cycle_loss(&mut t, x, x, y, y).unwrap();
        assert_eq!(t.item(l).unwrap(), 0.0);
    }

    #[test]
    fn objective_arithmetic() {
        let mut t = Tape::<f64>::new();
        let gan = t.constant(Tensor::scalar(0.2).unwrap());
        let cyc = t.constant(Tensor::scalar(0.05).unwrap());
        let w = LossWeights::default();
        let o = cyclegan_objective(&mut t, gan, cyc, &w).unwrap();
        assert!((t.item(o).unwrap() - 0.7).abs() < 1e-12);
        let pure = cyclegan_objective(&mut t, gan, cyc, &LossWeights { cyc: 0.0, ..w }).unwrap();
        assert_eq!(t.item(pure).unwrap(), 0.2);
        let z = t.constant(Tensor::scalar(0.0).unwrap());
        let o = cyclegan_objective(&mut t, z, z, &w).unwrap();
        assert_eq!(t.item(o).unwrap(), 0.0);
        assert!(cyclegan_objective(&mut t, gan, cyc, &LossWeights { gan: -1.0, ..w }).is_err());
    }
}
