use crate::error::{Error, Result};
use crate::nets::ParamSet;
use crate::tensor::{Real, Tensor};

pub const BETA1: f64 = 0.5;
pub const BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// Adam moments for one parameter set.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T: Real = f64> {
    pub step: u64,
    pub m: Vec<Vec<T>>,
    pub v: Vec<Vec<T>>,
}

impl<T: Real> AdamState<T> {
    pub fn new(params: &ParamSet<T>) -> Self {
        let zeros = || params.tensors().map(|t| vec![T::zero(); t.numel()]).collect();
        AdamState { step: 0, m: zeros(), v: zeros() }
    }

    /// One bias-corrected Adam step: `p -= lr * m_hat / (sqrt(v_hat) + eps)`.
    pub fn update(&mut self, params: &mut ParamSet<T>, grads: &[Vec<T>], lr: f64) -> Result<()> {
        if grads.len() != params.len() || self.m.len() != params.len() {
            return Err(Error::invalid("gradient/moment count does not match parameters"));
        }
        self.step += 1;
        let t = self.step as i32;
        let (b1, b2) = (T::of(BETA1), T::of(BETA2));
        let c1 = T::of(1.0 - BETA1.powi(t));
        let c2 = T::of(1.0 - BETA2.powi(t));
        let (lr, eps) = (T::of(lr), T::of(ADAM_EPS));
        for (((p, g), m), v) in params.tensors_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            if g.len() != p.numel() {
                return Err(Error::invalid("gradient length does not match parameter"));
            }
            for (((p, &g), m), v) in p.data_mut().iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
                *m = b1 * *m + (T::one() - b1) * g;
                *v = b2 * *v + (T::one() - b2) * g * g;
                let mh = *m / c1;
                let vh = *v / c2;
                *p -= lr * mh / (vh.sqrt() + eps);
            }
        }
        Ok(())
    }

    pub fn moments(&self, params: &ParamSet<T>) -> Vec<(String, Tensor<T>, Tensor<T>)> {
        params
            .iter()
            .zip(self.m.iter().zip(&self.v))
            .map(|((name, t), (m, v))| {
                (
                    name.to_string(),
                    Tensor::new(t.shape().to_vec(), m.clone()).expect("moment shape"),
                    Tensor::new(t.shape().to_vec(), v.clone()).expect("moment shape"),
                )
            })
            .collect()
    }
}

/// Constant learning rate for the first `epochs_constant` epochs, then a
/// linear decay towards zero at `epochs_total`.
pub fn lr_schedule(epoch: usize, base: f64, epochs_total: usize, epochs_constant: usize) -> Result<f64> {
    if epoch >= epochs_total {
        return Err(Error::invalid(format!("epoch {epoch} outside 0..{epochs_total}")));
    }
    if epochs_constant > epochs_total {
        return Err(Error::invalid("epochs_constant exceeds epochs_total"));
    }
    if epoch < epochs_constant || epochs_total == epochs_constant {
        return Ok(base);
    }
    // ratio first: it is exactly 1 at the boundary and rounding stays monotone
    Ok(base * ((epochs_total - epoch) as f64 / (epochs_total - epochs_constant) as f64))
}

/// L2 norm over a set of gradient buffers.
pub fn grad_norm<T: Real>(grads: &[Vec<T>]) -> f64 {
    grads.iter().flatten().map(|g| g.f64() * g.f64()).sum::<f64>().sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_param(v: f64) -> ParamSet<f64> {
        let mut p = ParamSet::new();
        p.push("w", Tensor::new(vec![1], vec![v]).unwrap());
        p
    }

    #[test]
    fn zero_gradients_leave_parameters() {
        let mut p = one_param(0.3);
        let mut s = AdamState::new(&p);
        for _ in 0..5 {
            s.update(&mut p, &[vec![0.0]], 1e-3).unwrap();
        }
        assert_eq!(p.get("w").unwrap().data()[0], 0.3);
    }

    #[test]
    fn first_step_matches_hand_computation() {
        let (g, lr) = (0.25, 2e-4);
        let mut p = one_param(1.0);
        let mut s = AdamState::new(&p);
        s.update(&mut p, &[vec![g]], lr).unwrap();
        // m_hat = g, v_hat = g^2 after bias correction
        let m = (1.0 - BETA1) * g / (1.0 - BETA1);
        let v = (1.0 - BETA2) * g * g / (1.0 - BETA2);
        let want = 1.0 - lr * m / (v.sqrt() + ADAM_EPS);
        assert!((p.get("w").unwrap().data()[0] - want).abs() < 1e-15);
        assert!((want - (1.0 - lr * g / (g.abs() + ADAM_EPS))).abs() < 1e-15);
    }

    #[test]
    fn constant_gradient_step_tends_to_lr() {
        let lr = 1e-3;
        let mut p = one_param(0.0);
        let mut s = AdamState::new(&p);
        let mut last = 0.0;
        for _ in 0..2000 {
            let before = p.get("w").unwrap().data()[0];
            s.update(&mut p, &[vec![-3.0]], lr).unwrap();
            last = p.get("w").unwrap().data()[0] - before;
        }
        assert!((last - lr).abs() < 1e-9, "{last}");
    }

    #[test]
    fn schedule_examples() {
        assert_eq!(lr_schedule(0, 2e-4, 20, 10).unwrap(), 2e-4);
        assert_eq!(lr_schedule(9, 2e-4, 20, 10).unwrap(), 2e-4);
        assert_eq!(lr_schedule(10, 2e-4, 20, 10).unwrap(), 2e-4);
        assert!((lr_schedule(19, 2e-4, 20, 10).unwrap() - 2e-5).abs() < 1e-18);
        assert!(lr_schedule(20, 2e-4, 20, 10).is_err());
        let mut prev = f64::INFINITY;
        for e in 0..40 {
            let lr = lr_schedule(e, 2e-4, 40, 20).unwrap();
            assert!(lr <= prev);
            prev = lr;
        }
    }
}
