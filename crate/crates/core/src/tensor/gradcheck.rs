//! Central finite-difference gradient checking.

use super::{Primitive, Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Outcome of one gradient check.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct GradCheckReport {
    /// Max over checked coordinates of
    /// `|analytic - numeric| / max(1e-8, |analytic| + |numeric|)`.
    pub max_rel_error: f64,
    pub checked: usize,
    /// Coordinates whose perturbation crossed a non-differentiable point.
    pub skipped: usize,
    /// `(input index, flat coordinate)` of the worst coordinate.
    pub worst: Option<(usize, usize)>,
}

impl GradCheckReport {
    pub fn merge(&mut self, other: &GradCheckReport) {
        if other.max_rel_error > self.max_rel_error || self.worst.is_none() {
            if other.worst.is_some() {
                self.worst = other.worst;
            }
            self.max_rel_error = self.max_rel_error.max(other.max_rel_error);
        }
        self.checked += other.checked;
        self.skipped += other.skipped;
    }
}

/// Configurable finite-difference checker over 64-bit tapes.
///
/// A coordinate is excluded when the `+eps` or `-eps` evaluation lands on a
/// different side of any relu/abs/clamp kink than the unperturbed point; this
/// covers every coordinate within `eps` of a non-differentiable point,
/// including inputs sitting exactly on one.
#[derive(Clone, Debug)]
pub struct GradChecker {
    pub eps: f64,
    /// Restrict to these `(input, coordinate)` pairs; all coordinates if `None`.
    pub coords: Option<Vec<(usize, usize)>>,
    /// Corrupt one primitive's backward rule (fault-injection fixture).
    pub fault: Option<Primitive>,
}

impl GradChecker {
    pub fn new(eps: f64) -> Self {
        GradChecker { eps, coords: None, fault: None }
    }

    pub fn coords(mut self, coords: Vec<(usize, usize)>) -> Self {
        self.coords = Some(coords);
        self
    }

    pub fn fault(mut self, fault: Option<Primitive>) -> Self {
        self.fault = fault;
        self
    }

    fn eval<F>(&self, f: &F, inputs: &[Tensor]) -> Result<(f64, u64)>
    where
        F: Fn(&mut Tape, &[Var]) -> Result<Var>,
    {
        let mut tape = Tape::new();
        tape.track_kinks();
        let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
        let out = f(&mut tape, &vars)?;
        let v = tape.item(out)?;
        Ok((v, tape.kink_signature().unwrap_or(0)))
    }

    /// Checks `f` (scalar-valued) at `inputs`; every input is differentiated.
    pub fn run<F>(&self, f: F, inputs: &[Tensor]) -> Result<GradCheckReport>
    where
        F: Fn(&mut Tape, &[Var]) -> Result<Var>,
    {
        if self.eps.is_nan() || self.eps <= 0.0 {
            return Err(Error::invalid(format!("eps must be positive, got {}", self.eps)));
        }
        let mut tape = Tape::new();
        tape.track_kinks();
        if let Some(p) = self.fault {
            tape.inject_fault(p);
        }
        let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
        let out = f(&mut tape, &vars)?;
        let base = tape.item(out)?;
        let sig = tape.kink_signature().unwrap_or(0);
        tape.backward(out)?;
        let analytic: Vec<Vec<f64>> =
            vars.iter().map(|&v| tape.grad(v).map(<[f64]>::to_vec).unwrap_or_default()).collect();
        drop(tape);

        let (again, sig_again) = self.eval(&f, inputs)?;
        if again.to_bits() != base.to_bits() || sig_again != sig {
            return Err(Error::NonDeterministic { first: base, second: again });
        }

        let coords: Vec<(usize, usize)> = match &self.coords {
            Some(c) => c.clone(),
            None => inputs.iter().enumerate().flat_map(|(i, t)| (0..t.numel()).map(move |k| (i, k))).collect(),
        };
        let mut report = GradCheckReport::default();
        let mut work = inputs.to_vec();
        for (i, k) in coords {
            if i >= inputs.len() || k >= inputs[i].numel() {
                return Err(Error::invalid(format!("coordinate ({i}, {k}) out of range")));
            }
            let x0 = inputs[i].data()[k];
            // the steps actually representable at x0
            let (hi, lo) = (x0 + self.eps, x0 - self.eps);
            work[i].data_mut()[k] = hi;
            let plus = self.eval(&f, &work);
            work[i].data_mut()[k] = lo;
            let minus = self.eval(&f, &work);
            work[i].data_mut()[k] = x0;
            let (Ok((fp, sp)), Ok((fm, sm))) = (plus, minus) else {
                report.skipped += 1;
                continue;
            };
            if sp != sig || sm != sig {
                report.skipped += 1;
                continue;
            }
            let numeric = (fp - fm) / (hi - lo);
            let a = analytic[i][k];
            let rel = (a - numeric).abs() / (a.abs() + numeric.abs()).max(1e-8);
            report.checked += 1;
            if rel > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = report.max_rel_error.max(rel);
                report.worst = Some((i, k));
            }
        }
        Ok(report)
    }
}

/// Checks every coordinate of every input at step `eps`.
pub fn grad_check<F>(f: F, inputs: &[Tensor], eps: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    GradChecker::new(eps).run(f, inputs)
}
