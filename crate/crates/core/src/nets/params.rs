use crate::error::{Error, Result};
use crate::tensor::{Real, Tape, Tensor, Var};

/// Ordered, named collection of parameter tensors for one network.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct ParamSet<T: Real = f64> {
    entries: Vec<(String, Tensor<T>)>,
}

impl<T: Real> ParamSet<T> {
    pub fn new() -> Self {
        ParamSet { entries: Vec::new() }
    }

    pub fn push(&mut self, name: impl Into<String>, tensor: Tensor<T>) {
        self.entries.push((name.into(), tensor));
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(n, _)| n.as_str())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn tensors(&self) -> impl Iterator<Item = &Tensor<T>> {
        self.entries.iter().map(|(_, t)| t)
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut Tensor<T>> {
        self.entries.iter_mut().map(|(_, t)| t)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.entries.iter_mut().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    /// Total scalar count.
    pub fn numel(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.numel()).sum()
    }

    /// Places every tensor on the tape, as trainable leaves or as constants.
    pub fn attach(&self, tape: &mut Tape<T>, trainable: bool) -> Vec<Var> {
        self.entries
            .iter()
            .map(|(_, t)| if trainable { tape.param(t.clone()) } else { tape.constant(t.clone()) })
            .collect()
    }

    /// Replaces values from another set with identical names and shapes.
    pub fn assign(&mut self, other: &ParamSet<T>) -> Result<()> {
        if self.len() != other.len() {
            return Err(Error::invalid(format!("parameter count mismatch: {} vs {}", self.len(), other.len())));
        }
        for ((n, t), (on, ot)) in self.entries.iter_mut().zip(&other.entries) {
            if n != on || t.shape() != ot.shape() {
                return Err(Error::invalid(format!(
                    "parameter {n} {:?} does not match {on} {:?}",
                    t.shape(),
                    ot.shape()
                )));
            }
            *t = ot.clone();
        }
        Ok(())
    }

    pub fn cast<U: Real>(&self) -> ParamSet<U> {
        ParamSet { entries: self.entries.iter().map(|(n, t)| (n.clone(), t.cast())).collect() }
    }
}

/// Hands out consecutive parameter vars in construction order.
pub(crate) struct Cursor<'a> {
    vars: &'a [Var],
    next: usize,
}

impl<'a> Cursor<'a> {
    pub fn new(vars: &'a [Var]) -> Self {
        Cursor { vars, next: 0 }
    }

    pub fn take(&mut self) -> Result<Var> {
        let v =
            self.vars.get(self.next).copied().ok_or_else(|| Error::invalid("too few parameter vars for network"))?;
        self.next += 1;
        Ok(v)
    }

    pub fn finish(self) -> Result<()> {
        if self.next != self.vars.len() {
            return Err(Error::invalid(format!("network used {} of {} parameter vars", self.next, self.vars.len())));
        }
        Ok(())
    }
}
