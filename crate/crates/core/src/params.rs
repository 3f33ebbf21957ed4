//! Named parameter store and its binding onto a tape.

use std::collections::HashMap;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Gradients, Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamKind {
    ConvKernel,
    Weight,
    Bias,
    NormScale,
    NormShift,
    /// Batch-norm running statistic; updated by training, never by gradients.
    RunningStat,
}

impl ParamKind {
    pub fn trainable(self) -> bool {
        self != ParamKind::RunningStat
    }

    /// Only convolution kernels take weight decay.
    pub fn decays(self) -> bool {
        self == ParamKind::ConvKernel
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Parameter {
    pub kind: ParamKind,
    pub tensor: Tensor,
}

/// Parameters in schema (insertion) order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Parameters {
    entries: IndexMap<String, Parameter>,
}

impl Parameters {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, kind: ParamKind, tensor: Tensor) {
        let tensor = tensor.with_requires_grad(kind.trainable());
        self.entries.insert(name.into(), Parameter { kind, tensor });
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.entries
            .get(name)
            .map(|p| &p.tensor)
            .ok_or_else(|| Error::Contract(format!("unknown parameter `{name}`")))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        self.entries
            .get_mut(name)
            .map(|p| &mut p.tensor)
            .ok_or_else(|| Error::Contract(format!("unknown parameter `{name}`")))
    }

    pub fn kind(&self, name: &str) -> Option<ParamKind> {
        self.entries.get(name).map(|p| p.kind)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Parameter)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Parameter)> {
        self.entries.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    /// Trainable tensors, in schema order.
    pub fn trainable(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.iter()
            .filter(|(_, p)| p.kind.trainable())
            .map(|(n, p)| (n, &p.tensor))
    }

    pub fn zero_grad(&mut self) {
        self.entries.values_mut().for_each(|p| p.tensor.zero_grad());
    }

    /// Total number of scalar values.
    pub fn numel(&self) -> usize {
        self.entries.values().map(|p| p.tensor.numel()).sum()
    }

    /// Records every parameter as a tape leaf.
    pub fn bind(&self, tape: &mut Tape) -> Bindings {
        let vars = self
            .entries
            .iter()
            .map(|(name, p)| (name.clone(), tape.leaf(&p.tensor)))
            .collect();
        Bindings { vars }
    }
}

/// Parameter name → tape node for one forward pass.
#[derive(Clone, Debug, Default)]
pub struct Bindings {
    vars: HashMap<String, Var>,
}

impl Bindings {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, var: Var) {
        self.vars.insert(name.into(), var);
    }

    pub fn var(&self, name: &str) -> Result<Var> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| Error::Contract(format!("parameter `{name}` is not bound")))
    }

    /// Adds each bound parameter's gradient into its tensor's grad buffer.
    pub fn accumulate(&self, grads: &Gradients, params: &mut Parameters) -> Result<()> {
        for (name, p) in params.iter_mut() {
            if !p.tensor.requires_grad() {
                continue;
            }
            let Some(var) = self.vars.get(name) else { continue };
            if let Some(g) = grads.wrt(*var) {
                p.tensor.accumulate_grad(g)?;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn double_backward_doubles_gradient() {
        let mut params = Parameters::new();
        params.insert("w", ParamKind::Weight, Tensor::vector(&[1.0, -2.0, 0.5]));
        let mut tape = Tape::new();
        let b = params.bind(&mut tape);
        let w = b.var("w").unwrap();
        let sq = tape.mul(w, w).unwrap();
        let loss = tape.sum(sq);
        let grads = tape.backward(loss).unwrap();
        b.accumulate(&grads, &mut params).unwrap();
        let once = params.get("w").unwrap().grad().unwrap().to_vec();
        let grads = tape.backward(loss).unwrap();
        b.accumulate(&grads, &mut params).unwrap();
        let twice = params.get("w").unwrap().grad().unwrap();
        for (a, b) in once.iter().zip(twice) {
            assert_eq!(2.0 * a, *b);
        }
        params.zero_grad();
        assert!(params.get("w").unwrap().grad().unwrap().iter().all(|g| *g == 0.0));
    }

    #[test]
    fn running_stats_get_no_gradient() {
        let mut params = Parameters::new();
        params.insert("bn.running_mean", ParamKind::RunningStat, Tensor::zeros(&[2]));
        assert!(!params.get("bn.running_mean").unwrap().requires_grad());
        assert_eq!(params.trainable().count(), 0);
    }
}
