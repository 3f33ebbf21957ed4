use rand::RngCore;

use crate::autodiff::{Tape, Var};
use crate::error::Result;
use crate::params::{Bindings, ParamKind, Parameters};
use crate::tensor::Tensor;

/// `y = x · Wᵀ + b`
#[derive(Clone, Debug, PartialEq)]
pub struct Linear {
    pub name: String,
    pub in_features: usize,
    pub out_features: usize,
}

impl Linear {
    pub fn new(name: &str, in_features: usize, out_features: usize) -> Self {
        Self {
            name: name.to_string(),
            in_features,
            out_features,
        }
    }

    pub fn weight_name(&self) -> String {
        format!("{}.weight", self.name)
    }

    pub fn bias_name(&self) -> String {
        format!("{}.bias", self.name)
    }

    pub fn init(&self, params: &mut Parameters, rng: &mut dyn RngCore) {
        let w = super::init_uniform(&[self.out_features, self.in_features], self.in_features, rng);
        params.insert(self.weight_name(), ParamKind::Weight, w);
        params.insert(self.bias_name(), ParamKind::Bias, Tensor::zeros(&[self.out_features]));
    }

    pub fn forward(&self, tape: &mut Tape, bound: &Bindings, x: Var) -> Result<Var> {
        let w = bound.var(&self.weight_name())?;
        let b = bound.var(&self.bias_name())?;
        tape.linear(x, w, b)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn output_is_affine_map() {
        let lin = Linear::new("l", 2, 2);
        let mut params = Parameters::new();
        params.insert("l.weight", ParamKind::Weight, Tensor::from_rows(&[vec![1.0, 2.0], vec![0.0, -1.0]]).unwrap());
        params.insert("l.bias", ParamKind::Bias, Tensor::vector(&[0.5, 0.25]));
        let mut tape = Tape::new();
        let b = params.bind(&mut tape);
        let x = tape.constant(Tensor::from_rows(&[vec![3.0, 4.0]]).unwrap());
        let y = lin.forward(&mut tape, &b, x).unwrap();
        assert_eq!(tape.value(y).data(), &[11.5, -3.75]);
    }
}
