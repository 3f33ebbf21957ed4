use rand::RngCore;

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::params::{Bindings, ParamKind, Parameters};
use crate::tensor::Tensor;

/// Stride-1 1-D convolution (cross-correlation) with symmetric zero padding.
#[derive(Clone, Debug, PartialEq)]
pub struct Conv1d {
    pub name: String,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel_size: usize,
    pub padding: usize,
}

impl Conv1d {
    /// "Same" padding: output length equals input length.
    pub fn same(name: &str, in_channels: usize, out_channels: usize, kernel_size: usize) -> Result<Self> {
        if kernel_size % 2 == 0 {
            return Err(Error::config("kernel_size", "must be odd for same padding"));
        }
        Ok(Self {
            name: name.to_string(),
            in_channels,
            out_channels,
            kernel_size,
            padding: (kernel_size - 1) / 2,
        })
    }

    pub fn weight_name(&self) -> String {
        format!("{}.weight", self.name)
    }

    pub fn bias_name(&self) -> String {
        format!("{}.bias", self.name)
    }

    pub fn init(&self, params: &mut Parameters, rng: &mut dyn RngCore) {
        let shape = [self.out_channels, self.in_channels, self.kernel_size];
        let w = super::init_uniform(&shape, self.in_channels * self.kernel_size, rng);
        params.insert(self.weight_name(), ParamKind::ConvKernel, w);
        params.insert(self.bias_name(), ParamKind::Bias, Tensor::zeros(&[self.out_channels]));
    }

    /// `x: [batch × in_channels × len]` → `[batch × out_channels × len']`.
    pub fn forward(&self, tape: &mut Tape, bound: &Bindings, x: Var) -> Result<Var> {
        let s = tape.shape(x);
        if s.len() != 3 || s[1] != self.in_channels {
            return Err(Error::dim(
                "conv1d input",
                s,
                &[self.out_channels, self.in_channels, self.kernel_size],
            ));
        }
        let w = bound.var(&self.weight_name())?;
        let b = bound.var(&self.bias_name())?;
        tape.conv1d(x, w, b, self.padding)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn same_padding_preserves_length_for_odd_kernels() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for k in [1, 3, 5, 7] {
            let conv = Conv1d::same("c", 2, 4, k).unwrap();
            let mut params = Parameters::new();
            conv.init(&mut params, &mut rng);
            let mut tape = Tape::new();
            let b = params.bind(&mut tape);
            let x = tape.constant(Tensor::full(&[3, 2, 9], 0.5));
            let y = conv.forward(&mut tape, &b, x).unwrap();
            assert_eq!(tape.shape(y), &[3, 4, 9]);
        }
        assert!(Conv1d::same("c", 1, 1, 4).is_err());
    }
}
