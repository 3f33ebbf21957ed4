use rand::Rng;

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

use super::{ForwardCtx, Mode};

/// Inverted dropout: survivors are scaled by `1/keep_prob` in train mode,
/// eval mode is the identity.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Dropout {
    keep_prob: f64,
}

impl Dropout {
    pub fn new(keep_prob: f64) -> Result<Self> {
        if !(keep_prob > 0.0 && keep_prob <= 1.0) {
            return Err(Error::config("dropout_keep", format!("{keep_prob} not in (0, 1]")));
        }
        Ok(Self { keep_prob })
    }

    pub fn keep_prob(&self) -> f64 {
        self.keep_prob
    }

    pub fn forward(&self, tape: &mut Tape, x: Var, ctx: &mut ForwardCtx) -> Result<Var> {
        if ctx.mode == Mode::Eval || self.keep_prob == 1.0 {
            return Ok(x);
        }
        let Some(rng) = ctx.dropout_rng.as_mut() else {
            return Ok(x);
        };
        let shape = tape.shape(x).to_vec();
        let mut mask = Tensor::zeros(&shape);
        let scale = 1.0 / self.keep_prob;
        for m in mask.data_mut() {
            if rng.gen::<f64>() < self.keep_prob {
                *m = scale;
            }
        }
        let m = tape.constant(mask);
        tape.mul(x, m)
    }
}
