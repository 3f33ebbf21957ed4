//! Layers used by the model zoo. Each layer is a small descriptor that knows
//! its parameter names and shapes; the tensors themselves live in a
//! [`Parameters`](crate::params::Parameters) store.

mod conv;
mod dropout;
mod linear;
mod norm;
mod recurrent;

pub use conv::Conv1d;
pub use dropout::Dropout;
pub use linear::Linear;
pub use norm::{BatchNorm1d, BnUpdate};
pub use recurrent::{LstmCell, LstmState, RnnCell};

use rand::{Rng, RngCore};

use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Per-forward state: the mode, the dropout stream, and batch-norm statistics
/// collected in train mode (applied to running stats by the caller).
pub struct ForwardCtx<'a> {
    pub mode: Mode,
    dropout_rng: Option<&'a mut dyn RngCore>,
    pub bn_updates: Vec<BnUpdate>,
}

impl<'a> ForwardCtx<'a> {
    pub fn eval() -> Self {
        Self {
            mode: Mode::Eval,
            dropout_rng: None,
            bn_updates: Vec::new(),
        }
    }

    pub fn train(rng: &'a mut dyn RngCore) -> Self {
        Self {
            mode: Mode::Train,
            dropout_rng: Some(rng),
            bn_updates: Vec::new(),
        }
    }

    /// Train-mode batch norm with dropout disabled; deterministic, which is
    /// what gradient checking needs.
    pub fn train_deterministic() -> Self {
        Self {
            mode: Mode::Train,
            dropout_rng: None,
            bn_updates: Vec::new(),
        }
    }
}

/// Uniform in `[-1/√fan_in, 1/√fan_in]`.
pub(crate) fn init_uniform(shape: &[usize], fan_in: usize, rng: &mut dyn RngCore) -> Tensor {
    let bound = 1.0 / (fan_in as f64).sqrt();
    let mut t = Tensor::zeros(shape);
    t.data_mut()
        .iter_mut()
        .for_each(|v| *v = rng.gen_range(-bound..=bound));
    t
}
