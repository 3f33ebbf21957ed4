use crate::autodiff::{BatchStats, Tape, Var};
use crate::error::Result;
use crate::params::{Bindings, ParamKind, Parameters};
use crate::tensor::Tensor;

use super::{ForwardCtx, Mode};

/// Per-channel batch normalization over `[batch × channels × len]`.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchNorm1d {
    pub name: String,
    pub channels: usize,
    pub momentum: f64,
    pub eps: f64,
}

/// Batch statistics produced by one train-mode forward.
#[derive(Clone, Debug, PartialEq)]
pub struct BnUpdate {
    pub layer: BatchNorm1d,
    pub stats: BatchStats,
}

impl BatchNorm1d {
    pub fn new(name: &str, channels: usize) -> Self {
        Self {
            name: name.to_string(),
            channels,
            momentum: 0.1,
            eps: 1e-5,
        }
    }

    fn key(&self, field: &str) -> String {
        format!("{}.{field}", self.name)
    }

    pub fn gamma_name(&self) -> String {
        self.key("gamma")
    }

    pub fn beta_name(&self) -> String {
        self.key("beta")
    }

    pub fn running_mean_name(&self) -> String {
        self.key("running_mean")
    }

    pub fn running_var_name(&self) -> String {
        self.key("running_var")
    }

    pub fn init(&self, params: &mut Parameters) {
        let c = self.channels;
        params.insert(self.gamma_name(), ParamKind::NormScale, Tensor::full(&[c], 1.0));
        params.insert(self.beta_name(), ParamKind::NormShift, Tensor::zeros(&[c]));
        params.insert(self.running_mean_name(), ParamKind::RunningStat, Tensor::zeros(&[c]));
        params.insert(self.running_var_name(), ParamKind::RunningStat, Tensor::full(&[c], 1.0));
    }

    pub fn forward(&self, tape: &mut Tape, bound: &Bindings, x: Var, ctx: &mut ForwardCtx) -> Result<Var> {
        let gamma = bound.var(&self.gamma_name())?;
        let beta = bound.var(&self.beta_name())?;
        match ctx.mode {
            Mode::Train => {
                let (y, stats) = tape.batch_norm_train(x, gamma, beta, self.eps)?;
                ctx.bn_updates.push(BnUpdate {
                    layer: self.clone(),
                    stats,
                });
                Ok(y)
            }
            Mode::Eval => {
                let mean = tape.value(bound.var(&self.running_mean_name())?).data().to_vec();
                let var = tape.value(bound.var(&self.running_var_name())?).data().to_vec();
                tape.batch_norm_eval(x, gamma, beta, &mean, &var, self.eps)
            }
        }
    }

    /// `running ← (1 − momentum)·running + momentum·batch`
    pub fn apply_update(&self, params: &mut Parameters, stats: &BatchStats) -> Result<()> {
        let m = self.momentum;
        for (name, batch) in [
            (self.running_mean_name(), &stats.mean),
            (self.running_var_name(), &stats.var),
        ] {
            let t = params.get_mut(&name)?;
            t.data_mut()
                .iter_mut()
                .zip(batch)
                .for_each(|(r, b)| *r = (1.0 - m) * *r + m * b);
        }
        Ok(())
    }
}

impl BnUpdate {
    pub fn apply(&self, params: &mut Parameters) -> Result<()> {
        self.layer.apply_update(params, &self.stats)
    }
}
