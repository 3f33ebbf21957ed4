//! MSE loss, Adam with decoupled weight decay on conv kernels, and the
//! mini-batch training loop.

use std::collections::HashMap;
use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::dataset::WindowedDataset;
use crate::error::{DataError, Error, Result};
use crate::models::{Predictor, TrainedModel, TrainingFingerprint};
use crate::nn::ForwardCtx;
use crate::params::Parameters;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Applied to convolution kernels only.
    pub weight_decay: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub shuffle_seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            batch_size: 64,
            epochs: 50,
            weight_decay: 1e-5,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            shuffle_seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        // lr = 0 is allowed: it freezes every parameter
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config("learning_rate", "must be finite and non-negative"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size", "must be at least 1"));
        }
        if self.epochs == 0 {
            return Err(Error::config("epochs", "must be at least 1"));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::config("weight_decay", "must be non-negative"));
        }
        for (name, b) in [("adam_beta1", self.adam_beta1), ("adam_beta2", self.adam_beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::config(name, "must lie in [0, 1)"));
            }
        }
        if !(self.adam_eps > 0.0) {
            return Err(Error::config("adam_eps", "must be positive"));
        }
        Ok(())
    }
}

/// Mean of squared differences; `pred` and `target` are `[batch × 1]`.
pub fn mse_loss(tape: &mut Tape, pred: Var, target: Var) -> Result<Var> {
    if tape.shape(pred) != tape.shape(target) {
        return Err(Error::dim("mse_loss", tape.shape(pred), tape.shape(target)));
    }
    let d = tape.sub(pred, target)?;
    let sq = tape.mul(d, d)?;
    Ok(tape.mean(sq))
}

#[derive(Clone, Debug, Default, PartialEq)]
struct Moments {
    m: Vec<f64>,
    v: Vec<f64>,
}

/// First/second moment estimates per parameter and the shared step count.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AdamState {
    moments: HashMap<String, Moments>,
    t: u64,
}

impl AdamState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    pub fn first_moment(&self, name: &str) -> Option<&[f64]> {
        self.moments.get(name).map(|m| m.m.as_slice())
    }

    pub fn second_moment(&self, name: &str) -> Option<&[f64]> {
        self.moments.get(name).map(|m| m.v.as_slice())
    }
}

/// One Adam update over every trainable parameter. Conv kernels are first
/// shrunk by `lr·weight_decay` (decoupled decay).
pub fn adam_step(state: &mut AdamState, params: &mut Parameters, config: &TrainConfig) -> Result<()> {
    for (name, p) in params.iter() {
        if p.kind.trainable() && p.tensor.grad().is_none() {
            return Err(Error::Contract(format!("missing gradient for `{name}`")));
        }
    }
    state.t += 1;
    let t = state.t as i32;
    let (b1, b2, lr, eps) = (config.adam_beta1, config.adam_beta2, config.learning_rate, config.adam_eps);
    let bc1 = 1.0 - b1.powi(t);
    let bc2 = 1.0 - b2.powi(t);
    for (name, p) in params.iter_mut() {
        if !p.kind.trainable() {
            continue;
        }
        let n = p.tensor.numel();
        let mom = state.moments.entry(name.to_string()).or_insert_with(|| Moments {
            m: vec![0.0; n],
            v: vec![0.0; n],
        });
        let grad = p.tensor.grad().expect("checked above").to_vec();
        let decay = if p.kind.decays() { lr * config.weight_decay } else { 0.0 };
        let data = p.tensor.data_mut();
        for i in 0..n {
            let g = grad[i];
            mom.m[i] = b1 * mom.m[i] + (1.0 - b1) * g;
            mom.v[i] = b2 * mom.v[i] + (1.0 - b2) * g * g;
            let m_hat = mom.m[i] / bc1;
            let v_hat = mom.v[i] / bc2;
            if decay != 0.0 {
                data[i] -= decay * data[i];
            }
            data[i] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

/// Per-epoch normalized-scale MSE, plus the evaluation before any update.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossCurve {
    pub initial_train_mse: f64,
    pub initial_test_mse: f64,
    pub train_mse: Vec<f64>,
    pub test_mse: Vec<f64>,
}

impl LossCurve {
    pub fn epochs(&self) -> usize {
        self.train_mse.len()
    }

    /// `epoch,train_mse,test_mse`, epochs numbered from 1.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "epoch,train_mse,test_mse")?;
        for (i, (tr, te)) in self.train_mse.iter().zip(&self.test_mse).enumerate() {
            writeln!(out, "{},{tr},{te}", i + 1)?;
        }
        Ok(())
    }
}

/// Eval-mode MSE of `model` over a whole dataset, normalized scale.
pub fn eval_mse(model: &TrainedModel, data: &WindowedDataset) -> Result<f64> {
    if data.is_empty() {
        return Err(DataError::Empty.into());
    }
    let preds = model.predict_normalized(&data.inputs)?;
    let sum: f64 = preds
        .iter()
        .zip(data.targets.data())
        .map(|(p, t)| (p - t) * (p - t))
        .sum();
    Ok(sum / preds.len() as f64)
}

const DROPOUT_STREAM: u64 = 0x9e37_79b9_7f4a_7c15;

pub fn train(
    model: TrainedModel,
    train_set: &WindowedDataset,
    test_set: &WindowedDataset,
    config: &TrainConfig,
) -> Result<(TrainedModel, LossCurve)> {
    train_with_progress(model, train_set, test_set, config, |_, _, _| {})
}

/// [`train`] with a callback after every epoch: `(epoch, train_mse, test_mse)`.
pub fn train_with_progress(
    mut model: TrainedModel,
    train_set: &WindowedDataset,
    test_set: &WindowedDataset,
    config: &TrainConfig,
    mut on_epoch: impl FnMut(usize, f64, f64),
) -> Result<(TrainedModel, LossCurve)> {
    config.validate()?;
    if train_set.is_empty() || test_set.is_empty() {
        return Err(DataError::Empty.into());
    }
    for ds in [train_set, test_set] {
        if ds.window_n != model.spec.window_n {
            return Err(Error::Incompatible(format!(
                "dataset window {} vs model window {}",
                ds.window_n, model.spec.window_n
            )));
        }
    }
    model.normalizer = Some(train_set.normalizer);

    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(config.shuffle_seed);
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(config.shuffle_seed ^ DROPOUT_STREAM);
    let mut adam = AdamState::new();
    let mut curve = LossCurve {
        initial_train_mse: eval_mse(&model, train_set)?,
        initial_test_mse: eval_mse(&model, test_set)?,
        ..LossCurve::default()
    };

    let mut order: Vec<usize> = (0..train_set.len()).collect();
    for epoch in 1..=config.epochs {
        order.shuffle(&mut shuffle_rng);
        for (batch_no, rows) in order.chunks(config.batch_size).enumerate() {
            let inputs = train_set.inputs.select_rows(rows)?;
            let targets = train_set.targets.select_rows(rows)?;
            let mut tape = Tape::new();
            let x = tape.constant(inputs);
            let y = tape.constant(targets);
            let mut ctx = ForwardCtx::train(&mut dropout_rng);
            let (pred, bound) = model.forward(&mut tape, x, &mut ctx)?;
            let loss = mse_loss(&mut tape, pred, y)?;
            if !tape.value(loss).data()[0].is_finite() {
                return Err(Error::Divergence {
                    epoch,
                    batch: batch_no + 1,
                });
            }
            let grads = tape.backward(loss)?;
            bound.accumulate(&grads, &mut model.parameters)?;
            adam_step(&mut adam, &mut model.parameters, config)?;
            model.parameters.zero_grad();
            for upd in &ctx.bn_updates {
                upd.apply(&mut model.parameters)?;
            }
        }
        let tr = eval_mse(&model, train_set)?;
        let te = eval_mse(&model, test_set)?;
        curve.train_mse.push(tr);
        curve.test_mse.push(te);
        on_epoch(epoch, tr, te);
    }

    model.fingerprint = Some(TrainingFingerprint {
        init_seed: model.spec.init_seed,
        shuffle_seed: config.shuffle_seed,
        epochs: config.epochs,
        final_train_mse: *curve.train_mse.last().expect("epochs >= 1"),
        final_test_mse: *curve.test_mse.last().expect("epochs >= 1"),
    });
    Ok((model, curve))
}
