//! ResNLS and the baseline zoo behind one predictor interface.
//!
//! ResNLS: the window `[batch × n]` is treated as one channel of length `n`,
//! passed through conv → ReLU → conv → ReLU → batch norm → dropout, flattened
//! and projected back to `n` values. That residual is added to the raw
//! window, and the sum is read by an LSTM as an `n`-step sequence; a linear
//! head on the last hidden state gives the next normalized close.

mod io;

pub use io::{load, save, to_bytes, from_bytes, SCHEMA_VERSION};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::dataset::Normalizer;
use crate::error::{Error, Result};
use crate::nn::{BatchNorm1d, Conv1d, Dropout, ForwardCtx, Linear, LstmCell, RnnCell};
use crate::params::{Bindings, Parameters};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Architecture {
    Resnls,
    Cnn,
    Rnn,
    Lstm,
    Bilstm,
}

impl Architecture {
    pub const ALL: [Architecture; 5] = [
        Architecture::Resnls,
        Architecture::Cnn,
        Architecture::Rnn,
        Architecture::Lstm,
        Architecture::Bilstm,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Architecture::Resnls => "resnls",
            Architecture::Cnn => "cnn",
            Architecture::Rnn => "rnn",
            Architecture::Lstm => "lstm",
            Architecture::Bilstm => "bilstm",
        }
    }

    fn has_conv(self) -> bool {
        matches!(self, Architecture::Resnls | Architecture::Cnn)
    }
}

impl std::str::FromStr for Architecture {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Architecture::ALL
            .into_iter()
            .find(|a| a.name() == s.to_ascii_lowercase())
            .ok_or_else(|| Error::config("arch", format!("unknown architecture `{s}`")))
    }
}

impl std::fmt::Display for Architecture {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Architecture description. Defaults are the ResNLS-5 settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub architecture: Architecture,
    pub window_n: usize,
    pub conv_filters: usize,
    pub kernel_size: usize,
    pub lstm_hidden: usize,
    pub dropout_keep: f64,
    pub bn_after_each_conv: bool,
    pub init_seed: u64,
}

impl Default for ModelSpec {
    fn default() -> Self {
        Self {
            architecture: Architecture::Resnls,
            window_n: 5,
            conv_filters: 64,
            kernel_size: 3,
            lstm_hidden: 32,
            dropout_keep: 0.8,
            bn_after_each_conv: false,
            init_seed: 0,
        }
    }
}

impl ModelSpec {
    pub fn new(architecture: Architecture, window_n: usize) -> Self {
        Self {
            architecture,
            window_n,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.kernel_size == 0 || self.kernel_size % 2 == 0 {
            return Err(Error::config("kernel_size", format!("{} must be odd", self.kernel_size)));
        }
        if self.window_n < self.kernel_size.max(1) {
            return Err(Error::config(
                "window_n",
                format!("{} is shorter than kernel_size {}", self.window_n, self.kernel_size),
            ));
        }
        if self.conv_filters == 0 {
            return Err(Error::config("conv_filters", "must be positive"));
        }
        if self.lstm_hidden == 0 {
            return Err(Error::config("lstm_hidden", "must be positive"));
        }
        Dropout::new(self.dropout_keep)?;
        Ok(())
    }
}

/// Seeds, epoch count and final losses of the run that produced a model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingFingerprint {
    pub init_seed: u64,
    pub shuffle_seed: u64,
    pub epochs: usize,
    pub final_train_mse: f64,
    pub final_test_mse: f64,
}

/// Concrete layers for a spec.
#[derive(Clone, Debug)]
struct Layers {
    conv1: Option<Conv1d>,
    bn1: Option<BatchNorm1d>,
    conv2: Option<Conv1d>,
    bn: Option<BatchNorm1d>,
    dropout: Dropout,
    proj: Option<Linear>,
    lstm: Option<LstmCell>,
    lstm_bwd: Option<LstmCell>,
    rnn: Option<RnnCell>,
    head: Linear,
}

impl Layers {
    fn new(spec: &ModelSpec) -> Result<Self> {
        spec.validate()?;
        let (n, f, k, h) = (spec.window_n, spec.conv_filters, spec.kernel_size, spec.lstm_hidden);
        let arch = spec.architecture;
        let conv = arch.has_conv();
        let mut layers = Layers {
            conv1: None,
            bn1: None,
            conv2: None,
            bn: None,
            dropout: Dropout::new(spec.dropout_keep)?,
            proj: None,
            lstm: None,
            lstm_bwd: None,
            rnn: None,
            head: Linear::new("head", h, 1),
        };
        if conv {
            layers.conv1 = Some(Conv1d::same("conv1", 1, f, k)?);
            if spec.bn_after_each_conv {
                layers.bn1 = Some(BatchNorm1d::new("bn1", f));
            }
            layers.conv2 = Some(Conv1d::same("conv2", f, f, k)?);
            layers.bn = Some(BatchNorm1d::new("bn", f));
        }
        match arch {
            Architecture::Resnls => {
                layers.proj = Some(Linear::new("proj", f * n, n));
                layers.lstm = Some(LstmCell::new("lstm", 1, h));
            }
            Architecture::Cnn => layers.head = Linear::new("head", f * n, 1),
            Architecture::Rnn => layers.rnn = Some(RnnCell::new("rnn", 1, h)),
            Architecture::Lstm => layers.lstm = Some(LstmCell::new("lstm", 1, h)),
            Architecture::Bilstm => {
                layers.lstm = Some(LstmCell::new("lstm_fwd", 1, h));
                layers.lstm_bwd = Some(LstmCell::new("lstm_bwd", 1, h));
                layers.head = Linear::new("head", 2 * h, 1);
            }
        }
        Ok(layers)
    }

    fn init(&self, rng: &mut ChaCha8Rng) -> Parameters {
        let mut p = Parameters::new();
        if let Some(c) = &self.conv1 {
            c.init(&mut p, rng);
        }
        if let Some(b) = &self.bn1 {
            b.init(&mut p);
        }
        if let Some(c) = &self.conv2 {
            c.init(&mut p, rng);
        }
        if let Some(b) = &self.bn {
            b.init(&mut p);
        }
        if let Some(l) = &self.proj {
            l.init(&mut p, rng);
        }
        if let Some(l) = &self.lstm {
            l.init(&mut p, rng);
        }
        if let Some(l) = &self.lstm_bwd {
            l.init(&mut p, rng);
        }
        if let Some(r) = &self.rnn {
            r.init(&mut p, rng);
        }
        self.head.init(&mut p, rng);
        p
    }

    /// conv → ReLU → [bn1] → conv → ReLU → bn → dropout → flatten.
    fn conv_features(&self, tape: &mut Tape, b: &Bindings, x: Var, ctx: &mut ForwardCtx) -> Result<Var> {
        let (conv1, conv2, bn) = match (&self.conv1, &self.conv2, &self.bn) {
            (Some(c1), Some(c2), Some(bn)) => (c1, c2, bn),
            _ => return Err(Error::Contract("architecture has no convolution branch".into())),
        };
        let batch = tape.shape(x)[0];
        let n = tape.shape(x)[1];
        let seq = tape.reshape(x, &[batch, 1, n])?;
        let y = conv1.forward(tape, b, seq)?;
        let mut y = tape.relu(y);
        if let Some(bn1) = &self.bn1 {
            y = bn1.forward(tape, b, y, ctx)?;
        }
        let y = conv2.forward(tape, b, y)?;
        let y = tape.relu(y);
        let y = bn.forward(tape, b, y, ctx)?;
        let y = self.dropout.forward(tape, y, ctx)?;
        tape.reshape(y, &[batch, conv2.out_channels * n])
    }

    /// LSTM over the window as an `n`-step sequence, then the head.
    fn lstm_head(&self, tape: &mut Tape, b: &Bindings, z: Var) -> Result<Var> {
        let lstm = self.lstm.as_ref().expect("lstm layer");
        let (batch, n) = (tape.shape(z)[0], tape.shape(z)[1]);
        let seq = tape.reshape(z, &[batch, n, 1])?;
        let (_, last) = lstm.sequence(tape, b, seq, None, false)?;
        self.head.forward(tape, b, last.h)
    }
}

/// Architecture plus learned parameters, and once trained, the normalizer
/// and run fingerprint.
#[derive(Clone, Debug)]
pub struct TrainedModel {
    pub spec: ModelSpec,
    pub parameters: Parameters,
    pub normalizer: Option<Normalizer>,
    pub fingerprint: Option<TrainingFingerprint>,
    layers: Layers,
}

impl PartialEq for TrainedModel {
    fn eq(&self, other: &Self) -> bool {
        self.spec == other.spec
            && self.parameters == other.parameters
            && self.normalizer == other.normalizer
            && self.fingerprint == other.fingerprint
    }
}

/// Anything that maps normalized windows to normalized next-day values.
pub trait Predictor {
    fn window_n(&self) -> usize;
    fn predict_normalized(&self, inputs: &Tensor) -> Result<Vec<f64>>;
}

impl TrainedModel {
    /// Allocates and initializes all parameters from `spec.init_seed`.
    pub fn build(spec: ModelSpec) -> Result<Self> {
        let layers = Layers::new(&spec)?;
        let mut rng = ChaCha8Rng::seed_from_u64(spec.init_seed);
        let parameters = layers.init(&mut rng);
        Ok(Self {
            spec,
            parameters,
            normalizer: None,
            fingerprint: None,
            layers,
        })
    }

    /// Rebuilds around existing parameters, checking them against the schema.
    pub fn from_parts(
        spec: ModelSpec,
        parameters: Parameters,
        normalizer: Option<Normalizer>,
        fingerprint: Option<TrainingFingerprint>,
    ) -> Result<Self> {
        let schema = Self::build(spec.clone())?;
        if schema.parameters.len() != parameters.len() {
            return Err(Error::Contract(format!(
                "expected {} parameters, found {}",
                schema.parameters.len(),
                parameters.len()
            )));
        }
        for ((name, want), (got_name, got)) in schema.parameters.iter().zip(parameters.iter()) {
            if name != got_name || want.kind != got.kind || want.tensor.shape() != got.tensor.shape() {
                return Err(Error::Contract(format!(
                    "parameter `{got_name}` {:?} does not match schema `{name}` {:?}",
                    got.tensor.shape(),
                    want.tensor.shape()
                )));
            }
        }
        Ok(Self {
            spec,
            parameters,
            normalizer,
            fingerprint,
            layers: schema.layers,
        })
    }

    pub fn architecture(&self) -> Architecture {
        self.spec.architecture
    }

    /// Names of the residual-branch parameters (conv, batch-norm affine,
    /// projection). Empty for architectures without one.
    pub fn residual_branch_parameters(&self) -> Vec<String> {
        if self.spec.architecture != Architecture::Resnls {
            return Vec::new();
        }
        self.parameters
            .iter()
            .filter(|(n, p)| {
                (n.starts_with("conv") || n.starts_with("bn") || n.starts_with("proj")) && p.kind.trainable()
            })
            .map(|(n, _)| n.to_string())
            .collect()
    }

    /// Binds every parameter and runs the forward pass.
    pub fn forward(&self, tape: &mut Tape, x: Var, ctx: &mut ForwardCtx) -> Result<(Var, Bindings)> {
        let bound = self.parameters.bind(tape);
        let y = self.forward_bound(tape, &bound, x, ctx)?;
        Ok((y, bound))
    }

    /// Forward with caller-supplied bindings; `x: [batch × n]` → `[batch × 1]`.
    pub fn forward_bound(&self, tape: &mut Tape, b: &Bindings, x: Var, ctx: &mut ForwardCtx) -> Result<Var> {
        let s = tape.shape(x);
        if s.len() != 2 || s[1] != self.spec.window_n {
            return Err(Error::dim("model input", s, &[s[0], self.spec.window_n]));
        }
        let l = &self.layers;
        match self.spec.architecture {
            Architecture::Resnls => {
                let feats = l.conv_features(tape, b, x, ctx)?;
                let proj = l.proj.as_ref().expect("projection layer");
                let residual = proj.forward(tape, b, feats)?;
                let z = tape.add(x, residual)?;
                l.lstm_head(tape, b, z)
            }
            Architecture::Cnn => {
                let feats = l.conv_features(tape, b, x, ctx)?;
                l.head.forward(tape, b, feats)
            }
            Architecture::Lstm => l.lstm_head(tape, b, x),
            Architecture::Rnn => {
                let rnn = l.rnn.as_ref().expect("rnn layer");
                let (batch, n) = (s[0], s[1]);
                let seq = tape.reshape(x, &[batch, n, 1])?;
                let (_, h) = rnn.sequence(tape, b, seq, None)?;
                l.head.forward(tape, b, h)
            }
            Architecture::Bilstm => {
                let (fwd, bwd) = (l.lstm.as_ref().expect("fwd"), l.lstm_bwd.as_ref().expect("bwd"));
                let (batch, n) = (s[0], s[1]);
                let seq = tape.reshape(x, &[batch, n, 1])?;
                let (_, f) = fwd.sequence(tape, b, seq, None, false)?;
                let (_, r) = bwd.sequence(tape, b, seq, None, true)?;
                let both = tape.concat(f.h, r.h)?;
                l.head.forward(tape, b, both)
            }
        }
    }

    /// Eval-mode forward on a fresh tape.
    pub fn predict_tensor(&self, inputs: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let x = tape.constant(inputs.clone());
        let (y, _) = self.forward(&mut tape, x, &mut ForwardCtx::eval())?;
        Ok(tape.value(y).clone())
    }
}

const PREDICT_CHUNK: usize = 1024;

impl Predictor for TrainedModel {
    fn window_n(&self) -> usize {
        self.spec.window_n
    }

    fn predict_normalized(&self, inputs: &Tensor) -> Result<Vec<f64>> {
        let rows = inputs.shape()[0];
        let mut out = Vec::with_capacity(rows);
        for start in (0..rows).step_by(PREDICT_CHUNK) {
            let idx: Vec<usize> = (start..(start + PREDICT_CHUNK).min(rows)).collect();
            let chunk = inputs.select_rows(&idx)?;
            out.extend_from_slice(self.predict_tensor(&chunk)?.data());
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn resnls_schema_matches_defaults() {
        let m = TrainedModel::build(ModelSpec::default()).unwrap();
        let p = &m.parameters;
        assert_eq!(p.get("conv1.weight").unwrap().shape(), &[64, 1, 3]);
        assert_eq!(p.get("conv2.weight").unwrap().shape(), &[64, 64, 3]);
        assert_eq!(p.get("bn.gamma").unwrap().shape(), &[64]);
        assert_eq!(p.get("proj.weight").unwrap().shape(), &[5, 320]);
        assert_eq!(p.get("lstm.w_ii").unwrap().shape(), &[32, 1]);
        assert_eq!(p.get("lstm.w_hf").unwrap().shape(), &[32, 32]);
        assert_eq!(p.get("head.weight").unwrap().shape(), &[1, 32]);
        assert!(p.get("lstm.b_f").unwrap().data().iter().all(|v| *v == 1.0));
        assert!(p.get("lstm.b_i").unwrap().data().iter().all(|v| *v == 0.0));
        assert!(!p.contains("bn1.gamma"));
    }

    #[test]
    fn lstm_has_no_conv_parameters() {
        let m = TrainedModel::build(ModelSpec::new(Architecture::Lstm, 5)).unwrap();
        assert!(m.parameters.iter().all(|(n, _)| !n.starts_with("conv")));
    }

    #[test]
    fn same_seed_same_bits() {
        let a = TrainedModel::build(ModelSpec::default()).unwrap();
        let b = TrainedModel::build(ModelSpec::default()).unwrap();
        for ((_, x), (_, y)) in a.parameters.iter().zip(b.parameters.iter()) {
            assert!(x.tensor.bits_eq(&y.tensor));
        }
        let c = TrainedModel::build(ModelSpec {
            init_seed: 1,
            ..ModelSpec::default()
        })
        .unwrap();
        assert_ne!(a.parameters, c.parameters);
    }

    #[test]
    fn invalid_specs_name_the_field() {
        let bad = |spec: ModelSpec, field: &str| match TrainedModel::build(spec) {
            Err(Error::Config { field: f, .. }) => assert_eq!(f, field),
            other => panic!("expected config error, got {other:?}"),
        };
        bad(ModelSpec { kernel_size: 4, ..ModelSpec::default() }, "kernel_size");
        bad(ModelSpec { window_n: 2, ..ModelSpec::default() }, "window_n");
        bad(ModelSpec { dropout_keep: 0.0, ..ModelSpec::default() }, "dropout_keep");
    }

    #[test]
    fn wrong_window_length_is_dimension_error() {
        let m = TrainedModel::build(ModelSpec::default()).unwrap();
        assert!(matches!(m.predict_tensor(&Tensor::zeros(&[2, 6])), Err(Error::Dimension { .. })));
    }

    #[test]
    fn bn_after_each_conv_adds_layer() {
        let m = TrainedModel::build(ModelSpec {
            bn_after_each_conv: true,
            ..ModelSpec::default()
        })
        .unwrap();
        assert!(m.parameters.contains("bn1.gamma"));
        assert_eq!(m.predict_tensor(&Tensor::zeros(&[3, 5])).unwrap().shape(), &[3, 1]);
    }
}
