//! The standing gradient suite: every layer and every architecture checked
//! against central differences.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Tape, Var};
use crate::error::Result;
use crate::gradcheck::{grad_check, GradCheckReport, GradCheckRow};
use crate::models::{Architecture, ModelSpec, TrainedModel};
use crate::nn::{BatchNorm1d, Conv1d, Dropout, ForwardCtx, Linear, LstmCell, RnnCell};
use crate::params::{Bindings, Parameters};
use crate::tensor::Tensor;
use crate::training::mse_loss;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SuiteConfig {
    pub seed: u64,
    pub window_n: usize,
    pub batch: usize,
    pub step: f64,
    pub tol: f64,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            window_n: 5,
            batch: 3,
            step: 1e-5,
            tol: 1e-4,
        }
    }
}

const DROPOUT_SEED: u64 = 7;

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let mut t = Tensor::zeros(shape);
    t.data_mut().iter_mut().for_each(|v| *v = rng.gen_range(-1.0..1.0));
    t
}

/// `Σ y ⊙ r` for a fixed random `r`, so every output element carries a
/// distinct weight.
fn weighted_sum(tape: &mut Tape, y: Var, r: &Tensor) -> Result<Var> {
    let r = tape.constant(r.clone());
    let p = tape.mul(y, r)?;
    Ok(tape.sum(p))
}

fn prefixed(group: &str, report: GradCheckReport) -> Vec<GradCheckRow> {
    report
        .rows
        .into_iter()
        .map(|mut r| {
            r.name = format!("{group}/{}", r.name);
            r
        })
        .collect()
}

/// Checks a layer whose parameters live in `params`; the last input is `x`.
fn check_layer<F>(
    group: &str,
    params: &Parameters,
    x: Tensor,
    cfg: &SuiteConfig,
    forward: F,
) -> Result<Vec<GradCheckRow>>
where
    F: Fn(&mut Tape, &Bindings, Var) -> Result<Var>,
{
    let mut inputs: Vec<(String, Tensor)> = params
        .trainable()
        .map(|(n, t)| (n.to_string(), t.clone()))
        .collect();
    let frozen: Vec<(String, Tensor)> = params
        .iter()
        .filter(|(_, p)| !p.kind.trainable())
        .map(|(n, p)| (n.to_string(), p.tensor.clone()))
        .collect();
    inputs.push(("x".into(), x));
    let names: Vec<String> = inputs.iter().map(|(n, _)| n.clone()).collect();
    let report = grad_check(
        |tape, vars| {
            let mut b = Bindings::new();
            for (name, v) in names.iter().zip(vars) {
                b.insert(name.clone(), *v);
            }
            for (name, t) in &frozen {
                let v = tape.constant(t.clone());
                b.insert(name.clone(), v);
            }
            forward(tape, &b, *vars.last().expect("x"))
        },
        &inputs,
        cfg.step,
        cfg.tol,
    )?;
    Ok(prefixed(group, report))
}

fn layer_checks(cfg: &SuiteConfig, rng: &mut ChaCha8Rng) -> Result<Vec<GradCheckRow>> {
    let (b, n) = (cfg.batch, cfg.window_n);
    let mut rows = Vec::new();

    for (group, op) in [("relu", 0), ("sigmoid", 1), ("tanh", 2)] {
        let r = random(&[b, n], rng);
        rows.extend(check_layer(group, &Parameters::new(), random(&[b, n], rng), cfg, |t, _, x| {
            let y = match op {
                0 => t.relu(x),
                1 => t.sigmoid(x),
                _ => t.tanh(x),
            };
            weighted_sum(t, y, &r)
        })?);
    }

    let lin = Linear::new("linear", n, 4);
    let mut p = Parameters::new();
    lin.init(&mut p, rng);
    let r = random(&[b, 4], rng);
    rows.extend(check_layer("linear", &p, random(&[b, n], rng), cfg, |t, bd, x| {
        let y = lin.forward(t, bd, x)?;
        weighted_sum(t, y, &r)
    })?);

    let conv = Conv1d::same("conv", 2, 4, 3)?;
    let mut p = Parameters::new();
    conv.init(&mut p, rng);
    randomize(&mut p, rng);
    let r = random(&[b, 4, n], rng);
    rows.extend(check_layer("conv1d", &p, random(&[b, 2, n], rng), cfg, |t, bd, x| {
        let y = conv.forward(t, bd, x)?;
        weighted_sum(t, y, &r)
    })?);

    let bn = BatchNorm1d::new("bn", 4);
    let mut p = Parameters::new();
    bn.init(&mut p);
    randomize(&mut p, rng);
    let r = random(&[b, 4, n], rng);
    rows.extend(check_layer("batchnorm", &p, random(&[b, 4, n], rng), cfg, |t, bd, x| {
        let y = bn.forward(t, bd, x, &mut ForwardCtx::train_deterministic())?;
        weighted_sum(t, y, &r)
    })?);

    let drop = Dropout::new(0.8)?;
    let r = random(&[b, 4, n], rng);
    rows.extend(check_layer("dropout", &Parameters::new(), random(&[b, 4, n], rng), cfg, |t, _, x| {
        // a fresh stream per pass keeps the mask fixed
        let mut mask_rng = ChaCha8Rng::seed_from_u64(DROPOUT_SEED);
        let y = drop.forward(t, x, &mut ForwardCtx::train(&mut mask_rng))?;
        weighted_sum(t, y, &r)
    })?);

    let lstm = LstmCell::new("lstm", 2, 3);
    let mut p = Parameters::new();
    lstm.init(&mut p, rng);
    let r = random(&[b, n, 3], rng);
    rows.extend(check_layer("lstm", &p, random(&[b, n, 2], rng), cfg, |t, bd, x| {
        let (hs, _) = lstm.sequence(t, bd, x, None, false)?;
        weighted_sum(t, hs, &r)
    })?);

    let rnn = RnnCell::new("rnn", 2, 3);
    let mut p = Parameters::new();
    rnn.init(&mut p, rng);
    let r = random(&[b, n, 3], rng);
    rows.extend(check_layer("rnn", &p, random(&[b, n, 2], rng), cfg, |t, bd, x| {
        let (hs, _) = rnn.sequence(t, bd, x, None)?;
        weighted_sum(t, hs, &r)
    })?);

    Ok(rows)
}

/// Moves zero-initialized biases and unit scales off their defaults so the
/// check sees generic values.
fn randomize(p: &mut Parameters, rng: &mut ChaCha8Rng) {
    for (_, param) in p.iter_mut() {
        if param.kind.trainable() {
            param
                .tensor
                .data_mut()
                .iter_mut()
                .for_each(|v| *v += rng.gen_range(-0.5..0.5));
        }
    }
}

/// Gradient check of one architecture under MSE loss, train mode, fixed
/// dropout mask.
pub fn check_architecture(arch: Architecture, cfg: &SuiteConfig) -> Result<Vec<GradCheckRow>> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ arch as u64);
    let spec = ModelSpec {
        init_seed: cfg.seed,
        ..ModelSpec::new(arch, cfg.window_n)
    };
    let mut model = TrainedModel::build(spec)?;
    randomize(&mut model.parameters, &mut rng);
    let x = random(&[cfg.batch, cfg.window_n], &mut rng);
    let target = random(&[cfg.batch, 1], &mut rng);
    let params = model.parameters.clone();
    check_layer(arch.name(), &params, x, cfg, |t, bd, x| {
        let mut mask_rng = ChaCha8Rng::seed_from_u64(DROPOUT_SEED);
        let mut ctx = ForwardCtx::train(&mut mask_rng);
        let y = model.forward_bound(t, bd, x, &mut ctx)?;
        let target = t.constant(target.clone());
        mse_loss(t, y, target)
    })
}

/// Every layer, then every architecture.
pub fn run_suite(cfg: &SuiteConfig) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut rows = layer_checks(cfg, &mut rng)?;
    for arch in Architecture::ALL {
        rows.extend(check_architecture(arch, cfg)?);
    }
    Ok(GradCheckReport { tol: cfg.tol, rows })
}

impl GradCheckReport {
    /// `name,rel_err,max_abs_fd,checked,passed`
    pub fn write_csv<W: std::io::Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "name,rel_err,max_abs_fd,checked,passed")?;
        for r in &self.rows {
            writeln!(out, "{},{:e},{:e},{},{}", r.name, r.rel_err, r.max_abs_fd, r.checked, r.passed)?;
        }
        Ok(())
    }
}
