//! Independent oracles and fixtures shared by the integration suites. None
//! of this goes through the tape.
#![allow(dead_code)]

use chrono::{Duration, NaiveDate};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use resnls::models::TrainedModel;
use resnls::params::ParamKind;
use resnls::series::{PriceBar, PriceSeries};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn day(i: usize) -> NaiveDate {
    NaiveDate::from_ymd_opt(2020, 1, 1).unwrap() + Duration::days(i as i64)
}

/// Bars with `open = high = low = close`.
pub fn flat_bars(closes: &[f64]) -> PriceSeries {
    bars(&closes.iter().map(|&c| (c, c)).collect::<Vec<_>>())
}

/// Bars from `(open, close)` pairs on consecutive days.
pub fn bars(oc: &[(f64, f64)]) -> PriceSeries {
    let bars = oc
        .iter()
        .enumerate()
        .map(|(i, &(o, c))| PriceBar {
            date: day(i),
            open: o,
            high: o.max(c),
            low: o.min(c),
            close: c,
        })
        .collect();
    PriceSeries::from_bars("T", bars).unwrap()
}

/// Perturbs every parameter so biases, BN affine and running stats are
/// generic; running variances stay positive.
pub fn randomize(model: &mut TrainedModel, seed: u64) {
    let mut r = rng(seed);
    for (name, p) in model.parameters.iter_mut() {
        let var = name.ends_with("running_var");
        for v in p.tensor.data_mut() {
            *v = match (p.kind, var) {
                (ParamKind::RunningStat, true) => r.gen_range(0.2..2.0),
                (ParamKind::RunningStat, false) => r.gen_range(-0.5..0.5),
                _ => *v + r.gen_range(-0.3..0.3),
            };
        }
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn p<'a>(m: &'a TrainedModel, name: &str) -> &'a [f64] {
    m.parameters.get(name).unwrap().data()
}

/// `W·v + b` with `W` row-major `[out × in]`.
fn affine(w: &[f64], b: &[f64], v: &[f64]) -> Vec<f64> {
    let inp = v.len();
    b.iter()
        .enumerate()
        .map(|(o, bo)| bo + (0..inp).map(|i| w[o * inp + i] * v[i]).sum::<f64>())
        .collect()
}

/// `[c_in][len]` → `[c_out][len]`, cross-correlation with zero padding.
fn conv(x: &[Vec<f64>], w: &[f64], b: &[f64], k: usize) -> Vec<Vec<f64>> {
    let (c_in, len) = (x.len(), x[0].len());
    let pad = (k - 1) / 2;
    (0..b.len())
        .map(|o| {
            (0..len)
                .map(|t| {
                    let mut acc = b[o];
                    for c in 0..c_in {
                        for j in 0..k {
                            let src = t as isize + j as isize - pad as isize;
                            if src >= 0 && (src as usize) < len {
                                acc += w[(o * c_in + c) * k + j] * x[c][src as usize];
                            }
                        }
                    }
                    acc
                })
                .collect()
        })
        .collect()
}

/// Final hidden state of an LSTM named `prefix` run over scalar inputs.
pub fn lstm_last(m: &TrainedModel, prefix: &str, xs: &[f64]) -> Vec<f64> {
    let g = |n: &str| p(m, &format!("{prefix}.{n}"));
    let hidden = g("b_i").len();
    let (mut h, mut c) = (vec![0.0; hidden], vec![0.0; hidden]);
    for &x in xs {
        let gate = |wi: &str, wh: &str, b: &str| -> Vec<f64> {
            let rec = affine(g(wh), g(b), &h);
            rec.iter().zip(g(wi)).map(|(r, w)| r + w * x).collect()
        };
        let i: Vec<f64> = gate("w_ii", "w_hi", "b_i").into_iter().map(sigmoid).collect();
        let f: Vec<f64> = gate("w_if", "w_hf", "b_f").into_iter().map(sigmoid).collect();
        let gg: Vec<f64> = gate("w_ig", "w_hg", "b_g").into_iter().map(f64::tanh).collect();
        let o: Vec<f64> = gate("w_io", "w_ho", "b_o").into_iter().map(sigmoid).collect();
        for j in 0..hidden {
            c[j] = f[j] * c[j] + i[j] * gg[j];
            h[j] = o[j] * c[j].tanh();
        }
    }
    h
}

/// Eval-mode ResNLS on one window, step by step.
pub fn resnls_oracle(m: &TrainedModel, x: &[f64]) -> f64 {
    let k = m.spec.kernel_size;
    let eps = 1e-5;
    let y = conv(&[x.to_vec()], p(m, "conv1.weight"), p(m, "conv1.bias"), k);
    let y: Vec<Vec<f64>> = y.into_iter().map(|r| r.into_iter().map(|v| v.max(0.0)).collect()).collect();
    let y = conv(&y, p(m, "conv2.weight"), p(m, "conv2.bias"), k);
    let (gamma, beta) = (p(m, "bn.gamma"), p(m, "bn.beta"));
    let (mean, var) = (p(m, "bn.running_mean"), p(m, "bn.running_var"));
    let flat: Vec<f64> = y
        .iter()
        .enumerate()
        .flat_map(|(c, row)| {
            row.iter()
                .map(move |v| (v.max(0.0) - mean[c]) / (var[c] + eps).sqrt() * gamma[c] + beta[c])
        })
        .collect();
    let r = affine(p(m, "proj.weight"), p(m, "proj.bias"), &flat);
    let z: Vec<f64> = x.iter().zip(&r).map(|(a, b)| a + b).collect();
    let h = lstm_last(m, "lstm", &z);
    affine(p(m, "head.weight"), p(m, "head.bias"), &h)[0]
}

/// Brute-force windows: every `(i..i+n, i+n)` slice of `values`.
pub fn brute_windows(values: &[f64], n: usize) -> Vec<(Vec<f64>, f64)> {
    let mut out = Vec::new();
    let mut i = 0;
    while i + n < values.len() {
        out.push((values[i..i + n].to_vec(), values[i + n]));
        i += 1;
    }
    out
}

/// Metrics straight from the definitions.
pub fn brute_metrics(errors: &[f64]) -> (f64, f64, f64) {
    let n = errors.len() as f64;
    let mut abs = 0.0;
    let mut sq = 0.0;
    for e in errors {
        abs += e.abs();
        sq += e * e;
    }
    (abs / n, sq / n, (sq / n).sqrt())
}

pub fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(f64::MIN_POSITIVE)
}
