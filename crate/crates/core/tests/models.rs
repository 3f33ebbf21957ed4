mod common;

use common::{randomize, resnls_oracle, rng};
use rand::Rng;
use resnls::models::{from_bytes, load, save, to_bytes, Architecture, ModelSpec, TrainedModel};
use resnls::nn::{ForwardCtx, LstmCell};
use resnls::{Error, Tape, Tensor};

fn random_inputs(rows: usize, n: usize, seed: u64) -> Tensor {
    let mut r = rng(seed);
    Tensor::new(&[rows, n], (0..rows * n).map(|_| r.gen_range(-0.2..1.2)).collect()).unwrap()
}

fn model(arch: Architecture, n: usize, seed: u64) -> TrainedModel {
    let mut m = TrainedModel::build(ModelSpec {
        init_seed: seed,
        ..ModelSpec::new(arch, n)
    })
    .unwrap();
    randomize(&mut m, seed + 100);
    m
}

#[test]
fn resnls_matches_layer_by_layer_oracle() {
    for n in [3, 5, 10] {
        let m = model(Architecture::Resnls, n, n as u64);
        let x = random_inputs(7, n, 1);
        let y = m.predict_tensor(&x).unwrap();
        for i in 0..7 {
            let want = resnls_oracle(&m, x.row(i));
            let got = y.data()[i];
            assert!((got - want).abs() <= 1e-12 * want.abs().max(1.0), "n={n} row {i}: {got} vs {want}");
        }
    }
}

#[test]
fn zeroed_residual_branch_is_the_lstm_baseline() {
    let lstm = model(Architecture::Lstm, 5, 3);
    let mut res = model(Architecture::Resnls, 5, 4);
    for name in res.residual_branch_parameters() {
        res.parameters.get_mut(&name).unwrap().data_mut().fill(0.0);
    }
    for (name, p) in lstm.parameters.iter() {
        *res.parameters.get_mut(name).unwrap() = p.tensor.clone();
    }
    let x = random_inputs(16, 5, 9);
    assert!(res.predict_tensor(&x).unwrap().bits_eq(&lstm.predict_tensor(&x).unwrap()));
}

#[test]
fn bilstm_palindrome_with_shared_weights() {
    let mut m = model(Architecture::Bilstm, 5, 5);
    let fwd: Vec<(String, Tensor)> = m
        .parameters
        .iter()
        .filter(|(n, _)| n.starts_with("lstm_fwd."))
        .map(|(n, p)| (n.replacen("lstm_fwd.", "lstm_bwd.", 1), p.tensor.clone()))
        .collect();
    for (name, t) in fwd {
        *m.parameters.get_mut(&name).unwrap() = t;
    }
    let x = Tensor::from_rows(&[vec![0.1, 0.7, 0.3, 0.7, 0.1]]).unwrap();
    let f = common::lstm_last(&m, "lstm_fwd", x.data());
    let rev: Vec<f64> = x.data().iter().rev().copied().collect();
    let b = common::lstm_last(&m, "lstm_bwd", &rev);
    assert_eq!(f, b);


    // same on the tape: one cell run forward and in reverse over the palindrome
    let cell = LstmCell::new("lstm_fwd", 1, 32);
    let mut tape = Tape::new();
    let bound = m.parameters.bind(&mut tape);
    let seq = tape.constant(x.reshape(&[1, 5, 1]).unwrap());
    let (_, fw) = cell.sequence(&mut tape, &bound, seq, None, false).unwrap();
    let (_, bw) = cell.sequence(&mut tape, &bound, seq, None, true).unwrap();
    assert!(tape.value(fw.h).bits_eq(tape.value(bw.h)));
}

#[test]
fn cnn_zero_input_zero_bias_gives_zero() {
    let m = TrainedModel::build(ModelSpec::new(Architecture::Cnn, 5)).unwrap();
    let y = m.predict_tensor(&Tensor::zeros(&[3, 5])).unwrap();
    assert!(y.data().iter().all(|v| *v == 0.0), "{:?}", y.data());
}

#[test]
fn identical_rows_identical_outputs() {
    for arch in Architecture::ALL {
        let m = model(arch, 5, 11);
        let row = random_inputs(1, 5, 12);
        let x = Tensor::from_rows(&vec![row.data().to_vec(); 4]).unwrap();
        let y = m.predict_tensor(&x).unwrap();
        assert!(y.data().iter().all(|v| v.to_bits() == y.data()[0].to_bits()), "{arch}");
    }
}

#[test]
fn output_shape_for_every_architecture_and_window() {
    for arch in Architecture::ALL {
        for n in [3, 4, 5, 10, 20] {
            let m = TrainedModel::build(ModelSpec::new(arch, n)).unwrap();
            let y = m.predict_tensor(&random_inputs(2, n, 0)).unwrap();
            assert_eq!(y.shape(), &[2, 1], "{arch} n={n}");
        }
    }
}

#[test]
fn wrong_window_length_is_a_dimension_error() {
    let m = TrainedModel::build(ModelSpec::default()).unwrap();
    assert!(matches!(m.predict_tensor(&Tensor::zeros(&[2, 6])), Err(Error::Dimension { .. })));
}

#[test]
fn eval_forward_is_pure() {
    for arch in Architecture::ALL {
        let m = model(arch, 5, 21);
        let x = random_inputs(5, 5, 22);
        assert!(m.predict_tensor(&x).unwrap().bits_eq(&m.predict_tensor(&x).unwrap()));
    }
}

#[test]
fn train_mode_forward_uses_batch_statistics() {
    let m = model(Architecture::Resnls, 5, 31);
    let x = random_inputs(4, 5, 32);
    let mut tape = Tape::new();
    let xv = tape.constant(x.clone());
    let mut ctx = ForwardCtx::train_deterministic();
    let (y, _) = m.forward(&mut tape, xv, &mut ctx).unwrap();
    assert_eq!(ctx.bn_updates.len(), 1);
    assert!(!tape.value(y).bits_eq(&m.predict_tensor(&x).unwrap()));
}

#[test]
fn invalid_spec_names_the_field() {
    let bad = ModelSpec {
        kernel_size: 4,
        ..ModelSpec::default()
    };
    match TrainedModel::build(bad) {
        Err(Error::Config { field, .. }) => assert_eq!(field, "kernel_size"),
        other => panic!("{other:?}"),
    }
}

#[test]
fn predictions_survive_save_and_load_bitwise() {
    let dir = tempfile::tempdir().unwrap();
    for arch in Architecture::ALL {
        let m = model(arch, 5, 41);
        let path = dir.path().join(format!("{arch}.model"));
        save(&m, &path).unwrap();
        let back = load(&path).unwrap();
        let x = random_inputs(6, 5, 42);
        assert!(m.predict_tensor(&x).unwrap().bits_eq(&back.predict_tensor(&x).unwrap()));
        assert_eq!(to_bytes(&back), std::fs::read(&path).unwrap());
    }
}

#[test]
fn truncated_model_never_loads() {
    let bytes = to_bytes(&TrainedModel::build(ModelSpec::default()).unwrap());
    for cut in [0, 5, 13, 100, bytes.len() / 2, bytes.len() - 1] {
        assert!(matches!(from_bytes(&bytes[..cut]), Err(Error::Load(_))), "cut at {cut}");
    }
}
