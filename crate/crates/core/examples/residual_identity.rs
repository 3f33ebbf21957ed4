//! With the projection zeroed the residual branch adds exactly nothing, so
//! ResNLS collapses to the plain LSTM carrying the same weights.
//!
//! cargo run --example residual_identity

use rand::{Rng, SeedableRng};
use resnls::models::{Architecture, ModelSpec, TrainedModel};
use resnls::Tensor;

fn main() -> resnls::Result<()> {
    let mut res = TrainedModel::build(ModelSpec::new(Architecture::Resnls, 5))?;
    let lstm = TrainedModel::build(ModelSpec::new(Architecture::Lstm, 5))?;
    for name in ["proj.weight", "proj.bias"] {
        res.parameters.get_mut(name)?.data_mut().fill(0.0);
    }
    for (name, p) in lstm.parameters.iter() {
        *res.parameters.get_mut(name)? = p.tensor.clone();
    }

    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
    let x = Tensor::new(&[4, 5], (0..20).map(|_| rng.gen_range(0.0..1.0)).collect())?;
    let a = res.predict_tensor(&x)?;
    let b = lstm.predict_tensor(&x)?;
    for (p, q) in a.data().iter().zip(b.data()) {
        println!("resnls {p:+.17}  lstm {q:+.17}");
    }
    println!("bitwise equal: {}", a.bits_eq(&b));
    Ok(())
}
