//! Save a model, load it back bit-for-bit, and watch damaged files get
//! rejected with distinct errors.
//!
//! cargo run --example model_roundtrip

use resnls::models::{from_bytes, load, save, to_bytes, ModelSpec, TrainedModel};

fn main() -> resnls::Result<()> {
    let model = TrainedModel::build(ModelSpec::default())?;
    let dir = std::env::temp_dir().join("resnls-roundtrip");
    std::fs::create_dir_all(&dir).expect("temp dir");
    let path = dir.join("resnls-5.model");
    save(&model, &path)?;
    let back = load(&path)?;
    println!("{} parameters, equal after reload: {}", back.parameters.numel(), back == model);

    let bytes = to_bytes(&model);
    let header_end = bytes.iter().skip(13).position(|b| *b == b'\n').unwrap() + 13;
    println!("{}", String::from_utf8_lossy(&bytes[..header_end.min(200)]));

    let mut flipped = bytes.clone();
    let last = flipped.len() - 1;
    flipped[last] ^= 1;
    println!("flipped bit:  {}", from_bytes(&flipped).unwrap_err());
    println!("truncated:    {}", from_bytes(&bytes[..40]).unwrap_err());
    println!("not a model:  {}", from_bytes(b"hello").unwrap_err());
    Ok(())
}
