//! How the window length n changes the error. Uses the same orchestration
//! as `resnls sweep`, writing into a scratch directory.
//!
//! cargo run --release --example window_sweep [epochs]

use resnls::app::{cmd_sweep, RunConfig};

fn main() -> resnls::Result<()> {
    let epochs = std::env::args().nth(1).map_or(10, |s| s.parse().expect("epochs"));
    let out = std::env::temp_dir().join("resnls-window-sweep");
    let cfg = RunConfig {
        out_dir: out.clone(),
        epochs,
        sweep_windows: vec![3, 5, 10, 20],
        ..RunConfig::default()
    };
    let (_, rows) = cmd_sweep(&cfg)?;
    println!("{:>4}  {:>8}  {:>10}  {:>8}", "n", "MAE", "MSE", "RMSE");
    for row in rows {
        let m = row.outcome.expect("sweep aborts on failure");
        println!("{:>4}  {:>8.2}  {:>10.2}  {:>8.2}", row.window_n, m.mae, m.mse, m.rmse);
    }
    println!("tables and loss curves under {}", out.display());
    Ok(())
}
