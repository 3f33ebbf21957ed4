//! Ingest the bundled CSV, fit the normalizer on the train range only and
//! cut stride-1 windows. Consecutive windows overlap: each one is the
//! previous input shifted left with the previous target appended.
//!
//! cargo run --example windows_and_normalizer

use resnls::dataset::split;
use resnls::series::{ingest_csv, PriceField};
use resnls::synthetic::default_ranges;

fn main() -> resnls::Result<()> {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/data/synthetic_sine.csv");
    let series = ingest_csv(path, "SYNTH")?;
    let (train_range, test_range) = default_ranges();
    let data = split(&series, PriceField::Close, train_range, test_range, 10)?;

    let norm = data.normalizer;
    println!("{} bars, normalizer fitted on {}: min {:.2}, max {:.2}", series.len(), norm.fitted_on, norm.min, norm.max);
    println!("train windows {}, test windows {}", data.train.len(), data.test.len());

    println!("\nfirst three training windows (n = 10):");
    for i in 0..3 {
        let row: Vec<String> = data.train.inputs.row(i).iter().map(|v| format!("{v:.4}")).collect();
        println!("  {} -> {:.4}", row.join(" "), data.train.targets.data()[i]);
    }

    // the first test target borrows its history from the end of the train range
    let first = data.test.target_dates[0];
    println!("\nfirst test target {first}, inputs end on {}", series.bars()[series.position(first).unwrap() - 1].date);
    let outside = data.test.targets.data().iter().filter(|v| !(0.0..=1.0).contains(*v)).count();
    println!("test targets outside [0, 1]: {outside} (left unclamped)");
    Ok(())
}
