//! Train every architecture with the same seeds and rank them by RMSE.
//!
//! cargo run --release --example compare_baselines [epochs]

use rayon::prelude::*;
use resnls::dataset::split;
use resnls::metrics::{compare, evaluate};
use resnls::models::{Architecture, ModelSpec, TrainedModel};
use resnls::series::PriceField;
use resnls::synthetic::{default_ranges, sine_series};
use resnls::training::{train, TrainConfig};

fn main() -> resnls::Result<()> {
    let epochs = std::env::args().nth(1).map_or(50, |s| s.parse().expect("epochs"));
    let series = sine_series(&Default::default())?;
    let (train_range, test_range) = default_ranges();
    let data = split(&series, PriceField::Close, train_range, test_range, 5)?;
    let config = TrainConfig { epochs, ..TrainConfig::default() };

    let reports = Architecture::ALL
        .par_iter()
        .map(|&arch| {
            let model = TrainedModel::build(ModelSpec::new(arch, 5))?;
            let (model, _) = train(model, &data.train, &data.test, &config)?;
            Ok((arch.to_string(), evaluate(&model, &data.test)?))
        })
        .collect::<resnls::Result<Vec<_>>>()?;

    let table = compare(&reports)?;
    print!("{}", table.to_text());
    println!("best: {}", table.best().model);
    Ok(())
}
