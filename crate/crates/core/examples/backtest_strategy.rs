//! Threshold trading on walk-forward forecasts against buy-and-hold.
//!
//! cargo run --release --example backtest_strategy [epochs]

use resnls::backtest::{backtest, Forecasts, StrategyConfig};
use resnls::dataset::split;
use resnls::metrics::predict_prices;
use resnls::models::{Architecture, ModelSpec, TrainedModel};
use resnls::series::PriceField;
use resnls::synthetic::{default_ranges, sine_series};
use resnls::training::{train, TrainConfig};

fn main() -> resnls::Result<()> {
    let epochs = std::env::args().nth(1).map_or(20, |s| s.parse().expect("epochs"));
    let series = sine_series(&Default::default())?;
    let (train_range, test_range) = default_ranges();
    let data = split(&series, PriceField::Close, train_range, test_range, 5)?;

    let model = TrainedModel::build(ModelSpec::new(Architecture::Resnls, 5))?;
    let (model, _) = train(model, &data.train, &data.test, &TrainConfig { epochs, ..Default::default() })?;
    let preds = predict_prices(&model, &data.test)?;
    let forecasts: Forecasts = data.test.target_dates.iter().copied().zip(preds).collect();

    let result = backtest(&series.slice(&test_range), &forecasts, &StrategyConfig::default())?;
    for t in &result.prediction.trades {
        println!("{}  {:<4} {:>12.4} shares at {:.2}", t.date, t.side.as_str(), t.quantity, t.price);
    }
    println!("prediction ARR {:>7.2}%  final value {:.2}", result.prediction.final_arr, result.prediction.final_value);
    println!("benchmark  ARR {:>7.2}%  final value {:.2}", result.benchmark.final_arr, result.benchmark.final_value);
    Ok(())
}
