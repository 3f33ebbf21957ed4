//! Train ResNLS-5 on the synthetic series and score it in index points.
//!
//! cargo run --release --example train_resnls [epochs]

use resnls::dataset::split;
use resnls::metrics::evaluate;
use resnls::models::{ModelSpec, TrainedModel};
use resnls::series::PriceField;
use resnls::synthetic::{default_ranges, sine_series};
use resnls::training::{train_with_progress, TrainConfig};

fn main() -> resnls::Result<()> {
    let epochs = std::env::args().nth(1).map_or(50, |s| s.parse().expect("epochs"));
    let series = sine_series(&Default::default())?;
    let (train_range, test_range) = default_ranges();
    let data = split(&series, PriceField::Close, train_range, test_range, 5)?;

    let model = TrainedModel::build(ModelSpec::default())?;
    println!("ResNLS-5: {} parameters", model.parameters.numel());
    let config = TrainConfig { epochs, ..TrainConfig::default() };
    let start = std::time::Instant::now();
    let (model, curve) = train_with_progress(model, &data.train, &data.test, &config, |e, tr, te| {
        if e == 1 || e % 10 == 0 {
            println!("epoch {e:>3}  train {tr:.6}  test {te:.6}");
        }
    })?;
    println!("trained in {:.1?}; test mse before training {:.4}", start.elapsed(), curve.initial_test_mse);

    let report = evaluate(&model, &data.test)?;
    println!("MAE {:.2}  MSE {:.2}  RMSE {:.2} over {} test days", report.mae, report.mse, report.rmse, report.n_test);
    for r in report.residuals.iter().take(5) {
        println!("  {}  actual {:.2}  predicted {:.2}", r.date, r.actual, r.predicted);
    }
    Ok(())
}
