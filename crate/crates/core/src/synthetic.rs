//! Seeded synthetic index: two sines, a slow drift and Gaussian noise on
//! weekday dates.

use chrono::{Datelike, Duration, NaiveDate, Weekday};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::Result;
use crate::series::{DateRange, PriceBar, PriceSeries};

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticConfig {
    pub len: usize,
    pub seed: u64,
    pub start: NaiveDate,
    pub level: f64,
    pub amplitude: f64,
    pub period: f64,
    pub noise_sd: f64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            len: 2600,
            seed: 20_211_231,
            start: NaiveDate::from_ymd_opt(2012, 1, 2).unwrap(),
            level: 3000.0,
            amplitude: 400.0,
            period: 120.0,
            noise_sd: 12.0,
        }
    }
}

/// Train/test ranges matching the bundled synthetic file.
pub fn default_ranges() -> (DateRange, DateRange) {
    let d = |y, m, day| NaiveDate::from_ymd_opt(y, m, day).unwrap();
    (
        DateRange { start: d(2012, 1, 1), end: d(2020, 12, 31) },
        DateRange { start: d(2021, 1, 1), end: d(2021, 12, 31) },
    )
}

fn weekdays(start: NaiveDate) -> impl Iterator<Item = NaiveDate> {
    (0..)
        .map(move |i| start + Duration::days(i))
        .filter(|d| !matches!(d.weekday(), Weekday::Sat | Weekday::Sun))
}

pub fn sine_series(cfg: &SyntheticConfig) -> Result<PriceSeries> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let noise = Normal::new(0.0, cfg.noise_sd).expect("finite sd");
    let tau = std::f64::consts::TAU;
    let mut prev_close = cfg.level;
    let mut bars = Vec::with_capacity(cfg.len);
    for (t, date) in weekdays(cfg.start).take(cfg.len).enumerate() {
        let t = t as f64;
        let clean = cfg.level
            + cfg.amplitude * (tau * t / cfg.period).sin()
            + 0.35 * cfg.amplitude * (tau * t / (cfg.period / 3.3)).sin()
            + 0.05 * t;
        let close = clean + noise.sample(&mut rng);
        let open = prev_close + 0.25 * (close - prev_close) + 0.3 * noise.sample(&mut rng);
        let high = open.max(close) + rng.gen_range(0.0..cfg.noise_sd);
        let low = open.min(close) - rng.gen_range(0.0..cfg.noise_sd);
        // four-decimal rounding matches the CSV writer, so the file and the
        // in-memory series agree exactly
        let r = |x: f64| (x * 1e4).round() / 1e4;
        bars.push(PriceBar {
            date,
            open: r(open),
            high: r(high),
            low: r(low),
            close: r(close),
        });
        prev_close = close;
    }
    PriceSeries::from_bars("SYNTH", bars)
}
