//! Threshold trading replay against buy-and-hold.
//!
//! At each day's close the strategy compares tomorrow's forecast with
//! today's close: above `(1 + threshold)·close` it converts all cash to
//! shares, below `(1 − threshold)·close` it sells every share, otherwise it
//! holds. Orders fill at the next day's open (or close). Fractional shares,
//! no fees, no taxes. Portfolios are marked to market at every close.

use std::collections::BTreeMap;
use std::io::Write;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{DataError, Error, Result};
use crate::series::PriceSeries;

/// `(V_n − V_0) / V_0 · 100`
pub fn arr(v0: f64, vn: f64) -> Result<f64> {
    if !(v0 > 0.0) {
        return Err(Error::Domain(format!("initial value must be positive, got {v0}")));
    }
    Ok((vn - v0) * 100.0 / v0)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExecutionPrice {
    #[default]
    NextOpen,
    NextClose,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StrategyConfig {
    pub threshold: f64,
    pub initial_cash: f64,
    pub execution_price: ExecutionPrice,
}

impl Default for StrategyConfig {
    fn default() -> Self {
        Self {
            threshold: 0.01,
            initial_cash: 1_000_000.0,
            execution_price: ExecutionPrice::NextOpen,
        }
    }
}

impl StrategyConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.threshold > 0.0) {
            return Err(Error::config("threshold", "must be positive"));
        }
        if !(self.initial_cash > 0.0 && self.initial_cash.is_finite()) {
            return Err(Error::config("initial_cash", "must be positive"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Action {
    Buy,
    Sell,
    Hold,
}

impl Action {
    pub fn as_str(self) -> &'static str {
        match self {
            Action::Buy => "buy",
            Action::Sell => "sell",
            Action::Hold => "hold",
        }
    }
}

/// All-in / all-out holdings.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PortfolioState {
    pub cash: f64,
    pub shares: f64,
}

impl PortfolioState {
    pub fn value(&self, price: f64) -> f64 {
        self.cash + self.shares * price
    }

    fn buy_all(&mut self, price: f64) -> f64 {
        let qty = self.cash / price;
        self.shares += qty;
        self.cash = 0.0;
        qty
    }

    fn sell_all(&mut self, price: f64) -> f64 {
        let qty = self.shares;
        self.cash += qty * price;
        self.shares = 0.0;
        qty
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trade {
    pub date: NaiveDate,
    pub side: Action,
    pub price: f64,
    pub quantity: f64,
    pub value_before: f64,
    pub value_after: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DailyRecord {
    pub date: NaiveDate,
    pub close: f64,
    /// Forecast of this day's close, when one exists.
    pub forecast: Option<f64>,
    /// Order filled on this day.
    pub action: Action,
    pub cash: f64,
    pub shares: f64,
    pub value: f64,
    pub arr: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StrategyRun {
    pub name: String,
    pub days: Vec<DailyRecord>,
    pub trades: Vec<Trade>,
    pub initial_value: f64,
    pub final_value: f64,
    pub final_arr: f64,
}

/// Next-day close forecasts in price units, keyed by the forecast day.
pub type Forecasts = BTreeMap<NaiveDate, f64>;

fn exec_price(series: &PriceSeries, day: usize, how: ExecutionPrice) -> f64 {
    let bar = &series.bars()[day];
    match how {
        ExecutionPrice::NextOpen => bar.open,
        ExecutionPrice::NextClose => bar.close,
    }
}

fn check_len(series: &PriceSeries) -> Result<()> {
    if series.len() < 2 {
        return Err(DataError::TooShort {
            required: 2,
            found: series.len(),
        }
        .into());
    }
    Ok(())
}

pub fn run_prediction_strategy(
    series: &PriceSeries,
    forecasts: &Forecasts,
    config: &StrategyConfig,
) -> Result<StrategyRun> {
    config.validate()?;
    check_len(series)?;
    let bars = series.bars();
    // every day after the first needs a forecast
    for b in &bars[1..] {
        if !forecasts.contains_key(&b.date) {
            return Err(DataError::MissingForecast(b.date).into());
        }
    }
    let v0 = config.initial_cash;
    let mut state = PortfolioState { cash: v0, shares: 0.0 };
    let mut pending = Action::Hold;
    let mut days = Vec::with_capacity(bars.len());
    let mut trades = Vec::new();
    for (t, bar) in bars.iter().enumerate() {
        let action = pending;
        if action != Action::Hold {
            let price = exec_price(series, t, config.execution_price);
            let before = state.value(price);
            let quantity = match action {
                Action::Buy => state.buy_all(price),
                Action::Sell => state.sell_all(price),
                Action::Hold => unreachable!(),
            };
            trades.push(Trade {
                date: bar.date,
                side: action,
                price,
                quantity,
                value_before: before,
                value_after: state.value(price),
            });
        }
        let value = state.value(bar.close);
        days.push(DailyRecord {
            date: bar.date,
            close: bar.close,
            forecast: forecasts.get(&bar.date).copied(),
            action,
            cash: state.cash,
            shares: state.shares,
            value,
            arr: arr(v0, value)?,
        });
        pending = Action::Hold;
        if let Some(next) = bars.get(t + 1) {
            let f = forecasts[&next.date];
            if f > (1.0 + config.threshold) * bar.close && state.cash > 0.0 {
                pending = Action::Buy;
            } else if f < (1.0 - config.threshold) * bar.close && state.shares > 0.0 {
                pending = Action::Sell;
            }
        }
    }
    let final_value = days.last().expect("non-empty").value;
    Ok(StrategyRun {
        name: "prediction".into(),
        days,
        trades,
        initial_value: v0,
        final_value,
        final_arr: arr(v0, final_value)?,
    })
}

/// Buys with all cash at the first day's execution price and holds.
pub fn run_benchmark(series: &PriceSeries, config: &StrategyConfig) -> Result<StrategyRun> {
    config.validate()?;
    check_len(series)?;
    let v0 = config.initial_cash;
    let mut state = PortfolioState { cash: v0, shares: 0.0 };
    let first = &series.bars()[0];
    let price = exec_price(series, 0, config.execution_price);
    let before = state.value(price);
    let quantity = state.buy_all(price);
    let trades = vec![Trade {
        date: first.date,
        side: Action::Buy,
        price,
        quantity,
        value_before: before,
        value_after: state.value(price),
    }];
    let days = series
        .bars()
        .iter()
        .enumerate()
        .map(|(t, bar)| {
            let value = state.value(bar.close);
            Ok(DailyRecord {
                date: bar.date,
                close: bar.close,
                forecast: None,
                action: if t == 0 { Action::Buy } else { Action::Hold },
                cash: state.cash,
                shares: state.shares,
                value,
                arr: arr(v0, value)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let final_value = days.last().expect("non-empty").value;
    Ok(StrategyRun {
        name: "benchmark".into(),
        days,
        trades,
        initial_value: v0,
        final_value,
        final_arr: arr(v0, final_value)?,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct BacktestResult {
    pub instrument: String,
    pub prediction: StrategyRun,
    pub benchmark: StrategyRun,
}

pub fn backtest(series: &PriceSeries, forecasts: &Forecasts, config: &StrategyConfig) -> Result<BacktestResult> {
    Ok(BacktestResult {
        instrument: series.instrument().to_string(),
        prediction: run_prediction_strategy(series, forecasts, config)?,
        benchmark: run_benchmark(series, config)?,
    })
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl BacktestResult {
    /// `date,close,forecast,action,cash,shares,value,arr_pred,arr_bench`,
    /// portfolio columns from the prediction strategy.
    pub fn write_daily_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "date,close,forecast,action,cash,shares,value,arr_pred,arr_bench")?;
        for (p, b) in self.prediction.days.iter().zip(&self.benchmark.days) {
            writeln!(
                out,
                "{},{},{},{},{},{},{},{},{}",
                p.date,
                p.close,
                opt(p.forecast),
                p.action.as_str(),
                p.cash,
                p.shares,
                p.value,
                p.arr,
                b.arr
            )?;
        }
        Ok(())
    }

    /// `strategy,date,side,price,quantity`
    pub fn write_trades_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "strategy,date,side,price,quantity")?;
        for run in [&self.prediction, &self.benchmark] {
            for t in &run.trades {
                writeln!(out, "{},{},{},{},{}", run.name, t.date, t.side.as_str(), t.price, t.quantity)?;
            }
        }
        Ok(())
    }
}

/// `instrument,strategy,start,end,trades,final_value,arr`; two rows per
/// result, benchmark first.
pub fn write_summary_csv<W: Write>(results: &[BacktestResult], mut out: W) -> std::io::Result<()> {
    writeln!(out, "instrument,strategy,start,end,trades,final_value,arr")?;
    for r in results {
        for run in [&r.benchmark, &r.prediction] {
            let (start, end) = (run.days[0].date, run.days[run.days.len() - 1].date);
            writeln!(
                out,
                "{},{},{start},{end},{},{},{}",
                r.instrument,
                run.name,
                run.trades.len(),
                run.final_value,
                run.final_arr
            )?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::series::PriceBar;
    use chrono::Duration;

    fn day(i: usize) -> NaiveDate {
        NaiveDate::from_ymd_opt(2021, 1, 4).unwrap() + Duration::days(i as i64)
    }

    fn series(opens: &[f64], closes: &[f64]) -> PriceSeries {
        let bars = opens
            .iter()
            .zip(closes)
            .enumerate()
            .map(|(i, (&o, &c))| PriceBar {
                date: day(i),
                open: o,
                high: o.max(c),
                low: o.min(c),
                close: c,
            })
            .collect();
        PriceSeries::from_bars("T", bars).unwrap()
    }

    #[test]
    fn arr_fixtures() {
        assert_eq!(arr(100.0, 110.0).unwrap(), 10.0);
        assert_eq!(arr(100.0, 100.0).unwrap(), 0.0);
        assert_eq!(arr(200.0, 150.0).unwrap(), -25.0);
        assert!(matches!(arr(0.0, 1.0), Err(Error::Domain(_))));
    }

    #[test]
    fn three_day_ledger() {
        let s = series(&[100.0, 100.0, 103.0], &[100.0, 103.0, 100.0]);
        let f: Forecasts = [(day(1), 103.0), (day(2), 100.0)].into();
        let cfg = StrategyConfig {
            initial_cash: 1000.0,
            ..StrategyConfig::default()
        };
        let run = run_prediction_strategy(&s, &f, &cfg).unwrap();
        assert_eq!(run.trades.len(), 2);
        assert_eq!((run.trades[0].side, run.trades[0].price, run.trades[0].date), (Action::Buy, 100.0, day(1)));
        assert_eq!((run.trades[1].side, run.trades[1].price, run.trades[1].date), (Action::Sell, 103.0, day(2)));
        assert_eq!(run.final_value, 1030.0);
        assert_eq!(run.final_arr, 3.0);
    }

    #[test]
    fn quiet_forecasts_never_trade() {
        let s = series(&[100.0, 101.0, 99.0, 100.5], &[100.0, 101.0, 99.0, 100.5]);
        let f: Forecasts = (1..4).map(|i| (day(i), s.bars()[i - 1].close * 1.005)).collect();
        let run = run_prediction_strategy(&s, &f, &StrategyConfig::default()).unwrap();
        assert!(run.trades.is_empty());
        assert_eq!(run.final_arr, 0.0);
    }

    #[test]
    fn missing_forecast_names_date() {
        let s = series(&[100.0, 100.0, 100.0], &[100.0, 100.0, 100.0]);
        let f: Forecasts = [(day(1), 100.0)].into();
        assert!(matches!(
            run_prediction_strategy(&s, &f, &StrategyConfig::default()),
            Err(Error::Data(DataError::MissingForecast(d))) if d == day(2)
        ));
    }

    #[test]
    fn benchmark_cases() {
        let s = series(&[100.0, 101.0, 102.0], &[100.5, 101.0, 103.91]);
        let b = run_benchmark(&s, &StrategyConfig::default()).unwrap();
        assert!((b.final_arr - 3.91).abs() < 1e-9);
        assert_eq!(b.trades.len(), 1);
        let flat = series(&[50.0; 4], &[50.0; 4]);
        assert_eq!(run_benchmark(&flat, &StrategyConfig::default()).unwrap().final_arr, 0.0);
        let short = series(&[50.0], &[50.0]);
        assert!(run_benchmark(&short, &StrategyConfig::default()).is_err());
    }

    #[test]
    fn csv_outputs() {
        let s = series(&[100.0, 100.0, 103.0], &[100.0, 103.0, 100.0]);
        let f: Forecasts = [(day(1), 103.0), (day(2), 100.0)].into();
        let r = backtest(&s, &f, &StrategyConfig::default()).unwrap();
        let mut buf = Vec::new();
        write_summary_csv(std::slice::from_ref(&r), &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 3);
        let mut buf = Vec::new();
        r.write_daily_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().next().unwrap(), "date,close,forecast,action,cash,shares,value,arr_pred,arr_bench");
        assert_eq!(text.lines().count(), 4);
    }
}
