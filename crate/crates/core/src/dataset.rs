//! Min-max normalization, sliding windows and the train/test split.

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{DataError, Error, Result};
use crate::series::{DateRange, PriceField, PriceSeries};
use crate::tensor::Tensor;

/// Affine map of prices onto `[0, 1]` over the fitting range.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub min: f64,
    pub max: f64,
    pub fitted_on: DateRange,
}

impl Normalizer {
    pub fn new(min: f64, max: f64, fitted_on: DateRange) -> Result<Self> {
        if !(max > min) || !min.is_finite() || !max.is_finite() {
            return Err(DataError::DegenerateRange(min).into());
        }
        Ok(Self { min, max, fitted_on })
    }

    pub fn span(&self) -> f64 {
        self.max - self.min
    }

    pub fn transform(&self, x: f64) -> f64 {
        (x - self.min) / self.span()
    }

    pub fn inverse(&self, y: f64) -> f64 {
        y * self.span() + self.min
    }
}

/// Fits min/max on the values of `field` inside `range` only.
pub fn fit_normalizer(series: &PriceSeries, field: PriceField, range: DateRange) -> Result<Normalizer> {
    let idx = series.index_range(&range);
    let values: Vec<f64> = series.bars()[idx].iter().map(|b| b.get(field)).collect();
    if values.len() < 2 {
        return Err(DataError::TooShort {
            required: 2,
            found: values.len(),
        }
        .into());
    }
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if min == max {
        return Err(DataError::DegenerateRange(min).into());
    }
    Normalizer::new(min, max, range)
}

/// `(p_1..p_n) → p_{n+1}` pairs on the normalized scale.
#[derive(Clone, Debug, PartialEq)]
pub struct WindowedDataset {
    /// `[N × n]`
    pub inputs: Tensor,
    /// `[N × 1]`
    pub targets: Tensor,
    pub window_n: usize,
    /// Date of each window's target day.
    pub target_dates: Vec<NaiveDate>,
    pub normalizer: Normalizer,
}

impl WindowedDataset {
    pub fn len(&self) -> usize {
        self.target_dates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.target_dates.is_empty()
    }

    /// Targets in price units.
    pub fn denormalized_targets(&self) -> Vec<f64> {
        self.targets.data().iter().map(|&v| self.normalizer.inverse(v)).collect()
    }

    fn build(
        values: &[f64],
        dates: &[NaiveDate],
        positions: impl Iterator<Item = usize>,
        n: usize,
        normalizer: Normalizer,
    ) -> Result<Self> {
        let mut inputs = Vec::new();
        let mut targets = Vec::new();
        let mut target_dates = Vec::new();
        for t in positions {
            inputs.extend(values[t - n..t].iter().map(|&v| normalizer.transform(v)));
            targets.push(normalizer.transform(values[t]));
            target_dates.push(dates[t]);
        }
        let count = targets.len();
        if count == 0 {
            return Err(DataError::Empty.into());
        }
        Ok(Self {
            inputs: Tensor::new(&[count, n], inputs)?,
            targets: Tensor::new(&[count, 1], targets)?,
            window_n: n,
            target_dates,
            normalizer,
        })
    }
}

fn check_n(n: usize) -> Result<()> {
    if n == 0 {
        return Err(Error::config("window_n", "must be positive"));
    }
    Ok(())
}

/// Stride-1 windows whose inputs and target all fall inside `range`.
pub fn make_windows(
    series: &PriceSeries,
    field: PriceField,
    normalizer: &Normalizer,
    n: usize,
    range: DateRange,
) -> Result<WindowedDataset> {
    check_n(n)?;
    let idx = series.index_range(&range);
    if idx.len() < n + 1 {
        return Err(DataError::TooShort {
            required: n + 1,
            found: idx.len(),
        }
        .into());
    }
    let values = series.values(field);
    let dates = series.dates();
    WindowedDataset::build(&values, &dates, idx.start + n..idx.end, n, *normalizer)
}

/// One window per target day inside `range`, taking the `n` preceding days
/// from anywhere in the series. Days with fewer than `n` predecessors are
/// skipped.
pub fn make_walk_forward_windows(
    series: &PriceSeries,
    field: PriceField,
    normalizer: &Normalizer,
    n: usize,
    range: DateRange,
) -> Result<WindowedDataset> {
    check_n(n)?;
    let idx = series.index_range(&range);
    let first = idx.start.max(n);
    if first >= idx.end {
        return Err(DataError::TooShort {
            required: n + 1,
            found: idx.end,
        }
        .into());
    }
    let values = series.values(field);
    let dates = series.dates();
    WindowedDataset::build(&values, &dates, first..idx.end, n, *normalizer)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Split {
    pub train: WindowedDataset,
    pub test: WindowedDataset,
    pub normalizer: Normalizer,
}

/// Fits the normalizer on the train range and windows both ranges with it.
/// Test windows near the boundary borrow their history from the train range
/// so every test day gets a prediction.
pub fn split(
    series: &PriceSeries,
    field: PriceField,
    train_range: DateRange,
    test_range: DateRange,
    n: usize,
) -> Result<Split> {
    if train_range.overlaps(&test_range) || train_range.end >= test_range.start {
        return Err(Error::config(
            "test_range",
            format!("train {train_range} must end before test {test_range} begins"),
        ));
    }
    let normalizer = fit_normalizer(series, field, train_range)?;
    let train = make_windows(series, field, &normalizer, n, train_range)?;
    let test = make_walk_forward_windows(series, field, &normalizer, n, test_range)?;
    Ok(Split {
        train,
        test,
        normalizer,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::series::PriceBar;
    use chrono::Duration;

    fn series(closes: &[f64]) -> PriceSeries {
        let d0 = NaiveDate::from_ymd_opt(2020, 12, 20).unwrap();
        let bars = closes
            .iter()
            .enumerate()
            .map(|(i, &c)| PriceBar {
                date: d0 + Duration::days(i as i64),
                open: c,
                high: c,
                low: c,
                close: c,
            })
            .collect();
        PriceSeries::from_bars("T", bars).unwrap()
    }

    fn all(s: &PriceSeries) -> DateRange {
        DateRange::new(s.bars()[0].date, s.bars()[s.len() - 1].date).unwrap()
    }

    #[test]
    fn normalizer_endpoints_and_midpoint() {
        let s = series(&[2800.0, 3600.0]);
        let n = fit_normalizer(&s, PriceField::Close, all(&s)).unwrap();
        assert_eq!((n.min, n.max), (2800.0, 3600.0));
        assert_eq!(n.transform(3200.0), 0.5);
        assert_eq!(n.transform(2800.0), 0.0);
        assert_eq!(n.transform(3600.0), 1.0);
    }

    #[test]
    fn constant_series_is_degenerate() {
        let s = series(&[5.0, 5.0, 5.0]);
        assert!(matches!(
            fit_normalizer(&s, PriceField::Close, all(&s)),
            Err(Error::Data(DataError::DegenerateRange(_)))
        ));
    }

    #[test]
    fn eleven_closes_make_one_ten_day_window() {
        let closes: Vec<f64> = (1..=11).map(f64::from).collect();
        let s = series(&closes);
        let norm = fit_normalizer(&s, PriceField::Close, all(&s)).unwrap();
        let w = make_windows(&s, PriceField::Close, &norm, 10, all(&s)).unwrap();
        assert_eq!(w.len(), 1);
        assert_eq!(w.inputs.shape(), &[1, 10]);
        assert!(matches!(
            make_windows(&s, PriceField::Close, &norm, 11, all(&s)),
            Err(Error::Data(DataError::TooShort { required: 12, found: 11 }))
        ));
    }

    #[test]
    fn split_rejects_overlap_and_covers_every_test_day() {
        let closes: Vec<f64> = (0..30).map(|i| 100.0 + (i as f64 * 0.7).sin() * 10.0).collect();
        let s = series(&closes);
        let d = |i: usize| s.bars()[i].date;
        let train = DateRange::new(d(0), d(19)).unwrap();
        let test = DateRange::new(d(20), d(29)).unwrap();
        let sp = split(&s, PriceField::Close, train, test, 5).unwrap();
        assert_eq!(sp.train.len(), 20 - 5);
        assert_eq!(sp.test.len(), 10);
        assert_eq!(sp.test.target_dates[0], d(20));
        // first test window borrows the last five train days
        let expect: Vec<f64> = (15..20).map(|i| sp.normalizer.transform(closes[i])).collect();
        assert_eq!(sp.test.inputs.row(0), expect.as_slice());

        let overlapping = DateRange::new(d(19), d(29)).unwrap();
        assert!(matches!(
            split(&s, PriceField::Close, train, overlapping, 5),
            Err(Error::Config { .. })
        ));
    }

    #[test]
    fn test_values_are_not_clamped() {
        let s = series(&[1.0, 2.0, 3.0, 4.0, 10.0]);
        let d = |i: usize| s.bars()[i].date;
        let sp = split(
            &s,
            PriceField::Close,
            DateRange::new(d(0), d(3)).unwrap(),
            DateRange::new(d(4), d(4)).unwrap(),
            2,
        )
        .unwrap();
        assert_eq!(sp.test.targets.data(), &[3.0]);
    }
}
