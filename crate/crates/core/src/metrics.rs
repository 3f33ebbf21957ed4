//! MAE / MSE / RMSE in price units, and ranking tables.

use std::fmt::Write as _;
use std::io::Write;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::dataset::WindowedDataset;
use crate::error::{DataError, Error, Result};
use crate::models::Predictor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Residual {
    pub date: NaiveDate,
    pub actual: f64,
    pub predicted: f64,
}

impl Residual {
    /// `predicted − actual`
    pub fn error(&self) -> f64 {
        self.predicted - self.actual
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub mae: f64,
    pub mse: f64,
    pub rmse: f64,
    pub n_test: usize,
    /// Sorted by date.
    pub residuals: Vec<Residual>,
}

impl MetricsReport {
    /// Aggregates after sorting by date, so the result does not depend on
    /// the order residuals arrive in.
    pub fn from_residuals(mut residuals: Vec<Residual>) -> Result<Self> {
        if residuals.is_empty() {
            return Err(DataError::Empty.into());
        }
        residuals.sort_by_key(|r| r.date);
        let errors: Vec<f64> = residuals.iter().map(Residual::error).collect();
        let (mae, mse) = aggregate(&errors);
        Ok(Self {
            mae,
            mse,
            rmse: mse.sqrt(),
            n_test: residuals.len(),
            residuals,
        })
    }
}

/// `(mean |e|, mean e²)`
pub fn aggregate(errors: &[f64]) -> (f64, f64) {
    let n = errors.len() as f64;
    let abs: f64 = errors.iter().map(|e| e.abs()).sum();
    let sq: f64 = errors.iter().map(|e| e * e).sum();
    (abs / n, sq / n)
}

/// Eval-mode predictions, denormalized with the dataset's normalizer.
pub fn predict_prices<P: Predictor + ?Sized>(model: &P, data: &WindowedDataset) -> Result<Vec<f64>> {
    if data.is_empty() {
        return Err(DataError::Empty.into());
    }
    if model.window_n() != data.window_n {
        return Err(Error::Incompatible(format!(
            "model window {} vs dataset window {}",
            model.window_n(),
            data.window_n
        )));
    }
    let preds = model.predict_normalized(&data.inputs)?;
    Ok(preds.into_iter().map(|p| data.normalizer.inverse(p)).collect())
}

/// Scores `model` on `test` in price units.
pub fn evaluate<P: Predictor + ?Sized>(model: &P, test: &WindowedDataset) -> Result<MetricsReport> {
    let preds = predict_prices(model, test)?;
    let residuals = test
        .target_dates
        .iter()
        .zip(test.denormalized_targets())
        .zip(preds)
        .map(|((&date, actual), predicted)| Residual {
            date,
            actual,
            predicted,
        })
        .collect();
    MetricsReport::from_residuals(residuals)
}

#[derive(Clone, Debug, PartialEq)]
pub struct RankingRow {
    pub model: String,
    pub mae: f64,
    pub mse: f64,
    pub rmse: f64,
    pub n_test: usize,
}

/// Reports sorted ascending by RMSE; ties fall back to MAE, then name.
#[derive(Clone, Debug, PartialEq)]
pub struct RankingTable {
    pub rows: Vec<RankingRow>,
}

pub fn compare(reports: &[(String, MetricsReport)]) -> Result<RankingTable> {
    if reports.len() < 2 {
        return Err(Error::Contract(format!(
            "compare needs at least 2 reports, got {}",
            reports.len()
        )));
    }
    let mut rows: Vec<RankingRow> = reports
        .iter()
        .map(|(name, r)| RankingRow {
            model: name.clone(),
            mae: r.mae,
            mse: r.mse,
            rmse: r.rmse,
            n_test: r.n_test,
        })
        .collect();
    rows.sort_by(|a, b| {
        a.rmse
            .total_cmp(&b.rmse)
            .then(a.mae.total_cmp(&b.mae))
            .then_with(|| a.model.cmp(&b.model))
    });
    Ok(RankingTable { rows })
}

impl RankingTable {
    pub fn best(&self) -> &RankingRow {
        &self.rows[0]
    }

    /// `model,mae,mse,rmse,n_test`
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "model,mae,mse,rmse,n_test")?;
        for r in &self.rows {
            writeln!(out, "{},{},{},{},{}", r.model, r.mae, r.mse, r.rmse, r.n_test)?;
        }
        Ok(())
    }

    /// Aligned plain-text table with two decimals.
    pub fn to_text(&self) -> String {
        let width = self.rows.iter().map(|r| r.model.len()).max().unwrap_or(5).max(5);
        let mut s = String::new();
        let _ = writeln!(s, "{:<width$}  {:>10}  {:>12}  {:>10}", "Model", "MAE", "MSE", "RMSE");
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{:<width$}  {:>10.2}  {:>12.2}  {:>10.2}",
                r.model, r.mae, r.mse, r.rmse
            );
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::Duration;

    fn residuals(errors: &[f64]) -> Vec<Residual> {
        let d0 = NaiveDate::from_ymd_opt(2021, 1, 1).unwrap();
        errors
            .iter()
            .enumerate()
            .map(|(i, e)| Residual {
                date: d0 + Duration::days(i as i64),
                actual: 3000.0,
                predicted: 3000.0 + e,
            })
            .collect()
    }

    fn report(rmse: f64, mae: f64) -> MetricsReport {
        MetricsReport {
            mae,
            mse: rmse * rmse,
            rmse,
            n_test: 1,
            residuals: vec![],
        }
    }

    #[test]
    fn perfect_and_hand_cases() {
        let r = MetricsReport::from_residuals(residuals(&[0.0, 0.0])).unwrap();
        assert_eq!((r.mae, r.mse, r.rmse), (0.0, 0.0, 0.0));
        let r = MetricsReport::from_residuals(residuals(&[3.0, -4.0])).unwrap();
        assert_eq!(r.mae, 3.5);
        assert_eq!(r.mse, 12.5);
        assert!((r.rmse - 3.5355).abs() < 1e-4);
        assert!(MetricsReport::from_residuals(vec![]).is_err());
    }

    #[test]
    fn ranking_puts_lower_rmse_first() {
        let t = compare(&[
            ("LSTM".into(), report(57.63, 45.0)),
            ("ResNLS-5".into(), report(36.74, 28.08)),
        ])
        .unwrap();
        assert_eq!(t.best().model, "ResNLS-5");
        assert!(compare(&[("only".into(), report(1.0, 1.0))]).is_err());
    }

    #[test]
    fn ties_break_on_mae_then_name() {
        let t = compare(&[
            ("b".into(), report(2.0, 1.0)),
            ("a".into(), report(2.0, 1.0)),
            ("c".into(), report(2.0, 0.5)),
        ])
        .unwrap();
        let names: Vec<&str> = t.rows.iter().map(|r| r.model.as_str()).collect();
        assert_eq!(names, ["c", "a", "b"]);
    }

    #[test]
    fn csv_layout() {
        let t = compare(&[("x".into(), report(2.0, 1.0)), ("y".into(), report(3.0, 1.0))]).unwrap();
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        let s = String::from_utf8(buf).unwrap();
        assert!(s.starts_with("model,mae,mse,rmse,n_test\nx,1,4,2,1\n"));
        assert!(t.to_text().contains("RMSE"));
    }
}
