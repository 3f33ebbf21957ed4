//! Daily OHLC price series and CSV ingestion.

use std::io::{Read, Write};
use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{DataError, Error, Result};

pub const CSV_HEADER: [&str; 5] = ["date", "open", "high", "low", "close"];

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PriceBar {
    pub date: NaiveDate,
    pub open: f64,
    pub high: f64,
    pub low: f64,
    pub close: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PriceField {
    Open,
    High,
    Low,
    #[default]
    Close,
}

impl PriceBar {
    pub fn get(&self, field: PriceField) -> f64 {
        match field {
            PriceField::Open => self.open,
            PriceField::High => self.high,
            PriceField::Low => self.low,
            PriceField::Close => self.close,
        }
    }

    fn validate(&self) -> Result<(), DataError> {
        let prices = [self.open, self.high, self.low, self.close];
        if prices.iter().any(|p| !(p.is_finite() && *p > 0.0)) {
            return Err(DataError::NonPositivePrice { date: self.date });
        }
        let (lo, hi) = (self.open.min(self.close), self.open.max(self.close));
        if !(self.low <= lo && hi <= self.high) {
            return Err(DataError::OhlcOrder { date: self.date });
        }
        Ok(())
    }
}

/// Inclusive calendar-date interval.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DateRange {
    pub start: NaiveDate,
    pub end: NaiveDate,
}

impl DateRange {
    pub fn new(start: NaiveDate, end: NaiveDate) -> Result<Self> {
        if start > end {
            return Err(Error::config("date range", format!("{start} is after {end}")));
        }
        Ok(Self { start, end })
    }

    pub fn contains(&self, d: NaiveDate) -> bool {
        self.start <= d && d <= self.end
    }

    pub fn overlaps(&self, other: &DateRange) -> bool {
        self.start <= other.end && other.start <= self.end
    }
}

impl std::fmt::Display for DateRange {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}..{}", self.start, self.end)
    }
}

/// Dated bars for one instrument, strictly increasing by date.
#[derive(Clone, Debug, PartialEq)]
pub struct PriceSeries {
    instrument: String,
    bars: Vec<PriceBar>,
}

impl PriceSeries {
    /// Validates each bar, sorts ascending and rejects duplicate dates.
    pub fn from_bars(instrument: impl Into<String>, mut bars: Vec<PriceBar>) -> Result<Self> {
        for b in &bars {
            b.validate()?;
        }
        bars.sort_by_key(|b| b.date);
        if let Some(w) = bars.windows(2).find(|w| w[0].date == w[1].date) {
            return Err(DataError::DuplicateDate(w[0].date).into());
        }
        Ok(Self {
            instrument: instrument.into(),
            bars,
        })
    }

    pub fn instrument(&self) -> &str {
        &self.instrument
    }

    pub fn bars(&self) -> &[PriceBar] {
        &self.bars
    }

    pub fn len(&self) -> usize {
        self.bars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bars.is_empty()
    }

    pub fn values(&self, field: PriceField) -> Vec<f64> {
        self.bars.iter().map(|b| b.get(field)).collect()
    }

    pub fn dates(&self) -> Vec<NaiveDate> {
        self.bars.iter().map(|b| b.date).collect()
    }

    /// Index range of the bars falling inside `range`.
    pub fn index_range(&self, range: &DateRange) -> std::ops::Range<usize> {
        let start = self.bars.partition_point(|b| b.date < range.start);
        let end = self.bars.partition_point(|b| b.date <= range.end);
        start..end.max(start)
    }

    pub fn slice(&self, range: &DateRange) -> PriceSeries {
        PriceSeries {
            instrument: self.instrument.clone(),
            bars: self.bars[self.index_range(range)].to_vec(),
        }
    }

    pub fn position(&self, date: NaiveDate) -> Option<usize> {
        self.bars.binary_search_by_key(&date, |b| b.date).ok()
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let io = |e: csv::Error| Error::io("<csv>", std::io::Error::other(e));
        w.write_record(CSV_HEADER).map_err(io)?;
        for b in &self.bars {
            w.write_record([
                b.date.format("%Y-%m-%d").to_string(),
                format!("{:.4}", b.open),
                format!("{:.4}", b.high),
                format!("{:.4}", b.low),
                format!("{:.4}", b.close),
            ])
            .map_err(io)?;
        }
        w.flush().map_err(|e| Error::io("<csv>", e))
    }
}

/// Reads a `date,open,high,low,close` file. Rows may come in any order.
pub fn ingest_csv(path: impl AsRef<Path>, instrument: &str) -> Result<PriceSeries> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_csv(file, instrument)
}

pub fn parse_csv<R: Read>(input: R, instrument: &str) -> Result<PriceSeries> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    let header = reader.headers().map_err(|e| DataError::MalformedRow {
        row: 1,
        reason: e.to_string(),
    })?;
    if header.iter().ne(CSV_HEADER) {
        return Err(DataError::MalformedRow {
            row: 1,
            reason: format!("expected header `{}`", CSV_HEADER.join(",")),
        }
        .into());
    }
    let mut bars = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        // line numbers: header is line 1
        let row = i + 2;
        let bad = |reason: String| DataError::MalformedRow { row, reason };
        let rec = rec.map_err(|e| bad(e.to_string()))?;
        if rec.len() != 5 {
            return Err(bad(format!("expected 5 fields, found {}", rec.len())).into());
        }
        let date = NaiveDate::parse_from_str(&rec[0], "%Y-%m-%d")
            .map_err(|e| bad(format!("date `{}`: {e}", &rec[0])))?;
        let mut px = [0.0; 4];
        for (k, slot) in px.iter_mut().enumerate() {
            *slot = rec[k + 1]
                .parse::<f64>()
                .map_err(|e| bad(format!("{} `{}`: {e}", CSV_HEADER[k + 1], &rec[k + 1])))?;
        }
        bars.push(PriceBar {
            date,
            open: px[0],
            high: px[1],
            low: px[2],
            close: px[3],
        });
    }
    PriceSeries::from_bars(instrument, bars)
}
