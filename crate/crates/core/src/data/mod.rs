//! Market data: aligned OHLCV panels, lookback-window examples and splits.

mod csv;
mod synth;

pub use csv::{ingest_csv, panel_csv_paths, write_panel_csvs, CalendarPolicy};
pub use synth::{synth_market, RegimeSpec};

use crate::error::{Result, SvatError};
use crate::tensor::Tensor;
use chrono::{Datelike, NaiveDate};
use serde::{Deserialize, Serialize};

/// Number of per-day features: open, high, low, close, volume.
pub const FEATURE_DIM: usize = 5;

/// Column of the close price inside a feature row.
pub const CLOSE: usize = 3;

/// Aligned per-stock daily history over a shared trading calendar.
///
/// Every stock covers the full calendar. `returns[i][t]` is the 1-day return
/// ratio realized on day `t` from close prices; day 0 has no previous close
/// and is stored as NaN, which no consumer reads by construction.
#[derive(Debug, Clone)]
pub struct StockPanel {
    stock_ids: Vec<String>,
    calendar: Vec<NaiveDate>,
    /// Per stock, row-major `n_days x FEATURE_DIM`.
    features: Vec<Vec<f64>>,
    returns: Vec<Vec<f64>>,
}

impl StockPanel {
    /// Assemble a panel from aligned raw features, computing return ratios
    /// from the close column.
    pub fn from_features(
        stock_ids: Vec<String>,
        calendar: Vec<NaiveDate>,
        features: Vec<Vec<f64>>,
    ) -> Result<Self> {
        if stock_ids.len() != features.len() {
            return Err(SvatError::Usage(format!(
                "{} stock ids but {} feature blocks",
                stock_ids.len(),
                features.len()
            )));
        }
        let n_days = calendar.len();
        if n_days < 2 {
            return Err(SvatError::Data(
                "panel needs at least 2 trading days".into(),
            ));
        }
        if calendar.windows(2).any(|w| w[0] >= w[1]) {
            return Err(SvatError::Data("calendar dates must be ascending".into()));
        }
        for (sid, f) in stock_ids.iter().zip(&features) {
            if f.len() != n_days * FEATURE_DIM {
                return Err(SvatError::Data(format!(
                    "stock {sid} covers {} rows, calendar has {n_days}",
                    f.len() / FEATURE_DIM
                )));
            }
        }
        let mut returns = Vec::with_capacity(stock_ids.len());
        for (sid, f) in stock_ids.iter().zip(&features) {
            let mut r = vec![f64::NAN; n_days];
            for t in 0..n_days {
                let close = f[t * FEATURE_DIM + CLOSE];
                if close <= 0.0 {
                    return Err(SvatError::Data(format!(
                        "stock {sid} has non-positive close {close} on day {t}"
                    )));
                }
                if t > 0 {
                    let prev = f[(t - 1) * FEATURE_DIM + CLOSE];
                    r[t] = (close - prev) / prev;
                }
            }
            returns.push(r);
        }
        Ok(StockPanel {
            stock_ids,
            calendar,
            features,
            returns,
        })
    }

    /// Rebuild with transformed features while keeping the original returns.
    fn with_features(&self, features: Vec<Vec<f64>>) -> StockPanel {
        StockPanel {
            stock_ids: self.stock_ids.clone(),
            calendar: self.calendar.clone(),
            features,
            returns: self.returns.clone(),
        }
    }

    pub fn n_stocks(&self) -> usize {
        self.stock_ids.len()
    }

    pub fn n_days(&self) -> usize {
        self.calendar.len()
    }

    pub fn stock_ids(&self) -> &[String] {
        &self.stock_ids
    }

    pub fn calendar(&self) -> &[NaiveDate] {
        &self.calendar
    }

    pub fn date(&self, day: usize) -> NaiveDate {
        self.calendar[day]
    }

    pub fn date_index(&self, date: NaiveDate) -> Option<usize> {
        self.calendar.binary_search(&date).ok()
    }

    pub fn feature(&self, stock: usize, day: usize, col: usize) -> f64 {
        self.features[stock][day * FEATURE_DIM + col]
    }

    pub fn features_of(&self, stock: usize) -> &[f64] {
        &self.features[stock]
    }

    /// Return ratio of `stock` realized on `day`; NaN on day 0.
    pub fn ret(&self, stock: usize, day: usize) -> f64 {
        self.returns[stock][day]
    }

    /// Feature rows for days `[day - lookback, day - 1]` as a `[lookback, 5]`
    /// tensor.
    pub fn window(&self, stock: usize, day: usize, lookback: usize) -> Result<Tensor> {
        if day < lookback {
            return Err(SvatError::Usage(format!(
                "day {day} has no {lookback}-day lookback"
            )));
        }
        let start = (day - lookback) * FEATURE_DIM;
        let end = day * FEATURE_DIM;
        Tensor::new(
            vec![lookback, FEATURE_DIM],
            self.features[stock][start..end].to_vec(),
        )
    }
}

/// Inclusive date range.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DateRange {
    pub start: NaiveDate,
    pub end: NaiveDate,
}

impl DateRange {
    pub fn new(start: NaiveDate, end: NaiveDate) -> Result<Self> {
        if start > end {
            return Err(SvatError::Usage(format!(
                "range start {start} after end {end}"
            )));
        }
        Ok(DateRange { start, end })
    }

    pub fn contains(&self, d: NaiveDate) -> bool {
        self.start <= d && d <= self.end
    }
}

/// Chronological train/valid/test split.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train: DateRange,
    pub valid: DateRange,
    pub test: DateRange,
}

impl SplitSpec {
    pub fn new(train: DateRange, valid: DateRange, test: DateRange) -> Result<Self> {
        if !(train.end < valid.start && valid.end < test.start) {
            return Err(SvatError::Usage(format!(
                "split ranges must be chronological and disjoint: train ..{}, valid {}..{}, test {}..",
                train.end, valid.start, valid.end, test.start
            )));
        }
        Ok(SplitSpec { train, valid, test })
    }

    /// Split a panel's calendar by day counts, a convenience for synthetic
    /// markets.
    pub fn by_day_counts(panel: &StockPanel, n_train: usize, n_valid: usize) -> Result<Self> {
        let n = panel.n_days();
        if n_train == 0 || n_valid == 0 || n_train + n_valid + 1 > n {
            return Err(SvatError::Usage(format!(
                "cannot split {n} days into train {n_train} + valid {n_valid} + test"
            )));
        }
        let cal = panel.calendar();
        SplitSpec::new(
            DateRange::new(cal[0], cal[n_train - 1])?,
            DateRange::new(cal[n_train], cal[n_train + n_valid - 1])?,
            DateRange::new(cal[n_train + n_valid], cal[n - 1])?,
        )
    }
}

/// One stock's input window plus its label for a target day.
#[derive(Debug, Clone)]
pub struct Example {
    pub stock_index: usize,
    /// Calendar index of the day whose return is predicted.
    pub target_day: usize,
    /// `[lookback, FEATURE_DIM]` feature slice ending the day before
    /// `target_day`.
    pub window: Tensor,
    /// The realized return ratio on `target_day`.
    pub label: f64,
}

/// All stocks' examples for one target day. The pairwise ranking losses
/// couple every stock within a day, so one batch is one trading day.
#[derive(Debug, Clone)]
pub struct DayBatch {
    pub target_day: usize,
    pub examples: Vec<Example>,
}

/// Build per-day batches for every day of `range` that has a full lookback
/// window and a defined label. Returns an empty list (with a warning) when no
/// day qualifies.
pub fn build_examples(
    panel: &StockPanel,
    lookback: usize,
    range: &DateRange,
) -> Result<Vec<DayBatch>> {
    if lookback == 0 {
        return Err(SvatError::Usage("lookback must be at least 1".into()));
    }
    let mut batches = Vec::new();
    for t in 0..panel.n_days() {
        if !range.contains(panel.date(t)) {
            continue;
        }
        if t < lookback || t == 0 {
            continue;
        }
        let examples = (0..panel.n_stocks())
            .map(|i| {
                Ok(Example {
                    stock_index: i,
                    target_day: t,
                    window: panel.window(i, t, lookback)?,
                    label: panel.ret(i, t),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        batches.push(DayBatch {
            target_day: t,
            examples,
        });
    }
    if batches.is_empty() {
        log::warn!(
            "no day in {}..{} has a {}-day lookback window; empty batch list",
            range.start,
            range.end,
            lookback
        );
    }
    Ok(batches)
}

/// Z-score every feature per stock with mean/std taken from the training
/// range only. Labels and returns are untouched.
pub fn normalize(panel: &StockPanel, stats_from: &DateRange) -> Result<StockPanel> {
    const STD_FLOOR: f64 = 1e-8;
    let train_days: Vec<usize> = (0..panel.n_days())
        .filter(|&t| stats_from.contains(panel.date(t)))
        .collect();
    if train_days.is_empty() {
        return Err(SvatError::Usage(
            "normalization range covers no panel days".into(),
        ));
    }
    let n = train_days.len() as f64;
    let mut features = Vec::with_capacity(panel.n_stocks());
    for i in 0..panel.n_stocks() {
        let mut out = panel.features_of(i).to_vec();
        for col in 0..FEATURE_DIM {
            let mut mean = 0.0;
            for &t in &train_days {
                mean += panel.feature(i, t, col);
            }
            mean /= n;
            let mut var = 0.0;
            for &t in &train_days {
                let d = panel.feature(i, t, col) - mean;
                var += d * d;
            }
            let std = (var / n).sqrt().max(STD_FLOOR);
            for t in 0..panel.n_days() {
                out[t * FEATURE_DIM + col] = (panel.feature(i, t, col) - mean) / std;
            }
        }
        features.push(out);
    }
    Ok(panel.with_features(features))
}

/// Consecutive weekdays starting at `start`, a synthetic trading calendar.
pub fn trading_calendar(start: NaiveDate, days: usize) -> Vec<NaiveDate> {
    let mut out = Vec::with_capacity(days);
    let mut d = start;
    while out.len() < days {
        if d.weekday().num_days_from_monday() < 5 {
            out.push(d);
        }
        d = d.succ_opt().expect("date overflow");
    }
    out
}
