//! Daily buy-hold-sell backtesting and cross-model analytics.
//!
//! Scores dated day `s` select the portfolio held into day `s+1`; the
//! realized daily portfolio return is the SUM of the top-k constituents'
//! return ratios (not their mean), so it scales with k. The Sharpe ratio uses
//! the population standard deviation of daily excess returns, unannualized.
//! MDD is the magnitude of the worst single-day portfolio return, in percent.

use crate::data::{DateRange, StockPanel};
use crate::error::{Result, SvatError};
use chrono::NaiveDate;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Strategy {
    /// Number of top-ranked stocks held each day.
    pub k: usize,
}

impl Default for Strategy {
    fn default() -> Self {
        Strategy { k: 5 }
    }
}

/// Cross-sectional scores available at the close of `date` (they select the
/// portfolio realized on the next trading day). `scores[i]` belongs to the
/// panel's stock `i`.
#[derive(Debug, Clone)]
pub struct DayScores {
    pub date: NaiveDate,
    pub scores: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct DailyRecord {
    /// The day the portfolio return was realized.
    pub date: NaiveDate,
    pub irr: f64,
    pub selected: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct BacktestReport {
    pub daily: Vec<DailyRecord>,
    pub irr_total: f64,
    /// None when the excess-return series has zero variance.
    pub sr: Option<f64>,
    /// Percent magnitude of the worst daily return.
    pub mdd: f64,
    pub r_f: f64,
    pub k: usize,
}

/// Indices of the `k` highest scores, best first; ties go to the lower stock
/// index.
pub fn select_topk(scores: &[f64], k: usize) -> Result<Vec<usize>> {
    if k == 0 || k > scores.len() {
        return Err(SvatError::Usage(format!(
            "k = {k} outside 1..={}",
            scores.len()
        )));
    }
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| {
        scores[b]
            .partial_cmp(&scores[a])
            .expect("finite scores")
            .then(a.cmp(&b))
    });
    idx.truncate(k);
    Ok(idx)
}

/// Total, Sharpe ratio and MDD of a realized daily return series.
pub fn series_metrics(daily_irr: &[f64], r_f: f64) -> (f64, Option<f64>, f64) {
    let mut total = 0.0;
    for &x in daily_irr {
        total += x;
    }
    let n = daily_irr.len() as f64;
    let mut worst = 0.0_f64;
    for &x in daily_irr {
        worst = worst.min(x);
    }
    let mdd = 100.0 * worst.min(0.0).abs();

    if daily_irr.is_empty() {
        return (total, None, mdd);
    }
    let mean = daily_irr.iter().map(|x| x - r_f).sum::<f64>() / n;
    let var = daily_irr
        .iter()
        .map(|x| {
            let d = (x - r_f) - mean;
            d * d
        })
        .sum::<f64>()
        / n;
    let std = var.sqrt();
    let sr = if std == 0.0 {
        log::warn!("zero standard deviation of excess returns; SR undefined");
        None
    } else {
        Some(mean / std)
    };
    (total, sr, mdd)
}

fn validate_day_scores(day_scores: &[DayScores], panel: &StockPanel) -> Result<()> {
    if day_scores.is_empty() {
        return Err(SvatError::Usage("no score days".into()));
    }
    for w in day_scores.windows(2) {
        if w[0].date >= w[1].date {
            return Err(SvatError::Usage(format!(
                "score dates must be strictly ascending: {} then {}",
                w[0].date, w[1].date
            )));
        }
    }
    for ds in day_scores {
        if ds.scores.len() != panel.n_stocks() {
            return Err(SvatError::Usage(format!(
                "{} scores on {}, panel has {} stocks",
                ds.scores.len(),
                ds.date,
                panel.n_stocks()
            )));
        }
    }
    Ok(())
}

/// Backtest a score series against a panel: each score day selects top-k,
/// whose next-day return ratios are summed.
pub fn run_backtest(
    day_scores: &[DayScores],
    panel: &StockPanel,
    strategy: Strategy,
    r_f: f64,
) -> Result<BacktestReport> {
    validate_day_scores(day_scores, panel)?;
    let mut daily = Vec::with_capacity(day_scores.len());
    for ds in day_scores {
        let s = panel.date_index(ds.date).ok_or_else(|| {
            SvatError::Alignment(format!("score date {} not in panel calendar", ds.date))
        })?;
        let t = s + 1;
        if t >= panel.n_days() {
            return Err(SvatError::Alignment(format!(
                "score date {} has no following trading day",
                ds.date
            )));
        }
        let picks = select_topk(&ds.scores, strategy.k)?;
        let mut irr = 0.0;
        for &i in &picks {
            irr += panel.ret(i, t);
        }
        daily.push(DailyRecord {
            date: panel.date(t),
            irr,
            selected: picks
                .iter()
                .map(|&i| panel.stock_ids()[i].clone())
                .collect(),
        });
    }
    let series: Vec<f64> = daily.iter().map(|d| d.irr).collect();
    let (irr_total, sr, mdd) = series_metrics(&series, r_f);
    Ok(BacktestReport {
        daily,
        irr_total,
        sr,
        mdd,
        r_f,
        k: strategy.k,
    })
}

/// Hold the whole universe equal-weighted: the daily return is the mean of
/// all stocks' return ratios over the range (realized from its second day).
pub fn buy_and_hold(panel: &StockPanel, range: &DateRange, r_f: f64) -> Result<BacktestReport> {
    let n = panel.n_stocks() as f64;
    let mut daily = Vec::new();
    for t in 1..panel.n_days() {
        if !range.contains(panel.date(t)) || !range.contains(panel.date(t - 1)) {
            continue;
        }
        let mut acc = 0.0;
        for i in 0..panel.n_stocks() {
            acc += panel.ret(i, t);
        }
        daily.push(DailyRecord {
            date: panel.date(t),
            irr: acc / n,
            selected: Vec::new(),
        });
    }
    if daily.is_empty() {
        return Err(SvatError::Usage(format!(
            "range {}..{} has no realized trading day",
            range.start, range.end
        )));
    }
    let series: Vec<f64> = daily.iter().map(|d| d.irr).collect();
    let (irr_total, sr, mdd) = series_metrics(&series, r_f);
    Ok(BacktestReport {
        daily,
        irr_total,
        sr,
        mdd,
        r_f,
        k: panel.n_stocks(),
    })
}

fn check_same_days(a: &[DayScores], b: &[DayScores]) -> Result<()> {
    if a.len() != b.len() || a.iter().zip(b).any(|(x, y)| x.date != y.date) {
        return Err(SvatError::Usage(
            "score series cover different day sets".into(),
        ));
    }
    Ok(())
}

fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut va = 0.0;
    let mut vb = 0.0;
    for (x, y) in a.iter().zip(b) {
        cov += (x - ma) * (y - mb);
        va += (x - ma) * (x - ma);
        vb += (y - mb) * (y - mb);
    }
    if va == 0.0 || vb == 0.0 {
        return None;
    }
    Some(cov / (va.sqrt() * vb.sqrt()))
}

/// Mean over days of the per-day cross-sectional Pearson correlation between
/// two models' scores. Days where either model has zero variance are skipped
/// with a warning.
pub fn pcc(a: &[DayScores], b: &[DayScores]) -> Result<f64> {
    check_same_days(a, b)?;
    let mut total = 0.0;
    let mut used = 0usize;
    for (da, db) in a.iter().zip(b) {
        if da.scores.len() != db.scores.len() {
            return Err(SvatError::Usage(format!(
                "different stock universes on {}",
                da.date
            )));
        }
        match pearson(&da.scores, &db.scores) {
            Some(c) => {
                total += c;
                used += 1;
            }
            None => log::warn!("zero score variance on {}; day skipped in PCC", da.date),
        }
    }
    if used == 0 {
        return Err(SvatError::Usage(
            "every day had zero score variance; PCC undefined".into(),
        ));
    }
    Ok(total / used as f64)
}

/// Top-k selections per day, derived from scores.
pub fn selections(day_scores: &[DayScores], k: usize) -> Result<Vec<(NaiveDate, Vec<usize>)>> {
    day_scores
        .iter()
        .map(|ds| Ok((ds.date, select_topk(&ds.scores, k)?)))
        .collect()
}

/// Mean over days of `|S_a \ S_b| / k`, the fraction of differing names in
/// the two top-k selections (one-sided difference; the sets have equal size).
pub fn tsd(
    sel_a: &[(NaiveDate, Vec<usize>)],
    sel_b: &[(NaiveDate, Vec<usize>)],
    k: usize,
) -> Result<f64> {
    if k == 0 {
        return Err(SvatError::Usage("k must be at least 1".into()));
    }
    if sel_a.len() != sel_b.len() || sel_a.iter().zip(sel_b).any(|(x, y)| x.0 != y.0) {
        return Err(SvatError::Usage(
            "selection series cover different day sets".into(),
        ));
    }
    let mut total = 0.0;
    for ((_, a), (_, b)) in sel_a.iter().zip(sel_b) {
        if a.len() != k || b.len() != k {
            return Err(SvatError::Usage(format!(
                "selection size {} or {} differs from k = {k}",
                a.len(),
                b.len()
            )));
        }
        let differing = a.iter().filter(|i| !b.contains(i)).count();
        total += differing as f64 / k as f64;
    }
    Ok(total / sel_a.len() as f64)
}

fn average_ranks(xs: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    idx.sort_by(|&a, &b| xs[a].partial_cmp(&xs[b]).expect("finite values"));
    let mut ranks = vec![0.0; xs.len()];
    let mut pos = 0;
    while pos < idx.len() {
        let mut end = pos + 1;
        while end < idx.len() && xs[idx[end]] == xs[idx[pos]] {
            end += 1;
        }
        let avg = (pos + end - 1) as f64 / 2.0;
        for &i in &idx[pos..end] {
            ranks[i] = avg;
        }
        pos = end;
    }
    ranks
}

/// Spearman rank correlation with average ranks on ties; `None` when either
/// side is constant.
pub fn spearman(a: &[f64], b: &[f64]) -> Option<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return None;
    }
    pearson(&average_ranks(a), &average_ranks(b))
}
