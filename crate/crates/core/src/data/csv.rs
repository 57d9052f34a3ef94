//! Per-stock CSV ingestion and the matching writer.
//!
//! Format: UTF-8, header `date,open,high,low,close,volume`, dates
//! `YYYY-MM-DD` ascending, one row per trading day, one file per symbol named
//! `<symbol>.csv`. Values are written with Rust's shortest round-trip float
//! formatting, so a write/ingest cycle reproduces features bit for bit.

use super::{StockPanel, FEATURE_DIM};
use crate::error::{Result, SvatError};
use chrono::NaiveDate;
use std::collections::BTreeSet;
use std::io::Write;
use std::path::{Path, PathBuf};

pub const CSV_HEADER: &str = "date,open,high,low,close,volume";

/// How the shared trading calendar is formed from the ingested files.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CalendarPolicy {
    /// Calendar is the union of all dates; stocks that miss any date are
    /// dropped (keeps every observed date, constant batch shape).
    #[default]
    Union,
    /// Calendar is the set of dates every stock shares; no stock is dropped
    /// for coverage.
    Intersection,
}

struct RawStock {
    symbol: String,
    rows: Vec<(NaiveDate, [f64; FEATURE_DIM])>,
}

/// Ingest per-stock CSVs into an aligned panel.
///
/// Stocks with fewer than 2 rows are dropped with a warning; under
/// [`CalendarPolicy::Union`] stocks not covering the full calendar are dropped
/// with a warning as well. Returns are computed from the aligned closes.
pub fn ingest_csv(paths: &[PathBuf], policy: CalendarPolicy) -> Result<StockPanel> {
    if paths.is_empty() {
        return Err(SvatError::Usage("no input files".into()));
    }
    let mut raw = Vec::new();
    for path in paths {
        let stock = parse_file(path)?;
        if stock.rows.len() < 2 {
            log::warn!(
                "dropping {}: only {} trading day(s)",
                stock.symbol,
                stock.rows.len()
            );
            continue;
        }
        raw.push(stock);
    }
    if raw.is_empty() {
        return Err(SvatError::Data(
            "no stock has at least 2 trading days".into(),
        ));
    }
    raw.sort_by(|a, b| a.symbol.cmp(&b.symbol));

    let calendar: Vec<NaiveDate> = match policy {
        CalendarPolicy::Union => {
            let mut all = BTreeSet::new();
            for s in &raw {
                all.extend(s.rows.iter().map(|(d, _)| *d));
            }
            all.into_iter().collect()
        }
        CalendarPolicy::Intersection => {
            let mut common: BTreeSet<NaiveDate> = raw[0].rows.iter().map(|(d, _)| *d).collect();
            for s in &raw[1..] {
                let dates: BTreeSet<NaiveDate> = s.rows.iter().map(|(d, _)| *d).collect();
                common = common.intersection(&dates).copied().collect();
            }
            common.into_iter().collect()
        }
    };
    if calendar.len() < 2 {
        return Err(SvatError::Data(format!(
            "aligned calendar has {} day(s), need at least 2",
            calendar.len()
        )));
    }

    let mut stock_ids = Vec::new();
    let mut features = Vec::new();
    for s in raw {
        match align(&s, &calendar) {
            Some(block) => {
                stock_ids.push(s.symbol);
                features.push(block);
            }
            None => log::warn!("dropping {}: incomplete calendar coverage", s.symbol),
        }
    }
    if stock_ids.is_empty() {
        return Err(SvatError::Data(
            "no stock covers the aligned calendar".into(),
        ));
    }
    StockPanel::from_features(stock_ids, calendar, features)
}

fn align(stock: &RawStock, calendar: &[NaiveDate]) -> Option<Vec<f64>> {
    let mut block = Vec::with_capacity(calendar.len() * FEATURE_DIM);
    let mut cursor = 0usize;
    for &day in calendar {
        while cursor < stock.rows.len() && stock.rows[cursor].0 < day {
            cursor += 1;
        }
        match stock.rows.get(cursor) {
            Some((d, row)) if *d == day => block.extend_from_slice(row),
            _ => return None,
        }
    }
    Some(block)
}

fn parse_file(path: &Path) -> Result<RawStock> {
    let file = path.display().to_string();
    let symbol = path
        .file_stem()
        .and_then(|s| s.to_str())
        .ok_or_else(|| SvatError::Usage(format!("cannot derive symbol from {file}")))?
        .to_string();
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines().enumerate();

    match lines.next() {
        Some((_, header)) if header.trim_end() == CSV_HEADER => {}
        Some((_, header)) => {
            return Err(SvatError::Ingest {
                file,
                line: 1,
                msg: format!("expected header `{CSV_HEADER}`, got `{header}`"),
            })
        }
        None => {
            return Err(SvatError::Ingest {
                file,
                line: 1,
                msg: "empty file".into(),
            })
        }
    }

    let mut rows: Vec<(NaiveDate, [f64; FEATURE_DIM])> = Vec::new();
    for (idx, line) in lines {
        let line_no = idx + 1;
        let line = line.trim_end();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 6 {
            return Err(SvatError::Ingest {
                file,
                line: line_no,
                msg: format!("expected 6 fields, got {}", fields.len()),
            });
        }
        let date = NaiveDate::parse_from_str(fields[0], "%Y-%m-%d").map_err(|e| {
            SvatError::Ingest {
                file: file.clone(),
                line: line_no,
                msg: format!("bad date `{}`: {e}", fields[0]),
            }
        })?;
        let mut row = [0.0; FEATURE_DIM];
        for (slot, raw) in row.iter_mut().zip(&fields[1..]) {
            *slot = raw.parse::<f64>().map_err(|e| SvatError::Ingest {
                file: file.clone(),
                line: line_no,
                msg: format!("bad number `{raw}`: {e}"),
            })?;
            if !slot.is_finite() {
                return Err(SvatError::Ingest {
                    file: file.clone(),
                    line: line_no,
                    msg: format!("non-finite value `{raw}`"),
                });
            }
        }
        if row[super::CLOSE] <= 0.0 {
            return Err(SvatError::Data(format!(
                "{symbol} has non-positive close {} on {date}",
                row[super::CLOSE]
            )));
        }
        if let Some((prev, _)) = rows.last() {
            if *prev >= date {
                return Err(SvatError::Ingest {
                    file,
                    line: line_no,
                    msg: format!("dates not ascending: {prev} then {date}"),
                });
            }
        }
        rows.push((date, row));
    }
    Ok(RawStock { symbol, rows })
}

/// Write a panel as one `<symbol>.csv` per stock into `dir`.
pub fn write_panel_csvs(panel: &StockPanel, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    for (i, symbol) in panel.stock_ids().iter().enumerate() {
        let mut out = String::from(CSV_HEADER);
        out.push('\n');
        for t in 0..panel.n_days() {
            out.push_str(&panel.date(t).format("%Y-%m-%d").to_string());
            for col in 0..FEATURE_DIM {
                out.push(',');
                out.push_str(&format!("{}", panel.feature(i, t, col)));
            }
            out.push('\n');
        }
        let mut file = std::fs::File::create(dir.join(format!("{symbol}.csv")))?;
        file.write_all(out.as_bytes())?;
    }
    Ok(())
}

/// All `*.csv` files in a panel directory, sorted by name.
pub fn panel_csv_paths(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.extension().is_some_and(|x| x == "csv"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(SvatError::Usage(format!(
            "no .csv files in {}",
            dir.display()
        )));
    }
    Ok(paths)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::fs;

    fn write(dir: &Path, name: &str, body: &str) -> PathBuf {
        let p = dir.join(name);
        fs::write(&p, body).unwrap();
        p
    }

    #[test]
    fn ingest_computes_returns() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            dir.path(),
            "AAA.csv",
            "date,open,high,low,close,volume\n\
             2020-01-06,1,1,1,100,10\n\
             2020-01-07,1,1,1,110,10\n",
        );
        let panel = ingest_csv(&[p], CalendarPolicy::Union).unwrap();
        assert_eq!(panel.n_stocks(), 1);
        assert!((panel.ret(0, 1) - 0.10).abs() < 1e-15);
    }

    #[test]
    fn incomplete_stock_is_dropped() {
        let dir = tempfile::tempdir().unwrap();
        let full = "date,open,high,low,close,volume\n\
                    2020-01-06,1,1,1,10,1\n\
                    2020-01-07,1,1,1,10,1\n\
                    2020-01-08,1,1,1,10,1\n";
        let gap = "date,open,high,low,close,volume\n\
                   2020-01-06,1,1,1,10,1\n\
                   2020-01-08,1,1,1,10,1\n";
        let paths = vec![
            write(dir.path(), "AAA.csv", full),
            write(dir.path(), "BBB.csv", gap),
            write(dir.path(), "CCC.csv", full),
        ];
        let panel = ingest_csv(&paths, CalendarPolicy::Union).unwrap();
        assert_eq!(panel.stock_ids(), &["AAA".to_string(), "CCC".to_string()]);

        let panel = ingest_csv(&paths, CalendarPolicy::Intersection).unwrap();
        assert_eq!(panel.n_stocks(), 3);
        assert_eq!(panel.n_days(), 2);
    }

    #[test]
    fn single_day_stock_dropped_with_warning() {
        let dir = tempfile::tempdir().unwrap();
        let paths = vec![
            write(
                dir.path(),
                "AAA.csv",
                "date,open,high,low,close,volume\n2020-01-06,1,1,1,10,1\n",
            ),
            write(
                dir.path(),
                "BBB.csv",
                "date,open,high,low,close,volume\n\
                 2020-01-06,1,1,1,10,1\n\
                 2020-01-07,1,1,1,11,1\n",
            ),
        ];
        let panel = ingest_csv(&paths, CalendarPolicy::Union).unwrap();
        assert_eq!(panel.stock_ids(), &["BBB".to_string()]);
    }

    #[test]
    fn unparseable_row_reports_file_and_line() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            dir.path(),
            "AAA.csv",
            "date,open,high,low,close,volume\n\
             2020-01-06,1,1,1,10,1\n\
             2020-01-07,1,oops,1,10,1\n",
        );
        match ingest_csv(&[p], CalendarPolicy::Union).unwrap_err() {
            SvatError::Ingest { line, .. } => assert_eq!(line, 3),
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn non_positive_close_is_data_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            dir.path(),
            "AAA.csv",
            "date,open,high,low,close,volume\n\
             2020-01-06,1,1,1,10,1\n\
             2020-01-07,1,1,1,-3,1\n",
        );
        assert!(matches!(
            ingest_csv(&[p], CalendarPolicy::Union).unwrap_err(),
            SvatError::Data(_)
        ));
    }
}
