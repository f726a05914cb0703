//! Empirical case-count files: `city,week,cases` or `city,date,cases`.
//!
//! All cities of a file are placed on one common time axis running from the
//! earliest to the latest period present in the file. Periods a city does
//! not report are filled per [`GapFill`]; outside a city's own reporting
//! range they are zero. Daily files are summed into 7-day blocks anchored at
//! the first date in the file.

use std::collections::BTreeMap;
use std::path::Path;

use chrono::NaiveDate;
use xferepi_core::datasets::{daily_to_weekly, densify, GapFill};
use xferepi_core::simcore::{EpidemicSeries, SeriesId, SeriesKind};

#[derive(Debug, thiserror::Error)]
pub enum IngestError {
    #[error("{path}: {source}")]
    Csv {
        path: String,
        source: csv::Error,
    },
    #[error("{path}: header must be `city,week,cases` or `city,date,cases`, found `{found}`")]
    Header { path: String, found: String },
    #[error("{path}:{line}: {message}")]
    Row {
        path: String,
        line: u64,
        message: String,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum TimeColumn {
    Week,
    Date,
}

/// Series from one file plus the absolute period of index 0.
#[derive(Debug, Clone, PartialEq)]
pub struct Ingested {
    pub series: Vec<EpidemicSeries>,
    /// First week number for weekly files; 0 for daily files.
    pub origin: i64,
}

pub fn read_cases(path: &Path, disease: &str, fill: GapFill) -> Result<Ingested, IngestError> {
    let p = path.display().to_string();
    let csv_err = |source| IngestError::Csv { path: p.clone(), source };
    let mut r = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(csv_err)?;
    let header: Vec<String> = r.headers().map_err(csv_err)?.iter().map(String::from).collect();
    let time = match header.iter().map(String::as_str).collect::<Vec<_>>()[..] {
        ["city", "week", "cases"] => TimeColumn::Week,
        ["city", "date", "cases"] => TimeColumn::Date,
        _ => {
            return Err(IngestError::Header {
                path: p,
                found: header.join(","),
            })
        }
    };
    let mut by_city: BTreeMap<String, Vec<(i64, f64)>> = BTreeMap::new();
    let mut dates: Vec<(String, NaiveDate, f64)> = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(csv_err)?;
        let line = rec.position().map_or(0, |pos| pos.line());
        let bad = |message: String| IngestError::Row {
            path: p.clone(),
            line,
            message,
        };
        if rec.len() != 3 {
            return Err(bad(format!("expected 3 fields, found {}", rec.len())));
        }
        let city = rec[0].to_string();
        if city.is_empty() {
            return Err(bad("empty city".into()));
        }
        let cases: f64 = rec[2].parse().map_err(|_| bad(format!("cases `{}` is not a number", &rec[2])))?;
        if !cases.is_finite() || cases < 0.0 {
            return Err(bad(format!("cases must be a non-negative count, found {cases}")));
        }
        match time {
            TimeColumn::Week => {
                let w: i64 = rec[1].parse().map_err(|_| bad(format!("week `{}` is not an integer", &rec[1])))?;
                by_city.entry(city).or_default().push((w, cases));
            }
            TimeColumn::Date => {
                let d = NaiveDate::parse_from_str(&rec[1], "%Y-%m-%d")
                    .map_err(|_| bad(format!("date `{}` is not YYYY-MM-DD", &rec[1])))?;
                dates.push((city, d, cases));
            }
        }
    }
    let mut origin = 0;
    if time == TimeColumn::Date {
        if let Some(first) = dates.iter().map(|d| d.1).min() {
            for (city, d, cases) in dates {
                by_city.entry(city).or_default().push(((d - first).num_days(), cases));
            }
        }
    }
    let lo = by_city.values().flatten().map(|p| p.0).min();
    let hi = by_city.values().flatten().map(|p| p.0).max();
    let (Some(lo), Some(hi)) = (lo, hi) else {
        return Ok(Ingested {
            series: Vec::new(),
            origin,
        });
    };
    if time == TimeColumn::Week {
        origin = lo;
    }
    let len = (hi - lo + 1) as usize;
    let series = by_city
        .into_iter()
        .map(|(city, points)| {
            let start = points.iter().map(|p| p.0).min().unwrap_or(lo);
            let own = densify(&points, fill);
            let mut values = vec![0.0; len];
            let off = (start - lo) as usize;
            values[off..off + own.len()].copy_from_slice(&own);
            if time == TimeColumn::Date {
                values = daily_to_weekly(&values);
            }
            EpidemicSeries {
                id: SeriesId::new(disease, city),
                values,
                kind: SeriesKind::Incidence,
            }
        })
        .collect();
    Ok(Ingested { series, origin })
}
