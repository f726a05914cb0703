//! CSV layouts shared by the pipeline stages.

use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use xferepi_core::datasets::SupervisedDataset;
use xferepi_core::simcore::{EpidemicSeries, SeriesId, SeriesKind};

/// Shortest decimal that reads back to the same value.
pub fn num(v: f64) -> String {
    format!("{v}")
}

pub fn opt_num(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}

pub fn opt_u32(v: Option<u32>) -> String {
    v.map(|c| c.to_string()).unwrap_or_default()
}

pub fn writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_path(path)
        .with_context(|| format!("creating {}", path.display()))
}

/// Writes a header and rows of already-formatted fields.
pub fn write_table<I, R>(path: &Path, header: &[&str], rows: I) -> Result<()>
where
    I: IntoIterator<Item = R>,
    R: IntoIterator,
    R::Item: AsRef<[u8]>,
{
    let mut w = writer(path)?;
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn reader(path: &Path) -> Result<csv::Reader<fs::File>> {
    csv::ReaderBuilder::new()
        .from_path(path)
        .with_context(|| format!("opening {}", path.display()))
}

pub fn check_header(path: &Path, r: &mut csv::Reader<fs::File>, expected: &[&str]) -> Result<()> {
    let h = r.headers()?;
    if h.iter().ne(expected.iter().copied()) {
        bail!(
            "{}: expected header `{}`, found `{}`",
            path.display(),
            expected.join(","),
            h.iter().collect::<Vec<_>>().join(",")
        );
    }
    Ok(())
}

pub const SERIES_HEADER: [&str; 4] = ["disease", "replicate", "t", "cases"];

pub fn write_series(path: &Path, series: &[EpidemicSeries]) -> Result<()> {
    let rows = series.iter().flat_map(|s| {
        s.values.iter().enumerate().map(move |(t, v)| {
            [s.id.disease.clone(), s.id.member.clone(), t.to_string(), num(*v)]
        })
    });
    write_table(path, &SERIES_HEADER, rows)
}

pub fn read_series(path: &Path, kind: SeriesKind) -> Result<Vec<EpidemicSeries>> {
    let mut r = reader(path)?;
    check_header(path, &mut r, &SERIES_HEADER)?;
    let mut out: Vec<EpidemicSeries> = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        let line = i + 2;
        let t: usize = rec[2].parse().with_context(|| format!("{}:{line}: bad t", path.display()))?;
        let v: f64 = rec[3].parse().with_context(|| format!("{}:{line}: bad cases", path.display()))?;
        let id = SeriesId::new(&rec[0], &rec[1]);
        match out.last_mut() {
            Some(s) if s.id == id => {
                if t != s.values.len() {
                    bail!("{}:{line}: time index {t} out of sequence", path.display());
                }
                s.values.push(v);
            }
            _ => {
                if t != 0 {
                    bail!("{}:{line}: series {id} must start at t = 0", path.display());
                }
                out.push(EpidemicSeries {
                    id,
                    values: vec![v],
                    kind,
                });
            }
        }
    }
    Ok(out)
}

/// `series_id,target_t,horizon,lag_1..lag_L,target`
pub fn write_windows(path: &Path, ds: &SupervisedDataset) -> Result<()> {
    let mut header = vec!["series_id".to_string(), "target_t".into(), "horizon".into()];
    header.extend((1..=ds.lags).map(|k| format!("lag_{k}")));
    header.push("target".into());
    let mut w = writer(path)?;
    w.write_record(&header)?;
    for i in 0..ds.len() {
        let m = ds.meta[i];
        let mut rec = vec![ds.series_of(i).to_string(), m.target_t.to_string(), m.horizon.to_string()];
        rec.extend(ds.row(i).iter().map(|v| num(*v)));
        rec.push(num(ds.targets[i]));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a whole table as strings: header, then rows.
pub fn read_rows(path: &Path) -> Result<(Vec<String>, Vec<Vec<String>>)> {
    let mut r = reader(path)?;
    let header = r.headers()?.iter().map(String::from).collect();
    let mut rows = Vec::new();
    for rec in r.records() {
        rows.push(rec?.iter().map(String::from).collect());
    }
    Ok((header, rows))
}

pub fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let text = serde_json::to_string(value)?;
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}
