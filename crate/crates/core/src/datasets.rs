//! Supervised windows over epidemic series.
//!
//! A row holds `lags` consecutive observations (oldest first) and the value
//! `horizon` steps after the last of them. Rows are indexed by their target
//! time. All horizons start at the same target index,
//! `lags - 1 + max_horizon`, so every horizon is scored on the same targets.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::ToString;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, Warning};
use crate::rng;
use crate::simcore::{EpidemicSeries, SeriesId};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowConfig {
    pub lags: usize,
    pub horizons: Vec<usize>,
    pub max_horizon: usize,
}

impl Default for WindowConfig {
    fn default() -> Self {
        WindowConfig {
            lags: 9,
            horizons: (2..=9).collect(),
            max_horizon: 9,
        }
    }
}

impl WindowConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lags == 0 {
            return Err(Error::param("lags", "must be >= 1"));
        }
        if self.horizons.is_empty() {
            return Err(Error::param("horizons", "must not be empty"));
        }
        if self.horizons.iter().any(|&h| h == 0) {
            return Err(Error::param("horizons", "every horizon must be >= 1"));
        }
        let max = self.horizons.iter().copied().max().unwrap_or(0);
        if self.max_horizon < max {
            return Err(Error::param(
                "max_horizon",
                format!("must be >= the largest horizon ({max})"),
            ));
        }
        Ok(())
    }

    /// First target index shared by all horizons.
    pub fn alignment_start(&self) -> usize {
        self.lags - 1 + self.max_horizon
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CutoffMode {
    #[default]
    TimeStep,
    CalendarWeek,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CutoffSpec {
    pub mode: CutoffMode,
    pub values: Vec<u32>,
}

impl Default for CutoffSpec {
    fn default() -> Self {
        CutoffSpec {
            mode: CutoffMode::TimeStep,
            values: alloc::vec![25, 30, 35, 100],
        }
    }
}

impl CutoffSpec {
    pub fn validate(&self, window: &WindowConfig) -> Result<()> {
        if self.values.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::param("cutoffs", "values must be strictly increasing"));
        }
        let min_h = window.horizons.iter().copied().min().unwrap_or(1);
        let start = window.alignment_start();
        for &c in &self.values {
            let c = c as usize;
            if c <= window.lags + min_h {
                return Err(Error::param(
                    "cutoffs",
                    format!("cutoff {c} must exceed lags + min(horizons) = {}", window.lags + min_h),
                ));
            }
            if c <= start {
                return Err(Error::param(
                    "cutoffs",
                    format!("cutoff {c} is not after the alignment start {start}; no training targets remain"),
                ));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct RowMeta {
    /// Index into [`SupervisedDataset::series_ids`].
    pub series: u32,
    pub target_t: u32,
    pub horizon: u16,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SupervisedDataset {
    pub lags: usize,
    pub series_ids: Vec<SeriesId>,
    /// Row-major, `lags` values per row.
    pub features: Vec<f64>,
    pub targets: Vec<f64>,
    pub meta: Vec<RowMeta>,
}

impl SupervisedDataset {
    pub fn empty(lags: usize) -> Self {
        SupervisedDataset {
            lags,
            ..Default::default()
        }
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.lags..(i + 1) * self.lags]
    }

    pub fn series_of(&self, i: usize) -> &SeriesId {
        &self.series_ids[self.meta[i].series as usize]
    }

    fn series_index(&mut self, id: &SeriesId) -> u32 {
        match self.series_ids.iter().position(|s| s == id) {
            Some(i) => i as u32,
            None => {
                self.series_ids.push(id.clone());
                (self.series_ids.len() - 1) as u32
            }
        }
    }

    /// Appends all rows of `other`, remapping series indices.
    pub fn append(&mut self, other: &SupervisedDataset) {
        assert_eq!(self.lags, other.lags, "cannot append datasets with different lags");
        let remap: Vec<u32> = other.series_ids.iter().map(|id| self.series_index(id)).collect();
        self.features.extend_from_slice(&other.features);
        self.targets.extend_from_slice(&other.targets);
        self.meta.extend(other.meta.iter().map(|m| RowMeta {
            series: remap[m.series as usize],
            ..*m
        }));
    }

    /// Keeps the rows at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> SupervisedDataset {
        let mut out = SupervisedDataset {
            lags: self.lags,
            series_ids: self.series_ids.clone(),
            features: Vec::with_capacity(indices.len() * self.lags),
            targets: Vec::with_capacity(indices.len()),
            meta: Vec::with_capacity(indices.len()),
        };
        for &i in indices {
            out.features.extend_from_slice(self.row(i));
            out.targets.push(self.targets[i]);
            out.meta.push(self.meta[i]);
        }
        out
    }

    pub fn filter(&self, mut keep: impl FnMut(&RowMeta) -> bool) -> SupervisedDataset {
        let idx: Vec<usize> = (0..self.len()).filter(|&i| keep(&self.meta[i])).collect();
        self.select(&idx)
    }

    /// Content hash over rows and their provenance.
    pub fn fingerprint(&self) -> u64 {
        let mut bytes = Vec::with_capacity(self.len() * (self.lags + 3) * 8);
        bytes.extend_from_slice(&(self.lags as u64).to_le_bytes());
        for i in 0..self.len() {
            let id = self.series_of(i);
            bytes.extend_from_slice(id.disease.as_bytes());
            bytes.push(0);
            bytes.extend_from_slice(id.member.as_bytes());
            bytes.push(0);
            bytes.extend_from_slice(&self.meta[i].target_t.to_le_bytes());
            bytes.extend_from_slice(&self.meta[i].horizon.to_le_bytes());
            for v in self.row(i) {
                bytes.extend_from_slice(&v.to_bits().to_le_bytes());
            }
            bytes.extend_from_slice(&self.targets[i].to_bits().to_le_bytes());
        }
        rng::fnv1a(&bytes)
    }
}

fn check_horizon(config: &WindowConfig, horizon: usize) -> Result<()> {
    config.validate()?;
    if horizon == 0 || horizon > config.max_horizon {
        return Err(Error::param(
            "horizon",
            format!("must lie in 1..={}, got {horizon}", config.max_horizon),
        ));
    }
    Ok(())
}

/// Windows one series for one horizon.
///
/// A series shorter than `lags + max_horizon` yields an empty dataset and a
/// [`Warning::SeriesTooShort`].
pub fn make_windows(
    series: &EpidemicSeries,
    config: &WindowConfig,
    horizon: usize,
    warnings: &mut Vec<Warning>,
) -> Result<SupervisedDataset> {
    check_horizon(config, horizon)?;
    let mut out = SupervisedDataset::empty(config.lags);
    push_windows(&mut out, series, config, horizon, warnings);
    Ok(out)
}

fn push_windows(
    out: &mut SupervisedDataset,
    series: &EpidemicSeries,
    config: &WindowConfig,
    horizon: usize,
    warnings: &mut Vec<Warning>,
) {
    let len = series.values.len();
    let required = config.lags + config.max_horizon;
    if len < required {
        warnings.push(Warning::SeriesTooShort {
            series: series.id.to_string(),
            length: len,
            required,
        });
        return;
    }
    let sid = out.series_index(&series.id);
    let start = config.alignment_start();
    out.features.reserve((len - start) * config.lags);
    for tau in start..len {
        let first = tau - horizon + 1 - config.lags;
        out.features
            .extend_from_slice(&series.values[first..first + config.lags]);
        out.targets.push(series.values[tau]);
        out.meta.push(RowMeta {
            series: sid,
            target_t: tau as u32,
            horizon: horizon as u16,
        });
    }
}

/// Windows every series for one horizon, rows ordered by series then target.
pub fn make_windows_all(
    series: &[EpidemicSeries],
    config: &WindowConfig,
    horizon: usize,
    warnings: &mut Vec<Warning>,
) -> Result<SupervisedDataset> {
    check_horizon(config, horizon)?;
    let mut out = SupervisedDataset::empty(config.lags);
    for s in series {
        push_windows(&mut out, s, config, horizon, warnings);
    }
    Ok(out)
}

/// Restricts every dataset to the `(series, target index)` pairs present in
/// all of them, so horizons are compared on identical targets.
pub fn align_warmup(datasets: Vec<SupervisedDataset>) -> Vec<SupervisedDataset> {
    if datasets.len() <= 1 {
        return datasets;
    }
    let keys = |d: &SupervisedDataset| -> BTreeSet<(SeriesId, u32)> {
        (0..d.len())
            .map(|i| (d.series_of(i).clone(), d.meta[i].target_t))
            .collect()
    };
    let mut common = keys(&datasets[0]);
    for d in &datasets[1..] {
        let k = keys(d);
        common.retain(|key| k.contains(key));
    }
    datasets
        .iter()
        .map(|d| {
            let idx: Vec<usize> = (0..d.len())
                .filter(|&i| common.contains(&(d.series_of(i).clone(), d.meta[i].target_t)))
                .collect();
            d.select(&idx)
        })
        .collect()
}

/// Keeps rows whose target index lies strictly before `cutoff`.
pub fn apply_cutoff(dataset: &SupervisedDataset, cutoff: u32) -> SupervisedDataset {
    dataset.filter(|m| m.target_t < cutoff)
}

/// Seeded random partition; the first part gets `round(n * fraction)` items
/// and each part keeps the input order.
pub fn split_cities<T: Clone>(items: &[T], fraction: f64, seed: u64) -> (Vec<T>, Vec<T>) {
    let n = items.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::derived_stream(seed, &["split_cities".into()]));
    let k = libm::round(n as f64 * fraction.clamp(0.0, 1.0)) as usize;
    let mut chosen = alloc::vec![false; n];
    for &i in &order[..k.min(n)] {
        chosen[i] = true;
    }
    let mut first = Vec::with_capacity(k);
    let mut second = Vec::with_capacity(n - k.min(n));
    for (i, item) in items.iter().enumerate() {
        if chosen[i] {
            first.push(item.clone());
        } else {
            second.push(item.clone());
        }
    }
    (first, second)
}

/// Non-overlapping 7-day sums starting at the first day; a trailing partial
/// week is dropped.
pub fn daily_to_weekly(daily: &[f64]) -> Vec<f64> {
    daily.chunks_exact(7).map(|w| w.iter().sum()).collect()
}

pub fn series_daily_to_weekly(series: &EpidemicSeries) -> EpidemicSeries {
    EpidemicSeries {
        id: series.id.clone(),
        values: daily_to_weekly(&series.values),
        kind: series.kind,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GapFill {
    #[default]
    Zero,
    Interpolate,
}

/// Builds a dense series from sparse `(time index, value)` observations
/// spanning `first..=last`. Repeated indices are summed.
pub fn densify(points: &[(i64, f64)], fill: GapFill) -> Vec<f64> {
    let mut by_t: BTreeMap<i64, f64> = BTreeMap::new();
    for &(t, v) in points {
        *by_t.entry(t).or_insert(0.0) += v;
    }
    let (Some((&first, _)), Some((&last, _))) = (by_t.first_key_value(), by_t.last_key_value())
    else {
        return Vec::new();
    };
    let mut out = alloc::vec![0.0; (last - first + 1) as usize];
    for (&t, &v) in &by_t {
        out[(t - first) as usize] = v;
    }
    if fill == GapFill::Interpolate {
        let known: Vec<(i64, f64)> = by_t.into_iter().collect();
        for w in known.windows(2) {
            let ((t0, v0), (t1, v1)) = (w[0], w[1]);
            for t in t0 + 1..t1 {
                let frac = (t - t0) as f64 / (t1 - t0) as f64;
                out[(t - first) as usize] = v0 + frac * (v1 - v0);
            }
        }
    }
    out
}

/// Divides inputs and targets by one training-period maximum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaxScaler {
    pub scale: f64,
}

impl MaxScaler {
    /// Largest observed value, floored at one so sparse data is not blown up.
    pub fn fit(dataset: &SupervisedDataset) -> Self {
        let m = dataset
            .features
            .iter()
            .chain(dataset.targets.iter())
            .fold(0.0f64, |a, &b| a.max(b));
        MaxScaler { scale: m.max(1.0) }
    }

    pub fn identity() -> Self {
        MaxScaler { scale: 1.0 }
    }

    pub fn scale_slice(&self, xs: &[f64]) -> Vec<f64> {
        xs.iter().map(|v| v / self.scale).collect()
    }

    pub fn unscale(&self, v: f64) -> f64 {
        v * self.scale
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simcore::SeriesKind;
    use alloc::vec;

    fn series(name: &str, values: Vec<f64>) -> EpidemicSeries {
        EpidemicSeries {
            id: SeriesId::new("d", name),
            values,
            kind: SeriesKind::Incidence,
        }
    }

    fn ramp(n: usize) -> EpidemicSeries {
        series("ramp", (0..n).map(|v| v as f64).collect())
    }

    #[test]
    fn length_twenty_gives_three_rows_for_every_horizon() {
        let cfg = WindowConfig::default();
        let s = ramp(20);
        for h in [2, 9] {
            let ds = make_windows(&s, &cfg, h, &mut Vec::new()).unwrap();
            let ts: Vec<u32> = ds.meta.iter().map(|m| m.target_t).collect();
            assert_eq!(ts, [17, 18, 19]);
            // row for target tau starts at tau - h - lags + 1
            assert_eq!(ds.row(0)[0], (17 + 1 - h - 9) as f64);
            assert_eq!(ds.row(0)[8], (17 - h) as f64);
            assert_eq!(ds.targets[0], 17.0);
        }
    }

    #[test]
    fn constant_series_gives_constant_rows() {
        let s = series("c", vec![4.5; 30]);
        let ds = make_windows(&s, &WindowConfig::default(), 3, &mut Vec::new()).unwrap();
        assert!(ds.features.iter().all(|&v| v == 4.5));
        assert!(ds.targets.iter().all(|&v| v == 4.5));
    }

    #[test]
    fn short_series_warns_and_is_empty() {
        let mut warnings = Vec::new();
        let ds = make_windows(&ramp(17), &WindowConfig::default(), 2, &mut warnings).unwrap();
        assert!(ds.is_empty());
        assert!(matches!(warnings[..], [Warning::SeriesTooShort { length: 17, required: 18, .. }]));
    }

    #[test]
    fn bad_horizon_is_rejected() {
        assert!(make_windows(&ramp(40), &WindowConfig::default(), 10, &mut Vec::new()).is_err());
        assert!(make_windows(&ramp(40), &WindowConfig::default(), 0, &mut Vec::new()).is_err());
    }

    #[test]
    fn cutoff_keeps_targets_before_it() {
        let cfg = WindowConfig::default();
        let ds = make_windows(&ramp(100), &cfg, 2, &mut Vec::new()).unwrap();
        let c = apply_cutoff(&ds, 25);
        let ts: Vec<u32> = c.meta.iter().map(|m| m.target_t).collect();
        assert_eq!(ts, (17..25).collect::<Vec<_>>());
        assert!(apply_cutoff(&ds, 17).is_empty());
        assert_eq!(apply_cutoff(&ds, 100), ds);
    }

    #[test]
    fn warmup_alignment_edge_cases() {
        assert!(align_warmup(Vec::new()).is_empty());
        let ds = make_windows(&ramp(50), &WindowConfig::default(), 9, &mut Vec::new()).unwrap();
        assert_eq!(align_warmup(vec![ds.clone()]), vec![ds]);
    }

    #[test]
    fn warmup_alignment_intersects_natural_starts() {
        // Windows built with per-horizon natural starts differ; alignment
        // trims the short horizon to the long horizon's first target.
        let s = ramp(40);
        let h2 = make_windows(
            &s,
            &WindowConfig { lags: 9, horizons: vec![2], max_horizon: 2 },
            2,
            &mut Vec::new(),
        )
        .unwrap();
        let h9 = make_windows(&s, &WindowConfig::default(), 9, &mut Vec::new()).unwrap();
        assert_eq!(h2.meta[0].target_t, 10);
        let aligned = align_warmup(vec![h2.clone(), h9]);
        assert_eq!(aligned[0].len(), h2.len() - 7);
        assert_eq!(aligned[0].meta[0].target_t, 17);
        assert_eq!(aligned[0].len(), aligned[1].len());
    }

    #[test]
    fn splits_are_balanced_and_deterministic() {
        let items: Vec<u32> = (0..4).collect();
        let (a, b) = split_cities(&items, 0.5, 9);
        assert_eq!((a.len(), b.len()), (2, 2));
        assert_eq!(split_cities(&items, 0.5, 9), (a, b));
        let five: Vec<u32> = (0..5).collect();
        let (a, b) = split_cities(&five, 0.5, 1);
        assert_eq!(a.len() + b.len(), 5);
        assert!(a.len().abs_diff(b.len()) <= 1);
    }

    #[test]
    fn weekly_aggregation() {
        assert_eq!(daily_to_weekly(&[1.0; 14]), [7.0, 7.0]);
        assert_eq!(daily_to_weekly(&[1.0; 15]), [7.0, 7.0]);
        assert_eq!(daily_to_weekly(&[0., 1., 2., 3., 4., 5., 6.]), [21.0]);
    }

    #[test]
    fn densify_fills_gaps() {
        let pts = [(3, 2.0), (5, 6.0), (4, 1.0), (7, 4.0)];
        assert_eq!(densify(&pts, GapFill::Zero), [2.0, 1.0, 6.0, 0.0, 4.0]);
        assert_eq!(densify(&pts, GapFill::Interpolate), [2.0, 1.0, 6.0, 5.0, 4.0]);
        assert!(densify(&[], GapFill::Zero).is_empty());
    }

    #[test]
    fn cutoff_spec_validation() {
        let w = WindowConfig::default();
        assert!(CutoffSpec::default().validate(&w).is_ok());
        let bad = CutoffSpec { values: vec![17, 30], ..Default::default() };
        assert!(bad.validate(&w).is_err());
        let unordered = CutoffSpec { values: vec![30, 25], ..Default::default() };
        assert!(unordered.validate(&w).is_err());
    }

    #[test]
    fn append_remaps_series() {
        let cfg = WindowConfig::default();
        let a = make_windows(&series("a", vec![1.0; 20]), &cfg, 2, &mut Vec::new()).unwrap();
        let b = make_windows(&series("b", vec![2.0; 20]), &cfg, 2, &mut Vec::new()).unwrap();
        let mut all = a.clone();
        all.append(&b);
        assert_eq!(all.len(), 6);
        assert_eq!(all.series_of(5).member, "b");
        assert_eq!(all.series_of(0).member, "a");
        assert_ne!(a.fingerprint(), b.fingerprint());
    }
}
