//! Error normalisation, best-model counting and disease similarity.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, Warning};
use crate::stats;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    /// Model label such as `rf_tradaboost`.
    pub regime: String,
    pub disease: String,
    pub city: String,
    pub horizon: usize,
    /// `None` for regimes that do not depend on the cutoff.
    pub cutoff: Option<u32>,
    pub mae: f64,
    pub pmae: f64,
}

impl EvalRecord {
    fn sort_key(&self) -> (&str, &str, &str, usize, Option<u32>) {
        (&self.regime, &self.disease, &self.city, self.horizon, self.cutoff)
    }
}

pub fn sort_records(records: &mut [EvalRecord]) {
    records.sort_by(|a, b| a.sort_key().cmp(&b.sort_key()));
}

pub fn mae(predictions: &[f64], truths: &[f64]) -> Result<f64> {
    if predictions.len() != truths.len() {
        return Err(Error::ArityMismatch {
            expected: truths.len(),
            found: predictions.len(),
        });
    }
    if truths.is_empty() {
        return Err(Error::EmptyData("mae of no predictions"));
    }
    let s: f64 = predictions.iter().zip(truths).map(|(p, y)| libm::fabs(p - y)).sum();
    Ok(s / truths.len() as f64)
}

/// Mean absolute error divided by the city's total case count.
pub fn percent_mae(predictions: &[f64], truths: &[f64], total_cases: f64) -> Result<f64> {
    if !(total_cases > 0.0) || !total_cases.is_finite() {
        return Err(Error::param("total_cases", "must be positive and finite"));
    }
    Ok(mae(predictions, truths)? / total_cases)
}

/// Builds the record for one city, or records a warning and returns `None`
/// when the city has no cases.
#[allow(clippy::too_many_arguments)]
pub fn score_city(
    regime: &str,
    disease: &str,
    city: &str,
    horizon: usize,
    cutoff: Option<u32>,
    predictions: &[f64],
    truths: &[f64],
    total_cases: f64,
    warnings: &mut Vec<Warning>,
) -> Result<Option<EvalRecord>> {
    let m = mae(predictions, truths)?;
    if total_cases <= 0.0 {
        warnings.push(Warning::ZeroTotalCases {
            city: alloc::format!("{disease}/{city}"),
        });
        return Ok(None);
    }
    Ok(Some(EvalRecord {
        regime: regime.to_string(),
        disease: disease.to_string(),
        city: city.to_string(),
        horizon,
        cutoff,
        mae: m,
        pmae: m / total_cases,
    }))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrequencyRow {
    pub horizon: usize,
    pub cutoff: u32,
    pub regime: String,
    pub count: usize,
    /// Cells where this regime shared the minimal error with another.
    pub ties: usize,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct FrequencyTable {
    pub rows: Vec<FrequencyRow>,
    pub scored_cells: usize,
    pub skipped_cells: usize,
}

/// Counts, per (horizon, cutoff), how often each regime has the lowest
/// percent error for a city.
///
/// Records without a cutoff take part in every cutoff cell. A cell lacking
/// any of `competing` is skipped with a warning. Ties go to the
/// lexicographically smallest label and are counted in `ties` for every
/// regime involved. If `competing` is empty, the labels present in
/// `records` are used.
pub fn best_model_frequency(records: &[EvalRecord], cutoffs: &[u32], competing: &[String], warnings: &mut Vec<Warning>) -> FrequencyTable {
    let regimes: BTreeSet<String> = if competing.is_empty() {
        records.iter().map(|r| r.regime.clone()).collect()
    } else {
        competing.iter().cloned().collect()
    };
    let cutoffs: BTreeSet<u32> = cutoffs
        .iter()
        .copied()
        .chain(records.iter().filter_map(|r| r.cutoff))
        .collect();
    let horizons: BTreeSet<usize> = records.iter().map(|r| r.horizon).collect();

    // (horizon, disease, city) -> regime -> (cutoff -> pmae)
    type Cell<'a> = BTreeMap<&'a str, BTreeMap<Option<u32>, f64>>;
    let mut cells: BTreeMap<(usize, &str, &str), Cell<'_>> = BTreeMap::new();
    for r in records {
        cells
            .entry((r.horizon, &r.disease, &r.city))
            .or_default()
            .entry(&r.regime)
            .or_default()
            .entry(r.cutoff)
            .or_insert(r.pmae);
    }

    let mut counts: BTreeMap<(usize, u32, &str), (usize, usize)> = BTreeMap::new();
    for &h in &horizons {
        for &c in &cutoffs {
            for reg in &regimes {
                counts.insert((h, c, reg.as_str()), (0, 0));
            }
        }
    }
    let mut table = FrequencyTable::default();
    for (&(h, disease, city), by_regime) in &cells {
        for &c in &cutoffs {
            let mut scores: Vec<(&str, f64)> = Vec::new();
            let mut missing = None;
            for reg in &regimes {
                let v = by_regime
                    .get(reg.as_str())
                    .and_then(|m| m.get(&Some(c)).or_else(|| m.get(&None)));
                match v {
                    Some(&v) => scores.push((reg.as_str(), v)),
                    None => {
                        missing = Some(reg.clone());
                        break;
                    }
                }
            }
            if let Some(regime) = missing {
                warnings.push(Warning::MissingRegime {
                    horizon: h,
                    cutoff: Some(c),
                    city: alloc::format!("{disease}/{city}"),
                    regime,
                });
                table.skipped_cells += 1;
                continue;
            }
            if scores.is_empty() {
                continue;
            }
            let best = scores.iter().map(|s| s.1).fold(f64::INFINITY, f64::min);
            // `scores` follows the BTreeSet order, so the first minimum is the
            // lexicographically smallest label.
            let tied: Vec<&str> = scores.iter().filter(|s| s.1 == best).map(|s| s.0).collect();
            counts.get_mut(&(h, c, tied[0])).expect("initialised").0 += 1;
            if tied.len() > 1 {
                for t in &tied {
                    counts.get_mut(&(h, c, t)).expect("initialised").1 += 1;
                }
                warnings.push(Warning::Tie {
                    horizon: h,
                    cutoff: Some(c),
                    city: alloc::format!("{disease}/{city}"),
                    regimes: tied.iter().map(|s| s.to_string()).collect(),
                });
            }
            table.scored_cells += 1;
        }
    }
    table.rows = counts
        .into_iter()
        .map(|((horizon, cutoff, regime), (count, ties))| FrequencyRow {
            horizon,
            cutoff,
            regime: regime.to_string(),
            count,
            ties,
        })
        .collect();
    table
}

/// Median Pearson correlation over every (source, target) series pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairwiseCorrelation {
    pub median: Option<f64>,
    pub pairs_used: usize,
    pub pairs_skipped: usize,
}

pub fn median_pairwise_correlation(source: &[&[f64]], target: &[&[f64]]) -> Result<PairwiseCorrelation> {
    let mut corr = Vec::with_capacity(source.len() * target.len());
    let mut skipped = 0;
    for s in source {
        for t in target {
            if s.len() != t.len() {
                return Err(Error::ArityMismatch {
                    expected: s.len(),
                    found: t.len(),
                });
            }
            match stats::pearson(s, t) {
                Some(r) => corr.push(r),
                None => skipped += 1,
            }
        }
    }
    Ok(PairwiseCorrelation {
        median: stats::median(&corr),
        pairs_used: corr.len(),
        pairs_skipped: skipped,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityEntry {
    pub beta: f64,
    pub gamma: f64,
    pub median_corr: Option<f64>,
    pub pairs_used: usize,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SimilarityMap {
    pub entries: Vec<SimilarityEntry>,
}

impl SimilarityMap {
    pub fn get(&self, beta: f64, gamma: f64) -> Option<&SimilarityEntry> {
        self.entries.iter().find(|e| e.beta == beta && e.gamma == gamma)
    }
}

/// Correlation of each target disease's series with the source series.
/// `targets` holds `(beta, gamma, series)` per disease.
pub fn similarity_map(source: &[&[f64]], targets: &[(f64, f64, Vec<&[f64]>)], warnings: &mut Vec<Warning>) -> Result<SimilarityMap> {
    let mut entries = Vec::with_capacity(targets.len());
    for (beta, gamma, series) in targets {
        let pc = median_pairwise_correlation(source, series)?;
        if pc.pairs_skipped > 0 {
            warnings.push(Warning::ZeroVariancePair {
                skipped: pc.pairs_skipped,
            });
        }
        entries.push(SimilarityEntry {
            beta: *beta,
            gamma: *gamma,
            median_corr: pc.median,
            pairs_used: pc.pairs_used,
        });
    }
    entries.sort_by(|a, b| a.beta.total_cmp(&b.beta).then(a.gamma.total_cmp(&b.gamma)));
    Ok(SimilarityMap { entries })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PmaeSummary {
    pub disease: String,
    pub horizon: usize,
    pub regime: String,
    pub cutoff: Option<u32>,
    pub n: usize,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
}

/// Median and quartiles of the percent error across cities, per
/// (disease, horizon, regime, cutoff).
pub fn summarize(records: &[EvalRecord]) -> Vec<PmaeSummary> {
    let mut groups: BTreeMap<(&str, usize, &str, Option<u32>), Vec<f64>> = BTreeMap::new();
    for r in records {
        groups
            .entry((&r.disease, r.horizon, &r.regime, r.cutoff))
            .or_default()
            .push(r.pmae);
    }
    groups
        .into_iter()
        .map(|((disease, horizon, regime, cutoff), mut v)| {
            v.sort_by(f64::total_cmp);
            PmaeSummary {
                disease: disease.to_string(),
                horizon,
                regime: regime.to_string(),
                cutoff,
                n: v.len(),
                q1: stats::quantile_sorted(&v, 0.25),
                median: stats::quantile_sorted(&v, 0.5),
                q3: stats::quantile_sorted(&v, 0.75),
            }
        })
        .collect()
}
