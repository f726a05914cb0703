//! Report bundle: pmae summaries, best-model counts, similarity and coverage.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use xferepi_core::evaluate::{self, EvalRecord, FrequencyTable, PmaeSummary};
use xferepi_core::Warning;

use crate::formats::{self, num, opt_u32};

pub const BEST_MODELS_HEADER: [&str; 5] = ["horizon", "cutoff", "regime", "count", "ties"];
pub const SUMMARY_HEADER: [&str; 8] = ["disease", "horizon", "regime", "cutoff", "n", "q1", "median", "q3"];

#[derive(Debug, Clone)]
pub struct Bundle {
    pub summaries: Vec<PmaeSummary>,
    pub frequencies: FrequencyTable,
    pub warnings: Vec<Warning>,
    pub records: usize,
}

/// Pure function of the evaluation records.
pub fn assemble(records: &[EvalRecord], cutoffs: &[u32], competing: &[String]) -> Bundle {
    let mut warnings = Vec::new();
    let frequencies = evaluate::best_model_frequency(records, cutoffs, competing, &mut warnings);
    Bundle {
        summaries: evaluate::summarize(records),
        frequencies,
        warnings,
        records: records.len(),
    }
}

impl Bundle {
    /// Writes every report file into `dir`. `similarity` is copied verbatim
    /// from the evaluate stage, `excluded` lists (disease, city) rows.
    pub fn write(&self, dir: &Path, similarity: &[u8], excluded: &[Vec<String>]) -> Result<()> {
        formats::write_table(
            &dir.join("best_models.csv"),
            &BEST_MODELS_HEADER,
            self.frequencies.rows.iter().map(|r| {
                [
                    r.horizon.to_string(),
                    r.cutoff.to_string(),
                    r.regime.clone(),
                    r.count.to_string(),
                    r.ties.to_string(),
                ]
            }),
        )?;
        formats::write_table(
            &dir.join("pmae_summary.csv"),
            &SUMMARY_HEADER,
            self.summaries.iter().map(|s| {
                [
                    s.disease.clone(),
                    s.horizon.to_string(),
                    s.regime.clone(),
                    opt_u32(s.cutoff),
                    s.n.to_string(),
                    num(s.q1),
                    num(s.median),
                    num(s.q3),
                ]
            }),
        )?;
        let sim_path = dir.join("similarity.csv");
        fs::write(&sim_path, similarity).with_context(|| format!("writing {}", sim_path.display()))?;
        formats::write_table(
            &dir.join("coverage.csv"),
            &["disease", "city", "reason"],
            excluded.iter().cloned(),
        )?;
        let text = self.summary_text(excluded.len());
        let path = dir.join("summary.txt");
        fs::write(&path, text).with_context(|| format!("writing {}", path.display()))
    }

    fn summary_text(&self, excluded: usize) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "evaluation records: {}", self.records);
        let _ = writeln!(s, "cities excluded for zero cases: {excluded}");
        let _ = writeln!(
            s,
            "best-model cells scored: {}, skipped: {}",
            self.frequencies.scored_cells, self.frequencies.skipped_cells
        );
        let mut totals: std::collections::BTreeMap<&str, (usize, usize)> = Default::default();
        for r in &self.frequencies.rows {
            let e = totals.entry(r.regime.as_str()).or_default();
            e.0 += r.count;
            e.1 += r.ties;
        }
        if !totals.is_empty() {
            let _ = writeln!(s, "\nwins per regime (all horizons and cutoffs):");
            let width = totals.keys().map(|k| k.len()).max().unwrap_or(0);
            for (regime, (count, ties)) in &totals {
                let _ = writeln!(s, "  {regime:<width$}  {count:>6}  (ties {ties})");
            }
        }
        let mut by_regime: std::collections::BTreeMap<&str, Vec<f64>> = Default::default();
        for m in &self.summaries {
            by_regime.entry(m.regime.as_str()).or_default().push(m.median);
        }
        if !by_regime.is_empty() {
            let _ = writeln!(s, "\nmedian of per-cell median pmae:");
            let width = by_regime.keys().map(|k| k.len()).max().unwrap_or(0);
            for (regime, meds) in &by_regime {
                let m = xferepi_core::stats::median(meds).unwrap_or(f64::NAN);
                let _ = writeln!(s, "  {regime:<width$}  {m:.6}");
            }
        }
        if !self.warnings.is_empty() {
            let _ = writeln!(s, "\nwarnings: {}", self.warnings.len());
            for w in self.warnings.iter().take(20) {
                let _ = writeln!(s, "  {w}");
            }
        }
        s
    }
}
