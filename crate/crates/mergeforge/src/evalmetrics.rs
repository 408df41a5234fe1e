//! Safety and general-performance metrics computed from externally produced
//! judgments: relative percent change in harmful generations against a
//! baseline model, and pairwise win-rates with half-credit ties, with
//! per-language and aggregate reporting.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use serde_json::json;
use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JudgmentKind {
    Harm,
    Pref,
}

/// One externally judged generation: either a harmful/not-harmful label or
/// a pairwise preference against the baseline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JudgmentRecord {
    pub prompt_id: String,
    pub language: String,
    pub model_id: String,
    pub kind: JudgmentKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub harmful: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub winner: Option<String>,
}

impl JudgmentRecord {
    fn validate(&self) -> std::result::Result<(), String> {
        match self.kind {
            JudgmentKind::Harm if self.harmful.is_none() => {
                Err("harm record missing \"harmful\"".into())
            }
            JudgmentKind::Pref if self.winner.is_none() => {
                Err("pref record missing \"winner\"".into())
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct JudgmentSet {
    records: Vec<JudgmentRecord>,
}

impl JudgmentSet {
    pub fn records(&self) -> &[JudgmentRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn languages(&self) -> BTreeSet<String> {
        self.records.iter().map(|r| r.language.clone()).collect()
    }
}

/// Outcome of ingesting a judgment file: the valid records after last-wins
/// deduplication, rejected lines with their line numbers, and the number of
/// duplicate keys that were overwritten.
#[derive(Debug, Clone, Default)]
pub struct IngestReport {
    pub set: JudgmentSet,
    pub rejected: Vec<(usize, String)>,
    pub duplicates: usize,
}

/// Read line-delimited JSON judgments. Invalid lines are collected, not
/// fatal; duplicate (prompt_id, model_id, kind) keys keep the last record.
pub fn ingest_judgments(path: impl AsRef<Path>) -> Result<IngestReport> {
    let file = File::open(&path)
        .map_err(|e| Error::UnreadableFile(format!("{}: {e}", path.as_ref().display())))?;
    ingest_judgment_lines(BufReader::new(file).lines().map(|l| {
        l.map_err(|e| Error::UnreadableFile(format!("{}: {e}", path.as_ref().display())))
    }))
}

fn ingest_judgment_lines(
    lines: impl Iterator<Item = Result<String>>,
) -> Result<IngestReport> {
    let mut report = IngestReport::default();
    let mut by_key: BTreeMap<(String, String, JudgmentKind), usize> = BTreeMap::new();
    for (lineno, line) in lines.enumerate() {
        let line = line?;
        let lineno = lineno + 1;
        if line.trim().is_empty() {
            continue;
        }
        let record: JudgmentRecord = match serde_json::from_str(&line) {
            Ok(r) => r,
            Err(e) => {
                report.rejected.push((lineno, e.to_string()));
                continue;
            }
        };
        if let Err(msg) = record.validate() {
            report.rejected.push((lineno, msg));
            continue;
        }
        let key = (
            record.prompt_id.clone(),
            record.model_id.clone(),
            record.kind,
        );
        match by_key.get(&key) {
            Some(&i) => {
                report.set.records[i] = record;
                report.duplicates += 1;
            }
            None => {
                by_key.insert(key, report.set.records.len());
                report.set.records.push(record);
            }
        }
    }
    Ok(report)
}

/// Harmful-generation counts for one model (optionally one language).
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct HarmCounts {
    pub harmful: u64,
    pub total: u64,
}

pub fn harm_counts(set: &JudgmentSet, model_id: &str, language: Option<&str>) -> HarmCounts {
    let mut counts = HarmCounts::default();
    for r in set.records() {
        if r.kind != JudgmentKind::Harm
            || r.model_id != model_id
            || language.is_some_and(|l| l != r.language)
        {
            continue;
        }
        counts.total += 1;
        if r.harmful == Some(true) {
            counts.harmful += 1;
        }
    }
    counts
}

/// Relative percent change in harmful-generation rate against the baseline:
/// 100 · (rate_model − rate_base) / rate_base. Negative means safer.
pub fn harm_change(model: HarmCounts, base: HarmCounts) -> Result<f64> {
    if model.total == 0 || base.total == 0 {
        return Err(Error::EmptySet);
    }
    if base.harmful == 0 {
        return Err(Error::DegenerateBaseline);
    }
    let rate_model = model.harmful as f64 / model.total as f64;
    let rate_base = base.harmful as f64 / base.total as f64;
    Ok(100.0 * (rate_model - rate_base) / rate_base)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct PrefTally {
    pub wins: u64,
    pub losses: u64,
    pub ties: u64,
}

impl PrefTally {
    pub fn total(&self) -> u64 {
        self.wins + self.losses + self.ties
    }
}

pub fn pref_tally(set: &JudgmentSet, model_id: &str, language: Option<&str>) -> PrefTally {
    let mut tally = PrefTally::default();
    for r in set.records() {
        if r.kind != JudgmentKind::Pref
            || r.model_id != model_id
            || language.is_some_and(|l| l != r.language)
        {
            continue;
        }
        match r.winner.as_deref() {
            Some("tie") => tally.ties += 1,
            Some(w) if w == model_id => tally.wins += 1,
            _ => tally.losses += 1,
        }
    }
    tally
}

/// Win-rate percentage with half credit for ties.
pub fn win_rate(tally: PrefTally) -> Result<f64> {
    let total = tally.total();
    if total == 0 {
        return Err(Error::EmptySet);
    }
    Ok(100.0 * (tally.wins as f64 + 0.5 * tally.ties as f64) / total as f64)
}

/// Unweighted arithmetic mean over per-language values.
pub fn aggregate_languages(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::EmptySet);
    }
    Ok(values.iter().sum::<f64>() / values.len() as f64)
}

/// One cell of the report: signed relative % change in harmful generations
/// (negative = fewer) and a win-rate % in [0, 100].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricCell {
    pub safety: f64,
    pub general: f64,
}

/// Method → language → cell, with a named baseline row deltas are taken
/// against.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricTable {
    pub rows: BTreeMap<String, BTreeMap<String, MetricCell>>,
    pub baseline_row: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RenderedReport {
    pub text: String,
    pub structured: serde_json::Value,
}

fn row_aggregate(row: &BTreeMap<String, MetricCell>) -> Result<MetricCell> {
    let safety: Vec<f64> = row.values().map(|c| c.safety).collect();
    let general: Vec<f64> = row.values().map(|c| c.general).collect();
    Ok(MetricCell {
        safety: aggregate_languages(&safety)?,
        general: aggregate_languages(&general)?,
    })
}

/// Render the aggregate table with baseline deltas. The safety delta is
/// baseline − row so that a further reduction in harm prints positive; the
/// general delta is row − baseline.
pub fn build_report(table: &MetricTable) -> Result<RenderedReport> {
    let baseline_row = table
        .rows
        .get(&table.baseline_row)
        .ok_or_else(|| Error::MissingBaseline(table.baseline_row.clone()))?;
    let baseline = row_aggregate(baseline_row)?;

    let mut text = format!(
        "{:<24} {:>16} {:>16}\n",
        "method", "safety", "general"
    );
    let mut rows_json = serde_json::Map::new();

    let mut ordered: Vec<&String> = table.rows.keys().collect();
    // baseline first, everything else in sorted order
    ordered.sort_by_key(|name| (**name != table.baseline_row, (*name).clone()));

    for name in ordered {
        let agg = row_aggregate(&table.rows[name])?;
        let (safety_cell, general_cell, deltas) = if *name == table.baseline_row {
            (
                format!("{:.1}", agg.safety),
                format!("{:.1}", agg.general),
                None,
            )
        } else {
            let safety_delta = baseline.safety - agg.safety;
            let general_delta = agg.general - baseline.general;
            (
                format!("{:.1} ({:+.1})", agg.safety, safety_delta),
                format!("{:.1} ({:+.1})", agg.general, general_delta),
                Some((safety_delta, general_delta)),
            )
        };
        text.push_str(&format!(
            "{:<24} {:>16} {:>16}\n",
            name, safety_cell, general_cell
        ));
        let mut entry = json!({
            "safety": agg.safety,
            "general": agg.general,
            "per_language": table.rows[name],
        });
        if let Some((sd, gd)) = deltas {
            entry["safety_delta"] = json!(sd);
            entry["general_delta"] = json!(gd);
        }
        rows_json.insert(name.clone(), entry);
    }

    Ok(RenderedReport {
        text,
        structured: json!({
            "baseline": table.baseline_row,
            "rows": rows_json,
        }),
    })
}
