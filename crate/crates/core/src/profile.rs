//! Statistical profiling: every table becomes a [`DatasetProfile`] — one
//! [`ColumnProfile`] per column plus a canonical text rendering that feeds
//! pseudoquery generation and reranking prompts.
//!
//! Profiles are computed over all rows, never a sample. Rendering is a pure
//! function of the profile fields, so profiling the same table twice yields
//! byte-identical text.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{parse_cell_with, CellValue, Column, DatasetTable, DEFAULT_MISSING_TOKENS};

/// Non-numeric columns with at most `max(CATEGORICAL_UNIQUE_FLOOR, 5% of
/// rows)` distinct values are reported as categorical.
const CATEGORICAL_UNIQUE_FLOOR: usize = 20;

/// Number of exemplar values kept for non-numeric columns.
const EXEMPLAR_COUNT: usize = 5;

#[derive(Debug, Error)]
pub enum ProfileError {
    #[error("table {0:?} has zero columns")]
    EmptyTable(String),
    #[error("no numeric values to compute coverage over")]
    NoNumericValues,
}

/// Detected column datatype. `Categorical` is a refinement applied to
/// low-cardinality text columns; the cell parser itself never produces it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Datatype {
    Integer,
    Real,
    Boolean,
    Datetime,
    Categorical,
    Text,
}

impl Datatype {
    pub fn is_numeric(self) -> bool {
        matches!(self, Datatype::Integer | Datatype::Real)
    }

    /// Tie-break precedence: lower wins.
    fn precedence(self) -> usize {
        match self {
            Datatype::Integer => 0,
            Datatype::Real => 1,
            Datatype::Boolean => 2,
            Datatype::Datetime => 3,
            Datatype::Categorical => 4,
            Datatype::Text => 5,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Datatype::Integer => "integer",
            Datatype::Real => "real",
            Datatype::Boolean => "boolean",
            Datatype::Datetime => "datetime",
            Datatype::Categorical => "categorical",
            Datatype::Text => "text",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MissingInfo {
    pub count: usize,
    pub fraction: f64,
}

/// Span the numeric values occupy: minimum up to the 99th percentile
/// (nearest-rank), which tolerates stray outliers at the top.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Coverage {
    pub low: f64,
    pub high: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NumericStats {
    pub min: f64,
    pub max: f64,
    pub mean: f64,
    pub median: f64,
}

/// Column-level summary: datatype, distinct count, missing info, value
/// coverage, and type-specific numeric statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnProfile {
    pub name: String,
    pub datatype: Datatype,
    pub unique_count: usize,
    pub missing: MissingInfo,
    pub coverage: Option<Coverage>,
    pub numeric_stats: Option<NumericStats>,
    pub exemplar_values: Vec<String>,
    /// Set when the column had no usable values (all missing, or a numeric
    /// column whose cells all failed the numeric parse).
    pub degenerate: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetProfile {
    pub dataset_id: String,
    pub row_count: usize,
    pub column_profiles: Vec<ColumnProfile>,
    pub rendered_text: String,
}

/// Detect a column's datatype by majority vote over the parsed non-missing
/// cells. Integer cells also count as real (an integer is a valid real), and
/// ties fall to the precedence order integer > real > boolean > datetime >
/// categorical > text. A text-voted column with few distinct values is
/// reported categorical; boolean and datetime winners are kept as-is so the
/// low-cardinality rule cannot swallow them.
pub fn detect_type(column: &Column, missing_tokens: &[&str]) -> Datatype {
    let mut votes: HashMap<Datatype, usize> = HashMap::new();
    let mut non_missing = 0usize;
    let mut distinct: std::collections::HashSet<&str> = std::collections::HashSet::new();

    for raw in column.raw_values.iter() {
        let text = raw.as_deref().unwrap_or("");
        let cell = parse_cell_with(text, missing_tokens);
        let tag = match cell {
            CellValue::Missing => continue,
            CellValue::Integer(_) => Datatype::Integer,
            CellValue::Real(_) => Datatype::Real,
            CellValue::Boolean(_) => Datatype::Boolean,
            CellValue::Datetime(_) => Datatype::Datetime,
            CellValue::Text(_) => Datatype::Text,
        };
        non_missing += 1;
        distinct.insert(text.trim());
        *votes.entry(tag).or_default() += 1;
        if tag == Datatype::Integer {
            *votes.entry(Datatype::Real).or_default() += 1;
        }
    }

    if non_missing == 0 {
        return Datatype::Text; // degenerate; caller flags it
    }

    let winner = votes
        .into_iter()
        .min_by(|(ta, na), (tb, nb)| nb.cmp(na).then(ta.precedence().cmp(&tb.precedence())))
        .map(|(t, _)| t)
        .unwrap_or(Datatype::Text);

    if winner == Datatype::Text {
        let threshold = (CATEGORICAL_UNIQUE_FLOOR as f64).max(0.05 * column.raw_values.len() as f64);
        if distinct.len() as f64 <= threshold {
            return Datatype::Categorical;
        }
    }
    winner
}

/// Nearest-rank percentile: the `ceil(p * n)`-th smallest value (1-indexed).
fn nearest_rank(sorted: &[f64], p: f64) -> f64 {
    debug_assert!(!sorted.is_empty());
    let rank = (p * sorted.len() as f64).ceil().max(1.0) as usize;
    sorted[rank.min(sorted.len()) - 1]
}

/// Value coverage of a numeric column: `[min, p99]`.
pub fn compute_coverage(values: &[f64]) -> Result<Coverage, ProfileError> {
    if values.is_empty() {
        return Err(ProfileError::NoNumericValues);
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    Ok(Coverage {
        low: sorted[0],
        high: nearest_rank(&sorted, 0.99),
    })
}

/// Profile one column over all of its rows.
pub fn profile_column(column: &Column, missing_tokens: &[&str]) -> ColumnProfile {
    let total = column.raw_values.len();
    let datatype = detect_type(column, missing_tokens);

    let mut missing_count = 0usize;
    let mut distinct_counts: HashMap<&str, usize> = HashMap::new();
    let mut numeric_values: Vec<f64> = Vec::new();

    for raw in column.raw_values.iter() {
        let text = raw.as_deref().unwrap_or("");
        let cell = parse_cell_with(text, missing_tokens);
        if cell.is_missing() {
            missing_count += 1;
            continue;
        }
        *distinct_counts.entry(text.trim()).or_default() += 1;
        if datatype.is_numeric() {
            if let Some(v) = cell.as_f64() {
                numeric_values.push(v);
            }
        }
    }

    let non_missing = total - missing_count;
    let mut degenerate = non_missing == 0;

    let (numeric_stats, coverage) = if datatype.is_numeric() {
        if numeric_values.is_empty() {
            degenerate = true;
            (None, None)
        } else {
            let mut sorted = numeric_values.clone();
            sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let n = sorted.len();
            let median = if n % 2 == 1 {
                sorted[n / 2]
            } else {
                (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0
            };
            let mean = sorted.iter().sum::<f64>() / n as f64;
            let stats = NumericStats {
                min: sorted[0],
                max: sorted[n - 1],
                mean,
                median,
            };
            let coverage = Coverage {
                low: sorted[0],
                high: nearest_rank(&sorted, 0.99),
            };
            (Some(stats), Some(coverage))
        }
    } else {
        (None, None)
    };

    // Most frequent distinct values; ties broken lexicographically so the
    // result is invariant under row permutation.
    let mut ranked: Vec<(&str, usize)> = distinct_counts.iter().map(|(v, c)| (*v, *c)).collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
    let exemplar_values: Vec<String> = ranked
        .iter()
        .take(EXEMPLAR_COUNT)
        .map(|(v, _)| v.to_string())
        .collect();

    ColumnProfile {
        name: column.name.clone(),
        datatype,
        unique_count: distinct_counts.len(),
        missing: MissingInfo {
            count: missing_count,
            fraction: if total == 0 {
                0.0
            } else {
                missing_count as f64 / total as f64
            },
        },
        coverage,
        numeric_stats,
        exemplar_values,
        degenerate,
    }
}

/// Profile a whole table with the default missing-token list.
pub fn profile_dataset(table: &DatasetTable) -> Result<DatasetProfile, ProfileError> {
    profile_dataset_with(table, DEFAULT_MISSING_TOKENS)
}

pub fn profile_dataset_with(
    table: &DatasetTable,
    missing_tokens: &[&str],
) -> Result<DatasetProfile, ProfileError> {
    if table.columns.is_empty() {
        return Err(ProfileError::EmptyTable(table.id.clone()));
    }
    let column_profiles: Vec<ColumnProfile> = table
        .columns
        .iter()
        .map(|c| profile_column(c, missing_tokens))
        .collect();
    let mut profile = DatasetProfile {
        dataset_id: table.id.clone(),
        row_count: table.row_count,
        column_profiles,
        rendered_text: String::new(),
    };
    profile.rendered_text = render_profile(&profile);
    Ok(profile)
}

/// Render a profile into its canonical text form, one block per column:
///
/// ```text
/// **Glucose**: Data is of type integer. There are 136 unique values. This column is numeric. Mean: 120.89453125, Max: 199, Min: 0. Coverage spans from 0 to 196.
/// ```
///
/// Numbers print with f64's shortest round-trip formatting (full double
/// precision, no rounding). Non-numeric columns list their most frequent
/// values instead of the numeric sentences; a missing-value note appears only
/// when the column actually has missing cells.
pub fn render_profile(profile: &DatasetProfile) -> String {
    let mut out = String::new();
    for col in &profile.column_profiles {
        out.push_str(&render_column(col));
        out.push('\n');
    }
    out
}

fn render_column(col: &ColumnProfile) -> String {
    let mut s = format!(
        "**{}**: Data is of type {}. There are {} unique values.",
        col.name,
        col.datatype.label(),
        col.unique_count
    );
    if col.missing.count > 0 {
        s.push_str(&format!(
            " Missing: {} ({}%).",
            col.missing.count,
            render_pct(col.missing.fraction)
        ));
    }
    match (&col.numeric_stats, &col.coverage) {
        (Some(stats), Some(cov)) => {
            s.push_str(&format!(
                " This column is numeric. Mean: {}, Max: {}, Min: {}. Coverage spans from {} to {}.",
                stats.mean, stats.max, stats.min, cov.low, cov.high
            ));
        }
        _ => {
            if !col.exemplar_values.is_empty() {
                s.push_str(&format!(" Top values: {}.", col.exemplar_values.join(", ")));
            }
        }
    }
    if col.degenerate {
        s.push_str(" This column has no usable values.");
    }
    s
}

/// Percentage with at most two decimals, trailing zeros trimmed: 25, 12.5, 33.33.
fn render_pct(fraction: f64) -> String {
    let mut s = format!("{:.2}", fraction * 100.0);
    while s.ends_with('0') {
        s.pop();
    }
    if s.ends_with('.') {
        s.pop();
    }
    s
}
