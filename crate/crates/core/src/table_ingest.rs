//! CSV ingestion, feature typing and cleaning.
//!
//! A raw CSV table is parsed into a [`RawTable`], every column gets a
//! [`FeatureKind`] (LLM-assisted, with a deterministic rule ladder as the
//! fallback), and [`encode_features`] turns the result into a
//! [`FeatureTable`] holding only continuous and discrete features.
//!
//! Cleaning never drops rows: missing values are imputed and outliers are
//! winsorized to the IQR fences, so every surviving feature keeps exactly
//! `n_rows` values. Whole features are dropped when their missing or
//! outlier ratio exceeds the [`CleaningPolicy`] thresholds.

use std::collections::{BTreeMap, BTreeSet};

use chrono::NaiveDate;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::feature_profile::quantile_sorted;
use crate::llm_gateway::{LlmClient, LlmRequest, PromptKind};

/// Number of sample values shown to the LLM per column.
pub const TYPE_SAMPLE_SIZE: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawTable {
    pub column_names: Vec<String>,
    /// Row-major cells; `None` marks a missing (empty) cell.
    pub cells: Vec<Vec<Option<String>>>,
    pub source_name: String,
    /// Hex SHA-256 of the raw input bytes.
    pub content_hash: String,
}

impl RawTable {
    pub fn n_rows(&self) -> usize {
        self.cells.len()
    }

    pub fn n_cols(&self) -> usize {
        self.column_names.len()
    }

    pub fn column(&self, j: usize) -> Vec<Option<&str>> {
        self.cells.iter().map(|row| row[j].as_deref()).collect()
    }
}

/// Hex SHA-256 digest.
pub fn content_hash(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// Parses comma-separated UTF-8 text with a header row.
///
/// Quoting follows RFC 4180: a field starting with `"` runs to the matching
/// closing quote, and `""` inside it is a literal quote. Empty (or
/// whitespace-only) unquoted cells are recorded as missing. Blank lines are
/// skipped.
pub fn parse_csv(bytes: &[u8], source_name: &str) -> Result<RawTable> {
    let text = std::str::from_utf8(bytes).map_err(|e| Error::InvalidInput(format!("input is not valid UTF-8: {e}")))?;
    let text = text.strip_prefix('\u{feff}').unwrap_or(text);
    if text.trim().is_empty() {
        return Err(Error::EmptyInput);
    }
    let records = split_records(text)?;
    let mut iter = records.into_iter();
    let (_, header) = iter.next().ok_or(Error::EmptyInput)?;
    let column_names: Vec<String> = header.into_iter().map(|f| f.text.trim().to_string()).collect();
    let mut seen = BTreeSet::new();
    for name in &column_names {
        if !seen.insert(name.as_str()) {
            return Err(Error::DuplicateColumn(name.clone()));
        }
    }
    let width = column_names.len();
    let mut cells = Vec::new();
    for (row, fields) in iter {
        if fields.len() != width {
            return Err(Error::Parse { row, message: format!("expected {width} fields, found {}", fields.len()) });
        }
        cells.push(
            fields
                .into_iter()
                .map(|f| {
                    let blank = if f.quoted { f.text.is_empty() } else { f.text.trim().is_empty() };
                    if blank {
                        None
                    } else {
                        Some(f.text)
                    }
                })
                .collect(),
        );
    }
    Ok(RawTable { column_names, cells, source_name: source_name.to_string(), content_hash: content_hash(bytes) })
}

struct Field {
    text: String,
    quoted: bool,
}

/// Splits CSV text into records, tagging each with its 1-based row number.
fn split_records(text: &str) -> Result<Vec<(usize, Vec<Field>)>> {
    let mut records = Vec::new();
    let mut fields: Vec<Field> = Vec::new();
    let mut field = String::new();
    let mut quoted = false;
    let mut in_quotes = false;
    let mut after_quote = false;
    let mut row = 1usize;
    let mut quote_row = 0usize;
    let mut line_has_content = false;
    let mut chars = text.chars().peekable();

    while let Some(c) = chars.next() {
        if in_quotes {
            match c {
                '"' if chars.peek() == Some(&'"') => {
                    chars.next();
                    field.push('"');
                }
                '"' => {
                    in_quotes = false;
                    after_quote = true;
                }
                _ => field.push(c),
            }
            continue;
        }
        match c {
            '"' if field.trim().is_empty() && !after_quote => {
                field.clear();
                in_quotes = true;
                quoted = true;
                quote_row = row;
                line_has_content = true;
            }
            ',' => {
                fields.push(Field { text: std::mem::take(&mut field), quoted });
                quoted = false;
                after_quote = false;
                line_has_content = true;
            }
            '\r' if chars.peek() == Some(&'\n') => {}
            '\n' | '\r' => {
                if line_has_content || !field.is_empty() {
                    fields.push(Field { text: std::mem::take(&mut field), quoted });
                    records.push((row, std::mem::take(&mut fields)));
                }
                quoted = false;
                after_quote = false;
                line_has_content = false;
                row += 1;
            }
            _ if after_quote => {
                if !c.is_whitespace() {
                    return Err(Error::Parse {
                        row,
                        message: format!("unexpected character {c:?} after closing quote"),
                    });
                }
            }
            _ => {
                field.push(c);
                line_has_content = true;
            }
        }
    }
    if in_quotes {
        return Err(Error::Parse { row: quote_row, message: "unterminated quoted field".into() });
    }
    if line_has_content || !field.is_empty() {
        fields.push(Field { text: field, quoted });
        records.push((row, fields));
    }
    Ok(records)
}

/// The five column kinds recognized before encoding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum FeatureKind {
    ContinuousNumeric,
    DiscreteNumeric,
    NonNumericCategorical,
    IdLike,
    TimeRelated,
}

impl FeatureKind {
    pub const ALL: [FeatureKind; 5] = [
        FeatureKind::ContinuousNumeric,
        FeatureKind::DiscreteNumeric,
        FeatureKind::NonNumericCategorical,
        FeatureKind::IdLike,
        FeatureKind::TimeRelated,
    ];

    /// The single-word answer token used in the type-inference prompt.
    pub fn token(self) -> &'static str {
        match self {
            FeatureKind::ContinuousNumeric => "continuous",
            FeatureKind::DiscreteNumeric => "discrete",
            FeatureKind::NonNumericCategorical => "categorical",
            FeatureKind::IdLike => "id",
            FeatureKind::TimeRelated => "time",
        }
    }

    /// Parses an LLM answer. Surrounding punctuation, quotes and case are
    /// ignored; anything else that is not a kind token yields `None`.
    pub fn from_token(answer: &str) -> Option<FeatureKind> {
        let norm =
            answer.trim().trim_matches(|c: char| !c.is_alphanumeric()).to_ascii_lowercase().replace(['-', ' '], "_");
        match norm.as_str() {
            "continuous" | "continuous_numeric" => Some(FeatureKind::ContinuousNumeric),
            "discrete" | "discrete_numeric" => Some(FeatureKind::DiscreteNumeric),
            "categorical" | "non_numeric_categorical" => Some(FeatureKind::NonNumericCategorical),
            "id" | "id_like" | "idlike" => Some(FeatureKind::IdLike),
            "time" | "time_related" => Some(FeatureKind::TimeRelated),
            _ => None,
        }
    }
}

/// Parses a finite number; `NaN` and infinities are not numbers here.
pub fn parse_number(s: &str) -> Option<f64> {
    s.trim().parse::<f64>().ok().filter(|v| v.is_finite())
}

/// Parses `DD-MM-YYYY` or `YYYY-MM-DD` (either `-` or `/`) into days since
/// 1970-01-01.
pub fn parse_date_ordinal(s: &str) -> Option<f64> {
    let s = s.trim();
    const FORMATS: [&str; 4] = ["%d-%m-%Y", "%Y-%m-%d", "%d/%m/%Y", "%Y/%m/%d"];
    let epoch = NaiveDate::from_ymd_opt(1970, 1, 1)?;
    FORMATS.iter().find_map(|f| NaiveDate::parse_from_str(s, f).ok()).map(|d| (d - epoch).num_days() as f64)
}

/// Column statistics that drive the rule ladder and are shown to the LLM.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnProfile {
    pub name: String,
    pub n_rows: usize,
    pub n_missing: usize,
    pub n_distinct: usize,
    /// Fractions below are over non-missing values.
    pub numeric_fraction: f64,
    pub integer_fraction: f64,
    pub date_fraction: f64,
    pub four_digit_year_fraction: f64,
    pub uniqueness_ratio: f64,
    pub samples: Vec<String>,
}

impl ColumnProfile {
    pub fn new(name: &str, values: &[Option<&str>]) -> ColumnProfile {
        let present: Vec<&str> = values.iter().flatten().map(|s| s.trim()).collect();
        let n_present = present.len();
        let distinct: BTreeSet<&str> = present.iter().copied().collect();
        let frac = |count: usize| if n_present == 0 { 0.0 } else { count as f64 / n_present as f64 };
        let numbers: Vec<f64> = present.iter().filter_map(|s| parse_number(s)).collect();
        let integers = numbers.iter().filter(|v| v.fract() == 0.0).count();
        let years = numbers.iter().filter(|v| v.fract() == 0.0 && (1000.0..=2999.0).contains(*v)).count();
        let dates = present.iter().filter(|s| parse_date_ordinal(s).is_some()).count();
        ColumnProfile {
            name: name.to_string(),
            n_rows: values.len(),
            n_missing: values.len() - n_present,
            n_distinct: distinct.len(),
            numeric_fraction: frac(numbers.len()),
            integer_fraction: frac(integers),
            date_fraction: frac(dates),
            four_digit_year_fraction: frac(years),
            uniqueness_ratio: frac(distinct.len()),
            samples: present.iter().take(TYPE_SAMPLE_SIZE).map(|s| s.to_string()).collect(),
        }
    }

    /// The deterministic rule ladder.
    pub fn classify(&self) -> Result<FeatureKind> {
        if self.n_missing == self.n_rows {
            return Err(Error::UntypeableColumn(self.name.clone()));
        }
        let lname = self.name.to_ascii_lowercase();
        if self.date_fraction >= 0.95 || (lname.contains("year") && self.four_digit_year_fraction >= 0.95) {
            return Ok(FeatureKind::TimeRelated);
        }
        let numeric = self.numeric_fraction >= 0.95;
        let integer_valued = numeric && self.integer_fraction >= 0.95;
        if self.uniqueness_ratio >= 0.98 && (integer_valued || lname.contains("id")) {
            return Ok(FeatureKind::IdLike);
        }
        if numeric {
            let cutoff = 20f64.max(0.05 * self.n_rows as f64);
            if self.n_distinct as f64 <= cutoff {
                return Ok(FeatureKind::DiscreteNumeric);
            }
            return Ok(FeatureKind::ContinuousNumeric);
        }
        Ok(FeatureKind::NonNumericCategorical)
    }
}

/// Rule-based typing used when the LLM is unavailable or answers badly.
pub fn heuristic_type_fallback(name: &str, values: &[Option<&str>]) -> Result<FeatureKind> {
    ColumnProfile::new(name, values).classify()
}

/// Types every column with one independent LLM call each.
///
/// Invalid answers and transport failures fall back to the rule ladder per
/// column. Columns with no observed value are typed categorical so that the
/// missing-value policy drops them during encoding.
pub fn infer_feature_types(table: &RawTable, llm: &LlmClient) -> Vec<FeatureKind> {
    let profiles: Vec<ColumnProfile> = (0..table.n_cols())
        .into_par_iter()
        .map(|j| ColumnProfile::new(&table.column_names[j], &table.column(j)))
        .collect();
    let heuristics: Vec<Option<FeatureKind>> = profiles.iter().map(|p| p.classify().ok()).collect();

    let requests: Vec<LlmRequest> = profiles
        .iter()
        .zip(&heuristics)
        .map(|(p, h)| {
            LlmRequest::new(
                PromptKind::TypeInference,
                json!({
                    "column": p.name,
                    "samples": p.samples,
                    "profile": {
                        "rows": p.n_rows,
                        "missing": p.n_missing,
                        "distinct": p.n_distinct,
                        "numeric_fraction": p.numeric_fraction,
                        "integer_fraction": p.integer_fraction,
                        "date_fraction": p.date_fraction,
                    },
                    "heuristic_hint": h.map(FeatureKind::token).unwrap_or("categorical"),
                }),
            )
        })
        .collect();
    let answers = llm.chat_batch(&requests);

    answers
        .into_iter()
        .zip(profiles.iter().zip(heuristics))
        .map(|(answer, (profile, heuristic))| {
            let fallback = || {
                heuristic.unwrap_or_else(|| {
                    tracing::warn!(column = %profile.name, "untypeable column, typed categorical");
                    FeatureKind::NonNumericCategorical
                })
            };
            match answer {
                Ok(text) => FeatureKind::from_token(&text).unwrap_or_else(|| {
                    tracing::warn!(column = %profile.name, answer = %text, "unparseable type answer, using heuristic");
                    fallback()
                }),
                Err(e) => {
                    tracing::warn!(column = %profile.name, error = %e, "type inference call failed, using heuristic");
                    fallback()
                }
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ImputeStrategy {
    #[default]
    Median,
    Mean,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CleaningPolicy {
    pub missing_drop_threshold: f64,
    pub outlier_drop_threshold: f64,
    pub outlier_fence_multiplier: f64,
    pub impute_strategy: ImputeStrategy,
}

impl Default for CleaningPolicy {
    fn default() -> Self {
        CleaningPolicy {
            missing_drop_threshold: 0.3,
            outlier_drop_threshold: 0.1,
            outlier_fence_multiplier: 1.5,
            impute_strategy: ImputeStrategy::Median,
        }
    }
}

impl CleaningPolicy {
    pub fn validate(&self) -> Result<()> {
        let unit = 0.0..=1.0;
        if !unit.contains(&self.missing_drop_threshold) || !unit.contains(&self.outlier_drop_threshold) {
            return Err(Error::InvalidInput("cleaning thresholds must lie in [0, 1]".into()));
        }
        if self.outlier_fence_multiplier.is_nan() || self.outlier_fence_multiplier <= 0.0 {
            return Err(Error::InvalidInput("outlier fence multiplier must be positive".into()));
        }
        Ok(())
    }
}

/// Post-encoding value kind.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ValueKind {
    Continuous,
    Discrete,
}

/// Result of a cleaning step: the cleaned column, or the reason it was dropped.
#[derive(Debug, Clone, PartialEq)]
pub enum Cleaned {
    Kept { values: Vec<f64>, count: usize },
    Dropped { ratio: f64 },
}

/// Imputes missing cells, or drops the column when too many are missing.
///
/// Continuous columns get the median (or mean) of the observed values;
/// discrete code columns get the modal code, ties broken toward the lowest
/// code.
///
/// ```
/// use tabinsight::table_ingest::{handle_missing, Cleaned, CleaningPolicy, ValueKind};
/// let out = handle_missing(&[Some(1.0), Some(2.0), None, Some(3.0)],
///                          &CleaningPolicy::default(), ValueKind::Continuous);
/// assert_eq!(out, Cleaned::Kept { values: vec![1.0, 2.0, 2.0, 3.0], count: 1 });
/// ```
pub fn handle_missing(values: &[Option<f64>], policy: &CleaningPolicy, kind: ValueKind) -> Cleaned {
    let n = values.len();
    let observed: Vec<f64> = values.iter().flatten().copied().collect();
    let missing = n - observed.len();
    let ratio = if n == 0 { 0.0 } else { missing as f64 / n as f64 };
    if ratio > policy.missing_drop_threshold || (observed.is_empty() && n > 0) {
        return Cleaned::Dropped { ratio };
    }
    if missing == 0 {
        return Cleaned::Kept { values: observed, count: 0 };
    }
    let fill = match kind {
        ValueKind::Continuous => match policy.impute_strategy {
            ImputeStrategy::Median => {
                let mut sorted = observed.clone();
                sorted.sort_by(f64::total_cmp);
                quantile_sorted(&sorted, 0.5)
            }
            ImputeStrategy::Mean => observed.iter().sum::<f64>() / observed.len() as f64,
        },
        ValueKind::Discrete => {
            let mut counts: BTreeMap<u64, usize> = BTreeMap::new();
            for v in &observed {
                *counts.entry(*v as u64).or_default() += 1;
            }
            // equal counts: the lower code compares greater
            let (code, _) =
                counts.iter().max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0))).expect("observed is non-empty");
            *code as f64
        }
    };
    Cleaned::Kept { values: values.iter().map(|v| v.unwrap_or(fill)).collect(), count: missing }
}

/// Winsorizes values outside `[Q1 - m·IQR, Q3 + m·IQR]`, or drops the column
/// when the outlier ratio exceeds the policy threshold.
pub fn handle_outliers(values: &[f64], policy: &CleaningPolicy) -> Cleaned {
    if values.is_empty() {
        return Cleaned::Kept { values: Vec::new(), count: 0 };
    }
    let (lo, hi) = iqr_fences(values, policy.outlier_fence_multiplier);
    let outliers = values.iter().filter(|&&v| v < lo || v > hi).count();
    let ratio = outliers as f64 / values.len() as f64;
    if ratio > policy.outlier_drop_threshold {
        return Cleaned::Dropped { ratio };
    }
    Cleaned::Kept { values: values.iter().map(|v| v.clamp(lo, hi)).collect(), count: outliers }
}

/// Lower and upper Tukey fences with multiplier `m`.
pub fn iqr_fences(values: &[f64], m: f64) -> (f64, f64) {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let q1 = quantile_sorted(&sorted, 0.25);
    let q3 = quantile_sorted(&sorted, 0.75);
    let iqr = q3 - q1;
    (q1 - m * iqr, q3 + m * iqr)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "values")]
pub enum FeatureValues {
    Continuous(Vec<f64>),
    Discrete(Vec<u32>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Feature {
    pub name: String,
    /// The kind assigned before the continuous/discrete transformation.
    pub source_kind: FeatureKind,
    pub values: FeatureValues,
    /// Discrete only: `categories[code]` is the original label.
    pub categories: Vec<String>,
    pub missing_imputed: usize,
    pub outliers_clipped: usize,
    pub description: String,
    /// Set for generated features such as the cluster label.
    pub synthetic: bool,
}

impl Feature {
    pub fn continuous(name: &str, values: Vec<f64>) -> Feature {
        Feature {
            name: name.to_string(),
            source_kind: FeatureKind::ContinuousNumeric,
            values: FeatureValues::Continuous(values),
            categories: Vec::new(),
            missing_imputed: 0,
            outliers_clipped: 0,
            description: String::new(),
            synthetic: false,
        }
    }

    /// A discrete feature whose codes are labelled `"0"`, `"1"`, ...
    pub fn discrete(name: &str, codes: Vec<u32>) -> Feature {
        let n_cat = codes.iter().map(|&c| c as usize + 1).max().unwrap_or(0);
        Feature {
            name: name.to_string(),
            source_kind: FeatureKind::NonNumericCategorical,
            values: FeatureValues::Discrete(codes),
            categories: (0..n_cat).map(|c| c.to_string()).collect(),
            missing_imputed: 0,
            outliers_clipped: 0,
            description: String::new(),
            synthetic: false,
        }
    }

    pub fn kind(&self) -> ValueKind {
        match self.values {
            FeatureValues::Continuous(_) => ValueKind::Continuous,
            FeatureValues::Discrete(_) => ValueKind::Discrete,
        }
    }

    pub fn len(&self) -> usize {
        match &self.values {
            FeatureValues::Continuous(v) => v.len(),
            FeatureValues::Discrete(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn n_categories(&self) -> usize {
        self.categories.len()
    }

    pub fn as_continuous(&self) -> Option<&[f64]> {
        match &self.values {
            FeatureValues::Continuous(v) => Some(v),
            FeatureValues::Discrete(_) => None,
        }
    }

    pub fn as_codes(&self) -> Option<&[u32]> {
        match &self.values {
            FeatureValues::Discrete(v) => Some(v),
            FeatureValues::Continuous(_) => None,
        }
    }

    /// Values as reals (codes converted for discrete features).
    pub fn to_f64(&self) -> Vec<f64> {
        match &self.values {
            FeatureValues::Continuous(v) => v.clone(),
            FeatureValues::Discrete(v) => v.iter().map(|&c| c as f64).collect(),
        }
    }

    /// `(label, code)` pairs in code order.
    pub fn category_mapping(&self) -> Vec<(&str, u32)> {
        self.categories.iter().enumerate().map(|(i, l)| (l.as_str(), i as u32)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DroppedColumn {
    pub name: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureTable {
    pub features: Vec<Feature>,
    pub n_rows: usize,
    pub dropped_columns: Vec<DroppedColumn>,
    pub dataset_description: String,
}

impl FeatureTable {
    /// Builds a table from already-encoded features, checking row alignment.
    pub fn from_features(features: Vec<Feature>) -> Result<FeatureTable> {
        let n_rows = features.first().map(Feature::len).unwrap_or(0);
        for f in &features {
            if f.len() != n_rows {
                return Err(Error::LengthMismatch { left: n_rows, right: f.len() });
            }
        }
        Ok(FeatureTable { features, n_rows, dropped_columns: Vec::new(), dataset_description: String::new() })
    }

    pub fn feature(&self, name: &str) -> Option<&Feature> {
        self.features.iter().find(|f| f.name == name)
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.features.iter().position(|f| f.name == name)
    }
}

enum ColumnOutcome {
    Kept(Feature),
    Dropped(String),
}

/// Applies typing, encoding and cleaning to every column.
///
/// ```
/// use tabinsight::table_ingest::{encode_features, parse_csv, CleaningPolicy, FeatureKind};
/// let raw = parse_csv(b"edu\nPhD\nBasic\n2n Cycle\nBasic", "t.csv").unwrap();
/// let table = encode_features(&raw, &[FeatureKind::NonNumericCategorical],
///                             &CleaningPolicy::default()).unwrap();
/// assert_eq!(table.features[0].categories, ["2n Cycle", "Basic", "PhD"]);
/// assert_eq!(table.features[0].as_codes().unwrap(), &[2, 1, 0, 1]);
/// ```
pub fn encode_features(table: &RawTable, kinds: &[FeatureKind], policy: &CleaningPolicy) -> Result<FeatureTable> {
    if kinds.len() != table.n_cols() {
        return Err(Error::LengthMismatch { left: table.n_cols(), right: kinds.len() });
    }
    policy.validate()?;
    let outcomes: Vec<ColumnOutcome> = (0..table.n_cols())
        .into_par_iter()
        .map(|j| encode_column(&table.column_names[j], &table.column(j), kinds[j], policy))
        .collect();

    let mut features = Vec::new();
    let mut dropped_columns = Vec::new();
    for (name, outcome) in table.column_names.iter().zip(outcomes) {
        match outcome {
            ColumnOutcome::Kept(f) => features.push(f),
            ColumnOutcome::Dropped(reason) => {
                tracing::info!(column = %name, %reason, "column dropped");
                dropped_columns.push(DroppedColumn { name: name.clone(), reason });
            }
        }
    }
    Ok(FeatureTable {
        features,
        n_rows: table.n_rows(),
        dropped_columns,
        dataset_description: format!(
            "Table '{}' with {} rows and {} columns",
            table.source_name,
            table.n_rows(),
            table.n_cols()
        ),
    })
}

fn encode_column(name: &str, cells: &[Option<&str>], kind: FeatureKind, policy: &CleaningPolicy) -> ColumnOutcome {
    let present = cells.iter().flatten().count();
    let parsed_fraction = |parsed: &[Option<f64>]| {
        if present == 0 {
            0.0
        } else {
            parsed.iter().flatten().count() as f64 / present as f64
        }
    };
    match kind {
        FeatureKind::IdLike => ColumnOutcome::Dropped("id-like".into()),
        FeatureKind::TimeRelated => {
            let parsed: Vec<Option<f64>> =
                cells.iter().map(|c| c.and_then(|s| parse_date_ordinal(s).or_else(|| parse_number(s)))).collect();
            if parsed_fraction(&parsed) < 0.5 {
                tracing::warn!(column = %name, "time column mostly unparseable, re-typed categorical");
                return encode_categorical(name, cells, FeatureKind::NonNumericCategorical, policy);
            }
            encode_continuous(name, &parsed, kind, policy)
        }
        FeatureKind::ContinuousNumeric => {
            let parsed: Vec<Option<f64>> = cells.iter().map(|c| c.and_then(parse_number)).collect();
            if present > 0 && parsed_fraction(&parsed) < 0.5 {
                tracing::warn!(column = %name, "numeric column mostly non-numeric, re-typed categorical");
                return encode_categorical(name, cells, FeatureKind::NonNumericCategorical, policy);
            }
            encode_continuous(name, &parsed, kind, policy)
        }
        FeatureKind::DiscreteNumeric => {
            let parsed: Vec<Option<f64>> = cells.iter().map(|c| c.and_then(parse_number)).collect();
            if present > 0 && parsed_fraction(&parsed) < 0.5 {
                tracing::warn!(column = %name, "numeric column mostly non-numeric, re-typed categorical");
                return encode_categorical(name, cells, FeatureKind::NonNumericCategorical, policy);
            }
            encode_discrete_numeric(name, &parsed, policy)
        }
        FeatureKind::NonNumericCategorical => encode_categorical(name, cells, kind, policy),
    }
}

fn encode_continuous(name: &str, parsed: &[Option<f64>], kind: FeatureKind, policy: &CleaningPolicy) -> ColumnOutcome {
    let (filled, imputed) = match handle_missing(parsed, policy, ValueKind::Continuous) {
        Cleaned::Kept { values, count } => (values, count),
        Cleaned::Dropped { ratio } => return ColumnOutcome::Dropped(format!("missing ratio {ratio:.3}")),
    };
    let (clean, clipped) = match handle_outliers(&filled, policy) {
        Cleaned::Kept { values, count } => (values, count),
        Cleaned::Dropped { ratio } => return ColumnOutcome::Dropped(format!("outlier ratio {ratio:.3}")),
    };
    let mut f = Feature::continuous(name, clean);
    f.source_kind = kind;
    f.missing_imputed = imputed;
    f.outliers_clipped = clipped;
    ColumnOutcome::Kept(f)
}

/// Canonical label for a numeric category.
fn number_label(v: f64) -> String {
    if v.fract() == 0.0 && v.abs() < 1e15 {
        format!("{}", v as i64)
    } else {
        format!("{v}")
    }
}

fn encode_discrete_numeric(name: &str, parsed: &[Option<f64>], policy: &CleaningPolicy) -> ColumnOutcome {
    let mut levels: Vec<f64> = parsed.iter().flatten().copied().collect();
    levels.sort_by(f64::total_cmp);
    levels.dedup();
    let codes: Vec<Option<f64>> = parsed.iter().map(|v| v.map(|x| levels.partition_point(|&l| l < x) as f64)).collect();
    let labels = levels.iter().map(|&v| number_label(v)).collect();
    finish_discrete(name, &codes, labels, FeatureKind::DiscreteNumeric, policy)
}

fn encode_categorical(name: &str, cells: &[Option<&str>], kind: FeatureKind, policy: &CleaningPolicy) -> ColumnOutcome {
    let labels: Vec<String> =
        cells.iter().flatten().map(|s| s.trim().to_string()).collect::<BTreeSet<_>>().into_iter().collect();
    let codes: Vec<Option<f64>> = cells
        .iter()
        .map(|c| c.map(|s| labels.binary_search_by(|l| l.as_str().cmp(s.trim())).unwrap() as f64))
        .collect();
    finish_discrete(name, &codes, labels, kind, policy)
}

fn finish_discrete(
    name: &str,
    codes: &[Option<f64>],
    labels: Vec<String>,
    kind: FeatureKind,
    policy: &CleaningPolicy,
) -> ColumnOutcome {
    match handle_missing(codes, policy, ValueKind::Discrete) {
        Cleaned::Kept { values, count } => ColumnOutcome::Kept(Feature {
            name: name.to_string(),
            source_kind: kind,
            values: FeatureValues::Discrete(values.iter().map(|&v| v as u32).collect()),
            categories: labels,
            missing_imputed: count,
            outliers_clipped: 0,
            description: String::new(),
            synthetic: false,
        }),
        Cleaned::Dropped { ratio } => ColumnOutcome::Dropped(format!("missing ratio {ratio:.3}")),
    }
}
