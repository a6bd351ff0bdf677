//! Type-dependent statistics for every ordered feature pair.
//!
//! | pair        | metrics                                       |
//! |-------------|-----------------------------------------------|
//! | cont → cont | Pearson r, Spearman ρ, mutual information     |
//! | cont → disc | ANOVA F and p, η², Kruskal–Wallis H           |
//! | disc → cont | ANOVA F and p, η², Cohen's f                  |
//! | disc → disc | χ² and p, Cramér's V, mutual information      |
//!
//! For the mixed pairs the discrete feature always supplies the groups and
//! the continuous feature the values.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::error::{Error, Result};
use crate::llm_gateway::{LlmClient, LlmRequest, PromptKind, PLACEHOLDER_DESCRIPTION};
use crate::special::{chi2_sf, f_sf};
use crate::table_ingest::{Feature, FeatureTable, FeatureValues, ValueKind};

/// Number of equal-frequency bins for continuous variables in MI.
pub const MI_BINS: usize = 10;

fn check_lengths(x: &[f64], y: &[f64]) -> Result<()> {
    if x.len() != y.len() {
        return Err(Error::LengthMismatch { left: x.len(), right: y.len() });
    }
    if x.len() < 2 {
        return Err(Error::InsufficientData { required: 2, available: x.len() });
    }
    Ok(())
}

/// Pearson correlation; 0 when either vector is constant.
///
/// ```
/// use tabinsight::pairwise_stats::pearson;
/// let r = pearson(&[1.0, 2.0, 3.0, 4.0], &[1.0, 3.0, 2.0, 4.0]).unwrap();
/// assert!((r - 0.8).abs() < 1e-12);
/// ```
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    check_lengths(x, y)?;
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Ok(0.0);
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// 1-based ranks with ties receiving the average rank.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = avg;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman rank correlation (Pearson on average ranks).
pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64> {
    check_lengths(x, y)?;
    pearson(&average_ranks(x), &average_ranks(y))
}

/// Equal-frequency bin index per value: at most `bins` bins, one per
/// distinct value when there are no more distinct values than bins.
/// Interior edges are interpolated quantiles; intervals are right-closed.
pub fn equal_frequency_bins(values: &[f64], bins: usize) -> Vec<usize> {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut distinct = sorted.clone();
    distinct.dedup();
    if distinct.len() <= bins {
        return values.iter().map(|v| distinct.partition_point(|d| d < v)).collect();
    }
    let mut edges: Vec<f64> =
        (1..bins).map(|k| crate::feature_profile::quantile_sorted(&sorted, k as f64 / bins as f64)).collect();
    edges.dedup();
    values.iter().map(|v| edges.partition_point(|e| e < v)).collect()
}

/// Mutual information in nats of two label vectors.
pub fn mutual_info_codes(a: &[usize], b: &[usize]) -> f64 {
    let n = a.len() as f64;
    if a.is_empty() {
        return 0.0;
    }
    let mut joint: BTreeMap<(usize, usize), usize> = BTreeMap::new();
    let mut pa: BTreeMap<usize, usize> = BTreeMap::new();
    let mut pb: BTreeMap<usize, usize> = BTreeMap::new();
    for (&i, &j) in a.iter().zip(b) {
        *joint.entry((i, j)).or_default() += 1;
        *pa.entry(i).or_default() += 1;
        *pb.entry(j).or_default() += 1;
    }
    let mi: f64 = joint
        .iter()
        .map(|(&(i, j), &c)| {
            let pij = c as f64 / n;
            pij * (pij * n * n / (pa[&i] as f64 * pb[&j] as f64)).ln()
        })
        .sum();
    mi.max(0.0)
}

/// Mutual information between two columns, binning continuous inputs.
pub fn mutual_info(x: &[f64], y: &[f64], kinds: (ValueKind, ValueKind)) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::LengthMismatch { left: x.len(), right: y.len() });
    }
    let to_codes = |v: &[f64], k: ValueKind| match k {
        ValueKind::Continuous => equal_frequency_bins(v, MI_BINS),
        ValueKind::Discrete => v.iter().map(|&c| c as usize).collect(),
    };
    Ok(mutual_info_codes(&to_codes(x, kinds.0), &to_codes(y, kinds.1)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnovaResult {
    #[serde(with = "crate::serde_float")]
    pub f: f64,
    pub p: f64,
    pub eta_squared: f64,
}

fn group_values(values: &[f64], groups: &[u32]) -> Result<Vec<Vec<f64>>> {
    if values.len() != groups.len() {
        return Err(Error::LengthMismatch { left: values.len(), right: groups.len() });
    }
    let mut by_group: BTreeMap<u32, Vec<f64>> = BTreeMap::new();
    for (&v, &g) in values.iter().zip(groups) {
        by_group.entry(g).or_default().push(v);
    }
    let out: Vec<Vec<f64>> = by_group.into_values().collect();
    if out.len() < 2 {
        return Err(Error::InsufficientData { required: 2, available: out.len() });
    }
    Ok(out)
}

/// One-way ANOVA. Empty groups never appear since groups come from the
/// observed codes. Zero within-group variance yields `F = +inf`, `p = 0`,
/// `η² = 1` (or `F = 0`, `η² = 0` when the between-group sum is zero too).
pub fn anova_oneway(values: &[f64], groups: &[u32]) -> Result<AnovaResult> {
    let grouped = group_values(values, groups)?;
    let n = values.len();
    let k = grouped.len();
    if n <= k {
        return Err(Error::InsufficientData { required: k + 1, available: n });
    }
    let grand = values.iter().sum::<f64>() / n as f64;
    let mut ssb = 0.0;
    let mut ssw = 0.0;
    for g in &grouped {
        let m = g.iter().sum::<f64>() / g.len() as f64;
        ssb += g.len() as f64 * (m - grand) * (m - grand);
        ssw += g.iter().map(|v| (v - m) * (v - m)).sum::<f64>();
    }
    let sst = ssb + ssw;
    if ssw == 0.0 {
        if ssb == 0.0 {
            return Ok(AnovaResult { f: 0.0, p: 1.0, eta_squared: 0.0 });
        }
        return Ok(AnovaResult { f: f64::INFINITY, p: 0.0, eta_squared: 1.0 });
    }
    let df_b = (k - 1) as f64;
    let df_w = (n - k) as f64;
    let f = (ssb / df_b) / (ssw / df_w);
    Ok(AnovaResult { f, p: f_sf(f, df_b, df_w), eta_squared: (ssb / sst).clamp(0.0, 1.0) })
}

/// Kruskal–Wallis H with the tie correction; 0 when every value is tied.
pub fn kruskal_wallis(values: &[f64], groups: &[u32]) -> Result<f64> {
    group_values(values, groups)?;
    let n = values.len() as f64;
    let ranks = average_ranks(values);
    let mut sums: BTreeMap<u32, (f64, usize)> = BTreeMap::new();
    for (&r, &g) in ranks.iter().zip(groups) {
        let e = sums.entry(g).or_default();
        e.0 += r;
        e.1 += 1;
    }
    let centre = (n + 1.0) / 2.0;
    let h: f64 = 12.0 / (n * (n + 1.0))
        * sums
            .values()
            .map(|&(s, c)| {
                let mean = s / c as f64;
                c as f64 * (mean - centre) * (mean - centre)
            })
            .sum::<f64>();
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut tie_sum = 0.0;
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i;
        while j + 1 < sorted.len() && sorted[j + 1] == sorted[i] {
            j += 1;
        }
        let t = (j - i + 1) as f64;
        tie_sum += t * t * t - t;
        i = j + 1;
    }
    let correction = 1.0 - tie_sum / (n * n * n - n);
    if correction <= 0.0 {
        return Ok(0.0);
    }
    Ok(h / correction)
}

/// Cohen's f from η²; `+inf` at η² = 1.
pub fn cohens_f(eta_squared: f64) -> f64 {
    if eta_squared >= 1.0 {
        return f64::INFINITY;
    }
    (eta_squared.max(0.0) / (1.0 - eta_squared)).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Chi2Result {
    #[serde(with = "crate::serde_float")]
    pub chi2: f64,
    pub p: f64,
    pub cramers_v: f64,
}

/// χ² test of independence on a contingency table (rows of counts).
/// Empty rows and columns are dropped first.
pub fn chi2_from_table(table: &[Vec<u64>]) -> Result<Chi2Result> {
    let width = table.first().map_or(0, Vec::len);
    if table.iter().any(|r| r.len() != width) {
        return Err(Error::InvalidInput("ragged contingency table".into()));
    }
    let keep_cols: Vec<usize> = (0..width).filter(|&j| table.iter().any(|r| r[j] > 0)).collect();
    let rows: Vec<Vec<f64>> = table
        .iter()
        .filter(|r| r.iter().any(|&c| c > 0))
        .map(|r| keep_cols.iter().map(|&j| r[j] as f64).collect())
        .collect();
    let (r, c) = (rows.len(), keep_cols.len());
    if r < 2 || c < 2 {
        return Err(Error::DegenerateContingency { rows: r, cols: c });
    }
    let row_tot: Vec<f64> = rows.iter().map(|row| row.iter().sum()).collect();
    let col_tot: Vec<f64> = (0..c).map(|j| rows.iter().map(|row| row[j]).sum()).collect();
    let n: f64 = row_tot.iter().sum();
    let mut chi2 = 0.0;
    for (i, row) in rows.iter().enumerate() {
        for (j, &o) in row.iter().enumerate() {
            let e = row_tot[i] * col_tot[j] / n;
            chi2 += (o - e) * (o - e) / e;
        }
    }
    let dof = ((r - 1) * (c - 1)) as f64;
    let min_dim = (r.min(c) - 1) as f64;
    Ok(Chi2Result { chi2, p: chi2_sf(chi2, dof), cramers_v: (chi2 / (n * min_dim)).sqrt().clamp(0.0, 1.0) })
}

/// Contingency table from two code vectors, rows indexed by `x` codes.
pub fn contingency(x: &[u32], y: &[u32]) -> Result<Vec<Vec<u64>>> {
    if x.len() != y.len() {
        return Err(Error::LengthMismatch { left: x.len(), right: y.len() });
    }
    let r = x.iter().map(|&v| v as usize + 1).max().unwrap_or(0);
    let c = y.iter().map(|&v| v as usize + 1).max().unwrap_or(0);
    let mut t = vec![vec![0u64; c]; r];
    for (&a, &b) in x.iter().zip(y) {
        t[a as usize][b as usize] += 1;
    }
    Ok(t)
}

pub fn chi2_independence(x: &[u32], y: &[u32]) -> Result<Chi2Result> {
    chi2_from_table(&contingency(x, y)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PairKind {
    ContCont,
    ContDisc,
    DiscCont,
    DiscDisc,
}

impl PairKind {
    pub fn of(source: ValueKind, target: ValueKind) -> PairKind {
        match (source, target) {
            (ValueKind::Continuous, ValueKind::Continuous) => PairKind::ContCont,
            (ValueKind::Continuous, ValueKind::Discrete) => PairKind::ContDisc,
            (ValueKind::Discrete, ValueKind::Continuous) => PairKind::DiscCont,
            (ValueKind::Discrete, ValueKind::Discrete) => PairKind::DiscDisc,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            PairKind::ContCont => "continuous-continuous",
            PairKind::ContDisc => "continuous-discrete",
            PairKind::DiscCont => "discrete-continuous",
            PairKind::DiscDisc => "discrete-discrete",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MetricSet {
    ContCont {
        #[serde(with = "crate::serde_float")]
        pearson_r: f64,
        #[serde(with = "crate::serde_float")]
        spearman_r: f64,
        #[serde(with = "crate::serde_float")]
        mutual_info: f64,
    },
    ContDisc {
        #[serde(with = "crate::serde_float")]
        anova_f: f64,
        #[serde(with = "crate::serde_float")]
        anova_p: f64,
        #[serde(with = "crate::serde_float")]
        eta_squared: f64,
        #[serde(with = "crate::serde_float")]
        kruskal_h: f64,
    },
    DiscCont {
        #[serde(with = "crate::serde_float")]
        anova_f: f64,
        #[serde(with = "crate::serde_float")]
        anova_p: f64,
        #[serde(with = "crate::serde_float")]
        eta_squared: f64,
        #[serde(with = "crate::serde_float")]
        cohens_f: f64,
    },
    DiscDisc {
        #[serde(with = "crate::serde_float")]
        chi2: f64,
        #[serde(with = "crate::serde_float")]
        chi2_p: f64,
        #[serde(with = "crate::serde_float")]
        cramers_v: f64,
        #[serde(with = "crate::serde_float")]
        mutual_info: f64,
    },
}

impl MetricSet {
    pub fn kind(&self) -> PairKind {
        match self {
            MetricSet::ContCont { .. } => PairKind::ContCont,
            MetricSet::ContDisc { .. } => PairKind::ContDisc,
            MetricSet::DiscCont { .. } => PairKind::DiscCont,
            MetricSet::DiscDisc { .. } => PairKind::DiscDisc,
        }
    }

    /// `(name, value)` pairs in display order.
    pub fn named(&self) -> Vec<(&'static str, f64)> {
        match *self {
            MetricSet::ContCont { pearson_r, spearman_r, mutual_info } => {
                vec![("pearson_r", pearson_r), ("spearman_r", spearman_r), ("mutual_info", mutual_info)]
            }
            MetricSet::ContDisc { anova_f, anova_p, eta_squared, kruskal_h } => {
                vec![("anova_f", anova_f), ("anova_p", anova_p), ("eta_squared", eta_squared), ("kruskal_h", kruskal_h)]
            }
            MetricSet::DiscCont { anova_f, anova_p, eta_squared, cohens_f } => {
                vec![("anova_f", anova_f), ("anova_p", anova_p), ("eta_squared", eta_squared), ("cohens_f", cohens_f)]
            }
            MetricSet::DiscDisc { chi2, chi2_p, cramers_v, mutual_info } => {
                vec![("chi2", chi2), ("chi2_p", chi2_p), ("cramers_v", cramers_v), ("mutual_info", mutual_info)]
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SignificanceThresholds {
    pub pearson_abs: f64,
    pub spearman_abs: f64,
    pub mi_cc: f64,
    pub anova_p: f64,
    pub eta_sq: f64,
    pub chi2_p: f64,
    pub cramers_v: f64,
}

impl Default for SignificanceThresholds {
    fn default() -> Self {
        SignificanceThresholds {
            pearson_abs: 0.3,
            spearman_abs: 0.3,
            mi_cc: 0.1,
            anova_p: 0.05,
            eta_sq: 0.06,
            chi2_p: 0.05,
            cramers_v: 0.1,
        }
    }
}

/// Continuous pairs pass on any one criterion; the other kinds need both
/// the test and its effect size.
pub fn classify_significance(metrics: &MetricSet, th: &SignificanceThresholds) -> bool {
    match *metrics {
        MetricSet::ContCont { pearson_r, spearman_r, mutual_info } => {
            pearson_r.abs() >= th.pearson_abs || spearman_r.abs() >= th.spearman_abs || mutual_info >= th.mi_cc
        }
        MetricSet::ContDisc { anova_p, eta_squared, .. } | MetricSet::DiscCont { anova_p, eta_squared, .. } => {
            anova_p < th.anova_p && eta_squared >= th.eta_sq
        }
        MetricSet::DiscDisc { chi2_p, cramers_v, .. } => chi2_p < th.chi2_p && cramers_v >= th.cramers_v,
    }
}

/// Computes the metric battery for `source → target`.
pub fn pair_metrics(source: &Feature, target: &Feature) -> Result<MetricSet> {
    use FeatureValues::*;
    match (&source.values, &target.values) {
        (Continuous(x), Continuous(y)) => Ok(MetricSet::ContCont {
            pearson_r: pearson(x, y)?,
            spearman_r: spearman(x, y)?,
            mutual_info: mutual_info(x, y, (ValueKind::Continuous, ValueKind::Continuous))?,
        }),
        (Continuous(x), Discrete(g)) => {
            let a = anova_oneway(x, g)?;
            Ok(MetricSet::ContDisc {
                anova_f: a.f,
                anova_p: a.p,
                eta_squared: a.eta_squared,
                kruskal_h: kruskal_wallis(x, g)?,
            })
        }
        (Discrete(g), Continuous(y)) => {
            let a = anova_oneway(y, g)?;
            Ok(MetricSet::DiscCont {
                anova_f: a.f,
                anova_p: a.p,
                eta_squared: a.eta_squared,
                cohens_f: cohens_f(a.eta_squared),
            })
        }
        (Discrete(a), Discrete(b)) => {
            let c = chi2_independence(a, b)?;
            let ca: Vec<usize> = a.iter().map(|&v| v as usize).collect();
            let cb: Vec<usize> = b.iter().map(|&v| v as usize).collect();
            Ok(MetricSet::DiscDisc {
                chi2: c.chi2,
                chi2_p: c.p,
                cramers_v: c.cramers_v,
                mutual_info: mutual_info_codes(&ca, &cb),
            })
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairwiseRelation {
    pub source: String,
    pub target: String,
    pub kind: PairKind,
    /// `None` when the battery could not be computed (e.g. a one-level
    /// discrete feature).
    pub metrics: Option<MetricSet>,
    pub significant: bool,
    pub description: String,
}

/// Evaluates all `M·(M−1)` ordered pairs in parallel, then asks the LLM to
/// describe the significant ones. Output is sorted by (source, target).
pub fn analyze_all_pairs(
    table: &FeatureTable,
    th: &SignificanceThresholds,
    llm: &LlmClient,
) -> Result<Vec<PairwiseRelation>> {
    if table.features.len() < 2 {
        return Err(Error::InsufficientData { required: 2, available: table.features.len() });
    }
    let m = table.features.len();
    let pairs: Vec<(usize, usize)> =
        (0..m).flat_map(|i| (0..m).filter(move |&j| j != i).map(move |j| (i, j))).collect();
    let mut relations: Vec<PairwiseRelation> = pairs
        .par_iter()
        .map(|&(i, j)| {
            let (s, t) = (&table.features[i], &table.features[j]);
            let metrics = match pair_metrics(s, t) {
                Ok(m) => Some(m),
                Err(e) => {
                    tracing::debug!(source = %s.name, target = %t.name, error = %e, "pair skipped");
                    None
                }
            };
            PairwiseRelation {
                source: s.name.clone(),
                target: t.name.clone(),
                kind: PairKind::of(s.kind(), t.kind()),
                significant: metrics.as_ref().is_some_and(|m| classify_significance(m, th)),
                metrics,
                description: String::new(),
            }
        })
        .collect();
    relations.sort_by(|a, b| (&a.source, &a.target).cmp(&(&b.source, &b.target)));

    let significant: Vec<usize> = (0..relations.len()).filter(|&i| relations[i].significant).collect();
    let requests: Vec<LlmRequest> = significant
        .iter()
        .map(|&i| {
            let r = &relations[i];
            let metrics: serde_json::Map<String, serde_json::Value> =
                r.metrics.iter().flat_map(MetricSet::named).map(|(k, v)| (k.to_string(), json_number(v))).collect();
            LlmRequest::new(
                PromptKind::RelationDescription,
                json!({
                    "source": r.source,
                    "target": r.target,
                    "pair_kind": r.kind.label(),
                    "metrics": metrics,
                }),
            )
        })
        .collect();
    for (&i, answer) in significant.iter().zip(llm.chat_batch(&requests)) {
        relations[i].description = match answer {
            Ok(text) => text.trim().to_string(),
            Err(e) => {
                tracing::warn!(error = %e, "relation description failed");
                PLACEHOLDER_DESCRIPTION.to_string()
            }
        };
    }
    Ok(relations)
}

/// JSON has no infinity; non-finite values are rendered as strings.
pub(crate) fn json_number(v: f64) -> serde_json::Value {
    if v.is_finite() {
        json!(v)
    } else {
        json!(v.to_string())
    }
}
