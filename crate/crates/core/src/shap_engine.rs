//! KernelSHAP explanations, k-fold perturbation stability, SHAP entropy and
//! the credibility score that ranks targets.
//!
//! The score of a target is
//!
//! ```text
//! score = H / (max(|NLL|, δ) · max(|SHAP-Error|, δ))      δ = 1e-9
//! ```
//!
//! and maps to a level: High at 10 or more, Medium from 3 up to 10, Low
//! below 3.

use std::collections::BTreeMap;
use std::fmt;
use std::ops::Range;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::error::{Error, Result};
use crate::linalg::solve_with_ridge;
use crate::llm_gateway::{LlmClient, LlmRequest, PromptKind, PLACEHOLDER_DESCRIPTION};
use crate::model_zoo::{
    build_design_matrix, fit_model, fold_partition, select_best_on_matrix, DesignMatrix, ModelConfig, ModelFamily,
    ModelReport, Prediction, TrainedModel,
};
use crate::table_ingest::FeatureTable;

/// Guard against division by zero in the credibility score.
pub const SCORE_DELTA: f64 = 1e-9;
pub const HIGH_CUTOFF: f64 = 10.0;
pub const MEDIUM_CUTOFF: f64 = 3.0;
/// Rows a perturbation fold must leave behind.
pub const MIN_PERTURBATION_ROWS: usize = 10;
const WLS_RIDGE: f64 = 1e-10;
const TOP_FEATURES: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ShapConfig {
    /// Full `2^M` enumeration at or below this many features.
    pub coalition_enumeration_limit: usize,
    /// Coalitions drawn when sampling.
    pub sample_budget: usize,
    pub explained_row_cap: usize,
    pub background_row_cap: usize,
    pub perturbation_folds: usize,
    pub seed: u64,
}

impl Default for ShapConfig {
    fn default() -> Self {
        ShapConfig {
            coalition_enumeration_limit: 12,
            sample_budget: 2048,
            explained_row_cap: 200,
            background_row_cap: 100,
            perturbation_folds: 3,
            seed: 42,
        }
    }
}

impl ShapConfig {
    pub fn validate(&self) -> Result<()> {
        if self.explained_row_cap == 0 || self.background_row_cap == 0 || self.sample_budget == 0 {
            return Err(Error::InvalidInput("SHAP caps must be at least 1".into()));
        }
        if self.perturbation_folds < 2 {
            return Err(Error::InvalidInput("perturbation_folds must be at least 2".into()));
        }
        Ok(())
    }
}

fn binomial(n: usize, k: usize) -> f64 {
    let k = k.min(n - k);
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Shapley kernel weight of a coalition of size `s` among `m` features.
///
/// ```
/// use tabinsight::shap_engine::kernel_weight;
/// assert_eq!(kernel_weight(4, 1).unwrap(), 0.25);
/// assert_eq!(kernel_weight(4, 2).unwrap(), 0.125);
/// assert!(kernel_weight(4, 0).is_err());
/// ```
pub fn kernel_weight(m: usize, s: usize) -> Result<f64> {
    if s == 0 || s >= m {
        return Err(Error::ConstraintCoalition { size: s, features: m });
    }
    Ok((m - 1) as f64 / (binomial(m, s) * s as f64 * (m - s) as f64))
}

/// Column ranges of every source feature of a design matrix.
pub fn group_ranges(m: &DesignMatrix) -> Vec<Range<usize>> {
    m.groups.iter().map(|g| g.range()).collect()
}

/// A coalition design plus background data, reusable across explained rows.
pub struct KernelExplainer<'a> {
    model: &'a TrainedModel,
    groups: Vec<Range<usize>>,
    background: Vec<f64>,
    n_background: usize,
    coalitions: Vec<(Vec<bool>, f64)>,
    /// `AᵀWA` of the reduced system; identical for every explained row.
    gram: Vec<f64>,
}

impl<'a> KernelExplainer<'a> {
    /// `groups` are the design-column ranges that toggle together; a
    /// one-hot block is one group.
    pub fn new(
        model: &'a TrainedModel,
        background: &[Vec<f64>],
        groups: Vec<Range<usize>>,
        cfg: &ShapConfig,
    ) -> Result<KernelExplainer<'a>> {
        if background.is_empty() {
            return Err(Error::EmptyInput);
        }
        for b in background {
            if b.len() != model.n_inputs {
                return Err(Error::LengthMismatch { left: model.n_inputs, right: b.len() });
            }
        }
        let m = groups.len();
        let coalitions = if m <= 1 {
            Vec::new()
        } else if m <= cfg.coalition_enumeration_limit {
            enumerate_coalitions(m)
        } else {
            sample_coalitions(m, cfg.sample_budget, cfg.seed)
        };
        let p = m.saturating_sub(1);
        let mut gram = vec![0.0; p * p];
        for (z, w) in &coalitions {
            let last = f64::from(u8::from(z[m - 1]));
            for a in 0..p {
                let za = f64::from(u8::from(z[a])) - last;
                if za == 0.0 {
                    continue;
                }
                for b in 0..p {
                    gram[a * p + b] += w * za * (f64::from(u8::from(z[b])) - last);
                }
            }
        }
        Ok(KernelExplainer {
            model,
            groups,
            background: background.concat(),
            n_background: background.len(),
            coalitions,
            gram,
        })
    }

    pub fn n_coalitions(&self) -> usize {
        self.coalitions.len()
    }

    /// The scalar being explained: μ for regression, otherwise the
    /// probability of `class`.
    fn output(&self, x: &[f64], class: Option<usize>) -> f64 {
        match self.model.predict_unchecked(x) {
            Prediction::Probs(p) => p[class.unwrap_or(0)],
            Prediction::Gaussian(g) => g.mean,
        }
    }

    /// Mean output over the background with the coalition's groups taken
    /// from `x`.
    pub fn value(&self, mask: &[bool], x: &[f64], class: Option<usize>) -> f64 {
        let d = self.model.n_inputs;
        let mut buf = vec![0.0; d];
        let mut acc = 0.0;
        for b in 0..self.n_background {
            buf.copy_from_slice(&self.background[b * d..(b + 1) * d]);
            for (g, &on) in self.groups.iter().zip(mask) {
                if on {
                    buf[g.clone()].copy_from_slice(&x[g.clone()]);
                }
            }
            acc += self.output(&buf, class);
        }
        acc / self.n_background as f64
    }

    /// The class whose probability is explained at `x` (highest
    /// probability, lowest index on ties).
    pub fn explained_class(&self, x: &[f64]) -> Option<usize> {
        match self.model.predict_unchecked(x) {
            Prediction::Probs(p) => {
                let mut best = 0;
                for (c, v) in p.iter().enumerate() {
                    if *v > p[best] {
                        best = c;
                    }
                }
                Some(best)
            }
            Prediction::Gaussian(_) => None,
        }
    }

    /// SHAP values of `x`, one per group. They sum to `v(full) − v(∅)`.
    pub fn explain(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.model.n_inputs {
            return Err(Error::LengthMismatch { left: self.model.n_inputs, right: x.len() });
        }
        let m = self.groups.len();
        if m == 0 {
            return Ok(Vec::new());
        }
        let class = self.explained_class(x);
        let v_empty = self.value(&vec![false; m], x, class);
        let v_full = self.output(x, class);
        let delta = v_full - v_empty;
        if m == 1 {
            return Ok(vec![delta]);
        }
        let p = m - 1;
        let mut rhs = vec![0.0; p];
        for (z, w) in &self.coalitions {
            let last = f64::from(u8::from(z[m - 1]));
            let target = self.value(z, x, class) - v_empty - last * delta;
            for (a, r) in rhs.iter_mut().enumerate() {
                *r += w * (f64::from(u8::from(z[a])) - last) * target;
            }
        }
        let (mut phi, ridged) = solve_with_ridge(&self.gram, &rhs, p, WLS_RIDGE);
        if ridged {
            tracing::debug!("KernelSHAP system singular; ridge applied");
        }
        let rest: f64 = phi.iter().sum();
        phi.push(delta - rest);
        Ok(phi)
    }
}

/// Every proper non-empty subset with its kernel weight.
fn enumerate_coalitions(m: usize) -> Vec<(Vec<bool>, f64)> {
    (1u64..(1u64 << m) - 1)
        .map(|bits| {
            let z: Vec<bool> = (0..m).map(|j| bits >> j & 1 == 1).collect();
            let s = bits.count_ones() as usize;
            (z, kernel_weight(m, s).expect("proper subset"))
        })
        .collect()
}

/// Paired sampling: coalition sizes drawn in proportion to their total
/// kernel weight, each draw added together with its complement. Repeated
/// coalitions are merged and weighted by their count.
fn sample_coalitions(m: usize, budget: usize, seed: u64) -> Vec<(Vec<bool>, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let size_w: Vec<f64> = (1..m).map(|s| 1.0 / (s * (m - s)) as f64).collect();
    let total: f64 = size_w.iter().sum();
    let mut counts: BTreeMap<Vec<bool>, f64> = BTreeMap::new();
    let mut drawn = 0;
    while drawn < budget {
        let mut u = rng.random::<f64>() * total;
        let mut s = 1;
        for (i, w) in size_w.iter().enumerate() {
            s = i + 1;
            if u < *w {
                break;
            }
            u -= w;
        }
        let mut z = vec![false; m];
        for j in sample(&mut rng, m, s) {
            z[j] = true;
        }
        let complement: Vec<bool> = z.iter().map(|b| !b).collect();
        *counts.entry(z).or_default() += 1.0;
        *counts.entry(complement).or_default() += 1.0;
        drawn += 2;
    }
    counts.into_iter().collect()
}

/// KernelSHAP values of one row against a background set.
pub fn kernel_shap_explain(
    model: &TrainedModel,
    background: &[Vec<f64>],
    x: &[f64],
    groups: Vec<Range<usize>>,
    cfg: &ShapConfig,
) -> Result<Vec<f64>> {
    KernelExplainer::new(model, background, groups, cfg)?.explain(x)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlobalShap {
    /// Mean |φ| per source feature.
    pub values: Vec<f64>,
    /// φ for every explained row, one column per source feature.
    pub matrix: Vec<Vec<f64>>,
    pub explained_rows: Vec<usize>,
}

fn capped_rows(n: usize, cap: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    if n <= cap {
        return (0..n).collect();
    }
    let mut rows = sample(rng, n, cap).into_vec();
    rows.sort_unstable();
    rows
}

/// Explains a seeded subsample of rows and averages |φ| per feature.
pub fn global_shap(model: &TrainedModel, m: &DesignMatrix, cfg: &ShapConfig) -> Result<GlobalShap> {
    if m.n_rows == 0 {
        return Err(Error::EmptyInput);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let explained_rows = capped_rows(m.n_rows, cfg.explained_row_cap, &mut rng);
    let background: Vec<Vec<f64>> =
        capped_rows(m.n_rows, cfg.background_row_cap, &mut rng).into_iter().map(|i| m.row(i).to_vec()).collect();
    let explainer = KernelExplainer::new(model, &background, group_ranges(m), cfg)?;
    let matrix: Vec<Vec<f64>> =
        explained_rows.par_iter().map(|&i| explainer.explain(m.row(i))).collect::<Result<_>>()?;
    let k = m.n_groups();
    let mut values = vec![0.0; k];
    for row in &matrix {
        for (v, phi) in values.iter_mut().zip(row) {
            *v += phi.abs();
        }
    }
    values.iter_mut().for_each(|v| *v /= matrix.len() as f64);
    Ok(GlobalShap { values, matrix, explained_rows })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Perturbation {
    pub shap_error: f64,
    /// Mean absolute deviation from the full-data global SHAP, per fold.
    pub fold_errors: Vec<f64>,
}

/// Drops each of K seeded folds in turn, refits `family` on the rest,
/// recomputes global SHAP there and averages the mean absolute deviation
/// from `full`.
pub fn shap_perturbation_error(
    m: &DesignMatrix,
    family: ModelFamily,
    model_cfg: &ModelConfig,
    cfg: &ShapConfig,
    full: &[f64],
) -> Result<Perturbation> {
    let k = cfg.perturbation_folds;
    if k < 2 {
        return Err(Error::InvalidInput("perturbation_folds must be at least 2".into()));
    }
    let folds = fold_partition(m.n_rows, k, cfg.seed);
    let smallest_rest = folds.iter().map(|f| m.n_rows - f.len()).min().unwrap_or(0);
    if smallest_rest < MIN_PERTURBATION_ROWS {
        return Err(Error::TooSmallForPerturbation { remaining: smallest_rest });
    }
    let fold_errors: Vec<f64> = folds
        .par_iter()
        .map(|drop| {
            let mut dropped = vec![false; m.n_rows];
            drop.iter().for_each(|&i| dropped[i] = true);
            let keep: Vec<usize> = (0..m.n_rows).filter(|&i| !dropped[i]).collect();
            let sub = m.subset(&keep);
            let model = fit_model(family, &sub, model_cfg, cfg.seed)?;
            let g = global_shap(&model, &sub, cfg)?;
            let diff: f64 = g.values.iter().zip(full).map(|(a, b)| (a - b).abs()).sum();
            Ok(diff / full.len().max(1) as f64)
        })
        .collect::<Result<_>>()?;
    let shap_error = fold_errors.iter().sum::<f64>() / k as f64;
    Ok(Perturbation { shap_error, fold_errors })
}

/// Entropy (nats) of the normalised absolute SHAP vector; 0 for an
/// all-zero vector. Clamped into `[0, ln M]`.
///
/// ```
/// use tabinsight::shap_engine::shap_entropy;
/// assert!((shap_entropy(&[1.0, 1.0, 1.0, 1.0]) - 4f64.ln()).abs() < 1e-12);
/// assert_eq!(shap_entropy(&[0.0, 3.0, 0.0]), 0.0);
/// ```
pub fn shap_entropy(global: &[f64]) -> f64 {
    let total: f64 = global.iter().map(|v| v.abs()).sum();
    if total == 0.0 || global.len() < 2 {
        return 0.0;
    }
    let h: f64 = global
        .iter()
        .map(|v| {
            let p = v.abs() / total;
            if p > 0.0 {
                -p * p.ln()
            } else {
                0.0
            }
        })
        .sum();
    h.clamp(0.0, (global.len() as f64).ln())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum CredibilityLevel {
    High,
    Medium,
    Low,
}

impl CredibilityLevel {
    pub fn from_score(score: f64) -> CredibilityLevel {
        if score >= HIGH_CUTOFF {
            CredibilityLevel::High
        } else if score >= MEDIUM_CUTOFF {
            CredibilityLevel::Medium
        } else {
            CredibilityLevel::Low
        }
    }
}

impl fmt::Display for CredibilityLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CredibilityLevel::High => "HIGH",
            CredibilityLevel::Medium => "MEDIUM",
            CredibilityLevel::Low => "LOW",
        })
    }
}

/// Credibility score and level.
///
/// ```
/// use tabinsight::shap_engine::{credibility, CredibilityLevel};
/// assert_eq!(credibility(2.0, 1.0, 0.1), (20.0, CredibilityLevel::High));
/// ```
pub fn credibility(entropy: f64, nll: f64, shap_error: f64) -> (f64, CredibilityLevel) {
    let score = entropy / (nll.abs().max(SCORE_DELTA) * shap_error.abs().max(SCORE_DELTA));
    (score, CredibilityLevel::from_score(score))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapAnalysis {
    pub target_name: String,
    pub model: ModelReport,
    pub predictors: Vec<String>,
    pub global_shap: Vec<f64>,
    pub shap_matrix: Vec<Vec<f64>>,
    pub explained_rows: Vec<usize>,
    pub entropy: f64,
    pub shap_error: f64,
    pub fold_errors: Vec<f64>,
    pub model_nll: f64,
    pub credibility_score: f64,
    pub credibility_level: CredibilityLevel,
    pub interpretation: String,
}

impl ShapAnalysis {
    /// `(feature, global SHAP)` sorted by decreasing importance, ties by
    /// name.
    pub fn ranked_features(&self) -> Vec<(&str, f64)> {
        let mut v: Vec<(&str, f64)> =
            self.predictors.iter().map(String::as_str).zip(self.global_shap.iter().copied()).collect();
        v.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        v
    }

    fn interpretation_request(&self) -> LlmRequest {
        let top: Vec<_> = self
            .ranked_features()
            .into_iter()
            .take(TOP_FEATURES)
            .map(|(f, v)| json!({ "feature": f, "global_shap": v }))
            .collect();
        LlmRequest::new(
            PromptKind::ShapInterpretation,
            json!({
                "target": self.target_name,
                "top_features": top,
                "entropy": self.entropy,
                "shap_error": self.shap_error,
                "nll": self.model_nll,
            }),
        )
    }
}

/// Model selection, explanation and scoring for one target, without the
/// LLM interpretation.
pub fn analyze_target_numeric(
    table: &FeatureTable,
    target: &str,
    model_cfg: &ModelConfig,
    cfg: &ShapConfig,
) -> Result<ShapAnalysis> {
    let m = build_design_matrix(table, target)?;
    let report = select_best_on_matrix(&m, model_cfg, cfg.seed)?;
    let global = global_shap(&report.final_model, &m, cfg)?;
    let pert = shap_perturbation_error(&m, report.best_family, model_cfg, cfg, &global.values)?;
    let entropy = shap_entropy(&global.values);
    let (score, level) = credibility(entropy, report.best_nll, pert.shap_error);
    Ok(ShapAnalysis {
        target_name: target.to_string(),
        model_nll: report.best_nll,
        model: report,
        predictors: m.groups.iter().map(|g| g.source.clone()).collect(),
        global_shap: global.values,
        shap_matrix: global.matrix,
        explained_rows: global.explained_rows,
        entropy,
        shap_error: pert.shap_error,
        fold_errors: pert.fold_errors,
        credibility_score: score,
        credibility_level: level,
        interpretation: String::new(),
    })
}

/// Full analysis of one target including its LLM interpretation.
pub fn analyze_target(
    table: &FeatureTable,
    target: &str,
    llm: &LlmClient,
    model_cfg: &ModelConfig,
    cfg: &ShapConfig,
) -> Result<ShapAnalysis> {
    let mut a = analyze_target_numeric(table, target, model_cfg, cfg)?;
    let req = a.interpretation_request();
    a.interpretation = llm.chat(req.kind, &req.context).unwrap_or_else(|e| {
        tracing::warn!(error = %e, "SHAP interpretation failed");
        PLACEHOLDER_DESCRIPTION.to_string()
    });
    Ok(a)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkippedTarget {
    pub name: String,
    pub reason: String,
}

/// Analyses every non-synthetic feature as a target in parallel. Returns
/// the analyses ranked by descending score (ties by name) and the targets
/// that could not be modelled.
pub fn analyze_all_targets(
    table: &FeatureTable,
    llm: &LlmClient,
    model_cfg: &ModelConfig,
    cfg: &ShapConfig,
) -> (Vec<ShapAnalysis>, Vec<SkippedTarget>) {
    let targets: Vec<&str> = table.features.iter().filter(|f| !f.synthetic).map(|f| f.name.as_str()).collect();
    let outcomes: Vec<(&str, Result<ShapAnalysis>)> =
        targets.par_iter().map(|&t| (t, analyze_target_numeric(table, t, model_cfg, cfg))).collect();
    let mut analyses = Vec::new();
    let mut skipped = Vec::new();
    for (name, outcome) in outcomes {
        match outcome {
            Ok(a) => analyses.push(a),
            Err(e) => {
                tracing::warn!(target = name, error = %e, "target skipped");
                skipped.push(SkippedTarget { name: name.to_string(), reason: e.to_string() });
            }
        }
    }
    let requests: Vec<LlmRequest> = analyses.iter().map(ShapAnalysis::interpretation_request).collect();
    for (a, answer) in analyses.iter_mut().zip(llm.chat_batch(&requests)) {
        a.interpretation = match answer {
            Ok(text) => text.trim().to_string(),
            Err(e) => {
                tracing::warn!(error = %e, "SHAP interpretation failed");
                PLACEHOLDER_DESCRIPTION.to_string()
            }
        };
    }
    rank_by_credibility(&mut analyses);
    (analyses, skipped)
}

pub fn rank_by_credibility(analyses: &mut [ShapAnalysis]) {
    analyses.sort_by(|a, b| {
        b.credibility_score.total_cmp(&a.credibility_score).then_with(|| a.target_name.cmp(&b.target_name))
    });
}
