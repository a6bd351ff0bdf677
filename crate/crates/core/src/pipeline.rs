//! End-to-end analysis: feature preparation, pairwise statistics, then
//! per-target modelling and explanation, assembled into one report.
//!
//! Each stage finishes before the next one starts; parallelism lives inside
//! the stages and never changes their output.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::feature_profile::{cluster_feature, describe_features, summarize, ClusterConfig, FeatureStats};
use crate::llm_gateway::{LlmClient, LlmConfig};
use crate::model_zoo::ModelConfig;
use crate::pairwise_stats::{analyze_all_pairs, SignificanceThresholds};
use crate::report_builder::{config_digest, FeatureSummary, InsightReport, ReportMeta};
use crate::shap_engine::{analyze_all_targets, ShapConfig};
use crate::table_ingest::{encode_features, infer_feature_types, CleaningPolicy, FeatureTable, RawTable};

/// Every setting that influences analysis results.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AnalysisConfig {
    /// Drives fold assignment, model initialisation and SHAP sampling.
    /// Overrides `shap.seed`.
    pub seed: u64,
    pub cleaning: CleaningPolicy,
    pub thresholds: SignificanceThresholds,
    pub cluster: ClusterConfig,
    pub shap: ShapConfig,
    pub model: ModelConfig,
    /// Replaces the generated one-line dataset description.
    pub dataset_description: Option<String>,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        AnalysisConfig {
            seed: 42,
            cleaning: CleaningPolicy::default(),
            thresholds: SignificanceThresholds::default(),
            cluster: ClusterConfig::default(),
            shap: ShapConfig::default(),
            model: ModelConfig::default(),
            dataset_description: None,
        }
    }
}

impl AnalysisConfig {
    pub fn validate(&self) -> Result<()> {
        self.cleaning.validate()?;
        self.shap.validate()?;
        self.model.validate()?;
        if self.cluster.min_cluster_size < 2 {
            return Err(Error::InvalidInput("min_cluster_size must be at least 2".into()));
        }
        Ok(())
    }

    pub fn effective_shap(&self) -> ShapConfig {
        ShapConfig { seed: self.seed, ..self.shap }
    }

    /// Cache key component. Covers the analysis settings plus the parts of
    /// the LLM configuration that change generated text, but not the
    /// endpoint, credentials, timeouts or concurrency.
    pub fn digest(&self, llm: &LlmConfig) -> Result<String> {
        #[derive(Serialize)]
        struct Keyed<'a> {
            analysis: &'a AnalysisConfig,
            model_name: &'a str,
            temperature: f64,
            mock_mode: bool,
        }
        config_digest(&Keyed {
            analysis: self,
            model_name: &llm.model_name,
            temperature: llm.temperature,
            mock_mode: llm.mock_mode,
        })
    }
}

/// Stage 1: typing, cleaning, cluster feature, summaries and descriptions.
pub fn prepare_features(
    raw: &RawTable,
    cfg: &AnalysisConfig,
    llm: &LlmClient,
) -> Result<(FeatureTable, Vec<FeatureStats>, crate::feature_profile::ClusterOutcome)> {
    if raw.n_rows() == 0 {
        return Err(Error::EmptyInput);
    }
    tracing::info!(rows = raw.n_rows(), columns = raw.n_cols(), "stage 1: feature preparation");
    let kinds = infer_feature_types(raw, llm);
    let mut table = encode_features(raw, &kinds, &cfg.cleaning)?;
    if table.features.is_empty() {
        return Err(Error::InvalidInput("no analysable columns remain after cleaning".into()));
    }
    if let Some(d) = &cfg.dataset_description {
        table.dataset_description = d.clone();
    }
    let (mut table, outcome) = cluster_feature(&table, &cfg.cluster);
    let stats: Vec<FeatureStats> = table.features.par_iter().map(summarize).collect::<Result<_>>()?;
    describe_features(&mut table, &stats, llm);
    Ok((table, stats, outcome))
}

/// Runs all three stages and assembles the report.
pub fn analyze_table(
    raw: &RawTable,
    cfg: &AnalysisConfig,
    llm: &LlmClient,
    generated_at: String,
) -> Result<InsightReport> {
    cfg.validate()?;
    let (table, stats, cluster) = prepare_features(raw, cfg, llm)?;

    tracing::info!(features = table.features.len(), "stage 2: pairwise statistics");
    let relations =
        if table.features.len() >= 2 { analyze_all_pairs(&table, &cfg.thresholds, llm)? } else { Vec::new() };

    tracing::info!("stage 3: modelling and explanation");
    let (analyses, skipped) = analyze_all_targets(&table, llm, &cfg.model, &cfg.effective_shap());

    let features = table.features.iter().zip(stats).map(|(f, s)| FeatureSummary::new(f, Some(s))).collect();
    Ok(InsightReport::assemble(
        generated_at,
        ReportMeta {
            source_name: raw.source_name.clone(),
            dataset_description: table.dataset_description.clone(),
            n_rows: table.n_rows,
            dropped_columns: table.dropped_columns.clone(),
            cluster: Some(cluster),
        },
        features,
        relations,
        cfg.thresholds,
        analyses,
        skipped,
    ))
}

/// Local time formatted for the report header.
pub fn timestamp_now() -> String {
    chrono::Local::now().format("%Y-%m-%d %H:%M:%S").to_string()
}
