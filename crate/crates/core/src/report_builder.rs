//! Report assembly and rendering, the on-disk result cache, and question
//! answering over a cached report.

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::feature_profile::{type_label, ClusterOutcome, FeatureStats};
use crate::llm_gateway::{render, LlmClient, LlmError, LlmRequest, PromptKind};
use crate::pairwise_stats::{PairwiseRelation, SignificanceThresholds};
use crate::shap_engine::{
    rank_by_credibility, CredibilityLevel, ShapAnalysis, SkippedTarget, HIGH_CUTOFF, MEDIUM_CUTOFF,
};
use crate::table_ingest::{DroppedColumn, Feature};

pub const REPORT_WIDTH: usize = 80;
const WRAP_WIDTH: usize = 100;
/// Prefix of the only line that varies between otherwise identical runs.
pub const TIMESTAMP_PREFIX: &str = "Generated: ";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportMeta {
    pub source_name: String,
    pub dataset_description: String,
    pub n_rows: usize,
    pub dropped_columns: Vec<DroppedColumn>,
    pub cluster: Option<ClusterOutcome>,
}

/// What the report shows about one feature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSummary {
    pub name: String,
    pub type_label: String,
    pub description: String,
    pub stats: Option<FeatureStats>,
    /// `(label, code)` in code order; empty for continuous features.
    pub category_mapping: Vec<(String, u32)>,
    pub missing_imputed: usize,
    pub outliers_clipped: usize,
    pub synthetic: bool,
}

impl FeatureSummary {
    pub fn new(feature: &Feature, stats: Option<FeatureStats>) -> FeatureSummary {
        FeatureSummary {
            name: feature.name.clone(),
            type_label: type_label(feature).to_string(),
            description: feature.description.clone(),
            stats,
            category_mapping: feature.category_mapping().into_iter().map(|(l, c)| (l.to_string(), c)).collect(),
            missing_imputed: feature.missing_imputed,
            outliers_clipped: feature.outliers_clipped,
            synthetic: feature.synthetic,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InsightReport {
    pub generated_at: String,
    pub meta: ReportMeta,
    pub features: Vec<FeatureSummary>,
    /// Significant relations first, then by (source, target).
    pub relations: Vec<PairwiseRelation>,
    pub thresholds: SignificanceThresholds,
    /// Descending credibility score.
    pub analyses: Vec<ShapAnalysis>,
    pub skipped: Vec<SkippedTarget>,
}

fn rule(c: char) -> String {
    std::iter::repeat_n(c, REPORT_WIDTH).collect()
}

fn banner(out: &mut String, title: &str) {
    let eq = rule('=');
    let _ = write!(out, "{eq}\n{title}\n{eq}\n\n");
}

/// Greedy word wrap; every output line starts with `indent`.
fn wrap(text: &str, indent: &str) -> String {
    let mut out = String::new();
    for paragraph in text.lines() {
        let mut line = String::from(indent);
        for word in paragraph.split_whitespace() {
            if line.len() > indent.len() && line.len() + 1 + word.len() > WRAP_WIDTH {
                out.push_str(line.trim_end());
                out.push('\n');
                line = String::from(indent);
            }
            if line.len() > indent.len() {
                line.push(' ');
            }
            line.push_str(word);
        }
        out.push_str(line.trim_end());
        out.push('\n');
    }
    if out.is_empty() {
        out.push_str(indent.trim_end());
        out.push('\n');
    }
    out
}

fn num(v: f64) -> String {
    format!("{v:.4}")
}

impl InsightReport {
    /// Orders relations and analyses as the report presents them.
    pub fn assemble(
        generated_at: String,
        meta: ReportMeta,
        features: Vec<FeatureSummary>,
        mut relations: Vec<PairwiseRelation>,
        thresholds: SignificanceThresholds,
        mut analyses: Vec<ShapAnalysis>,
        skipped: Vec<SkippedTarget>,
    ) -> InsightReport {
        relations.sort_by(|a, b| {
            b.significant.cmp(&a.significant).then_with(|| (&a.source, &a.target).cmp(&(&b.source, &b.target)))
        });
        rank_by_credibility(&mut analyses);
        InsightReport { generated_at, meta, features, relations, thresholds, analyses, skipped }
    }

    pub fn n_significant(&self) -> usize {
        self.relations.iter().filter(|r| r.significant).count()
    }

    /// `(High, Medium, Low)` counts.
    pub fn level_counts(&self) -> (usize, usize, usize) {
        let count = |l| self.analyses.iter().filter(|a| a.credibility_level == l).count();
        (count(CredibilityLevel::High), count(CredibilityLevel::Medium), count(CredibilityLevel::Low))
    }

    /// Plain-text report. Identical inputs give identical text apart from
    /// the line starting with [`TIMESTAMP_PREFIX`].
    pub fn render(&self) -> String {
        let mut out = String::new();
        banner(&mut out, "TABINSIGHT ANALYSIS REPORT");
        let m = &self.meta;
        let _ = writeln!(out, "{TIMESTAMP_PREFIX}{}", self.generated_at);
        let _ = writeln!(out, "Source: {}", m.source_name);
        out.push('\n');
        let _ = writeln!(out, "Dataset: {}", m.dataset_description);
        let _ = writeln!(out, "Number of features analyzed: {}", self.features.len());
        let _ = writeln!(out, "Data shape: ({}, {})", m.n_rows, self.features.len());
        if !m.dropped_columns.is_empty() {
            out.push_str("Dropped columns:\n");
            for d in &m.dropped_columns {
                let _ = writeln!(out, "  - {}: {}", d.name, d.reason);
            }
        }
        match &m.cluster {
            Some(ClusterOutcome::Appended { n_clusters, n_noise, quality }) => {
                let _ = writeln!(
                    out,
                    "Cluster feature: {n_clusters} clusters, {n_noise} noise rows, quality {}",
                    num(*quality)
                );
            }
            Some(ClusterOutcome::Discarded { reason }) => {
                let _ = writeln!(out, "Cluster feature: discarded ({reason})");
            }
            None => {}
        }
        out.push('\n');
        self.render_features(&mut out);
        self.render_relations(&mut out);
        self.render_credibility(&mut out);
        out
    }

    fn render_features(&self, out: &mut String) {
        banner(out, "1. INDIVIDUAL FEATURE STATISTICS");
        for f in &self.features {
            let _ = writeln!(out, "[Feature: {}]", f.name);
            let _ = writeln!(out, "  Type: {}", f.type_label);
            out.push_str(&wrap(&format!("Description: {}", f.description), "  "));
            if f.missing_imputed > 0 || f.outliers_clipped > 0 {
                let _ = writeln!(
                    out,
                    "  Cleaning: {} missing imputed, {} outliers clipped",
                    f.missing_imputed, f.outliers_clipped
                );
            }
            out.push_str("  Statistics:\n");
            match &f.stats {
                Some(FeatureStats::Continuous(s)) => {
                    let _ = writeln!(out, "    - Mean: {}", num(s.mean));
                    let _ = writeln!(out, "    - Median: {}", num(s.median));
                    let _ = writeln!(out, "    - Std: {}", num(s.std));
                    let _ = writeln!(out, "    - Range: [{}, {}]", num(s.min), num(s.max));
                    let _ = writeln!(out, "    - IQR: [{}, {}]", num(s.q1), num(s.q3));
                    let _ = writeln!(out, "    - Variance: {}", num(s.variance));
                }
                Some(FeatureStats::Discrete(s)) => {
                    let _ = writeln!(out, "    - Number of categories: {}", s.n_categories);
                    out.push_str("    - Category frequency:\n");
                    for (code, count, p) in s.ranked() {
                        let _ = writeln!(out, "      {code}: {count} ({:.2}%)", p * 100.0);
                    }
                    let mapping: Vec<String> =
                        f.category_mapping.iter().map(|(l, c)| format!("'{}': {c}", l.replace('\'', "\\'"))).collect();
                    let _ = writeln!(out, "    - Category mapping: {{{}}}", mapping.join(", "));
                }
                None => out.push_str("    - unavailable\n"),
            }
            out.push('\n');
        }
    }

    fn render_relations(&self, out: &mut String) {
        banner(out, "2. FEATURE-TO-FEATURE RELATIONSHIPS");
        let total = self.relations.len();
        let sig = self.n_significant();
        let uncomputable = self.relations.iter().filter(|r| r.metrics.is_none()).count();
        out.push_str("Relationship Summary:\n");
        let _ = writeln!(out, "  Total relationships analyzed: {total}");
        let _ = writeln!(out, "  Significant (above threshold): {sig}");
        let _ = writeln!(out, "  Non-significant (below threshold): {}", total - sig);
        if uncomputable > 0 {
            let _ = writeln!(out, "  Not computable (counted as non-significant): {uncomputable}");
        }
        let t = &self.thresholds;
        out.push_str("\nSignificance Thresholds Used:\n");
        out.push_str("  Continuous-Continuous:\n");
        let _ = writeln!(out, "    - |Pearson r| >= {}", t.pearson_abs);
        let _ = writeln!(out, "    - |Spearman r| >= {}", t.spearman_abs);
        let _ = writeln!(out, "    - Mutual Info >= {}", t.mi_cc);
        out.push_str("  Continuous-Discrete / Discrete-Continuous:\n");
        let _ = writeln!(out, "    - ANOVA p < {}", t.anova_p);
        let _ = writeln!(out, "    - eta^2 >= {}", t.eta_sq);
        out.push_str("  Discrete-Discrete:\n");
        let _ = writeln!(out, "    - Chi^2 p < {}", t.chi2_p);
        let _ = writeln!(out, "    - Cramer's V >= {}", t.cramers_v);
        out.push('\n');
        let dash = rule('-');
        let _ = write!(out, "{dash}\nSIGNIFICANT RELATIONSHIPS (n={sig})\n{dash}\n\n");
        for (i, r) in self.relations.iter().filter(|r| r.significant).enumerate() {
            let _ = writeln!(out, "{}. {} -> {} [SIGNIFICANT]", i + 1, r.source, r.target);
            out.push_str(&wrap(&format!("Description: {}", r.description), "   "));
            let stats: Vec<String> =
                r.metrics.iter().flat_map(|m| m.named()).map(|(k, v)| format!("{k}={}", num(v))).collect();
            let _ = writeln!(out, "   Statistics: {}", stats.join(", "));
            out.push('\n');
        }
    }

    fn render_credibility(&self, out: &mut String) {
        banner(out, "3. COMPLEX RELATIONSHIP CREDIBILITY SCORES");
        out.push_str("Credibility Score Formula: Score = H / (|NLL| * |SHAP-Error|)\n");
        out.push_str("  H: SHAP Entropy (higher = more evenly spread importance)\n");
        out.push_str("  NLL: Cross-validated model negative log-likelihood (lower = better fit)\n");
        out.push_str("  SHAP-Error: K-fold stability (lower = more stable)\n\n");
        out.push_str("Credibility Level Thresholds:\n");
        let _ = writeln!(out, "  HIGH:   Score >= {HIGH_CUTOFF:.1}");
        let _ = writeln!(out, "  MEDIUM: {MEDIUM_CUTOFF:.1} <= Score < {HIGH_CUTOFF:.1}");
        let _ = writeln!(out, "  LOW:    Score < {MEDIUM_CUTOFF:.1}\n");
        let (h, me, l) = self.level_counts();
        out.push_str("Features by Credibility Level:\n");
        let _ = writeln!(out, "  HIGH:   {h} features");
        let _ = writeln!(out, "  MEDIUM: {me} features");
        let _ = writeln!(out, "  LOW:    {l} features\n");
        out.push_str("All Features Ranked by Credibility Score:\n\n");
        let _ = writeln!(
            out,
            "{:<6} {:<25} {:<12} {:<10} {:<10} {:<10} {:<12}",
            "Rank", "Feature", "Score", "Level", "H", "NLL", "SHAP-Err"
        );
        let _ = writeln!(
            out,
            "{} {} {} {} {} {} {}",
            "-".repeat(6),
            "-".repeat(25),
            "-".repeat(12),
            "-".repeat(10),
            "-".repeat(10),
            "-".repeat(10),
            "-".repeat(12)
        );
        for (i, a) in self.analyses.iter().enumerate() {
            let line = format!(
                "{:<6} {:<25} {:<12} {:<10} {:<10} {:<10} {:<12}",
                i + 1,
                a.target_name,
                num(a.credibility_score),
                a.credibility_level.to_string(),
                num(a.entropy),
                num(a.model_nll),
                num(a.shap_error)
            );
            let _ = writeln!(out, "{}", line.trim_end());
        }
        if !self.skipped.is_empty() {
            out.push_str("\nSkipped targets:\n");
            for s in &self.skipped {
                let _ = writeln!(out, "  - {}: {}", s.name, s.reason);
            }
        }
        let _ = write!(out, "\n\nDetailed SHAP Analysis for Each Feature:\n{}\n\n", rule('-'));
        for (i, a) in self.analyses.iter().enumerate() {
            let _ = writeln!(
                out,
                "[{}] {} (Credibility: {}, Score: {})",
                i + 1,
                a.target_name,
                a.credibility_level,
                num(a.credibility_score)
            );
            let _ = writeln!(out, "  SHAP Entropy: {}", num(a.entropy));
            let _ = writeln!(out, "  K-Fold Stability Error: {}", num(a.shap_error));
            let _ = writeln!(
                out,
                "  Model: {} (NLL: {})",
                a.model.best_family.display_name(a.model.task),
                num(a.model_nll)
            );
            out.push_str("  All predictor features ranked by SHAP importance:\n");
            for (f, v) in a.ranked_features() {
                let _ = writeln!(out, "    - {f}: {}", num(v));
            }
            out.push_str("  LLM Interpretation:\n");
            out.push_str(&wrap(&a.interpretation, "    "));
            out.push_str("\n\n");
        }
    }
}

/// The report text without its timestamp line.
pub fn report_body(text: &str) -> String {
    text.lines().filter(|l| !l.starts_with(TIMESTAMP_PREFIX)).collect::<Vec<_>>().join("\n")
}

/// Hex SHA-256 of the JSON form of whatever configuration shapes results.
pub fn config_digest<T: Serialize>(cfg: &T) -> Result<String> {
    let bytes = serde_json::to_vec(cfg)?;
    let digest = Sha256::digest(&bytes);
    Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheEntry {
    pub table_name: String,
    pub content_hash: String,
    pub config_digest: String,
    pub report_text: String,
    pub report: InsightReport,
    pub created_at: String,
}

/// Cache file for a table: sanitised name plus a hash prefix.
pub fn cache_path(dir: &Path, table_name: &str, content_hash: &str) -> PathBuf {
    let base: String = Path::new(table_name)
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| table_name.to_string())
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' || c == '.' { c } else { '_' })
        .collect();
    let prefix: String = content_hash.chars().take(16).collect();
    dir.join(format!("{base}-{prefix}.json"))
}

/// Writes the entry atomically (temp file then rename) and returns its path.
pub fn cache_store(dir: &Path, entry: &CacheEntry) -> Result<PathBuf> {
    fs::create_dir_all(dir)?;
    let path = cache_path(dir, &entry.table_name, &entry.content_hash);
    let tmp = path.with_extension(format!("json.tmp{}", std::process::id()));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(&serde_json::to_vec(entry)?)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, &path)?;
    Ok(path)
}

/// Returns the cached entry only when name, content hash and config digest
/// all match. Unreadable or corrupt files count as a miss.
pub fn cache_load(dir: &Path, table_name: &str, content_hash: &str, config_digest: &str) -> Option<CacheEntry> {
    let path = cache_path(dir, table_name, content_hash);
    let bytes = match fs::read(&path) {
        Ok(b) => b,
        Err(e) => {
            if e.kind() != std::io::ErrorKind::NotFound {
                tracing::warn!(path = %path.display(), error = %e, "cache unreadable");
            }
            return None;
        }
    };
    let entry: CacheEntry = match serde_json::from_slice(&bytes) {
        Ok(e) => e,
        Err(e) => {
            tracing::warn!(path = %path.display(), error = %e, "corrupt cache entry ignored");
            return None;
        }
    };
    (entry.table_name == table_name && entry.content_hash == content_hash && entry.config_digest == config_digest)
        .then_some(entry)
}

fn chunk_context(question: &str, chunk: &str, index: &str, count: &str) -> serde_json::Value {
    json!({ "question": question, "report_chunk": chunk, "chunk_index": index, "chunk_count": count })
}

/// Splits `text` into pieces of at most `budget` characters, cutting only
/// at line ends unless a single line is longer than the budget. The
/// pieces concatenate back to `text`.
pub fn chunk_report(text: &str, budget: usize) -> Vec<String> {
    let budget = budget.max(1);
    let mut chunks = Vec::new();
    let mut current = String::new();
    let mut current_len = 0;
    for line in text.split_inclusive('\n') {
        let len = line.chars().count();
        if current_len + len > budget && current_len > 0 {
            chunks.push(std::mem::take(&mut current));
            current_len = 0;
        }
        if len > budget {
            let chars: Vec<char> = line.chars().collect();
            for piece in chars.chunks(budget) {
                if current_len > 0 {
                    chunks.push(std::mem::take(&mut current));
                }
                current = piece.iter().collect();
                current_len = piece.len();
            }
            continue;
        }
        current.push_str(line);
        current_len += len;
    }
    if current_len > 0 {
        chunks.push(current);
    }
    chunks
}

/// Answers `question` from a report. A report that fits the prompt budget
/// takes one call; a longer one is split into line-aligned chunks that are
/// asked in parallel and then combined by one reduce call.
pub fn answer_question(report_text: &str, question: &str, llm: &LlmClient) -> Result<String> {
    let budget = llm.config().context_char_budget;
    let single = chunk_context(question, report_text, "1", "1");
    if render(PromptKind::QaChunk, &single).char_len() <= budget {
        return Ok(llm.chat(PromptKind::QaChunk, &single)?);
    }
    let overhead = render(PromptKind::QaChunk, &chunk_context(question, "", "999999", "999999")).char_len();
    if overhead >= budget {
        return Err(LlmError::PromptTooLarge { len: overhead, budget }.into());
    }
    let chunks = chunk_report(report_text, budget - overhead);
    let count = chunks.len().to_string();
    let requests: Vec<LlmRequest> = chunks
        .iter()
        .enumerate()
        .map(|(i, c)| LlmRequest::new(PromptKind::QaChunk, chunk_context(question, c, &(i + 1).to_string(), &count)))
        .collect();
    let results = llm.chat_batch(&requests);
    let partial: Vec<String> = results.iter().filter_map(|r| r.as_ref().ok().cloned()).collect();
    if partial.is_empty() {
        return Err(Error::QaUnavailable);
    }
    let failed = results.len() - partial.len();
    let answer = llm.chat(PromptKind::QaReduce, &json!({ "question": question, "partial_answers": partial }))?;
    if failed > 0 {
        return Ok(format!(
            "{}\n(Note: {failed} of {} report parts could not be processed; this answer may be incomplete.)",
            answer.trim_end(),
            results.len()
        ));
    }
    Ok(answer)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn empty_report() -> InsightReport {
        InsightReport::assemble(
            "2026-01-01 00:00:00".into(),
            ReportMeta {
                source_name: "t.csv".into(),
                dataset_description: "Test table".into(),
                n_rows: 3,
                dropped_columns: Vec::new(),
                cluster: None,
            },
            Vec::new(),
            Vec::new(),
            SignificanceThresholds::default(),
            Vec::new(),
            Vec::new(),
        )
    }

    #[test]
    fn empty_relations_render() {
        let text = empty_report().render();
        assert!(text.contains("Significant (above threshold): 0"));
        assert!(text.lines().all(|l| !l.starts_with('=') || l.len() == REPORT_WIDTH));
    }

    #[test]
    fn body_excludes_timestamp() {
        let mut a = empty_report();
        let t1 = a.render();
        a.generated_at = "2030-05-05 12:00:00".into();
        assert_ne!(t1, a.render());
        assert_eq!(report_body(&t1), report_body(&a.render()));
    }

    #[test]
    fn chunks_reassemble() {
        let text = "alpha\nbeta\ngamma delta\n\nepsilon";
        for budget in 1..20 {
            let chunks = chunk_report(text, budget);
            assert_eq!(chunks.concat(), text);
            assert!(chunks.iter().all(|c| c.chars().count() <= budget));
        }
        // line-aligned whenever lines fit
        assert_eq!(chunk_report("aa\nbb\ncc\n", 6), ["aa\nbb\n", "cc\n"]);
    }

    #[test]
    fn cache_round_trip_and_corruption() {
        let dir = tempfile::tempdir().unwrap();
        let report = empty_report();
        let entry = CacheEntry {
            table_name: "t.csv".into(),
            content_hash: "ab".repeat(32),
            config_digest: "cd".into(),
            report_text: report.render(),
            report,
            created_at: "now".into(),
        };
        let path = cache_store(dir.path(), &entry).unwrap();
        assert_eq!(cache_load(dir.path(), "t.csv", &entry.content_hash, "cd"), Some(entry.clone()));
        assert_eq!(cache_load(dir.path(), "t.csv", &"ef".repeat(32), "cd"), None);
        assert_eq!(cache_load(dir.path(), "t.csv", &entry.content_hash, "other"), None);
        let bytes = fs::read(&path).unwrap();
        fs::write(&path, &bytes[..bytes.len() / 2]).unwrap();
        assert_eq!(cache_load(dir.path(), "t.csv", &entry.content_hash, "cd"), None);
    }

    #[test]
    fn cache_file_names_are_sanitised() {
        let p = cache_path(Path::new("/c"), "dir/my data?.csv", "0123456789abcdef0123");
        assert_eq!(p, Path::new("/c/my_data_.csv-0123456789abcdef.json"));
    }

    #[test]
    fn short_report_single_call() {
        let llm = LlmClient::mock();
        let a = answer_question("line one\nline two\n", "What?", &llm).unwrap();
        assert!(a.contains("What?"));
    }
}
