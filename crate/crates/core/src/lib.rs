//! Automated insight mining for tabular data.
//!
//! A CSV table goes through three stages. Features are typed, cleaned and
//! summarised. Every ordered pair of features is tested for association.
//! Then every feature is predicted from the others by the best of several
//! model families, and the SHAP attributions of that model are scored for
//! credibility. An LLM, or a deterministic stand-in, writes the prose.
//!
//! ```
//! use tabinsight::llm_gateway::LlmClient;
//! use tabinsight::pipeline::{analyze_table, AnalysisConfig};
//! use tabinsight::table_ingest::parse_csv;
//!
//! let mut csv = String::from("hours,score,group\n");
//! for i in 0..40 {
//!     csv += &format!("{},{},{}\n", i % 10, 2 * (i % 10) + i % 3, ["a", "b"][i % 2]);
//! }
//! let raw = parse_csv(csv.as_bytes(), "study.csv").unwrap();
//! let report = analyze_table(&raw, &AnalysisConfig::default(), &LlmClient::mock(), "now".into()).unwrap();
//! assert!(report.render().contains("score"));
//! ```
//!
//! The guide in `book/` covers each stage in more depth.

pub mod error;
pub mod feature_profile;
pub mod linalg;
pub mod llm_gateway;
pub mod model_zoo;
pub mod pairwise_stats;
pub mod pipeline;
pub mod report_builder;
mod serde_float;
pub mod shap_engine;
pub mod special;
pub mod synthetic;
pub mod table_ingest;

pub use error::{Error, Result};

// Compiles and runs the code blocks of the guide as doc-tests.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/ingest.md")]
    mod ingest {}
    #[doc = include_str!("../../../book/src/profiling.md")]
    mod profiling {}
    #[doc = include_str!("../../../book/src/pairwise.md")]
    mod pairwise {}
    #[doc = include_str!("../../../book/src/models.md")]
    mod models {}
    #[doc = include_str!("../../../book/src/credibility.md")]
    mod credibility {}
    #[doc = include_str!("../../../book/src/llm.md")]
    mod llm {}
    #[doc = include_str!("../../../book/src/reports.md")]
    mod reports {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
