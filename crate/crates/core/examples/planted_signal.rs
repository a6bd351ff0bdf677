//! Runs the full analysis on a synthetic table with planted relationships
//! and prints the report. `cargo run --release --example planted_signal`

use tabinsight::llm_gateway::LlmClient;
use tabinsight::pipeline::{analyze_table, timestamp_now, AnalysisConfig};
use tabinsight::synthetic::planted_signal_csv;
use tabinsight::table_ingest::parse_csv;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let csv = planted_signal_csv(1000, 42);
    let raw = parse_csv(csv.as_bytes(), "planted.csv")?;
    let report = analyze_table(&raw, &AnalysisConfig::default(), &LlmClient::mock(), timestamp_now())?;
    print!("{}", report.render());
    Ok(())
}
