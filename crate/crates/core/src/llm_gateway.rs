//! The single boundary for LLM traffic.
//!
//! [`LlmClient`] speaks the OpenAI-compatible chat-completions wire shape
//! (`POST {endpoint}/chat/completions`), renders one template per
//! [`PromptKind`], retries transport failures and 5xx answers with
//! exponential backoff, and runs batches with bounded concurrency. In mock
//! mode every answer is a deterministic template fill and no socket is ever
//! opened.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

/// Environment variable consulted when no API key is configured.
pub const API_KEY_ENV: &str = "TABINSIGHT_API_KEY";

/// Text used wherever an LLM-generated description could not be obtained.
pub const PLACEHOLDER_DESCRIPTION: &str = "(description unavailable)";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LlmError {
    #[error("LLM transport error after {attempts} attempt(s): {message}")]
    Transport { attempts: usize, message: String },
    #[error("LLM endpoint returned HTTP {status}: {body}")]
    Status { status: u16, body: String },
    #[error("prompt too large: {len} chars exceeds budget of {budget}")]
    PromptTooLarge { len: usize, budget: usize },
    #[error("invalid LLM response: {0}")]
    InvalidResponse(String),
    #[error("{0}")]
    Responder(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LlmConfig {
    pub endpoint_url: String,
    pub model_name: String,
    #[serde(skip_serializing)]
    pub api_key: Option<String>,
    pub timeout_secs: u64,
    pub max_retries: usize,
    pub max_concurrency: usize,
    pub temperature: f64,
    pub mock_mode: bool,
    pub context_char_budget: usize,
    /// First retry delay; doubles per attempt.
    pub retry_backoff_ms: u64,
}

impl Default for LlmConfig {
    fn default() -> Self {
        LlmConfig {
            endpoint_url: "http://localhost:8000/v1".into(),
            model_name: "Qwen3-8B".into(),
            api_key: None,
            timeout_secs: 60,
            max_retries: 2,
            max_concurrency: 8,
            temperature: 0.0,
            mock_mode: false,
            context_char_budget: 24_000,
            retry_backoff_ms: 500,
        }
    }
}

impl LlmConfig {
    pub fn mock() -> LlmConfig {
        LlmConfig { mock_mode: true, ..Default::default() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PromptKind {
    TypeInference,
    FeatureDescription,
    RelationDescription,
    ShapInterpretation,
    QaChunk,
    QaReduce,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LlmRequest {
    pub kind: PromptKind,
    pub context: Value,
}

impl LlmRequest {
    pub fn new(kind: PromptKind, context: Value) -> LlmRequest {
        LlmRequest { kind, context }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RenderedPrompt {
    pub system: String,
    pub user: String,
}

impl RenderedPrompt {
    /// Length in characters, the unit of the context budget.
    pub fn char_len(&self) -> usize {
        self.system.chars().count() + self.user.chars().count()
    }
}

fn field<'a>(context: &'a Value, key: &str) -> &'a Value {
    context.get(key).unwrap_or(&Value::Null)
}

fn text_field(context: &Value, key: &str) -> String {
    match field(context, key) {
        Value::String(s) => s.clone(),
        Value::Null => String::new(),
        other => other.to_string(),
    }
}

fn data_block(context: &Value) -> String {
    serde_json::to_string_pretty(context).unwrap_or_default()
}

/// Renders the template for `kind`. Rendering is pure: the same context
/// always yields the same bytes.
pub fn render(kind: PromptKind, context: &Value) -> RenderedPrompt {
    let system = "You are a careful data analyst. Use only the data you are given.".to_string();
    let user = match kind {
        PromptKind::TypeInference => format!(
            "Classify the type of one column of a data table.\n\
             Kinds: continuous (real-valued numbers), discrete (numbers with few distinct values), \
             categorical (non-numeric labels), id (identifier with no analytic meaning), \
             time (dates or years).\n\
             A rule-based detector suggests: {hint}.\n\
             Column data:\n{data}\n\
             Answer with exactly one word from: continuous, discrete, categorical, id, time.",
            hint = text_field(context, "heuristic_hint"),
            data = data_block(context),
        ),
        PromptKind::FeatureDescription => format!(
            "Write a one or two sentence description of a feature for a data report. \
             Mention what it likely represents and its key statistics.\n\
             Feature data:\n{}\n\
             Answer with the description only.",
            data_block(context)
        ),
        PromptKind::RelationDescription => format!(
            "Two features have a statistically significant relationship under preset thresholds. \
             Describe the relationship in one sentence, citing the strongest statistic.\n\
             Relationship data:\n{}\n\
             Answer with the description only.",
            data_block(context)
        ),
        PromptKind::ShapInterpretation => format!(
            "A model reconstructs one feature from all other features. Interpret its SHAP \
             explanation in two to four sentences: name the most influential features and \
             comment on stability (SHAP-Error), readability (entropy) and fit (NLL).\n\
             Explanation data:\n{}\n\
             Answer with the interpretation only.",
            data_block(context)
        ),
        PromptKind::QaChunk => format!(
            "Answer the question using only this part ({index} of {count}) of a data analysis report. \
             If the part does not contain the answer, say so briefly.\n\
             Question: {question}\n\
             Report part:\n<<<\n{chunk}>>>\n\
             Answer:",
            index = text_field(context, "chunk_index"),
            count = text_field(context, "chunk_count"),
            question = text_field(context, "question"),
            chunk = text_field(context, "report_chunk"),
        ),
        PromptKind::QaReduce => format!(
            "Several partial answers were produced from different parts of one report. \
             Combine them into a single final answer to the question.\n\
             Question: {question}\n\
             Partial answers:\n{answers}\n\
             Final answer:",
            question = text_field(context, "question"),
            answers = match field(context, "partial_answers") {
                Value::Array(items) => items
                    .iter()
                    .enumerate()
                    .map(|(i, a)| format!("[{}] {}", i + 1, a.as_str().unwrap_or_default()))
                    .collect::<Vec<_>>()
                    .join("\n"),
                _ => String::new(),
            },
        ),
    };
    RenderedPrompt { system, user }
}

fn fmt_num(v: &Value) -> String {
    match v.as_f64() {
        Some(x) => format!("{x:.4}"),
        None => v.to_string(),
    }
}

/// The deterministic answer used in mock mode.
pub fn mock_response(kind: PromptKind, context: &Value) -> String {
    match kind {
        PromptKind::TypeInference => {
            let hint = text_field(context, "heuristic_hint");
            if hint.is_empty() {
                "categorical".into()
            } else {
                hint
            }
        }
        PromptKind::FeatureDescription => {
            let name = text_field(context, "feature");
            let ty = text_field(context, "type");
            let stats = field(context, "statistics");
            let detail = if ty == "continuous" {
                format!(
                    "mean {}, median {}, range [{}, {}]",
                    fmt_num(field(stats, "mean")),
                    fmt_num(field(stats, "median")),
                    fmt_num(field(stats, "min")),
                    fmt_num(field(stats, "max")),
                )
            } else {
                format!("{} categories", field(stats, "n_categories"))
            };
            format!("The {ty} feature {name} has {detail}.")
        }
        PromptKind::RelationDescription => {
            let metrics = match field(context, "metrics") {
                Value::Object(map) => {
                    map.iter().map(|(k, v)| format!("{k}={}", fmt_num(v))).collect::<Vec<_>>().join(", ")
                }
                _ => String::new(),
            };
            format!(
                "{} and {} show a significant {} relationship ({}).",
                text_field(context, "source"),
                text_field(context, "target"),
                text_field(context, "pair_kind"),
                metrics
            )
        }
        PromptKind::ShapInterpretation => {
            let top = match field(context, "top_features") {
                Value::Array(items) => {
                    items.iter().filter_map(|i| i.get("feature").and_then(Value::as_str)).collect::<Vec<_>>().join(", ")
                }
                _ => String::new(),
            };
            format!(
                "The top SHAP features for predicting {} are {}. SHAP entropy is {}, \
                 the k-fold SHAP error is {} and the model NLL is {}.",
                text_field(context, "target"),
                if top.is_empty() { "none".to_string() } else { top },
                fmt_num(field(context, "entropy")),
                fmt_num(field(context, "shap_error")),
                fmt_num(field(context, "nll")),
            )
        }
        PromptKind::QaChunk => {
            let chunk = text_field(context, "report_chunk");
            format!(
                "Part {}/{} ({} lines) regarding \"{}\".",
                text_field(context, "chunk_index"),
                text_field(context, "chunk_count"),
                chunk.lines().count(),
                text_field(context, "question"),
            )
        }
        PromptKind::QaReduce => {
            let n = field(context, "partial_answers").as_array().map_or(0, Vec::len);
            format!("Answer to \"{}\" combined from {} partial answer(s).", text_field(context, "question"), n)
        }
    }
}

/// A pluggable in-process answer source, used for scripted tests.
pub trait Responder: Send + Sync {
    fn respond(&self, kind: PromptKind, context: &Value, prompt: &RenderedPrompt) -> Result<String, LlmError>;
}

impl<F> Responder for F
where
    F: Fn(PromptKind, &Value, &RenderedPrompt) -> Result<String, LlmError> + Send + Sync,
{
    fn respond(&self, kind: PromptKind, context: &Value, prompt: &RenderedPrompt) -> Result<String, LlmError> {
        self(kind, context, prompt)
    }
}

#[derive(Clone)]
enum Backend {
    Mock,
    Http { agent: ureq::Agent, api_key: Option<String> },
    Custom(Arc<dyn Responder>),
}

/// Chat client shared across threads.
#[derive(Clone)]
pub struct LlmClient {
    cfg: LlmConfig,
    backend: Backend,
}

impl std::fmt::Debug for LlmClient {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let backend = match self.backend {
            Backend::Mock => "mock",
            Backend::Http { .. } => "http",
            Backend::Custom(_) => "custom",
        };
        f.debug_struct("LlmClient").field("backend", &backend).field("model", &self.cfg.model_name).finish()
    }
}

impl LlmClient {
    /// Builds a client; mock mode builds no HTTP agent at all.
    pub fn new(cfg: LlmConfig) -> LlmClient {
        if cfg.mock_mode {
            return LlmClient { cfg, backend: Backend::Mock };
        }
        let agent_cfg = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(cfg.timeout_secs.max(1))))
            .http_status_as_error(false)
            .build();
        let api_key = cfg.api_key.clone().or_else(|| std::env::var(API_KEY_ENV).ok()).filter(|k| !k.is_empty());
        LlmClient { backend: Backend::Http { agent: ureq::Agent::new_with_config(agent_cfg), api_key }, cfg }
    }

    pub fn mock() -> LlmClient {
        LlmClient::new(LlmConfig::mock())
    }

    /// A client whose answers come from `responder` instead of the network.
    pub fn with_responder(cfg: LlmConfig, responder: impl Responder + 'static) -> LlmClient {
        LlmClient { cfg, backend: Backend::Custom(Arc::new(responder)) }
    }

    pub fn config(&self) -> &LlmConfig {
        &self.cfg
    }

    pub fn is_mock(&self) -> bool {
        matches!(self.backend, Backend::Mock)
    }

    pub fn chat(&self, kind: PromptKind, context: &Value) -> Result<String, LlmError> {
        let prompt = render(kind, context);
        let len = prompt.char_len();
        if len > self.cfg.context_char_budget {
            return Err(LlmError::PromptTooLarge { len, budget: self.cfg.context_char_budget });
        }
        match &self.backend {
            Backend::Mock => Ok(mock_response(kind, context)),
            Backend::Custom(r) => r.respond(kind, context, &prompt),
            Backend::Http { agent, api_key } => self.post_with_retries(agent, api_key.as_deref(), &prompt),
        }
    }

    /// Runs `requests` with at most `max_concurrency` in flight. Results keep
    /// request order; failures stay in their slot.
    pub fn chat_batch(&self, requests: &[LlmRequest]) -> Vec<Result<String, LlmError>> {
        if self.is_mock() {
            return requests.iter().map(|r| self.chat(r.kind, &r.context)).collect();
        }
        let workers = self.cfg.max_concurrency.max(1).min(requests.len());
        let slots: Vec<Mutex<Option<Result<String, LlmError>>>> = requests.iter().map(|_| Mutex::new(None)).collect();
        let next = AtomicUsize::new(0);
        std::thread::scope(|scope| {
            for _ in 0..workers {
                scope.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::SeqCst);
                    if i >= requests.len() {
                        break;
                    }
                    let result = self.chat(requests[i].kind, &requests[i].context);
                    *slots[i].lock().unwrap() = Some(result);
                });
            }
        });
        slots.into_iter().map(|s| s.into_inner().unwrap().expect("every slot is filled")).collect()
    }

    fn post_with_retries(
        &self,
        agent: &ureq::Agent,
        api_key: Option<&str>,
        prompt: &RenderedPrompt,
    ) -> Result<String, LlmError> {
        let url = format!("{}/chat/completions", self.cfg.endpoint_url.trim_end_matches('/'));
        let body = json!({
            "model": self.cfg.model_name,
            "messages": [
                {"role": "system", "content": prompt.system},
                {"role": "user", "content": prompt.user},
            ],
            "temperature": self.cfg.temperature,
        });
        let mut attempt = 0;
        loop {
            attempt += 1;
            let outcome = post_once(agent, &url, api_key, &body);
            let retryable = matches!(&outcome, Err(LlmError::Transport { .. }))
                || matches!(&outcome, Err(LlmError::Status { status, .. }) if *status >= 500 || *status == 429);
            if !retryable || attempt > self.cfg.max_retries {
                return outcome.map_err(|e| match e {
                    LlmError::Transport { message, .. } => LlmError::Transport { attempts: attempt, message },
                    other => other,
                });
            }
            let delay = self.cfg.retry_backoff_ms.saturating_mul(1 << (attempt - 1).min(16));
            tracing::debug!(attempt, delay_ms = delay, "retrying LLM call");
            std::thread::sleep(Duration::from_millis(delay));
        }
    }
}

fn post_once(agent: &ureq::Agent, url: &str, api_key: Option<&str>, body: &Value) -> Result<String, LlmError> {
    let mut req = agent.post(url).header("Content-Type", "application/json");
    if let Some(key) = api_key {
        req = req.header("Authorization", format!("Bearer {key}"));
    }
    let mut resp = req.send_json(body).map_err(|e| LlmError::Transport { attempts: 1, message: e.to_string() })?;
    let status = resp.status().as_u16();
    let text =
        resp.body_mut().read_to_string().map_err(|e| LlmError::Transport { attempts: 1, message: e.to_string() })?;
    if !(200..300).contains(&status) {
        return Err(LlmError::Status { status, body: text.chars().take(500).collect() });
    }
    let parsed: Value = serde_json::from_str(&text).map_err(|e| LlmError::InvalidResponse(e.to_string()))?;
    parsed
        .pointer("/choices/0/message/content")
        .and_then(Value::as_str)
        .map(str::to_string)
        .ok_or_else(|| LlmError::InvalidResponse("missing choices[0].message.content".into()))
}
