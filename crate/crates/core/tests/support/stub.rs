//! A scripted OpenAI-compatible chat endpoint on a loopback port. Every
//! request is logged with its body and its start and end instants.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::{Duration, Instant};

#[derive(Debug, Clone)]
pub struct Call {
    pub index: usize,
    pub body: serde_json::Value,
    pub started: Instant,
    pub finished: Instant,
}

pub type Script = dyn Fn(usize, &serde_json::Value) -> (u16, String) + Send + Sync;

pub struct StubServer {
    pub url: String,
    calls: Arc<Mutex<Vec<Call>>>,
}

impl StubServer {
    /// `script(call_index, request_body)` decides the status and raw body.
    /// `delay` is slept before each response so overlapping calls show up
    /// as overlapping intervals in the log.
    pub fn start(
        delay: Duration,
        script: impl Fn(usize, &serde_json::Value) -> (u16, String) + Send + Sync + 'static,
    ) -> StubServer {
        let listener = TcpListener::bind("127.0.0.1:0").expect("bind loopback");
        let url = format!("http://{}/v1", listener.local_addr().unwrap());
        let calls: Arc<Mutex<Vec<Call>>> = Arc::default();
        let script: Arc<Script> = Arc::new(script);
        let counter = Arc::new(Mutex::new(0usize));
        let log = calls.clone();
        thread::spawn(move || {
            for stream in listener.incoming() {
                let Ok(stream) = stream else { continue };
                let (log, script, counter) = (log.clone(), script.clone(), counter.clone());
                thread::spawn(move || serve(stream, delay, &*script, &counter, &log));
            }
        });
        StubServer { url, calls }
    }

    /// Calls in arrival order.
    pub fn calls(&self) -> Vec<Call> {
        let mut c = self.calls.lock().unwrap().clone();
        c.sort_by_key(|c| c.index);
        c
    }
}

/// A successful chat completion whose message content is `text`.
pub fn completion(text: &str) -> String {
    serde_json::json!({
        "id": "stub",
        "object": "chat.completion",
        "choices": [{"index": 0, "message": {"role": "assistant", "content": text}, "finish_reason": "stop"}]
    })
    .to_string()
}

/// The user message of a logged request.
pub fn user_message(body: &serde_json::Value) -> String {
    body.pointer("/messages/1/content").and_then(|v| v.as_str()).unwrap_or_default().to_string()
}

fn serve(mut stream: TcpStream, delay: Duration, script: &Script, counter: &Mutex<usize>, log: &Mutex<Vec<Call>>) {
    let started = Instant::now();
    let mut reader = BufReader::new(stream.try_clone().unwrap());
    let mut content_length = 0usize;
    let mut line = String::new();
    loop {
        line.clear();
        if reader.read_line(&mut line).unwrap_or(0) == 0 {
            return;
        }
        let trimmed = line.trim_end();
        if trimmed.is_empty() {
            break;
        }
        if let Some((name, value)) = trimmed.split_once(':') {
            if name.eq_ignore_ascii_case("content-length") {
                content_length = value.trim().parse().unwrap_or(0);
            }
        }
    }
    let mut raw = vec![0u8; content_length];
    if reader.read_exact(&mut raw).is_err() {
        return;
    }
    let body: serde_json::Value = serde_json::from_slice(&raw).unwrap_or(serde_json::Value::Null);
    let index = {
        let mut c = counter.lock().unwrap();
        *c += 1;
        *c - 1
    };
    let (status, text) = script(index, &body);
    thread::sleep(delay);
    let response = format!(
        "HTTP/1.1 {status} Stub\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{text}",
        text.len()
    );
    log.lock().unwrap().push(Call { index, body, started, finished: Instant::now() });
    let _ = stream.write_all(response.as_bytes());
    let _ = stream.flush();
}

/// Characters left for report text in one QA chunk prompt.
pub fn qa_chunk_budget(question: &str, budget: usize) -> usize {
    use tabinsight::llm_gateway::{render, PromptKind};
    let ctx = serde_json::json!({
        "question": question, "report_chunk": "", "chunk_index": "999999", "chunk_count": "999999"
    });
    budget - render(PromptKind::QaChunk, &ctx).char_len()
}

/// A report of 40-character lines whose length is `factor` times the
/// per-chunk text budget.
pub fn qa_report(question: &str, budget: usize, factor: f64) -> String {
    let target = (qa_chunk_budget(question, budget) as f64 * factor) as usize;
    let mut text = String::new();
    let mut i = 0;
    while text.len() + 40 <= target {
        text.push_str(&format!("{:<39}\n", format!("line {i} of the report")));
        i += 1;
    }
    text
}
