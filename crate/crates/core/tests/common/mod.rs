#![allow(dead_code)]

use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use cogscreen_core::{ConfusionCounts, Metric, MetricsReport};
use serde::Deserialize;
use serde_json::{json, Value};

/// What the mock does with one incoming connection.
#[derive(Debug, Clone)]
pub enum MockReply {
    /// Reads the request, then closes without answering.
    Drop,
    /// 200 with a chat-completion body carrying this content.
    Completion(String),
    /// Arbitrary status and raw body.
    Status(u16, String),
    /// Waits before answering with a completion.
    Slow(Duration, String),
}

#[derive(Debug, Clone)]
pub struct Captured {
    pub headers: Vec<(String, String)>,
    pub body: Value,
}

impl Captured {
    pub fn header(&self, name: &str) -> Option<&str> {
        self.headers.iter().find(|(k, _)| k.eq_ignore_ascii_case(name)).map(|(_, v)| v.as_str())
    }
}

pub struct MockServer {
    pub base_url: String,
    captured: Arc<Mutex<Vec<Captured>>>,
}

impl MockServer {
    /// Serves `script` in order, then `fallback` for every later connection.
    pub fn start(script: Vec<MockReply>, fallback: MockReply) -> Self {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let base_url = format!("http://{}/v1", listener.local_addr().unwrap());
        let captured = Arc::new(Mutex::new(Vec::new()));
        let sink = Arc::clone(&captured);
        thread::spawn(move || {
            let mut script = script.into_iter();
            for stream in listener.incoming() {
                let Ok(stream) = stream else { continue };
                let reply = script.next().unwrap_or_else(|| fallback.clone());
                serve(stream, reply, &sink);
            }
        });
        Self { base_url, captured }
    }

    pub fn requests(&self) -> Vec<Captured> {
        self.captured.lock().unwrap().clone()
    }

    pub fn hits(&self) -> usize {
        self.captured.lock().unwrap().len()
    }
}

pub fn completion_body(content: &str) -> String {
    json!({
        "id": "cmpl-1",
        "object": "chat.completion",
        "choices": [{"index": 0, "message": {"role": "assistant", "content": content}, "finish_reason": "stop"}]
    })
    .to_string()
}

fn serve(stream: TcpStream, reply: MockReply, sink: &Mutex<Vec<Captured>>) {
    let mut reader = BufReader::new(stream.try_clone().unwrap());
    let mut headers = Vec::new();
    let mut length = 0usize;
    loop {
        let mut line = String::new();
        if reader.read_line(&mut line).unwrap_or(0) == 0 {
            return;
        }
        let line = line.trim_end();
        if line.is_empty() {
            break;
        }
        if let Some((k, v)) = line.split_once(':') {
            let (k, v) = (k.trim().to_string(), v.trim().to_string());
            if k.eq_ignore_ascii_case("content-length") {
                length = v.parse().unwrap_or(0);
            }
            headers.push((k, v));
        }
    }
    let mut body = vec![0u8; length];
    if reader.read_exact(&mut body).is_err() {
        return;
    }
    let body = serde_json::from_slice(&body).unwrap_or(Value::Null);
    sink.lock().unwrap().push(Captured { headers, body });

    let (status, text) = match reply {
        MockReply::Drop => return,
        MockReply::Completion(c) => (200, completion_body(&c)),
        MockReply::Status(s, b) => (s, b),
        MockReply::Slow(d, c) => {
            thread::sleep(d);
            (200, completion_body(&c))
        }
    };
    let mut stream = stream;
    let _ = write!(
        stream,
        "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{text}",
        text.len()
    );
    let _ = stream.flush();
}

// ---------------------------------------------------------------------------
// Published count/metric tables
// ---------------------------------------------------------------------------

#[derive(Debug, Deserialize)]
pub struct Anomaly {
    pub metric: String,
    pub published: f64,
    pub from_counts: f64,
}

#[derive(Debug, Deserialize)]
pub struct PublishedColumn {
    pub prompt_id: String,
    pub counts: ConfusionCounts,
    pub published: std::collections::BTreeMap<String, Option<f64>>,
    pub anomalies: Vec<Anomaly>,
}

#[derive(Debug, Deserialize)]
pub struct PublishedTables {
    pub refinement: Vec<PublishedColumn>,
    pub validation: Vec<PublishedColumn>,
}

pub fn published_tables() -> PublishedTables {
    serde_json::from_str(include_str!("../fixtures/published_tables.json")).unwrap()
}

pub fn metric_by_name(report: &MetricsReport, name: &str) -> Metric {
    match name {
        "sensitivity" => report.sensitivity,
        "specificity" => report.specificity,
        "ppv" => report.ppv,
        "npv" => report.npv,
        "accuracy" => report.accuracy,
        "f1" => report.f1,
        other => panic!("unknown metric {other}"),
    }
}
