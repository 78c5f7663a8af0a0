//! Shared test support: an independent brute-force tau counter,
//! synthetic dataset builders, and a scripted in-process HTTP server
//! that speaks just enough chat-completions to exercise the client.

#![allow(dead_code)]

use std::collections::{BTreeSet, VecDeque};
use std::io::{Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use ebr::io::DatasetBundle;
use ebr::model::{
    AnswerSystem, Judgment, LikertLabel, QAItem, ReferenceScore, Rubric, SentenceDocument,
    SourceSplit,
};

/// O(n^2) concordant/discordant/tie counter, written directly from the
/// tau-b definition and kept independent of the optimized path it
/// checks. Returns None when a margin is fully tied.
pub fn brute_force_tau_b(xs: &[f64], ys: &[f64]) -> Option<f64> {
    use std::cmp::Ordering as Ord_;
    let n = xs.len();
    let (mut concordant, mut discordant) = (0i64, 0i64);
    let (mut tied_x, mut tied_y) = (0i64, 0i64);
    for i in 0..n {
        for j in i + 1..n {
            let dx = xs[i].partial_cmp(&xs[j]).unwrap();
            let dy = ys[i].partial_cmp(&ys[j]).unwrap();
            match (dx, dy) {
                (Ord_::Equal, Ord_::Equal) => {
                    tied_x += 1;
                    tied_y += 1;
                }
                (Ord_::Equal, _) => tied_x += 1,
                (_, Ord_::Equal) => tied_y += 1,
                (a, b) if a == b => concordant += 1,
                _ => discordant += 1,
            }
        }
    }
    let n0 = (n * (n - 1) / 2) as i64;
    if tied_x == n0 || tied_y == n0 {
        return None;
    }
    let denom = (((n0 - tied_x) as f64) * ((n0 - tied_y) as f64)).sqrt();
    Some((concordant - discordant) as f64 / denom)
}

/// A rubric with the flat per-sentence deduction the oracle backend
/// needs.
pub fn oracle_rubric(per_sentence_deduction: u32) -> Rubric {
    Rubric {
        aspect: "completeness".into(),
        definition: "A complete answer will have all relevant information from the article \
                     required to answer the question and an incomplete answer won't."
            .into(),
        scale: [0, 100],
        rules: vec![],
        per_sentence_deduction: Some(per_sentence_deduction),
    }
}

/// Missing-sentence count consistent with a label: complete 0,
/// minor 1-2, major 3-5, all 6+.
pub fn label_consistent_missing(label: LikertLabel, seed: usize) -> BTreeSet<usize> {
    let count = match label {
        LikertLabel::Complete => 0,
        LikertLabel::MissingMinor => 1 + seed % 2,
        LikertLabel::MissingMajor => 3 + seed % 3,
        LikertLabel::MissingAll => 6 + seed % 2,
    };
    (1..=count).collect()
}

/// Synthetic bundle: `n_annotators` x `n_items`, labels cycling through
/// all four values, missing-sentence counts consistent with each label.
pub fn synthetic_bundle(n_annotators: usize, n_items: usize) -> DatasetBundle {
    let document = SentenceDocument {
        id: "doc".into(),
        split: SourceSplit::Inquisitive,
        sentences: (1..=12).map(|i| format!("Sentence number {i}.")).collect(),
    };
    let items: Vec<QAItem> = (0..n_items)
        .map(|i| QAItem {
            id: format!("q{i:03}"),
            doc_id: "doc".into(),
            question: format!("Question {i}?"),
            anchor: 1 + i % 12,
            answer: format!("Answer {i}."),
            system: AnswerSystem::Gpt4,
        })
        .collect();
    let mut judgments = Vec::new();
    for a in 0..n_annotators {
        for (i, item) in items.iter().enumerate() {
            let label = LikertLabel::ALL[(i + a) % 4];
            judgments.push(Judgment {
                item_id: item.id.clone(),
                annotator: format!("a{a}"),
                label,
                correct: true,
                explanation: format!("Explanation by a{a} for item {i}."),
                missing_sentences: label_consistent_missing(label, i + a),
            });
        }
    }
    DatasetBundle {
        documents: vec![document],
        items,
        judgments,
        references: None,
    }
}

/// References equal to the missing-sentences heuristic at `deduction`.
pub fn planted_references(judgments: &[Judgment], deduction: u32) -> Vec<ReferenceScore> {
    judgments
        .iter()
        .map(|j| {
            let score =
                (100 - i64::from(deduction) * j.missing_sentences.len() as i64).clamp(0, 100);
            ReferenceScore {
                item_id: j.item_id.clone(),
                annotator: j.annotator.clone(),
                expert_scores: vec![score],
            }
        })
        .collect()
}

/// How the fake server answers.
pub enum Script {
    /// Deterministic score derived from the prompt text, with an
    /// optional per-request delay (for concurrency measurements).
    EchoScore { delay: Duration },
    /// Scripted (status, body) responses consumed in arrival order;
    /// afterwards falls back to echo-score behavior.
    Sequence(Vec<(u16, String)>),
}

/// Minimal HTTP/1.1 server for exercising the chat-completions client:
/// counts requests, tracks peak concurrency, and records arrival times.
pub struct FakeServer {
    addr: SocketAddr,
    total: Arc<AtomicUsize>,
    max_concurrent: Arc<AtomicUsize>,
    arrivals: Arc<Mutex<Vec<Instant>>>,
    shutdown: Arc<AtomicBool>,
    handle: Option<JoinHandle<()>>,
}

impl FakeServer {
    pub fn start(script: Script) -> FakeServer {
        let listener = TcpListener::bind("127.0.0.1:0").expect("bind fake server");
        let addr = listener.local_addr().unwrap();
        let total = Arc::new(AtomicUsize::new(0));
        let concurrent = Arc::new(AtomicUsize::new(0));
        let max_concurrent = Arc::new(AtomicUsize::new(0));
        let arrivals = Arc::new(Mutex::new(Vec::new()));
        let shutdown = Arc::new(AtomicBool::new(false));
        let (delay, scripted) = match script {
            Script::EchoScore { delay } => (delay, VecDeque::new()),
            Script::Sequence(responses) => (Duration::ZERO, responses.into()),
        };
        let scripted = Arc::new(Mutex::new(scripted));

        let handle = {
            let total = total.clone();
            let concurrent = concurrent.clone();
            let max_concurrent = max_concurrent.clone();
            let arrivals = arrivals.clone();
            let shutdown = shutdown.clone();
            std::thread::spawn(move || {
                let mut workers = Vec::new();
                for stream in listener.incoming() {
                    if shutdown.load(Ordering::SeqCst) {
                        break;
                    }
                    let Ok(stream) = stream else { break };
                    let total = total.clone();
                    let concurrent = concurrent.clone();
                    let max_concurrent = max_concurrent.clone();
                    let arrivals = arrivals.clone();
                    let scripted = scripted.clone();
                    workers.push(std::thread::spawn(move || {
                        handle_connection(
                            stream,
                            &total,
                            &concurrent,
                            &max_concurrent,
                            &arrivals,
                            &scripted,
                            delay,
                        );
                    }));
                }
                for worker in workers {
                    let _ = worker.join();
                }
            })
        };

        FakeServer {
            addr,
            total,
            max_concurrent,
            arrivals,
            shutdown,
            handle: Some(handle),
        }
    }

    /// Base URL for a `BackendConfig`.
    pub fn base_url(&self) -> String {
        format!("http://{}", self.addr)
    }

    pub fn total_requests(&self) -> usize {
        self.total.load(Ordering::SeqCst)
    }

    pub fn max_concurrent(&self) -> usize {
        self.max_concurrent.load(Ordering::SeqCst)
    }

    pub fn arrivals(&self) -> Vec<Instant> {
        self.arrivals.lock().unwrap().clone()
    }
}

impl Drop for FakeServer {
    fn drop(&mut self) {
        self.shutdown.store(true, Ordering::SeqCst);
        // Unblock the accept loop.
        let _ = TcpStream::connect(self.addr);
        if let Some(handle) = self.handle.take() {
            let _ = handle.join();
        }
    }
}

fn handle_connection(
    mut stream: TcpStream,
    total: &AtomicUsize,
    concurrent: &AtomicUsize,
    max_concurrent: &AtomicUsize,
    arrivals: &Mutex<Vec<Instant>>,
    scripted: &Mutex<VecDeque<(u16, String)>>,
    delay: Duration,
) {
    let Some(body) = read_request(&mut stream) else {
        return;
    };
    arrivals.lock().unwrap().push(Instant::now());
    total.fetch_add(1, Ordering::SeqCst);
    let now = concurrent.fetch_add(1, Ordering::SeqCst) + 1;
    max_concurrent.fetch_max(now, Ordering::SeqCst);

    if !delay.is_zero() {
        std::thread::sleep(delay);
    }

    let response = match scripted.lock().unwrap().pop_front() {
        Some((status, body)) => (status, body),
        None => (200, echo_score_body(&body)),
    };
    let (status, payload) = response;
    let reason = match status {
        200 => "OK",
        429 => "Too Many Requests",
        401 => "Unauthorized",
        500 => "Internal Server Error",
        _ => "Status",
    };
    let head = format!(
        "HTTP/1.1 {status} {reason}\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n",
        payload.len()
    );
    let _ = stream.write_all(head.as_bytes());
    let _ = stream.write_all(payload.as_bytes());
    let _ = stream.flush();

    concurrent.fetch_sub(1, Ordering::SeqCst);
}

fn read_request(stream: &mut TcpStream) -> Option<String> {
    let mut buf = Vec::new();
    let mut chunk = [0u8; 1024];
    let header_end = loop {
        let n = stream.read(&mut chunk).ok()?;
        if n == 0 {
            return None;
        }
        buf.extend_from_slice(&chunk[..n]);
        if let Some(pos) = find_header_end(&buf) {
            break pos;
        }
        if buf.len() > 1 << 20 {
            return None;
        }
    };
    let headers = String::from_utf8_lossy(&buf[..header_end]).to_string();
    let content_length = headers
        .lines()
        .find_map(|line| {
            let (name, value) = line.split_once(':')?;
            name.eq_ignore_ascii_case("content-length")
                .then(|| value.trim().parse::<usize>().ok())?
        })
        .unwrap_or(0);
    let mut body = buf[header_end + 4..].to_vec();
    while body.len() < content_length {
        let n = stream.read(&mut chunk).ok()?;
        if n == 0 {
            break;
        }
        body.extend_from_slice(&chunk[..n]);
    }
    Some(String::from_utf8_lossy(&body).to_string())
}

fn find_header_end(buf: &[u8]) -> Option<usize> {
    buf.windows(4).position(|w| w == b"\r\n\r\n")
}

/// Deterministic response: a score in [20, 80] derived from the prompt
/// bytes, wrapped in a chat-completions body.
fn echo_score_body(request_body: &str) -> String {
    let prompt = serde_json::from_str::<serde_json::Value>(request_body)
        .ok()
        .and_then(|v| {
            v["messages"][0]["content"]
                .as_str()
                .map(|s| s.to_string())
        })
        .unwrap_or_default();
    let sum: u64 = prompt.bytes().map(u64::from).sum();
    let score = 20 + sum % 61;
    let content = format!("Looking at the feedback, I would put this at {score}.");
    serde_json::json!({
        "choices": [{"message": {"role": "assistant", "content": content}}]
    })
    .to_string()
}
