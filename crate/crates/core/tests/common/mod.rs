//! Shared fixtures, reference computations and a scripted HTTP stub.

#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::Duration;

use ebd_core::generator::TokenSeq;
use ebd_core::reward::{SyntheticReward, SyntheticRewardSpec};
use ebd_core::toy_lm::{LengthMode, ToyLm, ToyModelSpec};

pub const SPECS: [&str; 3] = ["uniform", "skewed", "point_mass"];

pub fn data_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("data")
}

pub fn fixture_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

pub fn model_spec(name: &str) -> ToyModelSpec {
    ToyModelSpec::load(data_dir().join(format!("models/{name}.toml"))).unwrap()
}

pub fn model(name: &str) -> ToyLm {
    ToyLm::new(model_spec(name), 1.0, 3072).unwrap()
}

pub fn lookup_reward() -> SyntheticReward {
    SyntheticReward::new(SyntheticRewardSpec::load(data_dir().join("rewards/lookup.toml")).unwrap())
        .unwrap()
}

/// Score table of the lookup reward, read straight from the TOML file.
pub fn lookup_table() -> BTreeMap<Vec<u32>, f64> {
    let text = std::fs::read_to_string(data_dir().join("rewards/lookup.toml")).unwrap();
    let doc: toml::Table = toml::from_str(&text).unwrap();
    doc["entries"]
        .as_array()
        .unwrap()
        .iter()
        .map(|e| {
            let tokens = e["tokens"]
                .as_array()
                .unwrap()
                .iter()
                .map(|t| t.as_integer().unwrap() as u32)
                .collect();
            let score = e["score"].as_float().unwrap();
            (tokens, score)
        })
        .collect()
}

/// Every sequence of `len` tokens over `vocab` symbols, lexicographic.
pub fn all_sequences(vocab: u32, len: usize) -> Vec<Vec<u32>> {
    let mut out = vec![vec![]];
    for _ in 0..len {
        out = out
            .into_iter()
            .flat_map(|s| {
                (0..vocab).map(move |t| {
                    let mut n = s.clone();
                    n.push(t);
                    n
                })
            })
            .collect();
    }
    out
}

/// Probability of a fixed-length response at temperature 1, as a direct
/// product of table entries.
pub fn reference_prob(spec: &ToyModelSpec, y: &[u32]) -> f64 {
    let table = spec.transition_table();
    let mut p = 1.0;
    let mut prev: Option<u32> = None;
    for &t in y {
        let row = match (spec.order(), prev) {
            (1, _) => &table[0],
            (_, None) => &table[0],
            (_, Some(u)) => &table[u as usize + 1],
        };
        p *= row[t as usize];
        prev = Some(t);
    }
    p
}

/// Fixed-length prior as a map, by brute force over all sequences.
pub fn reference_prior(spec: &ToyModelSpec) -> BTreeMap<Vec<u32>, f64> {
    let len = match spec.length_mode() {
        LengthMode::Fixed { length } => *length,
        other => panic!("reference prior needs a fixed length, got {other:?}"),
    };
    all_sequences(spec.vocab_size() as u32, len)
        .into_iter()
        .map(|y| {
            let p = reference_prob(spec, &y);
            (y, p)
        })
        .filter(|(_, p)| *p > 0.0)
        .collect()
}

/// Population mean and std of `scores` under `prior`.
pub fn reference_moments(prior: &BTreeMap<Vec<u32>, f64>, scores: &BTreeMap<Vec<u32>, f64>) -> (f64, f64) {
    let mean: f64 = prior.iter().map(|(y, p)| p * scores[y]).sum();
    let var: f64 = prior.iter().map(|(y, p)| p * (scores[y] - mean).powi(2)).sum();
    (mean, var.sqrt().max(1e-6))
}

/// Tilted law `p exp(beta s) / Z` computed with plain exponentials.
pub fn reference_tilt(
    prior: &BTreeMap<Vec<u32>, f64>,
    standardized: &BTreeMap<Vec<u32>, f64>,
    beta: f64,
) -> BTreeMap<Vec<u32>, f64> {
    let w: BTreeMap<_, _> = prior
        .iter()
        .map(|(y, p)| (y.clone(), p * (beta * standardized[y]).exp()))
        .collect();
    let z: f64 = w.values().sum();
    w.into_iter().map(|(y, v)| (y, v / z)).collect()
}

/// Expected reward of the best of `n` independent prior draws by
/// enumerating every ordered n-tuple of outcomes.
pub fn brute_force_best_of_n(outcomes: &[(f64, f64)], n: usize) -> f64 {
    let k = outcomes.len();
    let mut idx = vec![0usize; n];
    let mut total = 0.0;
    loop {
        let mut p = 1.0;
        let mut best = f64::NEG_INFINITY;
        for &i in &idx {
            p *= outcomes[i].0;
            best = best.max(outcomes[i].1);
        }
        total += p * best;
        let mut pos = n;
        loop {
            if pos == 0 {
                return total;
            }
            pos -= 1;
            idx[pos] += 1;
            if idx[pos] < k {
                break;
            }
            idx[pos] = 0;
        }
    }
}

pub fn tv(a: &BTreeMap<Vec<u32>, f64>, b: &BTreeMap<Vec<u32>, f64>) -> f64 {
    let mut keys: Vec<&Vec<u32>> = a.keys().chain(b.keys()).collect();
    keys.sort();
    keys.dedup();
    0.5 * keys
        .into_iter()
        .map(|k| (a.get(k).unwrap_or(&0.0) - b.get(k).unwrap_or(&0.0)).abs())
        .sum::<f64>()
}

pub fn counts_to_law(samples: impl IntoIterator<Item = TokenSeq>) -> BTreeMap<Vec<u32>, f64> {
    let mut counts: BTreeMap<Vec<u32>, f64> = BTreeMap::new();
    let mut n = 0.0;
    for y in samples {
        *counts.entry(y.0).or_default() += 1.0;
        n += 1.0;
    }
    counts.values_mut().for_each(|c| *c /= n);
    counts
}

/// A request seen by the stub.
#[derive(Debug, Clone)]
pub struct SeenRequest {
    pub method: String,
    pub url: String,
    pub body: serde_json::Value,
    pub authorization: Option<String>,
}

/// One scripted reply.
#[derive(Debug, Clone)]
pub struct Scripted {
    pub status: u16,
    pub body: String,
    pub delay: Duration,
}

impl Scripted {
    pub fn ok(body: serde_json::Value) -> Self {
        Scripted {
            status: 200,
            body: body.to_string(),
            delay: Duration::ZERO,
        }
    }

    pub fn status(status: u16, body: &str) -> Self {
        Scripted {
            status,
            body: body.to_string(),
            delay: Duration::ZERO,
        }
    }

    pub fn delayed(mut self, delay: Duration) -> Self {
        self.delay = delay;
        self
    }
}

/// Serves scripted replies in order, then repeats the last one.
pub struct StubServer {
    pub base_url: String,
    pub seen: Arc<Mutex<Vec<SeenRequest>>>,
    server: Arc<tiny_http::Server>,
    handle: Option<JoinHandle<()>>,
}

impl StubServer {
    pub fn start(script: Vec<Scripted>) -> Self {
        let server = Arc::new(tiny_http::Server::http("127.0.0.1:0").unwrap());
        let port = server.server_addr().to_ip().unwrap().port();
        let seen = Arc::new(Mutex::new(Vec::new()));
        let (srv, log) = (server.clone(), seen.clone());
        let handle = std::thread::spawn(move || {
            for (i, mut req) in srv.incoming_requests().enumerate() {
                let mut body = String::new();
                req.as_reader().read_to_string(&mut body).unwrap();
                let authorization = req
                    .headers()
                    .iter()
                    .find(|h| h.field.equiv("Authorization"))
                    .map(|h| h.value.to_string());
                log.lock().unwrap().push(SeenRequest {
                    method: req.method().to_string(),
                    url: req.url().to_string(),
                    body: serde_json::from_str(&body).unwrap_or(serde_json::Value::Null),
                    authorization,
                });
                let reply = script[i.min(script.len() - 1)].clone();
                std::thread::sleep(reply.delay);
                let response = tiny_http::Response::from_string(reply.body)
                    .with_status_code(reply.status)
                    .with_header(
                        tiny_http::Header::from_bytes("Content-Type", "application/json").unwrap(),
                    );
                let _ = req.respond(response);
            }
        });
        StubServer {
            base_url: format!("http://127.0.0.1:{port}"),
            seen,
            server,
            handle: Some(handle),
        }
    }

    pub fn requests(&self) -> Vec<SeenRequest> {
        self.seen.lock().unwrap().clone()
    }
}

impl Drop for StubServer {
    fn drop(&mut self) {
        self.server.unblock();
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}

/// OpenAI-style completion body.
pub fn completion(text: &str, completion_tokens: u64, finish: &str) -> serde_json::Value {
    serde_json::json!({
        "choices": [{"text": text, "finish_reason": finish}],
        "usage": {"prompt_tokens": 7, "completion_tokens": completion_tokens},
    })
}
