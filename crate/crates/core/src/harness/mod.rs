//! Batch runs over prompt files: Direct, Best-of-N and EBD decoding,
//! per-prompt accounting, and summaries.
//!
//! Every prompt gets its own RNG stream derived from the run seed and the
//! prompt's position in the file, so outputs do not depend on how many
//! workers process the batch.

pub mod config;
pub mod metrics;
pub mod oracle_check;
pub mod report;

use std::borrow::Borrow;
use std::collections::BTreeMap;
use std::fmt;
use std::io::{BufRead, Write};
use std::path::Path;
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::mpsc;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::generator::{ChainRng, Generator, RewardBackend, Response, TokenSeq};
use crate::llm_client::RemoteGenerator;
use crate::reward::RewardScore;
use crate::sampler::{chain_rng, CallCounts, DecodeConfig, EbdSampler, TraceEntry};
use crate::toy_lm::{parse_token_prompt, ToyLm};

pub use config::{BackendKind, RewardConfig, RunConfig};
pub use metrics::{
    pearson_correctness, valid_response_rate, CorrectnessVector, Grader, Validator,
};

/// Decoding method.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Direct,
    BestOfN,
    Ebd,
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "direct" => Ok(Method::Direct),
            "best_of_n" | "best-of-n" | "bon" => Ok(Method::BestOfN),
            "ebd" => Ok(Method::Ebd),
            other => Err(Error::input(format!(
                "unknown method {other:?} (expected direct, best_of_n or ebd)"
            ))),
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Direct => "direct",
            Method::BestOfN => "best_of_n",
            Method::Ebd => "ebd",
        })
    }
}

/// How per-prompt latency is measured.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Timing {
    /// Wall-clock time spanning every generation and reward call.
    Wall,
    /// Deterministic cost model: a fixed cost per generated unit and per reward call.
    Simulated { ms_per_unit: f64, ms_per_reward: f64 },
}

impl Timing {
    pub const DEFAULT_SIMULATED: Timing = Timing::Simulated {
        ms_per_unit: 1.0,
        ms_per_reward: 2.0,
    };

    fn latency_ms(&self, started: Instant, calls: &CallCounts) -> f64 {
        match *self {
            Timing::Wall => started.elapsed().as_secs_f64() * 1000.0,
            Timing::Simulated {
                ms_per_unit,
                ms_per_reward,
            } => calls.generated_units as f64 * ms_per_unit + calls.reward_calls as f64 * ms_per_reward,
        }
    }
}

/// One line of a prompt file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptItem {
    pub id: String,
    pub prompt: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference: Option<String>,
}

/// Read a JSONL prompt file; blank lines are skipped.
pub fn read_prompts(path: impl AsRef<Path>) -> Result<Vec<PromptItem>> {
    let file = std::fs::File::open(path.as_ref())?;
    let mut items = Vec::new();
    for (i, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let item: PromptItem = serde_json::from_str(&line)
            .map_err(|e| Error::input(format!("prompt file line {}: {e}", i + 1)))?;
        items.push(item);
    }
    Ok(items)
}

/// The per-prompt result written to the output JSONL.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub prompt_id: String,
    /// Method label, e.g. `direct`, `best_of_4`, `ebd`.
    pub method: String,
    /// Backend plus decoding settings; records in one report must agree.
    pub config_id: String,
    pub output: Option<Value>,
    pub raw_reward: Option<f64>,
    pub advantage: Option<f64>,
    pub latency_ms: f64,
    pub generation_calls: usize,
    pub reward_calls: usize,
    pub acceptance_rate: Option<f64>,
    pub valid: Option<bool>,
    pub correct: Option<bool>,
    pub trace_ref: Option<String>,
    pub error: Option<String>,
}

impl RunRecord {
    pub fn is_failure(&self) -> bool {
        self.error.is_some()
    }
}

/// Backend-specific prompt parsing and output rendering.
pub trait HarnessBackend: Generator {
    type OwnedPrompt: Borrow<Self::Prompt> + Send + Sync;

    fn parse_prompt(&self, text: &str) -> Result<Self::OwnedPrompt>;

    /// JSON form of a response for the output file.
    fn render(&self, response: &Self::Response) -> Value;

    /// Text form of a response for graders and validators.
    fn text(&self, response: &Self::Response) -> String;
}

impl HarnessBackend for ToyLm {
    type OwnedPrompt = TokenSeq;

    fn parse_prompt(&self, text: &str) -> Result<TokenSeq> {
        parse_token_prompt(text)
    }

    fn render(&self, response: &TokenSeq) -> Value {
        Value::from(response.0.clone())
    }

    fn text(&self, response: &TokenSeq) -> String {
        response
            .0
            .iter()
            .map(u32::to_string)
            .collect::<Vec<_>>()
            .join(" ")
    }
}

impl HarnessBackend for RemoteGenerator {
    type OwnedPrompt = String;

    fn parse_prompt(&self, text: &str) -> Result<String> {
        Ok(text.to_string())
    }

    fn render(&self, response: &crate::generator::TextResponse) -> Value {
        Value::String(response.text.clone())
    }

    fn text(&self, response: &crate::generator::TextResponse) -> String {
        response.text.clone()
    }
}

/// Outcome of one method on one prompt.
#[derive(Debug, Clone)]
pub struct MethodRun<R> {
    pub response: R,
    pub raw_reward: RewardScore,
    pub advantage: Option<f64>,
    pub calls: CallCounts,
    pub acceptance_rate: Option<f64>,
    pub trace: Option<Vec<TraceEntry>>,
}

/// A single prior sample, scored once.
pub fn run_direct<G, B>(
    generator: &G,
    reward: &B,
    prompt: &G::Prompt,
    rng: &mut ChainRng,
) -> Result<MethodRun<G::Response>>
where
    G: Generator,
    B: RewardBackend<G::Prompt, G::Response>,
{
    run_best_of_n(generator, reward, prompt, 1, rng)
}

/// `n` independent prior samples; the highest raw reward wins, ties to the lowest index.
pub fn run_best_of_n<G, B>(
    generator: &G,
    reward: &B,
    prompt: &G::Prompt,
    n: usize,
    rng: &mut ChainRng,
) -> Result<MethodRun<G::Response>>
where
    G: Generator,
    B: RewardBackend<G::Prompt, G::Response>,
{
    if n < 1 {
        return Err(Error::input("best-of-n needs n >= 1"));
    }
    let mut calls = CallCounts::default();
    let mut best: Option<(G::Response, RewardScore)> = None;
    for _ in 0..n {
        let y = generator.sample_full(prompt, rng)?;
        calls.generation_calls += 1;
        calls.generated_units += y.unit_len();
        let r = reward.score(prompt, &y)?;
        calls.reward_calls += 1;
        if best.as_ref().is_none_or(|(_, b)| r.raw() > b.raw()) {
            best = Some((y, r));
        }
    }
    let (response, raw_reward) = best.expect("n >= 1");
    Ok(MethodRun {
        response,
        raw_reward,
        advantage: None,
        calls,
        acceptance_rate: None,
        trace: None,
    })
}

/// Full EBD decode of one prompt.
pub fn run_ebd<G, B>(
    generator: &G,
    reward: &B,
    prompt: &G::Prompt,
    config: &DecodeConfig,
    rng: &mut ChainRng,
) -> Result<MethodRun<G::Response>>
where
    G: Generator,
    B: RewardBackend<G::Prompt, G::Response>,
{
    let sampler = EbdSampler::new(generator, reward, config.clone())?;
    let out = sampler.run(prompt, rng).map_err(|f| f.error)?;
    let state = out.state;
    Ok(MethodRun {
        response: out.response,
        raw_reward: state.raw_reward(),
        advantage: Some(state.advantage()),
        calls: state.calls(),
        // K = 0 runs report a rate of 0 accepted steps
        acceptance_rate: Some(state.acceptance_rate().unwrap_or(0.0)),
        trace: Some(state.trace().to_vec()),
    })
}

/// Everything a batch needs besides the backends.
#[derive(Debug, Clone)]
pub struct BatchSettings {
    pub method: Method,
    /// Pool size for best-of-n.
    pub n: usize,
    pub decode: DecodeConfig,
    pub run_seed: u64,
    pub workers: usize,
    pub timing: Timing,
    pub grader: Grader,
    pub validator: Validator,
    pub backend_label: String,
    /// When set, EBD traces go to this JSONL file and records point at it.
    pub trace_file: Option<String>,
}

impl BatchSettings {
    pub fn new(method: Method, decode: DecodeConfig) -> Self {
        BatchSettings {
            method,
            n: decode.pool_size,
            run_seed: decode.seed,
            decode,
            workers: 1,
            timing: Timing::DEFAULT_SIMULATED,
            grader: Grader::default(),
            validator: Validator::default(),
            backend_label: "toy".into(),
            trace_file: None,
        }
    }

    pub fn method_label(&self) -> String {
        match self.method {
            Method::BestOfN => format!("best_of_{}", self.n),
            m => m.to_string(),
        }
    }

    pub fn config_id(&self) -> String {
        let d = &self.decode;
        format!(
            "backend={};temperature={};max_len={};beta={};steps={};block_count={};pool_size={};std=population",
            self.backend_label, d.temperature, d.max_len, d.beta, d.steps, d.block_count, d.pool_size
        )
    }
}

/// Per-batch outcome.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct BatchSummary {
    pub total: usize,
    pub failures: usize,
}

/// Serialized chain trace for one prompt.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TraceLine {
    pub prompt_id: String,
    pub trace: Vec<TraceEntry>,
}

fn run_one<G, B>(
    generator: &G,
    reward: &B,
    settings: &BatchSettings,
    index: usize,
    item: &PromptItem,
) -> (RunRecord, Option<TraceLine>)
where
    G: HarnessBackend,
    B: RewardBackend<G::Prompt, G::Response>,
{
    let mut record = RunRecord {
        prompt_id: item.id.clone(),
        method: settings.method_label(),
        config_id: settings.config_id(),
        output: None,
        raw_reward: None,
        advantage: None,
        latency_ms: 0.0,
        generation_calls: 0,
        reward_calls: 0,
        acceptance_rate: None,
        valid: None,
        correct: None,
        trace_ref: None,
        error: None,
    };
    let prompt = match generator.parse_prompt(&item.prompt) {
        Ok(p) => p,
        Err(e) => {
            record.error = Some(e.to_string());
            return (record, None);
        }
    };
    let mut rng = chain_rng(settings.run_seed, index as u64);
    let started = Instant::now();
    let result = match settings.method {
        Method::Direct => run_direct(generator, reward, prompt.borrow(), &mut rng),
        Method::BestOfN => run_best_of_n(generator, reward, prompt.borrow(), settings.n, &mut rng),
        Method::Ebd => run_ebd(generator, reward, prompt.borrow(), &settings.decode, &mut rng),
    };
    match result {
        Ok(run) => {
            record.latency_ms = settings.timing.latency_ms(started, &run.calls);
            let text = generator.text(&run.response);
            record.output = Some(generator.render(&run.response));
            record.raw_reward = Some(run.raw_reward.raw());
            record.advantage = run.advantage;
            record.generation_calls = run.calls.generation_calls;
            record.reward_calls = run.calls.reward_calls;
            record.acceptance_rate = run.acceptance_rate;
            record.valid = Some(settings.validator.is_valid(&text));
            record.correct = item
                .reference
                .as_deref()
                .map(|r| settings.grader.grade(&text, r));
            let trace = match (run.trace, &settings.trace_file) {
                (Some(trace), Some(file)) => {
                    record.trace_ref = Some(format!("{file}#{}", item.id));
                    Some(TraceLine {
                        prompt_id: item.id.clone(),
                        trace,
                    })
                }
                _ => None,
            };
            (record, trace)
        }
        Err(e) => {
            record.latency_ms = settings.timing.latency_ms(started, &CallCounts::default());
            record.error = Some(e.to_string());
            (record, None)
        }
    }
}

/// Run `method` over `prompts` on a bounded worker pool.
///
/// Records are streamed to `sink` as JSONL in prompt order through a single
/// writer; traces (when enabled) go to `trace_sink` the same way.
pub fn run_batch<G, B>(
    generator: &G,
    reward: &B,
    prompts: &[PromptItem],
    settings: &BatchSettings,
    sink: &mut dyn Write,
    mut trace_sink: Option<&mut dyn Write>,
) -> Result<(Vec<RunRecord>, BatchSummary)>
where
    G: HarnessBackend,
    B: RewardBackend<G::Prompt, G::Response>,
{
    settings.decode.validate()?;
    if settings.method == Method::BestOfN && settings.n < 1 {
        return Err(Error::input("best_of_n requires n >= 1"));
    }
    let workers = settings.workers.clamp(1, prompts.len().max(1));
    let next = AtomicUsize::new(0);
    let (tx, rx) = mpsc::channel::<(usize, RunRecord, Option<TraceLine>)>();
    let mut records = Vec::with_capacity(prompts.len());
    let mut io_result: Result<()> = Ok(());

    std::thread::scope(|scope| {
        for _ in 0..workers {
            let tx = tx.clone();
            let next = &next;
            scope.spawn(move || loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(item) = prompts.get(i) else { break };
                let (record, trace) = run_one(generator, reward, settings, i, item);
                if tx.send((i, record, trace)).is_err() {
                    break;
                }
            });
        }
        drop(tx);

        // single sink: emit in prompt order as results arrive
        let mut pending = BTreeMap::new();
        let mut emitted = 0;
        for (i, record, trace) in rx {
            pending.insert(i, (record, trace));
            while let Some((record, trace)) = pending.remove(&emitted) {
                if io_result.is_ok() {
                    io_result = write_line(sink, &record).and_then(|_| match (&mut trace_sink, &trace) {
                        (Some(ts), Some(t)) => write_line(*ts, t),
                        _ => Ok(()),
                    });
                }
                records.push(record);
                emitted += 1;
            }
        }
    });
    io_result?;
    sink.flush()?;
    let summary = BatchSummary {
        total: records.len(),
        failures: records.iter().filter(|r| r.is_failure()).count(),
    };
    Ok((records, summary))
}

fn write_line<T: Serialize>(sink: &mut dyn Write, value: &T) -> Result<()> {
    serde_json::to_writer(&mut *sink, value)?;
    sink.write_all(b"\n")?;
    Ok(())
}

/// Parse records from JSONL text.
pub fn read_records(path: impl AsRef<Path>) -> Result<Vec<RunRecord>> {
    let text = std::fs::read_to_string(path.as_ref())?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, l)| {
            serde_json::from_str(l)
                .map_err(|e| Error::input(format!("record line {}: {e}", i + 1)))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::reward::SyntheticReward;
    use crate::toy_lm::{LengthMode, ToyModelSpec};

    fn toy() -> (ToyLm, SyntheticReward) {
        let lm = ToyLm::new(
            ToyModelSpec::uniform(3, LengthMode::Fixed { length: 3 }).unwrap(),
            1.0,
            64,
        )
        .unwrap();
        let reward = SyntheticReward::new(crate::reward::SyntheticRewardSpec::TargetSubstring {
            target: crate::reward::TargetPattern::Tokens(vec![2]),
        })
        .unwrap();
        (lm, reward)
    }

    fn prompts(n: usize) -> Vec<PromptItem> {
        (0..n)
            .map(|i| PromptItem {
                id: format!("p{i}"),
                prompt: String::new(),
                reference: Some("2 2 2".into()),
            })
            .collect()
    }

    #[test]
    fn method_parsing() {
        assert_eq!("ebd".parse::<Method>().unwrap(), Method::Ebd);
        assert_eq!("best_of_n".parse::<Method>().unwrap(), Method::BestOfN);
        assert!("beam".parse::<Method>().is_err());
    }

    #[test]
    fn direct_and_best_of_n_counters() {
        let (lm, reward) = toy();
        let p = TokenSeq::empty();
        let d = run_direct(&lm, &reward, &p, &mut chain_rng(1, 0)).unwrap();
        assert_eq!((d.calls.generation_calls, d.calls.reward_calls), (1, 1));
        let b = run_best_of_n(&lm, &reward, &p, 5, &mut chain_rng(1, 0)).unwrap();
        assert_eq!((b.calls.generation_calls, b.calls.reward_calls), (5, 5));
        assert!(run_best_of_n(&lm, &reward, &p, 0, &mut chain_rng(1, 0)).is_err());
        // n = 1 draws exactly what direct draws
        let b1 = run_best_of_n(&lm, &reward, &p, 1, &mut chain_rng(1, 0)).unwrap();
        assert_eq!(b1.response, d.response);
    }

    #[test]
    fn batch_records_and_failures() {
        let (lm, reward) = toy();
        let mut items = prompts(6);
        items[3].prompt = "not-a-token".into();
        let settings = BatchSettings::new(Method::Ebd, DecodeConfig::default());
        let mut out = Vec::new();
        let (records, summary) = run_batch(&lm, &reward, &items, &settings, &mut out, None).unwrap();
        assert_eq!(summary, BatchSummary { total: 6, failures: 1 });
        assert!(records[3].is_failure());
        for r in records.iter().filter(|r| !r.is_failure()) {
            assert_eq!(r.generation_calls, 16);
            assert_eq!(r.reward_calls, 16);
            assert!(r.acceptance_rate.is_some());
            assert!(r.correct.is_some());
        }
        let text = String::from_utf8(out).unwrap();
        assert_eq!(text.lines().count(), 6);
        assert!(text.lines().next().unwrap().contains("\"prompt_id\":\"p0\""));
    }

    #[test]
    fn empty_batch_is_empty() {
        let (lm, reward) = toy();
        let settings = BatchSettings::new(Method::Direct, DecodeConfig::default());
        let mut out = Vec::new();
        let (records, summary) = run_batch(&lm, &reward, &[], &settings, &mut out, None).unwrap();
        assert!(records.is_empty() && out.is_empty());
        assert_eq!(summary.total, 0);
    }

    #[test]
    fn traces_are_referenced() {
        let (lm, reward) = toy();
        let mut settings = BatchSettings::new(Method::Ebd, DecodeConfig::default());
        settings.trace_file = Some("traces.jsonl".into());
        let mut out = Vec::new();
        let mut traces = Vec::new();
        let (records, _) =
            run_batch(&lm, &reward, &prompts(2), &settings, &mut out, Some(&mut traces)).unwrap();
        assert_eq!(records[1].trace_ref.as_deref(), Some("traces.jsonl#p1"));
        let lines: Vec<TraceLine> = String::from_utf8(traces)
            .unwrap()
            .lines()
            .map(|l| serde_json::from_str(l).unwrap())
            .collect();
        assert_eq!(lines.len(), 2);
        assert_eq!(lines[0].trace.len(), 12);
    }
}
