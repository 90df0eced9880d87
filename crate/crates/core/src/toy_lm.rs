//! Exact, enumerable autoregressive toy model.
//!
//! A [`ToyModelSpec`] is a unigram (order 1) or bigram (order 2) table over an
//! opaque vocabulary, plus a length rule. [`ToyLm`] binds a spec to a decoding
//! temperature and length cap and implements [`Generator`], so the sampler can
//! run against it exactly as it would against a remote model. Because every
//! conditional is explicit, the full response law can be scored
//! ([`ToyLm::log_prob`]) and enumerated ([`ToyLm::enumerate`]).
//!
//! Table layout: an order-1 spec has a single row. An order-2 spec has
//! `vocab_size + 1` rows; row 0 is the start context (no previous token in
//! prompt or response) and row `t + 1` is the law after token `t`.

use std::collections::BTreeMap;
use std::path::Path;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::generator::{ChainRng, Generator, TokenSeq};
use crate::oracle::SeqDistribution;
use crate::sampler::DecodeConfig;

/// Tolerance for row normalization of the transition table.
pub const ROW_SUM_TOLERANCE: f64 = 1e-12;

/// Default refusal threshold for [`ToyLm::enumerate`].
pub const DEFAULT_ENUMERATION_CAP: u64 = 1_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum LengthMode {
    /// Every response has exactly `length` tokens.
    Fixed { length: usize },
    /// Before each token the model stops with probability `stop_prob`;
    /// responses are cut off at `max_len` tokens.
    Stochastic { stop_prob: f64, max_len: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSpec {
    vocab_size: usize,
    order: u8,
    length_mode: LengthMode,
    transition_table: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawSpec", into = "RawSpec")]
pub struct ToyModelSpec {
    vocab_size: usize,
    order: u8,
    length_mode: LengthMode,
    transition_table: Vec<Vec<f64>>,
}

impl TryFrom<RawSpec> for ToyModelSpec {
    type Error = Error;

    fn try_from(raw: RawSpec) -> Result<Self> {
        ToyModelSpec::new(raw.vocab_size, raw.order, raw.transition_table, raw.length_mode)
    }
}

impl From<ToyModelSpec> for RawSpec {
    fn from(spec: ToyModelSpec) -> Self {
        RawSpec {
            vocab_size: spec.vocab_size,
            order: spec.order,
            length_mode: spec.length_mode,
            transition_table: spec.transition_table,
        }
    }
}

impl ToyModelSpec {
    pub fn new(
        vocab_size: usize,
        order: u8,
        transition_table: Vec<Vec<f64>>,
        length_mode: LengthMode,
    ) -> Result<Self> {
        if vocab_size == 0 || vocab_size > u32::MAX as usize {
            return Err(Error::input("vocab_size must be positive"));
        }
        let expected_rows = match order {
            1 => 1,
            2 => vocab_size + 1,
            other => return Err(Error::input(format!("order must be 1 or 2, got {other}"))),
        };
        if transition_table.len() != expected_rows {
            return Err(Error::input(format!(
                "order-{order} table needs {expected_rows} rows, got {}",
                transition_table.len()
            )));
        }
        for (r, row) in transition_table.iter().enumerate() {
            if row.len() != vocab_size {
                return Err(Error::input(format!(
                    "row {r} has {} entries, expected {vocab_size}",
                    row.len()
                )));
            }
            if row.iter().any(|p| !p.is_finite() || *p < 0.0) {
                return Err(Error::input(format!("row {r} has a negative or non-finite entry")));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > ROW_SUM_TOLERANCE {
                return Err(Error::input(format!("row {r} sums to {sum}, not 1")));
            }
        }
        if let LengthMode::Stochastic { stop_prob, max_len } = length_mode {
            if !(0.0..=1.0).contains(&stop_prob) {
                return Err(Error::input("stop_prob must lie in [0, 1]"));
            }
            if max_len == 0 {
                return Err(Error::input("stochastic max_len must be at least 1"));
            }
        }
        Ok(ToyModelSpec {
            vocab_size,
            order,
            length_mode,
            transition_table,
        })
    }

    /// Order-1 model with the same law at every position.
    pub fn unigram(probs: Vec<f64>, length_mode: LengthMode) -> Result<Self> {
        ToyModelSpec::new(probs.len(), 1, vec![probs], length_mode)
    }

    /// Uniform order-1 model.
    pub fn uniform(vocab_size: usize, length_mode: LengthMode) -> Result<Self> {
        ToyModelSpec::unigram(vec![1.0 / vocab_size as f64; vocab_size], length_mode)
    }

    /// All mass on `token` at every step.
    pub fn point_mass(vocab_size: usize, token: u32, length_mode: LengthMode) -> Result<Self> {
        let mut row = vec![0.0; vocab_size];
        *row.get_mut(token as usize)
            .ok_or_else(|| Error::input("point-mass token outside vocabulary"))? = 1.0;
        ToyModelSpec::unigram(row, length_mode)
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref())?;
        Self::from_toml_str(&text)
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn order(&self) -> u8 {
        self.order
    }

    pub fn length_mode(&self) -> &LengthMode {
        &self.length_mode
    }

    pub fn transition_table(&self) -> &[Vec<f64>] {
        &self.transition_table
    }
}

/// Per-context next-outcome law after tempering. Outcome `vocab_size` is "stop".
#[derive(Debug, Clone)]
struct StepLaw {
    log_probs: Vec<f64>,
    sampler: WeightedIndex<f64>,
}

impl StepLaw {
    fn new(raw: &[f64], temperature: f64) -> Result<Self> {
        // logit scaling: q_i ∝ exp(log p_i / τ)
        let scaled: Vec<f64> = raw.iter().map(|p| p.ln() / temperature).collect();
        let max = scaled.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if max == f64::NEG_INFINITY {
            return Err(Error::input("a context has no outcome with positive probability"));
        }
        let log_norm = max + scaled.iter().map(|s| (s - max).exp()).sum::<f64>().ln();
        let log_probs: Vec<f64> = scaled.iter().map(|s| s - log_norm).collect();
        let weights: Vec<f64> = log_probs.iter().map(|l| l.exp()).collect();
        let sampler = WeightedIndex::new(&weights)
            .map_err(|e| Error::input(format!("degenerate step law: {e}")))?;
        Ok(StepLaw { log_probs, sampler })
    }
}

/// A toy spec bound to a decoding temperature and length cap.
#[derive(Debug, Clone)]
pub struct ToyLm {
    spec: ToyModelSpec,
    temperature: f64,
    /// Longest response this prior can emit.
    cap: usize,
    laws: Vec<StepLaw>,
}

impl ToyLm {
    pub fn new(spec: ToyModelSpec, temperature: f64, max_len: usize) -> Result<Self> {
        if !(temperature > 0.0 && temperature.is_finite()) {
            return Err(Error::input("temperature must be positive and finite"));
        }
        let cap = match spec.length_mode {
            LengthMode::Fixed { length } => {
                if length > max_len {
                    return Err(Error::input(format!(
                        "fixed length {length} exceeds the length limit {max_len}"
                    )));
                }
                length
            }
            LengthMode::Stochastic { max_len: spec_cap, .. } => spec_cap.min(max_len),
        };
        let laws = spec
            .transition_table
            .iter()
            .map(|row| {
                let mut outcomes = Vec::with_capacity(row.len() + 1);
                match spec.length_mode {
                    LengthMode::Fixed { .. } => {
                        outcomes.extend_from_slice(row);
                        outcomes.push(0.0);
                    }
                    LengthMode::Stochastic { stop_prob, .. } => {
                        outcomes.extend(row.iter().map(|p| p * (1.0 - stop_prob)));
                        outcomes.push(stop_prob);
                    }
                }
                StepLaw::new(&outcomes, temperature)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(ToyLm {
            spec,
            temperature,
            cap,
            laws,
        })
    }

    /// Bind `spec` to the temperature and length limit of `config`.
    pub fn from_config(spec: ToyModelSpec, config: &DecodeConfig) -> Result<Self> {
        ToyLm::new(spec, config.temperature, config.max_len)
    }

    pub fn spec(&self) -> &ToyModelSpec {
        &self.spec
    }

    pub fn temperature(&self) -> f64 {
        self.temperature
    }

    /// Longest response this prior can emit.
    pub fn max_response_len(&self) -> usize {
        self.cap
    }

    fn stop_index(&self) -> usize {
        self.spec.vocab_size
    }

    fn check_tokens(&self, what: &str, seq: &TokenSeq) -> Result<()> {
        if let Some(bad) = seq.0.iter().find(|&&t| t as usize >= self.spec.vocab_size) {
            return Err(Error::input(format!(
                "{what} token {bad} outside vocabulary of size {}",
                self.spec.vocab_size
            )));
        }
        Ok(())
    }

    fn context_row(&self, prompt: &[u32], generated: &[u32]) -> usize {
        if self.spec.order == 1 {
            return 0;
        }
        generated
            .last()
            .or_else(|| prompt.last())
            .map_or(0, |&t| t as usize + 1)
    }

    /// Log-probability that the next outcome after `prompt ++ generated` is `outcome`
    /// (a token id, or `stop_index()` for stopping). Forced stops at the length
    /// cap have probability 1.
    fn step_log_prob(&self, prompt: &[u32], generated: &[u32], outcome: usize) -> f64 {
        let len = generated.len();
        let forced_stop = match self.spec.length_mode {
            LengthMode::Fixed { length } => len >= length,
            LengthMode::Stochastic { .. } => len >= self.cap,
        };
        if forced_stop {
            return if outcome == self.stop_index() { 0.0 } else { f64::NEG_INFINITY };
        }
        self.laws[self.context_row(prompt, generated)].log_probs[outcome]
    }

    fn extend(&self, prompt: &[u32], mut tokens: Vec<u32>, rng: &mut ChainRng) -> TokenSeq {
        loop {
            let len = tokens.len();
            let done = match self.spec.length_mode {
                LengthMode::Fixed { length } => len >= length,
                LengthMode::Stochastic { .. } => len >= self.cap,
            };
            if done {
                break;
            }
            let law = &self.laws[self.context_row(prompt, &tokens)];
            let outcome = law.sampler.sample(rng);
            if outcome == self.stop_index() {
                break;
            }
            tokens.push(outcome as u32);
        }
        TokenSeq(tokens)
    }

    /// Draw a complete response from the tempered autoregressive law.
    pub fn sample_full(&self, prompt: &TokenSeq, rng: &mut ChainRng) -> Result<TokenSeq> {
        self.check_tokens("prompt", prompt)?;
        Ok(self.extend(&prompt.0, Vec::new(), rng))
    }

    /// Keep `prefix` and draw the continuation from `p(· | prompt, prefix)`.
    pub fn sample_suffix(
        &self,
        prompt: &TokenSeq,
        prefix: &TokenSeq,
        rng: &mut ChainRng,
    ) -> Result<TokenSeq> {
        self.check_tokens("prompt", prompt)?;
        self.check_tokens("prefix", prefix)?;
        if prefix.len() > self.cap {
            return Err(Error::input(format!(
                "prefix of {} tokens is longer than the length limit {}",
                prefix.len(),
                self.cap
            )));
        }
        Ok(self.extend(&prompt.0, prefix.0.clone(), rng))
    }

    /// Exact log-probability of a complete response, stop event included.
    /// Unreachable responses (and invalid token ids) give `-inf`.
    pub fn log_prob(&self, prompt: &TokenSeq, response: &TokenSeq) -> f64 {
        self.log_prob_continuation(prompt, &TokenSeq::empty(), response)
    }

    /// Log-probability that a response begins with `prefix` (no stop event).
    pub fn log_prob_prefix(&self, prompt: &TokenSeq, prefix: &TokenSeq) -> f64 {
        if prefix.0.iter().any(|&t| t as usize >= self.spec.vocab_size) {
            return f64::NEG_INFINITY;
        }
        let mut total = 0.0;
        for i in 0..prefix.len() {
            total += self.step_log_prob(&prompt.0, &prefix.0[..i], prefix.0[i] as usize);
            if total == f64::NEG_INFINITY {
                break;
            }
        }
        total
    }

    /// Conditional log-probability of `suffix` (then stopping) given `prefix`.
    pub fn log_prob_continuation(
        &self,
        prompt: &TokenSeq,
        prefix: &TokenSeq,
        suffix: &TokenSeq,
    ) -> f64 {
        let vocab = self.spec.vocab_size;
        if suffix.0.iter().chain(prefix.0.iter()).any(|&t| t as usize >= vocab) {
            return f64::NEG_INFINITY;
        }
        let mut seq = prefix.0.clone();
        seq.reserve(suffix.len());
        let mut total = 0.0;
        for &t in &suffix.0 {
            total += self.step_log_prob(&prompt.0, &seq, t as usize);
            if total == f64::NEG_INFINITY {
                return total;
            }
            seq.push(t);
        }
        total + self.step_log_prob(&prompt.0, &seq, self.stop_index())
    }

    /// Size of the unpruned response space.
    fn space_size(&self) -> u128 {
        let v = self.spec.vocab_size as u128;
        let pow = |n: usize| -> u128 {
            let mut acc: u128 = 1;
            for _ in 0..n {
                acc = acc.saturating_mul(v);
            }
            acc
        };
        match self.spec.length_mode {
            LengthMode::Fixed { length } => pow(length),
            LengthMode::Stochastic { .. } => {
                (0..=self.cap).fold(0u128, |acc, n| acc.saturating_add(pow(n)))
            }
        }
    }

    /// Every reachable response with its exact probability.
    pub fn enumerate(&self, prompt: &TokenSeq, cap: u64) -> Result<SeqDistribution> {
        self.check_tokens("prompt", prompt)?;
        let size = self.space_size();
        if size > cap as u128 {
            let size = if size == u128::MAX {
                "more than 2^128 sequences".to_string()
            } else {
                format!("{size} sequences")
            };
            return Err(Error::Capacity { size, cap });
        }
        let mut entries = BTreeMap::new();
        let mut stack: Vec<(Vec<u32>, f64)> = vec![(Vec::new(), 0.0)];
        while let Some((seq, lp)) = stack.pop() {
            let stop_lp = self.step_log_prob(&prompt.0, &seq, self.stop_index());
            if stop_lp > f64::NEG_INFINITY {
                entries.insert(TokenSeq(seq.clone()), (lp + stop_lp).exp());
            }
            for t in 0..self.spec.vocab_size {
                let step = self.step_log_prob(&prompt.0, &seq, t);
                if step > f64::NEG_INFINITY {
                    let mut next = seq.clone();
                    next.push(t as u32);
                    stack.push((next, lp + step));
                }
            }
        }
        SeqDistribution::from_probs(entries)
    }
}

impl Generator for ToyLm {
    type Prompt = TokenSeq;
    type Response = TokenSeq;

    fn sample_full(&self, prompt: &TokenSeq, rng: &mut ChainRng) -> Result<TokenSeq> {
        ToyLm::sample_full(self, prompt, rng)
    }

    fn sample_suffix(
        &self,
        prompt: &TokenSeq,
        prefix: &TokenSeq,
        rng: &mut ChainRng,
    ) -> Result<TokenSeq> {
        ToyLm::sample_suffix(self, prompt, prefix, rng)
    }
}

/// Parse a toy-backend prompt: whitespace- or comma-separated token ids.
pub fn parse_token_prompt(text: &str) -> Result<TokenSeq> {
    text.split(|c: char| c.is_whitespace() || c == ',')
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse::<u32>()
                .map_err(|_| Error::input(format!("toy prompt token {s:?} is not an integer id")))
        })
        .collect::<Result<Vec<_>>>()
        .map(TokenSeq)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn rng(seed: u64) -> ChainRng {
        ChainRng::seed_from_u64(seed)
    }

    fn fixed(length: usize) -> LengthMode {
        LengthMode::Fixed { length }
    }

    fn bigram() -> ToyModelSpec {
        ToyModelSpec::new(
            3,
            2,
            vec![
                vec![0.5, 0.3, 0.2],
                vec![0.7, 0.2, 0.1],
                vec![0.1, 0.6, 0.3],
                vec![0.25, 0.25, 0.5],
            ],
            fixed(4),
        )
        .unwrap()
    }

    #[test]
    fn rejects_bad_tables() {
        assert!(ToyModelSpec::unigram(vec![0.5, 0.6], fixed(2)).is_err());
        assert!(ToyModelSpec::unigram(vec![1.5, -0.5], fixed(2)).is_err());
        assert!(ToyModelSpec::new(2, 3, vec![vec![0.5, 0.5]], fixed(2)).is_err());
        assert!(ToyModelSpec::new(2, 2, vec![vec![0.5, 0.5]], fixed(2)).is_err());
        let stoch = LengthMode::Stochastic { stop_prob: 1.5, max_len: 3 };
        assert!(ToyModelSpec::unigram(vec![0.5, 0.5], stoch).is_err());
    }

    #[test]
    fn zero_length_is_empty() {
        let lm = ToyLm::new(ToyModelSpec::uniform(3, fixed(0)).unwrap(), 1.0, 10).unwrap();
        let y = lm.sample_full(&TokenSeq::empty(), &mut rng(1)).unwrap();
        assert!(y.is_empty());
        assert_eq!(lm.log_prob(&TokenSeq::empty(), &y), 0.0);
    }

    #[test]
    fn point_mass_model() {
        let lm = ToyLm::new(ToyModelSpec::point_mass(3, 0, fixed(4)).unwrap(), 1.0, 10).unwrap();
        let p = TokenSeq::empty();
        let y = lm.sample_full(&p, &mut rng(7)).unwrap();
        assert_eq!(y.0, vec![0, 0, 0, 0]);
        assert_eq!(lm.log_prob(&p, &y), 0.0);
        assert_eq!(lm.log_prob(&p, &TokenSeq::new(vec![0, 1, 0, 0])), f64::NEG_INFINITY);
        let y = lm.sample_suffix(&p, &TokenSeq::new(vec![0, 0]), &mut rng(8)).unwrap();
        assert_eq!(y.0, vec![0, 0, 0, 0]);
    }

    #[test]
    fn uniform_log_prob() {
        let lm = ToyLm::new(ToyModelSpec::uniform(2, fixed(3)).unwrap(), 1.0, 10).unwrap();
        for bits in 0..8u32 {
            let y = TokenSeq::new((0..3).map(|i| (bits >> i) & 1).collect());
            assert!((lm.log_prob(&TokenSeq::empty(), &y) - (1.0f64 / 8.0).ln()).abs() < 1e-15);
        }
        // wrong length is unreachable in fixed mode
        assert_eq!(
            lm.log_prob(&TokenSeq::empty(), &TokenSeq::new(vec![0, 1])),
            f64::NEG_INFINITY
        );
    }

    #[test]
    fn full_prefix_is_returned_unchanged() {
        let lm = ToyLm::new(bigram(), 1.0, 10).unwrap();
        let prefix = TokenSeq::new(vec![2, 1, 0, 2]);
        let y = lm.sample_suffix(&TokenSeq::empty(), &prefix, &mut rng(3)).unwrap();
        assert_eq!(y, prefix);
    }

    #[test]
    fn invalid_inputs_are_rejected() {
        let lm = ToyLm::new(bigram(), 1.0, 10).unwrap();
        assert!(lm.sample_full(&TokenSeq::new(vec![3]), &mut rng(1)).is_err());
        assert!(lm
            .sample_suffix(&TokenSeq::empty(), &TokenSeq::new(vec![0; 5]), &mut rng(1))
            .is_err());
        assert!(ToyLm::new(bigram(), 0.0, 10).is_err());
        assert!(ToyLm::new(bigram(), 1.0, 3).is_err());
    }

    #[test]
    fn enumerate_counts_and_normalizes() {
        let lm = ToyLm::new(ToyModelSpec::uniform(3, fixed(4)).unwrap(), 1.0, 10).unwrap();
        let dist = lm.enumerate(&TokenSeq::empty(), DEFAULT_ENUMERATION_CAP).unwrap();
        assert_eq!(dist.support_size(), 81);
        for (_, p) in dist.iter() {
            assert!((p - 1.0 / 81.0).abs() < 1e-15);
        }
        let lm = ToyLm::new(bigram(), 0.7, 10).unwrap();
        let dist = lm.enumerate(&TokenSeq::new(vec![1]), DEFAULT_ENUMERATION_CAP).unwrap();
        let total: f64 = dist.iter().map(|(_, p)| p).sum();
        assert!((total - 1.0).abs() < 1e-9);
        for (y, p) in dist.iter() {
            let lp = lm.log_prob(&TokenSeq::new(vec![1]), y);
            assert!((lp.exp() - p).abs() < 1e-12);
        }
    }

    #[test]
    fn enumerate_refuses_large_spaces() {
        let lm = ToyLm::new(ToyModelSpec::uniform(3, fixed(13)).unwrap(), 1.0, 100).unwrap();
        match lm.enumerate(&TokenSeq::empty(), DEFAULT_ENUMERATION_CAP) {
            Err(Error::Capacity { cap, .. }) => assert_eq!(cap, DEFAULT_ENUMERATION_CAP),
            other => panic!("expected capacity error, got {other:?}"),
        }
        let err = lm.enumerate(&TokenSeq::empty(), 10).unwrap_err();
        assert!(err.to_string().contains("cap of 10"));
    }

    #[test]
    fn stochastic_length_law() {
        let mode = LengthMode::Stochastic { stop_prob: 0.25, max_len: 3 };
        let lm = ToyLm::new(ToyModelSpec::uniform(2, mode).unwrap(), 1.0, 100).unwrap();
        let p = TokenSeq::empty();
        // stop immediately
        assert!((lm.log_prob(&p, &TokenSeq::empty()) - 0.25f64.ln()).abs() < 1e-15);
        // one token then stop: 0.75 * 0.5 * 0.25
        let expected = (0.75 * 0.5 * 0.25f64).ln();
        assert!((lm.log_prob(&p, &TokenSeq::new(vec![1])) - expected).abs() < 1e-14);
        // cap reached: no stop factor
        let expected = (0.375f64).powi(3).ln();
        assert!((lm.log_prob(&p, &TokenSeq::new(vec![1, 0, 1])) - expected).abs() < 1e-14);
        assert_eq!(lm.log_prob(&p, &TokenSeq::new(vec![1, 0, 1, 1])), f64::NEG_INFINITY);
        let dist = lm.enumerate(&p, 1000).unwrap();
        assert_eq!(dist.support_size(), 1 + 2 + 4 + 8);
        // the config length limit tightens the spec cap
        let short = ToyLm::new(ToyModelSpec::uniform(2, mode).unwrap(), 1.0, 2).unwrap();
        assert_eq!(short.max_response_len(), 2);
    }

    #[test]
    fn temperature_one_reproduces_table() {
        let lm = ToyLm::new(bigram(), 1.0, 10).unwrap();
        let y = TokenSeq::new(vec![0, 2, 2, 1]);
        let expected = (0.5f64 * 0.1 * 0.5 * 0.25).ln();
        assert!((lm.log_prob(&TokenSeq::empty(), &y) - expected).abs() < 1e-14);
    }

    #[test]
    fn temperature_rescales_logits() {
        let spec = ToyModelSpec::unigram(vec![0.8, 0.2], fixed(1)).unwrap();
        let lm = ToyLm::new(spec, 0.5, 10).unwrap();
        // 0.8^2 / (0.8^2 + 0.2^2)
        let expected = (0.64f64 / 0.68).ln();
        assert!((lm.log_prob(&TokenSeq::empty(), &TokenSeq::new(vec![0])) - expected).abs() < 1e-14);
    }

    #[test]
    fn parse_prompts() {
        assert_eq!(parse_token_prompt("1 2,3").unwrap().0, vec![1, 2, 3]);
        assert!(parse_token_prompt("").unwrap().is_empty());
        assert!(parse_token_prompt("hello").is_err());
    }

    #[test]
    fn spec_toml_round_trip() {
        let text = r#"
vocab_size = 2
order = 1
transition_table = [[0.5, 0.5]]

[length_mode]
kind = "fixed"
length = 3
"#;
        let spec = ToyModelSpec::from_toml_str(text).unwrap();
        assert_eq!(spec.length_mode(), &fixed(3));
        let back = toml::to_string(&spec).unwrap();
        assert_eq!(ToyModelSpec::from_toml_str(&back).unwrap(), spec);
        assert!(ToyModelSpec::from_toml_str(&text.replace("0.5, 0.5", "0.5, 0.6")).is_err());
    }
}
