//! Reward backends and prompt-local standardization.
//!
//! Raw scores are centred and scaled by statistics fitted once on the Stage I
//! pool; after that the statistics are frozen for the lifetime of the chain.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::error::{Error, Result};
use crate::generator::{RewardBackend, TextResponse, TokenSeq};
use crate::llm_client::{EndpointConfig, HttpClient};

/// Floor applied to the fitted standard deviation.
pub const STD_FLOOR: f64 = 1e-6;

/// A finite raw reward.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RewardScore(f64);

impl RewardScore {
    pub fn new(raw: f64) -> Result<Self> {
        if raw.is_finite() {
            Ok(RewardScore(raw))
        } else {
            Err(Error::Data(format!("reward {raw} is not finite")))
        }
    }

    pub fn raw(self) -> f64 {
        self.0
    }
}

/// Prompt-level reward mean and (population) standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdvantageStats {
    mean: f64,
    std: f64,
    pool_size: usize,
}

impl AdvantageStats {
    /// Fixed statistics supplied from outside (oracle targets, tests).
    pub fn fixed(mean: f64, std: f64) -> Result<Self> {
        if !mean.is_finite() || !std.is_finite() || std < STD_FLOOR {
            return Err(Error::input(format!(
                "standardization needs finite mean and std >= {STD_FLOOR}, got ({mean}, {std})"
            )));
        }
        Ok(AdvantageStats {
            mean,
            std,
            pool_size: 1,
        })
    }

    /// Identity standardization: advantages equal raw rewards.
    pub fn identity() -> Self {
        AdvantageStats {
            mean: 0.0,
            std: 1.0,
            pool_size: 1,
        }
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    pub fn std(&self) -> f64 {
        self.std
    }

    pub fn pool_size(&self) -> usize {
        self.pool_size
    }

    pub fn advantage(&self, raw: RewardScore) -> f64 {
        advantage(raw, self)
    }
}

/// Mean and population standard deviation of a reward pool, std floored at [`STD_FLOOR`].
pub fn fit_stats(rewards: &[RewardScore]) -> Result<AdvantageStats> {
    if rewards.is_empty() {
        return Err(Error::input("cannot fit advantage statistics on an empty pool"));
    }
    let n = rewards.len() as f64;
    let mean = rewards.iter().map(|r| r.0).sum::<f64>() / n;
    let var = rewards.iter().map(|r| (r.0 - mean).powi(2)).sum::<f64>() / n;
    Ok(AdvantageStats {
        mean,
        std: var.sqrt().max(STD_FLOOR),
        pool_size: rewards.len(),
    })
}

/// Standardized advantage `(raw - mean) / std`.
pub fn advantage(raw: RewardScore, stats: &AdvantageStats) -> f64 {
    (raw.0 - stats.mean) / stats.std
}

/// Holds a chain's statistics; they can be fitted exactly once.
#[derive(Debug, Clone, Default)]
pub struct StatsCell(Option<AdvantageStats>);

impl StatsCell {
    pub fn new() -> Self {
        StatsCell(None)
    }

    pub fn fit_once(&mut self, rewards: &[RewardScore]) -> Result<AdvantageStats> {
        self.install(fit_stats(rewards)?)
    }

    pub fn install(&mut self, stats: AdvantageStats) -> Result<AdvantageStats> {
        if self.0.is_some() {
            return Err(Error::StatsFrozen);
        }
        self.0 = Some(stats);
        Ok(stats)
    }

    pub fn get(&self) -> Option<&AdvantageStats> {
        self.0.as_ref()
    }
}

/// What a target-substring reward looks for.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TargetPattern {
    Tokens(Vec<u32>),
    Text(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LookupEntry {
    pub tokens: Vec<u32>,
    pub score: f64,
}

/// Declarative synthetic reward, loaded from the same TOML format as toy models.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum SyntheticRewardSpec {
    /// 1.0 when the pattern occurs contiguously in the response, else 0.0.
    TargetSubstring { target: TargetPattern },
    /// `-|len - desired|`, with length in tokens (or words for text).
    TokenCountMatch { desired: usize },
    /// Explicit sequence to score map; `default` covers missing sequences.
    LookupTable {
        entries: Vec<LookupEntry>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        default: Option<f64>,
    },
}

impl SyntheticRewardSpec {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path.as_ref())?)
    }
}

/// Compiled synthetic reward backend.
#[derive(Debug, Clone)]
pub struct SyntheticReward {
    spec: SyntheticRewardSpec,
    table: HashMap<TokenSeq, f64>,
}

impl SyntheticReward {
    pub fn new(spec: SyntheticRewardSpec) -> Result<Self> {
        let mut table = HashMap::new();
        if let SyntheticRewardSpec::LookupTable { entries, default } = &spec {
            for e in entries {
                RewardScore::new(e.score)?;
                if table.insert(TokenSeq(e.tokens.clone()), e.score).is_some() {
                    return Err(Error::input(format!(
                        "lookup table lists {} twice",
                        TokenSeq(e.tokens.clone())
                    )));
                }
            }
            if let Some(d) = default {
                RewardScore::new(*d)?;
            }
        }
        Ok(SyntheticReward { spec, table })
    }

    /// Lookup-table reward from explicit pairs, no default.
    pub fn lookup(entries: impl IntoIterator<Item = (TokenSeq, f64)>) -> Result<Self> {
        SyntheticReward::new(SyntheticRewardSpec::LookupTable {
            entries: entries
                .into_iter()
                .map(|(y, score)| LookupEntry { tokens: y.0, score })
                .collect(),
            default: None,
        })
    }

    pub fn spec(&self) -> &SyntheticRewardSpec {
        &self.spec
    }

    /// Whether every sequence in `support` has a score.
    pub fn covers<'a>(&self, support: impl IntoIterator<Item = &'a TokenSeq>) -> bool {
        match &self.spec {
            SyntheticRewardSpec::LookupTable { default: None, .. } => {
                support.into_iter().all(|y| self.table.contains_key(y))
            }
            _ => true,
        }
    }

    pub fn score_tokens(&self, response: &TokenSeq) -> Result<RewardScore> {
        let raw = match &self.spec {
            SyntheticRewardSpec::TargetSubstring { target } => match target {
                TargetPattern::Tokens(t) => indicator(contains_run(&response.0, t)),
                TargetPattern::Text(_) => {
                    return Err(Error::input("text target cannot score token responses"))
                }
            },
            SyntheticRewardSpec::TokenCountMatch { desired } => {
                -(response.len() as f64 - *desired as f64).abs()
            }
            SyntheticRewardSpec::LookupTable { default, .. } => {
                match self.table.get(response).copied().or(*default) {
                    Some(s) => s,
                    None => {
                        return Err(Error::Data(format!("no lookup entry for {response}")))
                    }
                }
            }
        };
        RewardScore::new(raw)
    }

    pub fn score_text(&self, response: &str) -> Result<RewardScore> {
        let raw = match &self.spec {
            SyntheticRewardSpec::TargetSubstring { target } => match target {
                TargetPattern::Text(t) => indicator(response.contains(t.as_str())),
                TargetPattern::Tokens(_) => {
                    return Err(Error::input("token target cannot score text responses"))
                }
            },
            SyntheticRewardSpec::TokenCountMatch { desired } => {
                -(response.split_whitespace().count() as f64 - *desired as f64).abs()
            }
            SyntheticRewardSpec::LookupTable { .. } => {
                return Err(Error::input("lookup-table rewards only score token responses"))
            }
        };
        RewardScore::new(raw)
    }
}

fn indicator(b: bool) -> f64 {
    if b {
        1.0
    } else {
        0.0
    }
}

fn contains_run(haystack: &[u32], needle: &[u32]) -> bool {
    needle.is_empty() || haystack.windows(needle.len()).any(|w| w == needle)
}

impl RewardBackend<TokenSeq, TokenSeq> for SyntheticReward {
    fn score(&self, _prompt: &TokenSeq, response: &TokenSeq) -> Result<RewardScore> {
        self.score_tokens(response)
    }
}

impl RewardBackend<str, TextResponse> for SyntheticReward {
    fn score(&self, _prompt: &str, response: &TextResponse) -> Result<RewardScore> {
        self.score_text(&response.text)
    }
}

/// Remote scorer: `POST {base_url}/score` with `{prompt, response}`, answered
/// by `{reward: number}`.
#[derive(Debug)]
pub struct RemoteReward {
    http: HttpClient,
}

impl RemoteReward {
    pub fn new(cfg: EndpointConfig) -> Result<Self> {
        Ok(RemoteReward {
            http: HttpClient::new(cfg)?,
        })
    }

    pub fn with_client(http: HttpClient) -> Self {
        RemoteReward { http }
    }

    pub fn client(&self) -> &HttpClient {
        &self.http
    }

    pub fn score_text(&self, prompt: &str, response: &str) -> Result<RewardScore> {
        let body = json!({ "prompt": prompt, "response": response });
        let reply = self.http.post_json("/score", &body)?;
        let value = reply
            .body
            .get("reward")
            .ok_or_else(|| Error::Data("score response has no `reward` field".into()))?;
        let raw = value
            .as_f64()
            .ok_or_else(|| Error::Data(format!("`reward` is not a number: {value}")))?;
        RewardScore::new(raw)
    }
}

impl RewardBackend<str, TextResponse> for RemoteReward {
    fn score(&self, prompt: &str, response: &TextResponse) -> Result<RewardScore> {
        self.score_text(prompt, &response.text)
    }
}
