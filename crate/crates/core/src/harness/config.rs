//! Run configuration file (TOML). Keys mirror the fields of [`RunConfig`];
//! relative paths resolve against the directory of the config file.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{Method, Timing};
use crate::error::{Error, Result};
use crate::llm_client::EndpointConfig;
use crate::sampler::DecodeConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    Toy,
    Remote,
}

impl std::str::FromStr for BackendKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "toy" => Ok(BackendKind::Toy),
            "remote" => Ok(BackendKind::Remote),
            other => Err(Error::input(format!("unknown backend {other:?} (expected toy or remote)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "backend", rename_all = "snake_case", deny_unknown_fields)]
pub enum RewardConfig {
    /// Synthetic reward loaded from a TOML spec.
    Synthetic { spec: PathBuf },
    /// Remote `/score` endpoint.
    Remote { endpoint: EndpointConfig },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_method")]
    pub method: Method,
    #[serde(default = "default_backend")]
    pub backend: BackendKind,
    #[serde(default)]
    pub decode: DecodeConfig,
    pub reward: Option<RewardConfig>,
    /// Toy model spec (toy backend).
    pub model: Option<PathBuf>,
    /// Completions endpoint (remote backend).
    pub endpoint: Option<EndpointConfig>,
    pub prompts: Option<PathBuf>,
    pub output: Option<PathBuf>,
    #[serde(default = "default_parallelism")]
    pub parallelism: usize,
    #[serde(default = "default_seed")]
    pub seed: u64,
    /// Best-of-n pool size; defaults to the decode pool size.
    pub n: Option<usize>,
    pub timing: Option<Timing>,
    /// `exact`, `boxed` or `regex:<pattern>`.
    pub grader: Option<String>,
    /// Regex a valid response must match; the `\boxed{}` check when absent.
    pub validator: Option<String>,
    pub traces: Option<PathBuf>,
}

fn default_method() -> Method {
    Method::Ebd
}

fn default_backend() -> BackendKind {
    BackendKind::Toy
}

fn default_parallelism() -> usize {
    1
}

fn default_seed() -> u64 {
    42
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            method: default_method(),
            backend: default_backend(),
            decode: DecodeConfig::default(),
            reward: None,
            model: None,
            endpoint: None,
            prompts: None,
            output: None,
            parallelism: default_parallelism(),
            seed: default_seed(),
            n: None,
            timing: None,
            grader: None,
            validator: None,
            traces: None,
        }
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    /// Load and resolve relative paths against the file's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut cfg = Self::from_toml_str(&std::fs::read_to_string(path)?)?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        cfg.model.as_mut().map(fix);
        cfg.prompts.as_mut().map(fix);
        cfg.output.as_mut().map(fix);
        cfg.traces.as_mut().map(fix);
        if let Some(RewardConfig::Synthetic { spec }) = cfg.reward.as_mut() {
            fix(spec);
        }
        Ok(cfg)
    }

    pub fn best_of_n(&self) -> usize {
        self.n.unwrap_or(self.decode.pool_size)
    }

    pub fn timing(&self) -> Timing {
        self.timing.unwrap_or(match self.backend {
            BackendKind::Toy => Timing::DEFAULT_SIMULATED,
            BackendKind::Remote => Timing::Wall,
        })
    }

    /// Check invariants and that every input path exists.
    pub fn validate(&self) -> Result<()> {
        self.decode.validate()?;
        if self.method == Method::BestOfN && self.best_of_n() < 1 {
            return Err(Error::input("best_of_n requires n >= 1"));
        }
        if self.parallelism < 1 {
            return Err(Error::input("parallelism must be at least 1"));
        }
        let must_exist = |what: &str, p: &Option<PathBuf>| -> Result<()> {
            match p {
                None => Err(Error::input(format!("{what} path is required"))),
                Some(p) if !p.exists() => {
                    Err(Error::input(format!("{what} {} does not exist", p.display())))
                }
                Some(_) => Ok(()),
            }
        };
        must_exist("prompts", &self.prompts)?;
        if self.output.is_none() {
            return Err(Error::input("output path is required"));
        }
        match self.backend {
            BackendKind::Toy => must_exist("model", &self.model)?,
            BackendKind::Remote => {
                self.endpoint
                    .as_ref()
                    .ok_or_else(|| Error::input("remote backend needs an [endpoint] section"))?
                    .validate()?;
            }
        }
        match &self.reward {
            None => return Err(Error::input("a [reward] section is required")),
            Some(RewardConfig::Synthetic { spec }) => must_exist("reward spec", &Some(spec.clone()))?,
            Some(RewardConfig::Remote { endpoint }) => endpoint.validate()?,
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_full_config() {
        let cfg = RunConfig::from_toml_str(
            r#"
method = "best_of_n"
backend = "remote"
parallelism = 8
n = 6
prompts = "p.jsonl"
output = "o.jsonl"
grader = "boxed"

[decode]
beta = 2.0
steps = 3

[endpoint]
base_url = "http://localhost:8000"
model_name = "base"
auth_token_env = "API_TOKEN"

[reward]
backend = "remote"
[reward.endpoint]
base_url = "http://localhost:9000"
"#,
        )
        .unwrap();
        assert_eq!(cfg.method, Method::BestOfN);
        assert_eq!(cfg.best_of_n(), 6);
        assert_eq!(cfg.decode.beta, 2.0);
        assert_eq!(cfg.decode.pool_size, 4);
        assert_eq!(cfg.timing(), Timing::Wall);
        assert!(matches!(cfg.reward, Some(RewardConfig::Remote { .. })));
        assert!(RunConfig::from_toml_str("bogus = 1").is_err());
    }

    #[test]
    fn defaults_follow_published_settings() {
        let cfg = RunConfig::default();
        assert_eq!(cfg.seed, 42);
        let d = cfg.decode;
        assert_eq!((d.beta, d.temperature), (3.5, 1.0));
        assert_eq!((d.steps, d.pool_size, d.block_count, d.max_len), (12, 4, 12, 3072));
    }

    #[test]
    fn validation_requires_inputs() {
        let cfg = RunConfig::default();
        let err = cfg.validate().unwrap_err();
        assert!(err.to_string().contains("prompts"));
    }
}
