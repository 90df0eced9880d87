//! Energy-based decoding: sample from a language model's prior tilted by
//! `exp(beta * S(y))`, where `S` is a prompt-standardized reward.
//!
//! A Stage I pool of prior samples fixes the reward statistics and picks the
//! starting point; Stage II runs block-wise Metropolis-Hastings steps that
//! resample suffixes from the prior and accept on the advantage difference.
//!
//! Modules:
//! - [`toy_lm`]: enumerable unigram/bigram models with exact log-probabilities.
//! - [`llm_client`]: HTTP client for completions-style text endpoints.
//! - [`reward`]: synthetic and remote reward backends, advantage standardization.
//! - [`sampler`]: the decoding chain itself.
//! - [`oracle`]: exact tilted targets over enumerable supports.
//! - [`harness`]: batch runs, baselines, metrics and reports.

pub mod error;
pub mod generator;
pub mod harness;
pub mod llm_client;
pub mod oracle;
pub mod reward;
pub mod sampler;
pub mod toy_lm;

pub use error::{Error, Result};
pub use generator::{ChainRng, Generator, Response, RewardBackend, TextResponse, TokenSeq};
pub use reward::{AdvantageStats, RewardScore, SyntheticReward};
pub use sampler::{chain_rng, DecodeConfig, EbdSampler};
pub use toy_lm::{ToyLm, ToyModelSpec};
