//! Energy-based decoding: Stage I warm start and Stage II block-wise
//! Metropolis-Hastings refinement.
//!
//! Stage I draws `pool_size` responses from the prior, fits prompt-local
//! reward statistics on them and starts the chain at the best-scoring one.
//! Each Stage II step cuts the current response at a uniformly drawn block
//! boundary, regenerates the suffix from the prior's own conditional law and
//! accepts the proposal with probability `min(1, exp(beta * (A' - A)))`.
//! Because the suffix comes from the matched conditional prior and the cut law
//! does not look at response content, the prior and proposal densities cancel
//! in the MH ratio and only the advantage difference remains.

use std::fmt;

use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::generator::{ChainRng, Generator, RewardBackend, Response, TokenSeq};
use crate::reward::{AdvantageStats, RewardScore, StatsCell};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecodeConfig {
    /// Inverse temperature of the reward tilt.
    pub beta: f64,
    /// Refinement steps K.
    pub steps: usize,
    /// Block count M.
    pub block_count: usize,
    /// Stage I pool size.
    pub pool_size: usize,
    /// Sampling temperature of the prior.
    pub temperature: f64,
    /// Maximum response length in tokens.
    pub max_len: usize,
    pub seed: u64,
    /// Stop strings (remote backends).
    pub stop: Vec<String>,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        DecodeConfig {
            beta: 3.5,
            steps: 12,
            block_count: 12,
            pool_size: 4,
            temperature: 1.0,
            max_len: 3072,
            seed: 42,
            stop: Vec::new(),
        }
    }
}

impl DecodeConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return Err(Error::input(format!("beta must be finite and >= 0, got {}", self.beta)));
        }
        if self.block_count < 1 {
            return Err(Error::input("block_count must be at least 1"));
        }
        if self.pool_size < 1 {
            return Err(Error::input("pool_size must be at least 1"));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::input("temperature must be positive"));
        }
        if self.max_len < 1 {
            return Err(Error::input("max_len must be at least 1"));
        }
        Ok(())
    }
}

/// RNG stream for chain `index` of a run seeded with `seed`.
///
/// Streams depend only on `(seed, index)`, so the number of workers never
/// changes what a chain draws.
pub fn chain_rng(seed: u64, index: u64) -> ChainRng {
    let mut rng = ChainRng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// One refinement step as recorded in the chain trace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub step: usize,
    pub cut: usize,
    pub proposal_advantage: f64,
    pub accepted: bool,
    pub alpha: f64,
}

/// Backend work performed by one chain.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CallCounts {
    pub generation_calls: usize,
    pub reward_calls: usize,
    /// Units (tokens or words) produced across all generation calls.
    pub generated_units: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChainState<R> {
    current: R,
    raw_reward: RewardScore,
    advantage: f64,
    step: usize,
    stats: AdvantageStats,
    trace: Vec<TraceEntry>,
    calls: CallCounts,
}

impl<R> ChainState<R> {
    /// A chain at step 0 with externally fixed statistics.
    pub fn new(current: R, raw_reward: RewardScore, stats: AdvantageStats) -> Self {
        ChainState {
            advantage: stats.advantage(raw_reward),
            current,
            raw_reward,
            step: 0,
            stats,
            trace: Vec::new(),
            calls: CallCounts::default(),
        }
    }

    pub fn current(&self) -> &R {
        &self.current
    }

    pub fn raw_reward(&self) -> RewardScore {
        self.raw_reward
    }

    pub fn advantage(&self) -> f64 {
        self.advantage
    }

    pub fn step(&self) -> usize {
        self.step
    }

    pub fn stats(&self) -> &AdvantageStats {
        &self.stats
    }

    pub fn trace(&self) -> &[TraceEntry] {
        &self.trace
    }

    pub fn calls(&self) -> CallCounts {
        self.calls
    }

    pub fn accepted_steps(&self) -> usize {
        self.trace.iter().filter(|t| t.accepted).count()
    }

    /// Accepted steps over completed steps; `None` before the first step.
    pub fn acceptance_rate(&self) -> Option<f64> {
        (self.step > 0).then(|| self.accepted_steps() as f64 / self.step as f64)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CutProposal<R> {
    pub cut_index: usize,
    /// Current state with its suffix from `cut_index` on regenerated.
    pub full: R,
}

impl CutProposal<TokenSeq> {
    pub fn suffix(&self) -> TokenSeq {
        TokenSeq(self.full.0[self.cut_index.min(self.full.len())..].to_vec())
    }
}

/// Block start positions for a response of `length` units split into
/// `min(blocks, max(length, 1))` near-equal contiguous blocks.
///
/// The first `length % blocks_eff` blocks are one unit longer. Position 0 is
/// always included; the end position (an empty suffix) never is.
pub fn admissible_cuts(length: usize, blocks: usize) -> Vec<usize> {
    let blocks = blocks.max(1).min(length.max(1));
    let base = length / blocks;
    let longer = length % blocks;
    let mut starts = Vec::with_capacity(blocks);
    let mut pos = 0;
    for b in 0..blocks {
        starts.push(pos);
        pos += base + usize::from(b < longer);
    }
    starts
}

/// `log min(1, exp(beta * (adv_new - adv_old)))`.
pub fn log_acceptance(adv_new: f64, adv_old: f64, beta: f64) -> f64 {
    if beta == 0.0 {
        return 0.0;
    }
    (beta * (adv_new - adv_old)).min(0.0)
}

/// MH acceptance probability `min(1, exp(beta * (adv_new - adv_old)))`.
pub fn acceptance_probability(adv_new: f64, adv_old: f64, beta: f64) -> f64 {
    log_acceptance(adv_new, adv_old, beta).exp()
}

/// Decoded response and the full chain state.
#[derive(Debug, Clone)]
pub struct EbdOutcome<R> {
    pub response: R,
    pub state: ChainState<R>,
}

/// A run that stopped early.
#[derive(Debug)]
pub struct RunFailure<R> {
    pub completed_steps: usize,
    /// Last consistent state, absent when Stage I did not finish.
    pub last_state: Option<Box<ChainState<R>>>,
    pub error: Error,
}

impl<R> fmt::Display for RunFailure<R> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "run stopped after {} completed step(s): {}", self.completed_steps, self.error)
    }
}

impl<R: fmt::Debug> std::error::Error for RunFailure<R> {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.error)
    }
}

/// A generator, a reward backend and a decoding configuration.
#[derive(Debug, Clone)]
pub struct EbdSampler<G, B> {
    generator: G,
    reward: B,
    config: DecodeConfig,
}

impl<G, B> EbdSampler<G, B>
where
    G: Generator,
    B: RewardBackend<G::Prompt, G::Response>,
{
    pub fn new(generator: G, reward: B, config: DecodeConfig) -> Result<Self> {
        config.validate()?;
        Ok(EbdSampler {
            generator,
            reward,
            config,
        })
    }

    pub fn config(&self) -> &DecodeConfig {
        &self.config
    }

    pub fn generator(&self) -> &G {
        &self.generator
    }

    pub fn reward(&self) -> &B {
        &self.reward
    }

    /// Stage I: sample the pool, freeze the statistics, start at the best member.
    pub fn initialize(
        &self,
        prompt: &G::Prompt,
        rng: &mut ChainRng,
    ) -> Result<ChainState<G::Response>> {
        let n = self.config.pool_size;
        let mut calls = CallCounts::default();
        let mut pool = Vec::with_capacity(n);
        let mut rewards = Vec::with_capacity(n);
        for index in 0..n {
            let pool_err = |e: Error| Error::Pool {
                index,
                pool_size: n,
                source: Box::new(e),
            };
            let y = self.generator.sample_full(prompt, rng).map_err(pool_err)?;
            calls.generation_calls += 1;
            calls.generated_units += y.unit_len();
            let r = self.reward.score(prompt, &y).map_err(pool_err)?;
            calls.reward_calls += 1;
            pool.push(y);
            rewards.push(r);
        }
        let mut cell = StatsCell::new();
        let stats = cell.fit_once(&rewards)?;
        // ties keep the lowest pool index
        let mut best = 0;
        for i in 1..n {
            if stats.advantage(rewards[i]) > stats.advantage(rewards[best]) {
                best = i;
            }
        }
        let mut state = ChainState::new(pool.swap_remove(best), rewards[best], stats);
        state.calls = calls;
        Ok(state)
    }

    /// Start a chain at `response` with fixed statistics (one reward call).
    pub fn start_at(
        &self,
        prompt: &G::Prompt,
        response: G::Response,
        stats: AdvantageStats,
    ) -> Result<ChainState<G::Response>> {
        let r = self.reward.score(prompt, &response)?;
        let mut state = ChainState::new(response, r, stats);
        state.calls.reward_calls = 1;
        Ok(state)
    }

    /// Cut the current response at a uniformly drawn block start and regenerate the suffix.
    pub fn propose(
        &self,
        prompt: &G::Prompt,
        state: &ChainState<G::Response>,
        rng: &mut ChainRng,
    ) -> Result<CutProposal<G::Response>> {
        let cuts = admissible_cuts(state.current.unit_len(), self.config.block_count);
        let cut_index = cuts[rng.random_range(0..cuts.len())];
        let prefix = state.current.prefix(cut_index);
        let full = self.generator.sample_suffix(prompt, &prefix, rng)?;
        Ok(CutProposal { cut_index, full })
    }

    /// One propose / score / accept-or-reject step. On error the state is untouched.
    ///
    /// Fails once the chain has taken `steps` steps.
    pub fn mh_step(
        &self,
        prompt: &G::Prompt,
        state: &mut ChainState<G::Response>,
        rng: &mut ChainRng,
    ) -> Result<()> {
        let step = state.step;
        if step >= self.config.steps {
            return Err(Error::input(format!(
                "chain already completed its {} refinement steps",
                self.config.steps
            )));
        }
        let step_err = |e: Error| Error::Step {
            step,
            source: Box::new(e),
        };
        let proposal = self.propose(prompt, state, rng).map_err(step_err)?;
        let raw = self.reward.score(prompt, &proposal.full).map_err(step_err)?;
        let proposal_advantage = state.stats.advantage(raw);
        let log_alpha = log_acceptance(proposal_advantage, state.advantage, self.config.beta);
        // u in (0, 1], compared in log space
        let u = 1.0 - rng.random::<f64>();
        let accepted = u.ln() <= log_alpha;

        state.calls.generation_calls += 1;
        state.calls.reward_calls += 1;
        state.calls.generated_units += proposal
            .full
            .unit_len()
            .saturating_sub(proposal.cut_index);
        state.trace.push(TraceEntry {
            step,
            cut: proposal.cut_index,
            proposal_advantage,
            accepted,
            alpha: log_alpha.exp(),
        });
        if accepted {
            state.current = proposal.full;
            state.raw_reward = raw;
            state.advantage = proposal_advantage;
        }
        state.step += 1;
        Ok(())
    }

    /// Stage I followed by `steps` refinement steps.
    pub fn run(
        &self,
        prompt: &G::Prompt,
        rng: &mut ChainRng,
    ) -> std::result::Result<EbdOutcome<G::Response>, RunFailure<G::Response>> {
        let mut state = self.initialize(prompt, rng).map_err(|error| RunFailure {
            completed_steps: 0,
            last_state: None,
            error,
        })?;
        for _ in 0..self.config.steps {
            if let Err(error) = self.mh_step(prompt, &mut state, rng) {
                return Err(RunFailure {
                    completed_steps: state.step,
                    last_state: Some(Box::new(state)),
                    error,
                });
            }
        }
        Ok(EbdOutcome {
            response: state.current.clone(),
            state,
        })
    }
}
