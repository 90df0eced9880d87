//! Exact-posterior diagnostics for toy models: enumerate the prior, tilt it
//! over a grid of inverse temperatures and compare long EBD chains against
//! the exact target.

use std::io::Write;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::generator::{ChainRng, RewardBackend, TokenSeq};
use crate::oracle::{exact_posterior, kl, tv_distance, Posterior, SeqCounter, SeqDistribution, TiltSpec};
use crate::reward::AdvantageStats;
use crate::sampler::{chain_rng, DecodeConfig, EbdSampler};
use crate::toy_lm::{ToyLm, DEFAULT_ENUMERATION_CAP};

#[derive(Debug, Clone)]
pub struct OracleCheckSettings {
    pub betas: Vec<f64>,
    /// Counted steps per chain; 0 skips the chains.
    pub chain_steps: usize,
    pub burn_in: usize,
    pub block_count: usize,
    pub seed: u64,
    /// Standardization; the prior's own reward mean and std when absent.
    pub stats: Option<AdvantageStats>,
    pub enumeration_cap: u64,
}

impl Default for OracleCheckSettings {
    fn default() -> Self {
        OracleCheckSettings {
            betas: vec![0.0, 0.5, 1.0, 2.0, 3.5, 5.0],
            chain_steps: 200_000,
            burn_in: 10_000,
            block_count: 12,
            seed: 42,
            stats: None,
            enumeration_cap: DEFAULT_ENUMERATION_CAP,
        }
    }
}

/// One CSV row per grid point.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleRow {
    pub beta: f64,
    pub z_beta: f64,
    pub expected_score: f64,
    pub kl_to_prior: f64,
    pub tv_empirical: Option<f64>,
    pub chain_length: usize,
    pub acceptance_rate: Option<f64>,
}

/// Empirical law of a fixed-statistics chain.
#[derive(Debug, Clone)]
pub struct ChainSample {
    pub distribution: SeqDistribution,
    /// Accepted fraction of the counted steps.
    pub acceptance_rate: f64,
}

/// Population mean and std of the reward under `prior`.
pub fn prior_stats<B>(reward: &B, prompt: &TokenSeq, prior: &SeqDistribution) -> Result<AdvantageStats>
where
    B: RewardBackend<TokenSeq, TokenSeq> + ?Sized,
{
    let scored = prior
        .iter()
        .map(|(y, p)| Ok((p, reward.score(prompt, y)?.raw())))
        .collect::<Result<Vec<_>>>()?;
    let mean: f64 = scored.iter().map(|(p, r)| p * r).sum();
    let var: f64 = scored.iter().map(|(p, r)| p * (r - mean).powi(2)).sum();
    AdvantageStats::fixed(mean, var.sqrt().max(crate::reward::STD_FLOOR))
}

/// Run `burn_in + steps` EBD refinement steps from a prior draw with fixed
/// `stats` and count the states visited after burn-in.
#[allow(clippy::too_many_arguments)]
pub fn run_fixed_chain<B>(
    lm: &ToyLm,
    reward: &B,
    prompt: &TokenSeq,
    beta: f64,
    stats: AdvantageStats,
    block_count: usize,
    burn_in: usize,
    steps: usize,
    rng: &mut ChainRng,
) -> Result<ChainSample>
where
    B: RewardBackend<TokenSeq, TokenSeq> + ?Sized,
{
    if steps == 0 {
        return Err(Error::input("chain needs at least one counted step"));
    }
    let config = DecodeConfig {
        beta,
        steps: burn_in + steps,
        block_count,
        max_len: lm.max_response_len(),
        ..DecodeConfig::default()
    };
    let sampler = EbdSampler::new(lm, reward, config)?;
    let start = lm.sample_full(prompt, rng)?;
    let mut state = sampler.start_at(prompt, start, stats)?;
    for _ in 0..burn_in {
        sampler.mh_step(prompt, &mut state, rng)?;
    }
    let mut counter = SeqCounter::new();
    for _ in 0..steps {
        sampler.mh_step(prompt, &mut state, rng)?;
        counter.add(state.current());
    }
    let accepted = state.trace()[burn_in..].iter().filter(|t| t.accepted).count();
    Ok(ChainSample {
        distribution: counter.distribution()?,
        acceptance_rate: accepted as f64 / steps as f64,
    })
}

fn exact_row(prior: &SeqDistribution, tilt: &TiltSpec) -> Result<(Posterior, OracleRow)> {
    let post = exact_posterior(prior, tilt)?;
    let expected_score = post
        .dist
        .expectation(|y| tilt.score(y).expect("posterior support is scored"));
    let row = OracleRow {
        beta: tilt.beta,
        z_beta: post.z(),
        expected_score,
        kl_to_prior: kl(&post.dist, prior)?,
        tv_empirical: None,
        chain_length: 0,
        acceptance_rate: None,
    };
    Ok((post, row))
}

/// Exact quantities per β, plus chain diagnostics when `chain_steps > 0`.
///
/// Grid points run on separate threads; point `i` uses RNG stream `i`.
pub fn oracle_check<B>(
    lm: &ToyLm,
    reward: &B,
    prompt: &TokenSeq,
    settings: &OracleCheckSettings,
) -> Result<Vec<OracleRow>>
where
    B: RewardBackend<TokenSeq, TokenSeq> + ?Sized,
{
    if settings.betas.is_empty() {
        return Err(Error::input("beta grid is empty"));
    }
    let prior = lm.enumerate(prompt, settings.enumeration_cap)?;
    let stats = match settings.stats {
        Some(s) => s,
        None => prior_stats(reward, prompt, &prior)?,
    };
    let base = TiltSpec::from_reward(0.0, reward, prompt, stats, &prior)?;

    std::thread::scope(|scope| {
        let handles: Vec<_> = settings
            .betas
            .iter()
            .enumerate()
            .map(|(i, &beta)| {
                let (prior, base) = (&prior, &base);
                scope.spawn(move || -> Result<OracleRow> {
                    let tilt = base.with_beta(beta)?;
                    let (post, mut row) = exact_row(prior, &tilt)?;
                    if settings.chain_steps > 0 {
                        let mut rng = chain_rng(settings.seed, i as u64);
                        let chain = run_fixed_chain(
                            lm,
                            reward,
                            prompt,
                            beta,
                            stats,
                            settings.block_count,
                            settings.burn_in,
                            settings.chain_steps,
                            &mut rng,
                        )?;
                        row.tv_empirical = Some(tv_distance(&chain.distribution, &post.dist));
                        row.chain_length = settings.chain_steps;
                        row.acceptance_rate = Some(chain.acceptance_rate);
                    }
                    Ok(row)
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("oracle worker panicked"))
            .collect()
    })
}

/// Nine decimals, without a sign on values that round to zero.
fn fixed9(x: f64) -> String {
    let s = format!("{x:.9}");
    match s.strip_prefix('-') {
        Some(rest) if rest.bytes().all(|b| b == b'0' || b == b'.') => rest.to_string(),
        _ => s,
    }
}

/// Write rows as CSV with a header line.
pub fn write_csv(rows: &[OracleRow], out: &mut dyn Write) -> Result<()> {
    writeln!(out, "beta,z_beta,expected_score,kl_to_prior,tv_empirical,chain_length,acceptance_rate")?;
    let opt = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_default();
    for r in rows {
        writeln!(
            out,
            "{},{:.9e},{},{},{},{},{}",
            r.beta,
            r.z_beta,
            fixed9(r.expected_score),
            fixed9(r.kl_to_prior),
            opt(r.tv_empirical),
            r.chain_length,
            opt(r.acceptance_rate)
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::reward::SyntheticReward;
    use crate::toy_lm::{LengthMode, ToyModelSpec};

    fn setup() -> (ToyLm, SyntheticReward) {
        let lm = ToyLm::new(
            ToyModelSpec::uniform(2, LengthMode::Fixed { length: 2 }).unwrap(),
            1.0,
            16,
        )
        .unwrap();
        let reward = SyntheticReward::lookup([
            (TokenSeq::new(vec![0, 0]), 0.0),
            (TokenSeq::new(vec![0, 1]), 1.0),
            (TokenSeq::new(vec![1, 0]), 1.0),
            (TokenSeq::new(vec![1, 1]), 2.0),
        ])
        .unwrap();
        (lm, reward)
    }

    #[test]
    fn beta_zero_row_is_the_prior() {
        let (lm, reward) = setup();
        let settings = OracleCheckSettings {
            betas: vec![0.0],
            chain_steps: 0,
            ..Default::default()
        };
        let rows = oracle_check(&lm, &reward, &TokenSeq::empty(), &settings).unwrap();
        assert_eq!(rows[0].z_beta, 1.0);
        assert_eq!(rows[0].kl_to_prior, 0.0);
        // prior-standardized scores have mean 0
        assert!(rows[0].expected_score.abs() < 1e-12);
        assert_eq!(rows[0].tv_empirical, None);
    }

    #[test]
    fn prior_stats_are_population_moments() {
        let (lm, reward) = setup();
        let prior = lm.enumerate(&TokenSeq::empty(), 100).unwrap();
        let s = prior_stats(&reward, &TokenSeq::empty(), &prior).unwrap();
        assert!((s.mean() - 1.0).abs() < 1e-12);
        assert!((s.std() - 0.5f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn short_chain_reports_diagnostics() {
        let (lm, reward) = setup();
        let settings = OracleCheckSettings {
            betas: vec![1.0, 2.0],
            chain_steps: 20_000,
            burn_in: 100,
            ..Default::default()
        };
        let rows = oracle_check(&lm, &reward, &TokenSeq::empty(), &settings).unwrap();
        for r in &rows {
            assert!(r.tv_empirical.unwrap() < 0.03, "{r:?}");
            assert_eq!(r.chain_length, 20_000);
        }
        let mut csv = Vec::new();
        write_csv(&rows, &mut csv).unwrap();
        let csv = String::from_utf8(csv).unwrap();
        assert_eq!(csv.lines().count(), 3);
        assert!(csv.starts_with("beta,z_beta,"));
    }
}
