//! Exact ground truth by enumeration.
//!
//! Given an enumerated prior and a fixed standardized score, this module
//! computes the reward-tilted target `pi(y) ∝ p(y) exp(beta S(y))`, its
//! normalizer, energies, KL divergences and the KL-regularized objective
//! `E_q[S] - KL(q || p) / beta`. Everything is accumulated in log space.

use std::collections::{BTreeMap, HashMap};

use crate::error::{Error, Result};
use crate::generator::{RewardBackend, TokenSeq};
use crate::reward::AdvantageStats;

/// Normalization tolerance for probability tables.
pub const NORMALIZATION_TOLERANCE: f64 = 1e-9;

/// An explicit probability table over token sequences.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SeqDistribution {
    entries: BTreeMap<TokenSeq, f64>,
}

impl SeqDistribution {
    /// Build from probabilities that must already sum to one.
    pub fn from_probs(entries: BTreeMap<TokenSeq, f64>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::input("a distribution needs at least one entry"));
        }
        if entries.values().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(Error::input("probabilities must be finite and non-negative"));
        }
        let total: f64 = entries.values().sum();
        if (total - 1.0).abs() > NORMALIZATION_TOLERANCE {
            return Err(Error::input(format!("probabilities sum to {total}, not 1")));
        }
        Ok(SeqDistribution { entries })
    }

    /// Build from non-negative weights, normalizing them.
    pub fn from_weights(weights: impl IntoIterator<Item = (TokenSeq, f64)>) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (y, w) in weights {
            if !w.is_finite() || w < 0.0 {
                return Err(Error::input("weights must be finite and non-negative"));
            }
            *entries.entry(y).or_insert(0.0) += w;
        }
        let total: f64 = entries.values().sum();
        if total <= 0.0 {
            return Err(Error::input("weights have zero total mass"));
        }
        entries.values_mut().for_each(|w| *w /= total);
        Ok(SeqDistribution { entries })
    }

    pub fn prob(&self, y: &TokenSeq) -> f64 {
        self.entries.get(y).copied().unwrap_or(0.0)
    }

    /// Number of sequences with positive probability.
    pub fn support_size(&self) -> usize {
        self.entries.values().filter(|p| **p > 0.0).count()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&TokenSeq, f64)> {
        self.entries.iter().map(|(y, p)| (y, *p))
    }

    pub fn support(&self) -> impl Iterator<Item = &TokenSeq> {
        self.entries.iter().filter(|(_, p)| **p > 0.0).map(|(y, _)| y)
    }

    pub fn expectation(&self, mut f: impl FnMut(&TokenSeq) -> f64) -> f64 {
        self.entries
            .iter()
            .filter(|(_, p)| **p > 0.0)
            .map(|(y, p)| p * f(y))
            .sum()
    }
}

/// Fixed standardized score `S(y)` together with the inverse temperature.
#[derive(Debug, Clone)]
pub struct TiltSpec {
    pub beta: f64,
    stats: AdvantageStats,
    scores: HashMap<TokenSeq, f64>,
}

impl TiltSpec {
    /// Score every sequence in `support` with `reward`, standardized by `stats`.
    pub fn from_reward<B>(
        beta: f64,
        reward: &B,
        prompt: &TokenSeq,
        stats: AdvantageStats,
        support: &SeqDistribution,
    ) -> Result<Self>
    where
        B: RewardBackend<TokenSeq, TokenSeq> + ?Sized,
    {
        check_beta(beta)?;
        let scores = support
            .support()
            .map(|y| Ok((y.clone(), stats.advantage(reward.score(prompt, y)?))))
            .collect::<Result<HashMap<_, _>>>()?;
        Ok(TiltSpec { beta, stats, scores })
    }

    /// Use already-standardized scores.
    pub fn from_scores(beta: f64, scores: impl IntoIterator<Item = (TokenSeq, f64)>) -> Result<Self> {
        check_beta(beta)?;
        let scores: HashMap<_, _> = scores.into_iter().collect();
        if scores.values().any(|s| !s.is_finite()) {
            return Err(Error::input("scores must be finite"));
        }
        Ok(TiltSpec {
            beta,
            stats: AdvantageStats::identity(),
            scores,
        })
    }

    pub fn with_beta(&self, beta: f64) -> Result<Self> {
        check_beta(beta)?;
        Ok(TiltSpec { beta, ..self.clone() })
    }

    pub fn stats(&self) -> &AdvantageStats {
        &self.stats
    }

    pub fn score(&self, y: &TokenSeq) -> Option<f64> {
        self.scores.get(y).copied()
    }

    fn score_on_support(&self, y: &TokenSeq) -> Result<f64> {
        self.score(y)
            .ok_or_else(|| Error::input(format!("no score for support sequence {y}")))
    }
}

fn check_beta(beta: f64) -> Result<()> {
    if beta >= 0.0 && beta.is_finite() {
        Ok(())
    } else {
        Err(Error::input(format!("beta must be finite and >= 0, got {beta}")))
    }
}

/// The tilted target and its normalizer.
#[derive(Debug, Clone)]
pub struct Posterior {
    pub dist: SeqDistribution,
    /// `log Z_beta = log E_prior[exp(beta S)]`.
    pub log_z: f64,
}

impl Posterior {
    pub fn z(&self) -> f64 {
        self.log_z.exp()
    }
}

fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// `pi(y) = p(y) exp(beta S(y)) / Z_beta` over the prior's support.
pub fn exact_posterior(prior: &SeqDistribution, tilt: &TiltSpec) -> Result<Posterior> {
    let support: Vec<&TokenSeq> = prior.support().collect();
    if support.is_empty() {
        return Err(Error::input("prior has empty support"));
    }
    let logw = support
        .iter()
        .map(|y| Ok(prior.prob(y).ln() + tilt.beta * tilt.score_on_support(y)?))
        .collect::<Result<Vec<f64>>>()?;
    let log_z = log_sum_exp(&logw);
    let entries = support
        .into_iter()
        .zip(&logw)
        .map(|(y, lw)| (y.clone(), (lw - log_z).exp()))
        .collect();
    Ok(Posterior {
        dist: SeqDistribution { entries },
        log_z,
    })
}

/// `-log p(y) - beta S(y)`; `+inf` outside the prior's support.
pub fn energy(prior: &SeqDistribution, tilt: &TiltSpec, y: &TokenSeq) -> f64 {
    let p = prior.prob(y);
    if p <= 0.0 {
        return f64::INFINITY;
    }
    match tilt.score(y) {
        Some(s) => -p.ln() - tilt.beta * s,
        None => f64::INFINITY,
    }
}

/// `KL(q || p)` in nats, with `0 log 0 = 0`.
pub fn kl(q: &SeqDistribution, p: &SeqDistribution) -> Result<f64> {
    let mut total = 0.0;
    for (y, qy) in q.iter().filter(|(_, qy)| *qy > 0.0) {
        let py = p.prob(y);
        if py <= 0.0 {
            return Err(Error::input(format!("{y} has mass under q but not under p")));
        }
        total += qy * (qy.ln() - py.ln());
    }
    // rounding can leave tiny negatives for q == p
    Ok(total.max(0.0))
}

/// Distance below which two tables count as equal for the beta = 0 convention.
const SAME_DISTRIBUTION_TV: f64 = 1e-12;

/// `E_q[S] - KL(q || prior) / beta`.
///
/// At beta = 0 the KL weight is infinite: the value is `E_prior[S]` when
/// `q` equals the prior and `-inf` otherwise.
pub fn objective(q: &SeqDistribution, prior: &SeqDistribution, tilt: &TiltSpec) -> Result<f64> {
    let divergence = kl(q, prior)?;
    let mut expected = 0.0;
    for (y, qy) in q.iter().filter(|(_, qy)| *qy > 0.0) {
        expected += qy * tilt.score_on_support(y)?;
    }
    if tilt.beta == 0.0 {
        return Ok(if tv_distance(q, prior) <= SAME_DISTRIBUTION_TV {
            expected
        } else {
            f64::NEG_INFINITY
        });
    }
    Ok(expected - divergence / tilt.beta)
}

/// Counts sequences as they stream past.
#[derive(Debug, Clone, Default)]
pub struct SeqCounter {
    counts: BTreeMap<TokenSeq, u64>,
    total: u64,
}

impl SeqCounter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, y: &TokenSeq) {
        match self.counts.get_mut(y) {
            Some(c) => *c += 1,
            None => {
                self.counts.insert(y.clone(), 1);
            }
        }
        self.total += 1;
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn distribution(&self) -> Result<SeqDistribution> {
        if self.total == 0 {
            return Err(Error::input("no samples counted"));
        }
        let n = self.total as f64;
        Ok(SeqDistribution {
            entries: self
                .counts
                .iter()
                .map(|(y, c)| (y.clone(), *c as f64 / n))
                .collect(),
        })
    }
}

/// Frequency table of `samples`.
pub fn empirical_distribution(samples: &[TokenSeq]) -> Result<SeqDistribution> {
    let mut counter = SeqCounter::new();
    samples.iter().for_each(|y| counter.add(y));
    counter.distribution()
}

/// Half the L1 distance over the union of supports.
pub fn tv_distance(a: &SeqDistribution, b: &SeqDistribution) -> f64 {
    let mut sum = 0.0;
    for (y, pa) in a.iter() {
        sum += (pa - b.prob(y)).abs();
    }
    for (y, pb) in b.iter() {
        if !a.entries.contains_key(y) {
            sum += pb;
        }
    }
    (0.5 * sum).min(1.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seq(t: &[u32]) -> TokenSeq {
        TokenSeq::new(t.to_vec())
    }

    fn two_point() -> (SeqDistribution, TiltSpec) {
        let prior = SeqDistribution::from_probs(
            [(seq(&[0]), 0.5), (seq(&[1]), 0.5)].into_iter().collect(),
        )
        .unwrap();
        let tilt = TiltSpec::from_scores(1.0, [(seq(&[0]), 0.0), (seq(&[1]), 1.0)]).unwrap();
        (prior, tilt)
    }

    #[test]
    fn two_point_posterior() {
        let (prior, tilt) = two_point();
        let post = exact_posterior(&prior, &tilt).unwrap();
        let e = std::f64::consts::E;
        assert!((post.dist.prob(&seq(&[0])) - 1.0 / (1.0 + e)).abs() < 1e-15);
        assert!((post.dist.prob(&seq(&[1])) - e / (1.0 + e)).abs() < 1e-15);
        assert!((post.dist.prob(&seq(&[0])) - 0.2689).abs() < 1e-4);
        assert!((post.z() - (1.0 + e) / 2.0).abs() < 1e-15);
        // energy of the second sequence
        let en = energy(&prior, &tilt, &seq(&[1]));
        assert!((en - (2f64.ln() - 1.0)).abs() < 1e-15);
        assert!((en + 0.3069).abs() < 1e-4);
        // optimum equals log Z / beta
        let obj = objective(&post.dist, &prior, &tilt).unwrap();
        assert!((obj - ((1.0 + e) / 2.0).ln()).abs() < 1e-12);
        assert!((obj - 0.6201).abs() < 1e-4);
    }

    #[test]
    fn zero_beta_and_constant_scores_return_prior() {
        let (prior, tilt) = two_point();
        let post = exact_posterior(&prior, &tilt.with_beta(0.0).unwrap()).unwrap();
        assert_eq!(post.dist, prior);
        let flat = TiltSpec::from_scores(2.0, [(seq(&[0]), 3.0), (seq(&[1]), 3.0)]).unwrap();
        let post = exact_posterior(&prior, &flat).unwrap();
        assert!(tv_distance(&post.dist, &prior) < 1e-15);
        assert!(exact_posterior(&SeqDistribution::default(), &flat).is_err());
    }

    #[test]
    fn energy_edge_cases() {
        let (prior, tilt) = two_point();
        let zero = tilt.with_beta(0.0).unwrap();
        assert_eq!(energy(&prior, &zero, &seq(&[0])), 2f64.ln());
        assert_eq!(energy(&prior, &tilt, &seq(&[7])), f64::INFINITY);
        let point = SeqDistribution::from_probs([(seq(&[4]), 1.0)].into_iter().collect()).unwrap();
        let t = TiltSpec::from_scores(2.0, [(seq(&[4]), 0.75)]).unwrap();
        assert_eq!(energy(&point, &t, &seq(&[4])), -1.5);
    }

    #[test]
    fn kl_values() {
        let (prior, _) = two_point();
        assert_eq!(kl(&prior, &prior).unwrap(), 0.0);
        let q = SeqDistribution::from_probs([(seq(&[0]), 1.0), (seq(&[1]), 0.0)].into_iter().collect())
            .unwrap();
        assert!((kl(&q, &prior).unwrap() - 2f64.ln()).abs() < 1e-15);
        assert!(kl(&prior, &q).is_err());
    }

    #[test]
    fn objective_at_prior_and_beta_zero_convention() {
        let (prior, tilt) = two_point();
        assert!((objective(&prior, &prior, &tilt).unwrap() - 0.5).abs() < 1e-15);
        let zero = tilt.with_beta(0.0).unwrap();
        assert_eq!(objective(&prior, &prior, &zero).unwrap(), 0.5);
        let q = SeqDistribution::from_probs([(seq(&[0]), 0.4), (seq(&[1]), 0.6)].into_iter().collect())
            .unwrap();
        assert_eq!(objective(&q, &prior, &zero).unwrap(), f64::NEG_INFINITY);
    }

    #[test]
    fn tv_examples() {
        let a = SeqDistribution::from_probs([(seq(&[0]), 0.6), (seq(&[1]), 0.4)].into_iter().collect())
            .unwrap();
        let b = SeqDistribution::from_probs([(seq(&[0]), 0.5), (seq(&[1]), 0.5)].into_iter().collect())
            .unwrap();
        assert!((tv_distance(&a, &b) - 0.1).abs() < 1e-15);
        assert_eq!(tv_distance(&a, &a), 0.0);
        let p = empirical_distribution(&[seq(&[0])]).unwrap();
        let q = empirical_distribution(&[seq(&[1]), seq(&[1])]).unwrap();
        assert_eq!(tv_distance(&p, &q), 1.0);
        assert_eq!(p.support_size(), 1);
        assert!(empirical_distribution(&[]).is_err());
    }

    #[test]
    fn from_weights_normalizes_and_merges() {
        let d = SeqDistribution::from_weights([(seq(&[0]), 1.0), (seq(&[1]), 2.0), (seq(&[0]), 1.0)])
            .unwrap();
        assert_eq!(d.prob(&seq(&[0])), 0.5);
        assert!(SeqDistribution::from_weights([(seq(&[0]), 0.0)]).is_err());
        assert!(SeqDistribution::from_probs([(seq(&[0]), 0.9)].into_iter().collect()).is_err());
    }
}
