//! Sampling estimators for uncertain Shapley values.
//!
//! When the noise law is unknown the uncertain Shapley value can only be
//! estimated. Two estimators are provided:
//!
//! * **enumeration with repeats**: every coalition is evaluated `repeats`
//!   times, the sample means `v̄(S)` are pushed through the Shapley sum, and
//!   the per-coalition sample variances give the standard error. The same
//!   `repeats · 2^n` draws serve every player.
//! * **permutation sampling**: uniform player orders; the marginal
//!   contribution of a player to its predecessors is an unbiased draw of
//!   `Ṽ_i`. Works for any player count.
//!
//! All draws come from [`crate::rng::substream`] so results are reproducible
//! and independent of the thread count.

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::coalition::{check_exact, weight_table, Coalition};
use crate::error::{Result, ShapleyError};
use crate::game::{NoiseModel, UncertainGame};
use crate::rng::{substream, Domain};
use crate::sum::KahanSum;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum EstimatorMode {
    ExactEnumeration,
    PermutationSampling { permutations: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EstimatorConfig {
    /// Draws per coalition in enumeration mode.
    pub repeats: usize,
    pub seed: u64,
    pub mode: EstimatorMode,
    /// Two-sided coverage of the reported interval.
    pub confidence_level: f64,
}

impl EstimatorConfig {
    pub fn enumeration(repeats: usize, seed: u64) -> Self {
        Self {
            repeats,
            seed,
            mode: EstimatorMode::ExactEnumeration,
            confidence_level: 0.95,
        }
    }

    pub fn permutations(permutations: usize, seed: u64) -> Self {
        Self {
            repeats: 1,
            seed,
            mode: EstimatorMode::PermutationSampling { permutations },
            confidence_level: 0.95,
        }
    }

    pub fn with_confidence(mut self, level: f64) -> Self {
        self.confidence_level = level;
        self
    }

    fn validate(&self) -> Result<()> {
        if self.repeats == 0 {
            return Err(ShapleyError::domain("repeats must be at least 1"));
        }
        if let EstimatorMode::PermutationSampling { permutations: 0 } = self.mode {
            return Err(ShapleyError::domain("permutation count must be at least 1"));
        }
        if !(self.confidence_level > 0.0 && self.confidence_level < 1.0) {
            return Err(ShapleyError::domain(format!(
                "confidence level must lie in (0, 1), got {}",
                self.confidence_level
            )));
        }
        Ok(())
    }
}

/// Point estimate with a normal-approximation confidence interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub mean: f64,
    /// Infinite when a single draw leaves the variance unidentified.
    pub std_error: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    /// Fresh value-function draws consumed.
    pub evaluations_used: u64,
}

impl Estimate {
    fn new(mean: f64, std_error: f64, z: f64, evaluations_used: u64) -> Self {
        let half = if std_error == 0.0 { 0.0 } else { z * std_error };
        Self {
            mean,
            std_error,
            ci_low: mean - half,
            ci_high: mean + half,
            evaluations_used,
        }
    }

    pub fn half_width(&self) -> f64 {
        0.5 * (self.ci_high - self.ci_low)
    }

    pub fn contains(&self, x: f64) -> bool {
        self.ci_low <= x && x <= self.ci_high
    }
}

/// Two-sided standard-normal quantile for `level` (1.959964 at 0.95).
pub fn normal_quantile(level: f64) -> f64 {
    Normal::standard().inverse_cdf(0.5 + 0.5 * level)
}

/// Sample mean and unbiased sample variance (Welford).
#[derive(Debug, Clone, Copy, Default)]
struct Moments {
    count: u64,
    mean: f64,
    m2: f64,
}

impl Moments {
    fn push(&mut self, x: f64) {
        self.count += 1;
        let d = x - self.mean;
        self.mean += d / self.count as f64;
        self.m2 += d * (x - self.mean);
    }

    fn variance(&self) -> Option<f64> {
        (self.count > 1).then(|| self.m2 / (self.count - 1) as f64)
    }
}

/// Sample mean and variance of `repeats` draws for every coalition.
fn coalition_means(ugame: &UncertainGame, config: &EstimatorConfig) -> Result<Vec<Moments>> {
    let n = ugame.player_count();
    let table = ugame.base().table()?;
    (0..1u64 << n)
        .into_par_iter()
        .map(|bits| {
            let s = Coalition::from_bits_unchecked(bits, n);
            let base = table[bits as usize];
            let mut rng = substream(config.seed, Domain::Coalition, bits);
            let mut acc = Moments::default();
            for _ in 0..config.repeats {
                acc.push(ugame.sample_with_base(base, s, &mut rng)?);
            }
            Ok(acc)
        })
        .collect()
}

/// Per-coalition standard error contribution; `None` when unidentified.
fn coalition_variance(noise: &NoiseModel, m: &Moments) -> Option<f64> {
    match noise {
        NoiseModel::None => Some(0.0),
        _ => m.variance(),
    }
}

fn enumeration_estimates(ugame: &UncertainGame, config: &EstimatorConfig) -> Result<Vec<Estimate>> {
    let n = ugame.player_count();
    check_exact(n)?;
    let stats = coalition_means(ugame, config)?;
    let weights = weight_table(n)?;
    let z = normal_quantile(config.confidence_level);
    let repeats = config.repeats as f64;
    let evaluations = config.repeats as u64 * (1u64 << n);
    let noise = ugame.noise();
    let estimates = (0..n)
        .into_par_iter()
        .map(|i| {
            // Each coalition T enters once: +w(|T|-1) if i ∈ T, −w(|T|) otherwise.
            let mut mean = KahanSum::new();
            let mut var = KahanSum::new();
            let mut identified = true;
            for (bits, m) in stats.iter().enumerate() {
                let size = (bits as u64).count_ones() as usize;
                let coef = if bits >> i & 1 == 1 {
                    weights[size - 1]
                } else if size < n {
                    -weights[size]
                } else {
                    0.0
                };
                mean.add(coef * m.mean);
                match coalition_variance(noise, m) {
                    Some(v) => var.add(coef * coef * v / repeats),
                    None => identified = false,
                }
            }
            let se = if identified {
                var.value().max(0.0).sqrt()
            } else {
                f64::INFINITY
            };
            Estimate::new(mean.value(), se, z, evaluations)
        })
        .collect();
    Ok(estimates)
}

/// Sample-mean estimate of `Φ̃_i`.
///
/// In enumeration mode this draws `repeats` values for every coalition; in
/// permutation mode it defers to [`mc_shapley`].
pub fn estimate_uncertain_shapley(
    ugame: &UncertainGame,
    player: usize,
    config: &EstimatorConfig,
) -> Result<Estimate> {
    config.validate()?;
    if player >= ugame.player_count() {
        return Err(ShapleyError::domain(format!("player {player} out of range")));
    }
    match config.mode {
        EstimatorMode::ExactEnumeration => Ok(enumeration_estimates(ugame, config)?[player]),
        EstimatorMode::PermutationSampling { permutations } => mc_shapley_with_level(
            ugame,
            player,
            permutations,
            config.seed,
            config.confidence_level,
        ),
    }
}

/// Estimates for every player from one shared set of draws.
pub fn estimate_all(ugame: &UncertainGame, config: &EstimatorConfig) -> Result<Vec<Estimate>> {
    config.validate()?;
    match config.mode {
        EstimatorMode::ExactEnumeration => enumeration_estimates(ugame, config),
        EstimatorMode::PermutationSampling { permutations } => {
            permutation_estimates(ugame, permutations, config.seed, config.confidence_level)
        }
    }
}

fn shuffled_players(n: usize, rng: &mut impl rand::Rng) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    order
}

/// Walks `permutations` random orders; each prefix coalition is drawn once
/// and shared by the two adjacent marginal contributions.
fn permutation_estimates(
    ugame: &UncertainGame,
    permutations: usize,
    seed: u64,
    level: f64,
) -> Result<Vec<Estimate>> {
    let n = ugame.player_count();
    let rows: Vec<Vec<f64>> = (0..permutations as u64)
        .into_par_iter()
        .map(|k| {
            let mut rng = substream(seed, Domain::Permutation, k);
            let order = shuffled_players(n, &mut rng);
            let mut coalition = Coalition::from_bits_unchecked(0, n);
            let mut prev = ugame.sample(coalition, &mut rng)?;
            let mut marginals = vec![0.0; n];
            for &p in &order {
                coalition = coalition.with(p);
                let next = ugame.sample(coalition, &mut rng)?;
                marginals[p] = next - prev;
                prev = next;
            }
            Ok(marginals)
        })
        .collect::<Result<_>>()?;
    let z = normal_quantile(level);
    let evaluations = permutations as u64 * (n as u64 + 1);
    Ok((0..n)
        .map(|i| {
            let mut acc = Moments::default();
            for row in &rows {
                acc.push(row[i]);
            }
            summarize(&acc, z, evaluations)
        })
        .collect())
}

fn summarize(acc: &Moments, z: f64, evaluations: u64) -> Estimate {
    let se = match acc.variance() {
        Some(v) => (v / acc.count as f64).sqrt(),
        None => f64::INFINITY,
    };
    Estimate::new(acc.mean, se, z, evaluations)
}

/// Permutation-sampling estimate of `Φ_i` (or `Φ̃_i` for a noisy game) with a
/// 95% interval. Two draws per permutation: `S` and `S ∪ {i}` where `S` is
/// the set of predecessors of `i`.
pub fn mc_shapley(
    ugame: &UncertainGame,
    player: usize,
    permutations: usize,
    seed: u64,
) -> Result<Estimate> {
    mc_shapley_with_level(ugame, player, permutations, seed, 0.95)
}

pub fn mc_shapley_with_level(
    ugame: &UncertainGame,
    player: usize,
    permutations: usize,
    seed: u64,
    level: f64,
) -> Result<Estimate> {
    let n = ugame.player_count();
    if player >= n {
        return Err(ShapleyError::domain(format!("player {player} out of range")));
    }
    if permutations == 0 {
        return Err(ShapleyError::domain("permutation count must be at least 1"));
    }
    let draws: Vec<f64> = (0..permutations as u64)
        .into_par_iter()
        .map(|k| {
            let mut rng = substream(seed, Domain::Permutation, k);
            let order = shuffled_players(n, &mut rng);
            let mut before = Coalition::from_bits_unchecked(0, n);
            for &p in order.iter().take_while(|&&p| p != player) {
                before = before.with(p);
            }
            let without = ugame.sample(before, &mut rng)?;
            let with = ugame.sample(before.with(player), &mut rng)?;
            Ok(with - without)
        })
        .collect::<Result<_>>()?;
    let mut acc = Moments::default();
    for d in draws {
        acc.push(d);
    }
    Ok(summarize(&acc, normal_quantile(level), 2 * permutations as u64))
}
