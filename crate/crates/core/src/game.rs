//! Deterministic and uncertain value functions.
//!
//! A [`DeterministicGame`] maps coalitions to payoffs, either through a flat
//! table indexed by bitmask or through a callback. An [`UncertainGame`] adds a
//! [`NoiseModel`] on top: each evaluation returns `v(S) + ν(S)` with `ν(S)`
//! drawn independently per call.

use std::borrow::Cow;
use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use rand::{Rng, RngCore};
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::coalition::{check_exact, Coalition, MAX_PLAYERS};
use crate::error::{Result, ShapleyError};

pub type ValueFn = dyn Fn(Coalition) -> f64 + Send + Sync;

#[derive(Clone)]
enum Values {
    Table(Arc<Vec<f64>>),
    Callback(Arc<ValueFn>),
}

/// A coalition game `v : 2^{players} → ℝ`. `v(∅)` is stored as given.
#[derive(Clone)]
pub struct DeterministicGame {
    n: usize,
    values: Values,
}

impl fmt::Debug for DeterministicGame {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let kind = match &self.values {
            Values::Table(_) => "table",
            Values::Callback(_) => "callback",
        };
        f.debug_struct("DeterministicGame")
            .field("n", &self.n)
            .field("kind", &kind)
            .finish()
    }
}

impl DeterministicGame {
    /// Table game; `values[bits]` is the payoff of the coalition with that mask.
    pub fn from_table(n: usize, values: Vec<f64>) -> Result<Self> {
        check_exact(n)?;
        if values.len() != 1usize << n {
            return Err(ShapleyError::malformed(format!(
                "table for {n} players needs {} entries, got {}",
                1usize << n,
                values.len()
            )));
        }
        if let Some(bits) = values.iter().position(|v| !v.is_finite()) {
            return Err(ShapleyError::malformed(format!(
                "non-finite value for coalition {bits}"
            )));
        }
        Ok(Self {
            n,
            values: Values::Table(Arc::new(values)),
        })
    }

    /// Callback game. The callback must be deterministic.
    pub fn from_fn<F>(n: usize, f: F) -> Result<Self>
    where
        F: Fn(Coalition) -> f64 + Send + Sync + 'static,
    {
        if n == 0 || n > MAX_PLAYERS {
            return Err(ShapleyError::Capacity {
                players: n,
                max: MAX_PLAYERS,
            });
        }
        Ok(Self {
            n,
            values: Values::Callback(Arc::new(f)),
        })
    }

    #[inline]
    pub fn player_count(&self) -> usize {
        self.n
    }

    pub fn is_table(&self) -> bool {
        matches!(self.values, Values::Table(_))
    }

    pub fn evaluate(&self, coalition: Coalition) -> Result<f64> {
        if coalition.player_count() != self.n {
            return Err(ShapleyError::domain(format!(
                "coalition over {} players used with a {}-player game",
                coalition.player_count(),
                self.n
            )));
        }
        match &self.values {
            Values::Table(t) => Ok(t[coalition.bits() as usize]),
            Values::Callback(f) => {
                let v = f(coalition);
                if v.is_finite() {
                    Ok(v)
                } else {
                    Err(ShapleyError::Evaluation(format!(
                        "value function returned {v} for coalition {coalition}"
                    )))
                }
            }
        }
    }

    /// All `2^n` values indexed by bitmask. Callback games are evaluated once
    /// per coalition, in parallel.
    pub fn table(&self) -> Result<Cow<'_, [f64]>> {
        check_exact(self.n)?;
        match &self.values {
            Values::Table(t) => Ok(Cow::Borrowed(t.as_slice())),
            Values::Callback(_) => {
                let n = self.n;
                let values = (0..1u64 << n)
                    .into_par_iter()
                    .map(|bits| self.evaluate(Coalition::from_bits_unchecked(bits, n)))
                    .collect::<Result<Vec<f64>>>()?;
                Ok(Cow::Owned(values))
            }
        }
    }

    /// Materializes a callback game into table form.
    pub fn tabulate(&self) -> Result<Self> {
        match &self.values {
            Values::Table(_) => Ok(self.clone()),
            Values::Callback(_) => Self::from_table(self.n, self.table()?.into_owned()),
        }
    }

    /// Pointwise `self + other`.
    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn scale(&self, alpha: f64) -> Result<Self> {
        let t = self.table()?;
        Self::from_table(self.n, t.iter().map(|v| alpha * v).collect())
    }

    fn zip_with(&self, other: &Self, op: impl Fn(f64, f64) -> f64) -> Result<Self> {
        if self.n != other.n {
            return Err(ShapleyError::domain("games have different player counts"));
        }
        let (a, b) = (self.table()?, other.table()?);
        Self::from_table(self.n, a.iter().zip(b.iter()).map(|(x, y)| op(*x, *y)).collect())
    }

    pub fn from_spec(spec: &GameSpec) -> Result<Self> {
        let n = spec.n;
        check_exact(n)?;
        let mut values = vec![None; 1usize << n];
        for (key, &v) in &spec.values {
            let c = Coalition::parse(key, n)?;
            let slot = &mut values[c.bits() as usize];
            if slot.is_some() {
                return Err(ShapleyError::malformed(format!(
                    "coalition {c} listed more than once"
                )));
            }
            *slot = Some(v);
        }
        let values = values
            .into_iter()
            .enumerate()
            .map(|(bits, v)| {
                v.ok_or_else(|| {
                    ShapleyError::malformed(format!(
                        "missing value for coalition {}",
                        Coalition::from_bits_unchecked(bits as u64, n)
                    ))
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        Self::from_table(n, values)
    }

    pub fn to_spec(&self) -> Result<GameSpec> {
        let t = self.table()?;
        Ok(GameSpec {
            n: self.n,
            values: t
                .iter()
                .enumerate()
                .map(|(bits, v)| (bits.to_string(), *v))
                .collect(),
        })
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let spec: GameSpec = serde_json::from_str(text)
            .map_err(|e| ShapleyError::malformed(format!("game JSON: {e}")))?;
        Self::from_spec(&spec)
    }
}

/// JSON form of a table game: `{"n": 2, "values": {"0": 0.0, "[1]": 1.0, ...}}`.
///
/// Keys are decimal bitmasks or one-based player lists.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GameSpec {
    pub n: usize,
    pub values: BTreeMap<String, f64>,
}

pub type NoiseSampler =
    dyn Fn(Coalition, &mut dyn RngCore) -> std::result::Result<f64, String> + Send + Sync;
pub type NoiseMomentFn = dyn Fn(Coalition, u32) -> f64 + Send + Sync;

/// Coalition-dependent noise with tabulated mean and second moment.
///
/// Draws are Gaussian with the tabulated mean and variance
/// `second_moment - mean²`, which also fixes the higher moments.
#[derive(Debug, Clone, PartialEq)]
pub struct TableNoise {
    n: usize,
    means: Vec<f64>,
    variances: Vec<f64>,
}

impl TableNoise {
    pub fn new(n: usize, means: Vec<f64>, second_moments: Vec<f64>) -> Result<Self> {
        check_exact(n)?;
        let size = 1usize << n;
        if means.len() != size || second_moments.len() != size {
            return Err(ShapleyError::InvalidNoise(format!(
                "table noise for {n} players needs {size} means and second moments"
            )));
        }
        let mut variances = Vec::with_capacity(size);
        for (bits, (&mu, &m2)) in means.iter().zip(&second_moments).enumerate() {
            if !mu.is_finite() || !m2.is_finite() {
                return Err(ShapleyError::InvalidNoise(format!(
                    "non-finite noise moment for coalition {bits}"
                )));
            }
            let var = m2 - mu * mu;
            if var < -1e-12 * (1.0 + mu * mu) {
                return Err(ShapleyError::InvalidNoise(format!(
                    "second moment {m2} below squared mean {} for coalition {bits}",
                    mu * mu
                )));
            }
            variances.push(var.max(0.0));
        }
        Ok(Self { n, means, variances })
    }

    /// Deterministic per-coalition offsets (zero variance).
    pub fn from_means(n: usize, means: Vec<f64>) -> Result<Self> {
        let m2 = means.iter().map(|m| m * m).collect();
        Self::new(n, means, m2)
    }

    pub fn player_count(&self) -> usize {
        self.n
    }

    pub fn means(&self) -> &[f64] {
        &self.means
    }

    pub fn variances(&self) -> &[f64] {
        &self.variances
    }
}

/// User-supplied noise. Without `moments` only sampling-based analysis works.
#[derive(Clone)]
pub struct CustomNoise {
    sampler: Arc<NoiseSampler>,
    moments: Option<Arc<NoiseMomentFn>>,
}

impl CustomNoise {
    pub fn new<F>(sampler: F) -> Self
    where
        F: Fn(Coalition, &mut dyn RngCore) -> std::result::Result<f64, String>
            + Send
            + Sync
            + 'static,
    {
        Self {
            sampler: Arc::new(sampler),
            moments: None,
        }
    }

    /// Declares `E[ν^k | S]` for the sampler.
    pub fn with_moments<M>(mut self, moments: M) -> Self
    where
        M: Fn(Coalition, u32) -> f64 + Send + Sync + 'static,
    {
        self.moments = Some(Arc::new(moments));
        self
    }
}

impl fmt::Debug for CustomNoise {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CustomNoise")
            .field("analytic_moments", &self.moments.is_some())
            .finish()
    }
}

/// The law `Q(·|S)` of the additive noise `ν(S)`.
#[derive(Debug, Clone)]
pub enum NoiseModel {
    None,
    /// `ν ~ N(0, σ²)` for every coalition.
    Gaussian { sigma: f64 },
    /// `ν = c·B` with `B ~ Bernoulli(p)` for every coalition.
    BernoulliOffset { p: f64, c: f64 },
    Table(TableNoise),
    Custom(CustomNoise),
}

/// `E[X^k]` for `X ~ N(mean, var)` via `m_k = μ m_{k-1} + (k-1) v m_{k-2}`.
fn normal_raw_moment(mean: f64, var: f64, k: u32) -> f64 {
    let (mut prev, mut cur) = (1.0, mean);
    if k == 0 {
        return 1.0;
    }
    for j in 2..=k {
        let next = mean * cur + (j - 1) as f64 * var * prev;
        prev = cur;
        cur = next;
    }
    cur
}

impl NoiseModel {
    pub fn gaussian(sigma: f64) -> Result<Self> {
        if !(sigma.is_finite() && sigma > 0.0) {
            return Err(ShapleyError::InvalidNoise(format!(
                "gaussian sigma must be positive, got {sigma}"
            )));
        }
        Ok(NoiseModel::Gaussian { sigma })
    }

    pub fn bernoulli_offset(p: f64, c: f64) -> Result<Self> {
        if !(p > 0.0 && p < 1.0) {
            return Err(ShapleyError::InvalidNoise(format!(
                "bernoulli p must lie in (0, 1), got {p}"
            )));
        }
        if !c.is_finite() {
            return Err(ShapleyError::InvalidNoise(format!("bernoulli offset {c} is not finite")));
        }
        Ok(NoiseModel::BernoulliOffset { p, c })
    }

    /// True when `Q(·|S)` is the same law for every coalition.
    pub fn is_coalition_independent(&self) -> bool {
        matches!(
            self,
            NoiseModel::None | NoiseModel::Gaussian { .. } | NoiseModel::BernoulliOffset { .. }
        )
    }

    pub fn has_analytic_moments(&self) -> bool {
        match self {
            NoiseModel::Custom(c) => c.moments.is_some(),
            _ => true,
        }
    }

    /// `E[ν^k | S]`.
    pub fn moment(&self, coalition: Coalition, k: u32) -> Result<f64> {
        if k == 0 {
            return Ok(1.0);
        }
        Ok(match self {
            NoiseModel::None => 0.0,
            NoiseModel::Gaussian { sigma } => normal_raw_moment(0.0, sigma * sigma, k),
            NoiseModel::BernoulliOffset { p, c } => p * c.powi(k as i32),
            NoiseModel::Table(t) => {
                let bits = coalition.bits() as usize;
                normal_raw_moment(t.means[bits], t.variances[bits], k)
            }
            NoiseModel::Custom(c) => match &c.moments {
                Some(m) => m(coalition, k),
                None => {
                    return Err(ShapleyError::UnsupportedAnalytics(
                        "custom noise declares no moments; use the sampling estimator".into(),
                    ))
                }
            },
        })
    }

    /// One draw of `ν(S)`.
    pub fn sample<R: RngCore + ?Sized>(&self, coalition: Coalition, rng: &mut R) -> Result<f64> {
        Ok(match self {
            NoiseModel::None => 0.0,
            NoiseModel::Gaussian { sigma } => {
                let z: f64 = rng.sample(StandardNormal);
                sigma * z
            }
            NoiseModel::BernoulliOffset { p, c } => {
                if rng.random_bool(*p) {
                    *c
                } else {
                    0.0
                }
            }
            NoiseModel::Table(t) => {
                let bits = coalition.bits() as usize;
                let var = t.variances[bits];
                if var == 0.0 {
                    t.means[bits]
                } else {
                    let z: f64 = rng.sample(StandardNormal);
                    t.means[bits] + var.sqrt() * z
                }
            }
            NoiseModel::Custom(c) => {
                let mut dyn_rng = DynRng(rng);
                (c.sampler)(coalition, &mut dyn_rng).map_err(ShapleyError::Evaluation)?
            }
        })
    }

    pub fn from_spec(spec: &NoiseSpec, n: usize) -> Result<Self> {
        match spec {
            NoiseSpec::None => Ok(NoiseModel::None),
            NoiseSpec::Gaussian { sigma } => Self::gaussian(*sigma),
            NoiseSpec::Bernoulli { p, c } => Self::bernoulli_offset(*p, *c),
            NoiseSpec::Table {
                means,
                second_moments,
            } => {
                check_exact(n)?;
                let means = keyed_table(means, n, "means")?;
                let m2 = keyed_table(second_moments, n, "second_moments")?;
                Ok(NoiseModel::Table(TableNoise::new(n, means, m2)?))
            }
        }
    }

    /// JSON form; custom noise has none.
    pub fn to_spec(&self) -> Option<NoiseSpec> {
        Some(match self {
            NoiseModel::None => NoiseSpec::None,
            NoiseModel::Gaussian { sigma } => NoiseSpec::Gaussian { sigma: *sigma },
            NoiseModel::BernoulliOffset { p, c } => NoiseSpec::Bernoulli { p: *p, c: *c },
            NoiseModel::Table(t) => {
                let key = |bits: usize| bits.to_string();
                NoiseSpec::Table {
                    means: t.means.iter().enumerate().map(|(b, m)| (key(b), *m)).collect(),
                    second_moments: t
                        .means
                        .iter()
                        .zip(&t.variances)
                        .enumerate()
                        .map(|(b, (m, v))| (key(b), v + m * m))
                        .collect(),
                }
            }
            NoiseModel::Custom(_) => return None,
        })
    }

    pub fn from_json(text: &str, n: usize) -> Result<Self> {
        let spec: NoiseSpec = serde_json::from_str(text)
            .map_err(|e| ShapleyError::InvalidNoise(format!("noise JSON: {e}")))?;
        Self::from_spec(&spec, n)
    }
}

fn keyed_table(map: &BTreeMap<String, f64>, n: usize, what: &str) -> Result<Vec<f64>> {
    let mut out = vec![None; 1usize << n];
    for (key, &v) in map {
        let c = Coalition::parse(key, n)
            .map_err(|e| ShapleyError::InvalidNoise(format!("{what}: {e}")))?;
        if out[c.bits() as usize].replace(v).is_some() {
            return Err(ShapleyError::InvalidNoise(format!(
                "{what}: coalition {c} listed more than once"
            )));
        }
    }
    out.into_iter()
        .enumerate()
        .map(|(bits, v)| {
            v.ok_or_else(|| {
                ShapleyError::InvalidNoise(format!(
                    "{what}: missing entry for coalition {}",
                    Coalition::from_bits_unchecked(bits as u64, n)
                ))
            })
        })
        .collect()
}

struct DynRng<'a, R: RngCore + ?Sized>(&'a mut R);

impl<R: RngCore + ?Sized> RngCore for DynRng<'_, R> {
    fn next_u32(&mut self) -> u32 {
        self.0.next_u32()
    }
    fn next_u64(&mut self) -> u64 {
        self.0.next_u64()
    }
    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.0.fill_bytes(dst)
    }
}

/// JSON form of a noise model, tagged by `type`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase", deny_unknown_fields)]
pub enum NoiseSpec {
    None,
    Gaussian {
        sigma: f64,
    },
    Bernoulli {
        p: f64,
        c: f64,
    },
    Table {
        means: BTreeMap<String, f64>,
        second_moments: BTreeMap<String, f64>,
    },
}

/// A value function with additive noise, `v(S) + ν(S)`.
#[derive(Debug, Clone)]
pub struct UncertainGame {
    base: DeterministicGame,
    noise: NoiseModel,
}

impl UncertainGame {
    pub fn new(base: DeterministicGame, noise: NoiseModel) -> Result<Self> {
        if let NoiseModel::Table(t) = &noise {
            if t.n != base.n {
                return Err(ShapleyError::InvalidNoise(format!(
                    "table noise over {} players attached to a {}-player game",
                    t.n, base.n
                )));
            }
        }
        Ok(Self { base, noise })
    }

    pub fn noiseless(base: DeterministicGame) -> Self {
        Self {
            base,
            noise: NoiseModel::None,
        }
    }

    pub fn base(&self) -> &DeterministicGame {
        &self.base
    }

    pub fn noise(&self) -> &NoiseModel {
        &self.noise
    }

    pub fn player_count(&self) -> usize {
        self.base.n
    }

    /// One draw of `v(S) + ν(S)`; with no noise this is exactly `v(S)`.
    pub fn sample<R: RngCore + ?Sized>(&self, coalition: Coalition, rng: &mut R) -> Result<f64> {
        let v = self.base.evaluate(coalition)?;
        match self.noise {
            NoiseModel::None => Ok(v),
            _ => Ok(v + self.noise.sample(coalition, rng)?),
        }
    }

    /// Same as [`UncertainGame::sample`] given a pre-fetched base value.
    pub(crate) fn sample_with_base<R: RngCore + ?Sized>(
        &self,
        base_value: f64,
        coalition: Coalition,
        rng: &mut R,
    ) -> Result<f64> {
        match self.noise {
            NoiseModel::None => Ok(base_value),
            _ => Ok(base_value + self.noise.sample(coalition, rng)?),
        }
    }

    /// `E[ν^k | S]`.
    pub fn noise_moment(&self, coalition: Coalition, k: u32) -> Result<f64> {
        self.check_coalition(coalition)?;
        self.noise.moment(coalition, k)
    }

    /// `E[ε_i^k | S]` for `ε_i(S) = ν(S ∪ {i}) − ν(S)` with the two draws
    /// independent.
    pub fn epsilon_moment(&self, player: usize, coalition: Coalition, k: u32) -> Result<f64> {
        self.check_coalition(coalition)?;
        if player >= self.base.n {
            return Err(ShapleyError::domain(format!("player {player} out of range")));
        }
        if coalition.contains(player) {
            return Err(ShapleyError::domain(format!(
                "player {} is a member of coalition {coalition}",
                player + 1
            )));
        }
        let with = coalition.with(player);
        let upper = (0..=k)
            .map(|j| self.noise.moment(with, j))
            .collect::<Result<Vec<_>>>()?;
        let lower = (0..=k)
            .map(|j| self.noise.moment(coalition, j))
            .collect::<Result<Vec<_>>>()?;
        Ok(epsilon_moment_from(&upper, &lower, k))
    }

    fn check_coalition(&self, coalition: Coalition) -> Result<()> {
        if coalition.player_count() != self.base.n {
            return Err(ShapleyError::domain(format!(
                "coalition over {} players used with a {}-player game",
                coalition.player_count(),
                self.base.n
            )));
        }
        Ok(())
    }
}

/// Binomial expansion of `E[(X − Y)^k]` for independent `X`, `Y` given raw
/// moments `upper[j] = E[X^j]` and `lower[j] = E[Y^j]`, `j ≤ k`.
pub(crate) fn epsilon_moment_from(upper: &[f64], lower: &[f64], k: u32) -> f64 {
    let k = k as usize;
    let mut binom = 1.0;
    let mut total = 0.0;
    for j in 0..=k {
        let sign = if (k - j).is_multiple_of(2) { 1.0 } else { -1.0 };
        total += binom * sign * upper[j] * lower[k - j];
        binom = binom * (k - j) as f64 / (j + 1) as f64;
    }
    total
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{substream, Domain};

    pub(crate) fn game_a() -> DeterministicGame {
        DeterministicGame::from_table(2, vec![0.0, 1.0, 2.0, 4.0]).unwrap()
    }

    fn c(players: &[usize], n: usize) -> Coalition {
        Coalition::from_players(players, n).unwrap()
    }

    #[test]
    fn evaluate_examples() {
        let g = game_a();
        assert_eq!(g.evaluate(c(&[1], 2)).unwrap(), 2.0);
        assert_eq!(g.evaluate(c(&[], 2)).unwrap(), 0.0);
        let shifted = DeterministicGame::from_table(2, vec![3.0, 1.0, 2.0, 4.0]).unwrap();
        assert_eq!(shifted.evaluate(c(&[], 2)).unwrap(), 3.0);
        let card = DeterministicGame::from_fn(3, |s| s.len() as f64).unwrap();
        assert_eq!(card.evaluate(c(&[0, 2], 3)).unwrap(), 2.0);
    }

    #[test]
    fn table_validation() {
        assert!(matches!(
            DeterministicGame::from_table(2, vec![0.0; 3]),
            Err(ShapleyError::MalformedGame(_))
        ));
        assert!(matches!(
            DeterministicGame::from_table(1, vec![0.0, f64::NAN]),
            Err(ShapleyError::MalformedGame(_))
        ));
        assert!(matches!(
            DeterministicGame::from_table(25, vec![]),
            Err(ShapleyError::Capacity { .. })
        ));
    }

    #[test]
    fn evaluate_rejects_foreign_coalition() {
        assert!(game_a().evaluate(c(&[0], 3)).is_err());
    }

    #[test]
    fn callback_non_finite_is_evaluation_error() {
        let g = DeterministicGame::from_fn(2, |_| f64::INFINITY).unwrap();
        assert!(matches!(g.evaluate(c(&[], 2)), Err(ShapleyError::Evaluation(_))));
    }

    #[test]
    fn json_missing_entry_is_malformed() {
        let err = DeterministicGame::from_json(r#"{"n":2,"values":{"0":0,"1":1,"2":2}}"#);
        assert!(matches!(err, Err(ShapleyError::MalformedGame(_))));
        let dup = DeterministicGame::from_json(
            r#"{"n":2,"values":{"0":0,"1":1,"[1]":1,"2":2,"3":4}}"#,
        );
        assert!(matches!(dup, Err(ShapleyError::MalformedGame(_))));
    }

    #[test]
    fn json_round_trip_with_mixed_keys() {
        let g = DeterministicGame::from_json(
            r#"{"n":2,"values":{"[]":0,"[1]":1,"2":2,"[1,2]":4}}"#,
        )
        .unwrap();
        assert_eq!(g.table().unwrap().as_ref(), &[0.0, 1.0, 2.0, 4.0]);
        let text = serde_json::to_string(&g.to_spec().unwrap()).unwrap();
        let back = DeterministicGame::from_json(&text).unwrap();
        assert_eq!(back.table().unwrap(), g.table().unwrap());
    }

    #[test]
    fn noise_json_forms() {
        let g = NoiseModel::from_json(r#"{"type":"gaussian","sigma":0.01}"#, 2).unwrap();
        assert!(matches!(g, NoiseModel::Gaussian { sigma } if sigma == 0.01));
        let b = NoiseModel::from_json(r#"{"type":"bernoulli","p":0.33,"c":0.05}"#, 2).unwrap();
        assert!(matches!(b, NoiseModel::BernoulliOffset { p, c } if p == 0.33 && c == 0.05));
        assert!(matches!(
            NoiseModel::from_json(r#"{"type":"none"}"#, 2).unwrap(),
            NoiseModel::None
        ));
        let t = NoiseModel::from_json(
            r#"{"type":"table","means":{"0":0,"1":0.1,"2":0,"3":0.3},
                "second_moments":{"0":0,"1":0.02,"2":0,"3":0.09}}"#,
            2,
        )
        .unwrap();
        let NoiseModel::Table(t) = t else { panic!() };
        assert_eq!(t.means(), &[0.0, 0.1, 0.0, 0.3]);
        assert!(NoiseModel::from_json(r#"{"type":"gaussian","sigma":-1}"#, 2).is_err());
        assert!(NoiseModel::from_json(r#"{"type":"bernoulli","p":1.0,"c":1}"#, 2).is_err());
        assert!(NoiseModel::from_json(r#"{"type":"table","means":{"0":0},"second_moments":{"0":0}}"#, 2).is_err());
    }

    #[test]
    fn table_noise_rejects_negative_variance() {
        assert!(TableNoise::new(1, vec![1.0, 0.0], vec![0.5, 0.0]).is_err());
    }

    #[test]
    fn noise_moment_examples() {
        let s = c(&[0], 2);
        let g = NoiseModel::gaussian(0.3).unwrap();
        assert_eq!(g.moment(s, 1).unwrap(), 0.0);
        assert!((g.moment(s, 2).unwrap() - 0.09).abs() < 1e-15);
        assert!((g.moment(s, 4).unwrap() - 3.0 * 0.09 * 0.09).abs() < 1e-15);
        let b = NoiseModel::bernoulli_offset(0.33, 0.05).unwrap();
        assert!((b.moment(s, 1).unwrap() - 0.33 * 0.05).abs() < 1e-18);
        assert!((b.moment(s, 2).unwrap() - 0.33 * 0.0025).abs() < 1e-18);
        let t = NoiseModel::Table(TableNoise::from_means(2, vec![0.0, 0.1, 0.0, 0.3]).unwrap());
        assert_eq!(t.moment(s, 1).unwrap(), 0.1);
    }

    #[test]
    fn custom_noise_without_moments_is_unsupported() {
        let noise = NoiseModel::Custom(CustomNoise::new(|_, _| Ok(0.0)));
        let ug = UncertainGame::new(game_a(), noise).unwrap();
        assert!(matches!(
            ug.noise_moment(c(&[], 2), 1),
            Err(ShapleyError::UnsupportedAnalytics(_))
        ));
    }

    #[test]
    fn custom_sampler_failure_propagates() {
        let noise = NoiseModel::Custom(CustomNoise::new(|_, _| Err("boom".into())));
        let ug = UncertainGame::new(game_a(), noise).unwrap();
        let mut rng = substream(1, Domain::User, 0);
        assert!(matches!(
            ug.sample(c(&[], 2), &mut rng),
            Err(ShapleyError::Evaluation(m)) if m == "boom"
        ));
    }

    #[test]
    fn epsilon_moment_examples() {
        let s = c(&[1], 2);
        let gauss = UncertainGame::new(game_a(), NoiseModel::gaussian(0.01).unwrap()).unwrap();
        assert_eq!(gauss.epsilon_moment(0, s, 1).unwrap(), 0.0);
        assert!((gauss.epsilon_moment(0, s, 2).unwrap() - 2e-4).abs() < 1e-18);
        let bern =
            UncertainGame::new(game_a(), NoiseModel::bernoulli_offset(0.33, 0.05).unwrap()).unwrap();
        assert!(bern.epsilon_moment(0, s, 1).unwrap().abs() < 1e-18);
        let expect = 2.0 * 0.0025 * 0.33 * 0.67;
        assert!((bern.epsilon_moment(0, s, 2).unwrap() - expect).abs() < 1e-17);
        assert!(bern.epsilon_moment(1, s, 1).is_err());
    }

    #[test]
    fn epsilon_first_moment_is_mean_difference() {
        let means = vec![0.0, 0.1, -0.2, 0.3, 0.7, 0.05, 0.0, 1.0];
        let m2 = means.iter().map(|m| m * m + 0.04).collect();
        let ug = UncertainGame::new(
            DeterministicGame::from_fn(3, |s| s.len() as f64).unwrap(),
            NoiseModel::Table(TableNoise::new(3, means, m2).unwrap()),
        )
        .unwrap();
        for i in 0..3 {
            for bits in (0..8u64).filter(|b| b >> i & 1 == 0) {
                let s = Coalition::new(bits, 3).unwrap();
                let lhs = ug.epsilon_moment(i, s, 1).unwrap();
                let rhs = ug.noise_moment(s.with(i), 1).unwrap() - ug.noise_moment(s, 1).unwrap();
                assert_eq!(lhs, rhs);
            }
        }
    }

    #[test]
    fn noiseless_sample_is_bit_identical() {
        let ug = UncertainGame::noiseless(game_a());
        let mut rng = substream(3, Domain::User, 0);
        for bits in 0..4 {
            let s = Coalition::new(bits, 2).unwrap();
            assert_eq!(
                ug.sample(s, &mut rng).unwrap().to_bits(),
                ug.base().evaluate(s).unwrap().to_bits()
            );
        }
    }

    #[test]
    fn bernoulli_draws_take_two_values() {
        let ug =
            UncertainGame::new(game_a(), NoiseModel::bernoulli_offset(0.33, 0.05).unwrap()).unwrap();
        let s = c(&[1], 2);
        let mut rng = substream(11, Domain::User, 0);
        let mut seen_offset = false;
        for _ in 0..1000 {
            let x = ug.sample(s, &mut rng).unwrap();
            assert!(x == 2.0 || x == 2.0 + 0.05, "{x}");
            seen_offset |= x != 2.0;
        }
        assert!(seen_offset);
    }

    #[test]
    fn gaussian_sample_mean_within_clt_bound() {
        let ug = UncertainGame::new(game_a(), NoiseModel::gaussian(0.01).unwrap()).unwrap();
        let s = c(&[1], 2);
        let mut rng = substream(5, Domain::User, 0);
        let n = 100_000;
        let mean = (0..n).map(|_| ug.sample(s, &mut rng).unwrap()).sum::<f64>() / n as f64;
        assert!((mean - 2.0).abs() < 3e-4, "{mean}");
    }

    /// Empirical raw moments of 10^5 draws within 5 standard errors of the
    /// analytic ones, for every noise kind with declared moments.
    #[test]
    fn empirical_noise_moments_match_analytic() {
        let n = 2;
        let table = TableNoise::new(2, vec![0.0, 0.1, -0.05, 0.3], vec![0.01, 0.02, 0.0125, 0.1])
            .unwrap();
        let custom = CustomNoise::new(|_, rng| Ok(if rng.next_u32() % 2 == 0 { -1.0 } else { 1.0 }))
            .with_moments(|_, k| if k % 2 == 0 { 1.0 } else { 0.0 });
        let kinds = [
            NoiseModel::gaussian(0.01).unwrap(),
            NoiseModel::bernoulli_offset(0.33, 0.05).unwrap(),
            NoiseModel::Table(table),
            NoiseModel::Custom(custom),
        ];
        let draws = 100_000;
        for (kind_idx, noise) in kinds.iter().enumerate() {
            for bits in 0..4u64 {
                let s = Coalition::new(bits, n).unwrap();
                let mut rng = substream(99, Domain::User, (kind_idx as u64) << 8 | bits);
                let xs: Vec<f64> = (0..draws).map(|_| noise.sample(s, &mut rng).unwrap()).collect();
                for k in 1..=3u32 {
                    let pows: Vec<f64> = xs.iter().map(|x| x.powi(k as i32)).collect();
                    let mean = pows.iter().sum::<f64>() / draws as f64;
                    let var = pows.iter().map(|p| (p - mean).powi(2)).sum::<f64>()
                        / (draws - 1) as f64;
                    let se = (var / draws as f64).sqrt();
                    let analytic = noise.moment(s, k).unwrap();
                    assert!(
                        (mean - analytic).abs() <= 5.0 * se + 1e-15,
                        "kind {kind_idx} S={bits} k={k}: {mean} vs {analytic} (se {se})"
                    );
                }
            }
        }
    }

    #[test]
    fn normal_raw_moments() {
        assert_eq!(normal_raw_moment(2.0, 0.0, 3), 8.0);
        // E[X^3] = μ³ + 3μσ²
        assert!((normal_raw_moment(1.5, 0.25, 3) - (3.375 + 3.0 * 1.5 * 0.25)).abs() < 1e-14);
        // E[X^4] = μ⁴ + 6μ²σ² + 3σ⁴
        let (m, v) = (0.5f64, 2.0f64);
        let want = m.powi(4) + 6.0 * m * m * v + 3.0 * v * v;
        assert!((normal_raw_moment(m, v, 4) - want).abs() < 1e-12);
    }
}
