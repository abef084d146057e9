//! Shapley values of value functions with additive noise.
//!
//! With `ṽ(S) = v(S) + ν(S)` the marginal contribution of player `i` becomes
//! `Ṽ_i = Δ_i v(S) + ε_i(S)` where `ε_i(S) = ν(S ∪ {i}) − ν(S)`. Everything in
//! this module is computed analytically from the raw moments of `ν`:
//!
//! * the mean bias `Γ_i = Σ_S w(S) E[ε_i | S]`, so that `Φ̃_i = Φ_i + Γ_i`;
//! * the shifted deterministic game `v'(S) = v(S) + Σ_{j∈S} Γ_j`, whose
//!   ordinary Shapley values equal `Φ̃_i`;
//! * raw moments of `Ṽ_i` of any order and the split
//!   `σ̃_i² = σ_i² + σ_Γi² + ξ_i`;
//! * the mixture law of `Ṽ_i` for the noise kinds with a closed-form `ε` law.
//!
//! Noise without declared moments is rejected with
//! [`ShapleyError::UnsupportedAnalytics`]; use [`crate::estimator`] for it.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::coalition::{check_exact, enumerate_excluding, weight_table, Coalition};
use crate::error::{Result, ShapleyError};
use crate::game::{epsilon_moment_from, DeterministicGame, NoiseModel, UncertainGame};
use crate::shapley_exact::{
    atoms_moment, merge_atoms, raw_atoms, variance_from_moments, write_atoms_csv, Atom,
    DEFAULT_MERGE_TOLERANCE,
};
use crate::sum::KahanSum;
use crate::text;

/// Per-player summary of an uncertain game.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlayerUncertainty {
    /// Noiseless Shapley value `Φ_i`.
    pub phi: f64,
    /// Mean bias `Γ_i`.
    pub gamma: f64,
    /// `Φ̃_i = Φ_i + Γ_i`.
    pub phi_tilde: f64,
    pub sigma2_intrinsic: f64,
    pub sigma2_gamma: f64,
    /// Correlation term `ξ_i`; may be negative.
    pub xi: f64,
    pub sigma2_total: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UncertainShapleyResult {
    pub players: Vec<PlayerUncertainty>,
}

impl UncertainShapleyResult {
    pub fn phi_tilde(&self) -> Vec<f64> {
        self.players.iter().map(|p| p.phi_tilde).collect()
    }

    pub fn gamma(&self) -> Vec<f64> {
        self.players.iter().map(|p| p.gamma).collect()
    }

    /// CSV with a one-based `player` column followed by every field.
    pub fn write_csv<W: Write + ?Sized>(&self, out: &mut W) -> std::io::Result<()> {
        writeln!(
            out,
            "player,phi,sigma2,gamma,phi_tilde,sigma2_gamma,xi,sigma2_total"
        )?;
        for (i, p) in self.players.iter().enumerate() {
            let row = [
                p.phi,
                p.sigma2_intrinsic,
                p.gamma,
                p.phi_tilde,
                p.sigma2_gamma,
                p.xi,
                p.sigma2_total,
            ]
            .map(text::real)
            .join(",");
            writeln!(out, "{},{row}", i + 1)?;
        }
        Ok(())
    }
}

/// `σ̃_i² = σ_i² + σ_Γi² + ξ_i`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VarianceDecomposition {
    pub sigma2_intrinsic: f64,
    pub sigma2_gamma: f64,
    pub xi: f64,
    pub sigma2_total: f64,
}

/// Raw noise moments `E[ν^j | S]`, `j = 0..=order`, for every coalition.
enum NoiseMoments {
    Uniform(Vec<f64>),
    /// `per_coalition[bits * (order + 1) + j]`
    PerCoalition { stride: usize, values: Vec<f64> },
}

impl NoiseMoments {
    fn build(ugame: &UncertainGame, order: u32) -> Result<Self> {
        let n = ugame.player_count();
        let noise = ugame.noise();
        if !noise.has_analytic_moments() {
            return Err(ShapleyError::UnsupportedAnalytics(
                "noise model declares no analytic moments; use the estimator".into(),
            ));
        }
        let any = Coalition::from_bits_unchecked(0, n);
        if noise.is_coalition_independent() {
            let m = (0..=order)
                .map(|j| noise.moment(any, j))
                .collect::<Result<Vec<_>>>()?;
            return Ok(NoiseMoments::Uniform(m));
        }
        let stride = order as usize + 1;
        let values = (0..1u64 << n)
            .into_par_iter()
            .map(|bits| {
                let s = Coalition::from_bits_unchecked(bits, n);
                (0..=order)
                    .map(|j| noise.moment(s, j))
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?
            .concat();
        Ok(NoiseMoments::PerCoalition { stride, values })
    }

    #[inline]
    fn of(&self, bits: u64) -> &[f64] {
        match self {
            NoiseMoments::Uniform(m) => m,
            NoiseMoments::PerCoalition { stride, values } => {
                let start = bits as usize * stride;
                &values[start..start + stride]
            }
        }
    }
}

/// Tabulated base game, Shapley weights and noise moments.
struct Prepared<'a> {
    n: usize,
    table: std::borrow::Cow<'a, [f64]>,
    weights: Vec<f64>,
    noise: NoiseMoments,
}

impl<'a> Prepared<'a> {
    fn new(ugame: &'a UncertainGame, order: u32) -> Result<Self> {
        let n = ugame.player_count();
        check_exact(n)?;
        let noise = NoiseMoments::build(ugame, order)?;
        Ok(Self {
            n,
            table: ugame.base().table()?,
            weights: weight_table(n)?,
            noise,
        })
    }

    fn check_player(&self, player: usize) -> Result<()> {
        if player >= self.n {
            return Err(ShapleyError::domain(format!(
                "player {player} out of range for {} players",
                self.n
            )));
        }
        Ok(())
    }

    /// Visits `(w(S), Δ_i v(S), E[ε_i^j | S] for j ≤ order)` for every `S ∌ i`.
    fn for_each_coalition(&self, player: usize, order: u32, mut f: impl FnMut(f64, f64, &[f64])) {
        let bit = 1u64 << player;
        let mut eps = vec![0.0; order as usize + 1];
        for s in enumerate_excluding(self.n, player).expect("validated") {
            let bits = s.bits();
            let delta = self.table[(bits | bit) as usize] - self.table[bits as usize];
            let upper = self.noise.of(bits | bit);
            let lower = self.noise.of(bits);
            for (j, e) in eps.iter_mut().enumerate() {
                *e = epsilon_moment_from(upper, lower, j as u32);
            }
            f(self.weights[s.len()], delta, &eps);
        }
    }

    fn player_summary(&self, player: usize) -> PlayerUncertainty {
        let mut phi = KahanSum::new();
        let mut second = KahanSum::new();
        let mut gamma = KahanSum::new();
        let mut eps_second = KahanSum::new();
        let mut cross = KahanSum::new();
        self.for_each_coalition(player, 2, |w, delta, eps| {
            phi.add(w * delta);
            second.add(w * delta * delta);
            gamma.add(w * eps[1]);
            eps_second.add(w * eps[2]);
            cross.add(w * delta * eps[1]);
        });
        let (phi, gamma) = (phi.value(), gamma.value());
        let sigma2_intrinsic = variance_from_moments(phi, second.value());
        let sigma2_gamma = variance_from_moments(gamma, eps_second.value());
        let xi = 2.0 * cross.value() - 2.0 * phi * gamma;
        PlayerUncertainty {
            phi,
            gamma,
            phi_tilde: phi + gamma,
            sigma2_intrinsic,
            sigma2_gamma,
            xi,
            sigma2_total: sigma2_intrinsic + sigma2_gamma + xi,
        }
    }

    fn gamma(&self, player: usize) -> f64 {
        let mut gamma = KahanSum::new();
        self.for_each_coalition(player, 1, |w, _, eps| gamma.add(w * eps[1]));
        gamma.value()
    }
}

/// `Γ_i = Σ_{S ∌ i} P(S) E[ε_i | S]`.
pub fn gamma(ugame: &UncertainGame, player: usize) -> Result<f64> {
    let prep = Prepared::new(ugame, 1)?;
    prep.check_player(player)?;
    Ok(prep.gamma(player))
}

/// Every per-player quantity in one pass over the coalitions.
pub fn uncertain_shapley(ugame: &UncertainGame) -> Result<UncertainShapleyResult> {
    let prep = Prepared::new(ugame, 2)?;
    let players = (0..prep.n)
        .into_par_iter()
        .map(|i| prep.player_summary(i))
        .collect();
    Ok(UncertainShapleyResult { players })
}

/// The deterministic game `v'(S) = v(S) + Σ_{j∈S} Γ_j` whose Shapley values
/// are the uncertain Shapley values of `ugame`.
pub fn shifted_game(ugame: &UncertainGame) -> Result<DeterministicGame> {
    let prep = Prepared::new(ugame, 1)?;
    let gammas: Vec<f64> = (0..prep.n).into_par_iter().map(|i| prep.gamma(i)).collect();
    let n = prep.n;
    let shifted = prep
        .table
        .iter()
        .enumerate()
        .map(|(bits, v)| {
            let s = Coalition::from_bits_unchecked(bits as u64, n);
            v + s.players().map(|j| gammas[j]).collect::<KahanSum>().value()
        })
        .collect();
    DeterministicGame::from_table(n, shifted)
}

/// `E[Ṽ_i^k] = Σ_m C(k,m) Σ_S w(S) [Δ_i v(S)]^m E[ε_i^{k−m} | S]`.
pub fn uncertain_moment(ugame: &UncertainGame, player: usize, k: u32) -> Result<f64> {
    if k == 0 {
        return Err(ShapleyError::domain("moment order must be at least 1"));
    }
    let prep = Prepared::new(ugame, k)?;
    prep.check_player(player)?;
    let binom = binomial_row(k);
    let mut total = KahanSum::new();
    prep.for_each_coalition(player, k, |w, delta, eps| {
        let mut power = 1.0;
        let mut inner = 0.0;
        for m in 0..=k as usize {
            inner += binom[m] * power * eps[k as usize - m];
            power *= delta;
        }
        total.add(w * inner);
    });
    Ok(total.value())
}

fn binomial_row(k: u32) -> Vec<f64> {
    let mut row = vec![1.0; k as usize + 1];
    for m in 1..=k as usize {
        row[m] = row[m - 1] * (k as usize - m + 1) as f64 / m as f64;
    }
    row
}

pub fn variance_decomposition(ugame: &UncertainGame, player: usize) -> Result<VarianceDecomposition> {
    let prep = Prepared::new(ugame, 2)?;
    prep.check_player(player)?;
    let p = prep.player_summary(player);
    Ok(VarianceDecomposition {
        sigma2_intrinsic: p.sigma2_intrinsic,
        sigma2_gamma: p.sigma2_gamma,
        xi: p.xi,
        sigma2_total: p.sigma2_total,
    })
}

/// Law of `ε_i(S)` shared by every mixture component.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "law", rename_all = "snake_case")]
pub enum ComponentLaw {
    /// No noise: `ε = 0`.
    Dirac,
    /// `ε ∈ {−offset, 0, +offset}` with `P(±offset) = side_mass` each.
    ThreePoint { offset: f64, side_mass: f64 },
    /// `ε ~ N(0, variance)`.
    Normal { variance: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MixtureComponent {
    /// `Δ_i v(S)`, merged over coalitions with equal contributions.
    pub center: f64,
    /// Total Shapley weight of those coalitions.
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MixtureSupport {
    Atoms(Vec<Atom>),
    Grid { points: Vec<f64>, density: Vec<f64> },
}

/// The law of `Ṽ_i`: components `Δ_i v(S)` weighted by `w(S)`, each
/// convolved with the law of `ε_i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureDensity {
    pub player: usize,
    pub law: ComponentLaw,
    pub components: Vec<MixtureComponent>,
    pub support: MixtureSupport,
}

/// Grid points used when none are supplied.
pub const DEFAULT_GRID_POINTS: usize = 1024;
/// Grid margin beyond the outermost centers, in standard deviations of `ε`.
pub const DEFAULT_GRID_HALF_WIDTH: f64 = 7.0;
const MAX_GRID_POINTS: usize = 1 << 22;

/// Trapezoid rule over possibly non-uniform points.
fn trapezoid(points: &[f64], values: impl Fn(usize) -> f64) -> f64 {
    let mut acc = KahanSum::new();
    for j in 1..points.len() {
        acc.add(0.5 * (points[j] - points[j - 1]) * (values(j) + values(j - 1)));
    }
    acc.value()
}

impl MixtureDensity {
    /// Sum of atom masses, or the trapezoid integral of the density.
    pub fn total_mass(&self) -> f64 {
        match &self.support {
            MixtureSupport::Atoms(atoms) => atoms.iter().map(|a| a.mass).collect::<KahanSum>().value(),
            MixtureSupport::Grid { points, density } => trapezoid(points, |j| density[j]),
        }
    }

    /// `E[U^k]` of the rendered support (exact for atoms, trapezoid on a grid).
    pub fn raw_moment(&self, k: u32) -> f64 {
        match &self.support {
            MixtureSupport::Atoms(atoms) => atoms_moment(atoms, k),
            MixtureSupport::Grid { points, density } => {
                trapezoid(points, |j| points[j].powi(k as i32) * density[j])
            }
        }
    }

    /// CSV rows `player,value,mass` for atoms or `player,value,density` on a grid.
    pub fn write_csv<W: Write + ?Sized>(&self, out: &mut W, header: bool) -> std::io::Result<()> {
        match &self.support {
            MixtureSupport::Atoms(atoms) => write_atoms_csv(out, self.player, atoms, header),
            MixtureSupport::Grid { points, density } => {
                if header {
                    writeln!(out, "player,value,density")?;
                }
                for (u, p) in points.iter().zip(density) {
                    writeln!(out, "{},{},{}", self.player + 1, text::real(*u), text::real(*p))?;
                }
                Ok(())
            }
        }
    }
}

/// Uniform grid covering every center plus [`DEFAULT_GRID_HALF_WIDTH`]
/// standard deviations, with at least [`DEFAULT_GRID_POINTS`] points and a
/// spacing no coarser than a quarter standard deviation.
pub fn default_grid(components: &[MixtureComponent], variance: f64) -> Vec<f64> {
    let sd = variance.sqrt();
    let lo = components.iter().map(|c| c.center).fold(f64::INFINITY, f64::min);
    let hi = components.iter().map(|c| c.center).fold(f64::NEG_INFINITY, f64::max);
    let (lo, hi) = (lo - DEFAULT_GRID_HALF_WIDTH * sd, hi + DEFAULT_GRID_HALF_WIDTH * sd);
    let needed = ((hi - lo) / (0.25 * sd)).ceil() as usize + 1;
    let points = needed.clamp(DEFAULT_GRID_POINTS, MAX_GRID_POINTS);
    linspace(lo, hi, points)
}

pub fn linspace(lo: f64, hi: f64, points: usize) -> Vec<f64> {
    if points == 1 {
        return vec![lo];
    }
    let step = (hi - lo) / (points - 1) as f64;
    (0..points)
        .map(|j| if j == points - 1 { hi } else { lo + step * j as f64 })
        .collect()
}

/// Law of `Ṽ_i` for noise kinds whose `ε` law has a closed form
/// (none, Gaussian, Bernoulli offset). `grid` only matters for the
/// continuous Gaussian case; `None` selects [`default_grid`].
pub fn mixture_density(
    ugame: &UncertainGame,
    player: usize,
    grid: Option<&[f64]>,
) -> Result<MixtureDensity> {
    let n = ugame.player_count();
    check_exact(n)?;
    if player >= n {
        return Err(ShapleyError::domain(format!("player {player} out of range")));
    }
    let law = match *ugame.noise() {
        NoiseModel::None => ComponentLaw::Dirac,
        NoiseModel::Gaussian { sigma } => ComponentLaw::Normal {
            variance: 2.0 * sigma * sigma,
        },
        NoiseModel::BernoulliOffset { p, c } => ComponentLaw::ThreePoint {
            offset: c,
            side_mass: p * (1.0 - p),
        },
        NoiseModel::Table(_) | NoiseModel::Custom(_) => {
            return Err(ShapleyError::UnsupportedAnalytics(
                "mixture densities need gaussian, bernoulli or no noise".into(),
            ))
        }
    };
    let table = ugame.base().table()?;
    let weights = weight_table(n)?;
    let centers = merge_atoms(raw_atoms(&table, n, &weights, player), DEFAULT_MERGE_TOLERANCE);
    let components: Vec<MixtureComponent> = centers
        .iter()
        .map(|a| MixtureComponent {
            center: a.value,
            weight: a.mass,
        })
        .collect();
    let support = match law {
        ComponentLaw::Dirac => MixtureSupport::Atoms(centers),
        ComponentLaw::ThreePoint { offset, side_mass } => {
            let raw = centers
                .iter()
                .flat_map(|a| {
                    [
                        Atom { value: a.value - offset, mass: a.mass * side_mass },
                        Atom { value: a.value, mass: a.mass * (1.0 - 2.0 * side_mass) },
                        Atom { value: a.value + offset, mass: a.mass * side_mass },
                    ]
                })
                .collect();
            MixtureSupport::Atoms(merge_atoms(raw, DEFAULT_MERGE_TOLERANCE))
        }
        ComponentLaw::Normal { variance } => {
            let points = match grid {
                Some(g) => {
                    if g.windows(2).any(|w| w[1].partial_cmp(&w[0]) != Some(std::cmp::Ordering::Greater)) || g.iter().any(|x| !x.is_finite()) {
                        return Err(ShapleyError::domain(
                            "grid must be finite and strictly increasing",
                        ));
                    }
                    g.to_vec()
                }
                None => default_grid(&components, variance),
            };
            let norm = 1.0 / (2.0 * std::f64::consts::PI * variance).sqrt();
            let density = points
                .par_iter()
                .map(|&u| {
                    components
                        .iter()
                        .map(|c| {
                            let z = u - c.center;
                            c.weight * norm * (-0.5 * z * z / variance).exp()
                        })
                        .collect::<KahanSum>()
                        .value()
                })
                .collect();
            MixtureSupport::Grid { points, density }
        }
    };
    Ok(MixtureDensity {
        player,
        law,
        components,
        support,
    })
}
