//! Exact Shapley values for deterministic games.
//!
//! Viewing the Shapley weights `w(|S|)` as a probability mass over the
//! coalitions that exclude player `i` turns the marginal contribution
//! `Δ_i v(S)` into a discrete random variable. Its mean is the Shapley value
//! `Φ_i`, its variance the intrinsic variance `σ_i²`, and its full law is
//! returned by [`marginal_distribution`].

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::coalition::{check_exact, enumerate_excluding, weight_table, Coalition};
use crate::error::{Result, ShapleyError};
use crate::game::DeterministicGame;
use crate::sum::KahanSum;
use crate::text;

/// Values closer than this are merged into one atom by default.
pub const DEFAULT_MERGE_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapleyResult {
    /// `Φ_i` per player.
    pub phi: Vec<f64>,
    /// Intrinsic variance `σ_i²` per player.
    pub sigma2: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Atom {
    pub value: f64,
    pub mass: f64,
}

/// Law of `Δ_i v(S)` for `S` drawn with the Shapley weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarginalDistribution {
    player: usize,
    atoms: Vec<Atom>,
}

impl MarginalDistribution {
    pub fn player(&self) -> usize {
        self.player
    }

    /// Atoms in ascending order of value.
    pub fn atoms(&self) -> &[Atom] {
        &self.atoms
    }

    pub fn total_mass(&self) -> f64 {
        self.atoms.iter().map(|a| a.mass).collect::<KahanSum>().value()
    }

    pub fn raw_moment(&self, k: u32) -> f64 {
        atoms_moment(&self.atoms, k)
    }

    pub fn mean(&self) -> f64 {
        self.raw_moment(1)
    }

    /// CSV rows `player,value,mass` with a one-based player column.
    pub fn write_csv<W: Write + ?Sized>(&self, out: &mut W, header: bool) -> std::io::Result<()> {
        write_atoms_csv(out, self.player, &self.atoms, header)
    }
}

pub(crate) fn atoms_moment(atoms: &[Atom], k: u32) -> f64 {
    atoms
        .iter()
        .map(|a| a.mass * a.value.powi(k as i32))
        .collect::<KahanSum>()
        .value()
}

pub(crate) fn write_atoms_csv<W: Write + ?Sized>(
    out: &mut W,
    player: usize,
    atoms: &[Atom],
    header: bool,
) -> std::io::Result<()> {
    if header {
        writeln!(out, "player,value,mass")?;
    }
    for a in atoms {
        writeln!(out, "{},{},{}", player + 1, text::real(a.value), text::real(a.mass))?;
    }
    Ok(())
}

/// Sorts `(value, mass)` pairs and merges neighbours whose values differ by at
/// most `tolerance`. A merged atom sits at the mass-weighted mean of its parts.
pub(crate) fn merge_atoms(mut raw: Vec<Atom>, tolerance: f64) -> Vec<Atom> {
    raw.sort_by(|a, b| a.value.total_cmp(&b.value));
    let mut merged: Vec<Atom> = Vec::new();
    let mut last_value = f64::NEG_INFINITY;
    let mut mass = KahanSum::new();
    let mut moment = KahanSum::new();
    for atom in raw {
        if !merged.is_empty() && atom.value - last_value <= tolerance {
            mass.add(atom.mass);
            moment.add(atom.mass * atom.value);
            let m = mass.value();
            let tail = merged.last_mut().expect("non-empty");
            tail.mass = m;
            tail.value = moment.value() / m;
        } else {
            mass = KahanSum::new();
            moment = KahanSum::new();
            mass.add(atom.mass);
            moment.add(atom.mass * atom.value);
            merged.push(atom);
        }
        last_value = atom.value;
    }
    merged
}

fn check_player(n: usize, player: usize) -> Result<()> {
    if player >= n {
        return Err(ShapleyError::domain(format!(
            "player {player} out of range for {n} players"
        )));
    }
    Ok(())
}

/// `Δ_i v(S) = v(S ∪ {i}) − v(S)`.
pub fn marginal_contribution(
    game: &DeterministicGame,
    player: usize,
    coalition: Coalition,
) -> Result<f64> {
    check_player(game.player_count(), player)?;
    if coalition.contains(player) {
        return Err(ShapleyError::domain(format!(
            "player {} is a member of coalition {coalition}",
            player + 1
        )));
    }
    Ok(game.evaluate(coalition.with(player))? - game.evaluate(coalition)?)
}

/// `E[Δ_i v(S)^k]` for `k = 1..=max_order` over a full value table.
pub(crate) fn table_moments(
    table: &[f64],
    n: usize,
    weights: &[f64],
    player: usize,
    max_order: u32,
) -> Vec<f64> {
    let mut sums = vec![KahanSum::new(); max_order as usize];
    let bit = 1u64 << player;
    for s in enumerate_excluding(n, player).expect("validated by caller") {
        let bits = s.bits();
        let delta = table[(bits | bit) as usize] - table[bits as usize];
        let w = weights[s.len()];
        let mut power = w;
        for acc in sums.iter_mut() {
            power *= delta;
            acc.add(power);
        }
    }
    sums.iter().map(KahanSum::value).collect()
}

/// `Φ_i = Σ_{S ∌ i} w(S) Δ_i v(S)`.
pub fn shapley_value(game: &DeterministicGame, player: usize) -> Result<f64> {
    moment(game, player, 1)
}

/// `Φ_i` and `σ_i²` for every player from a single tabulation of `v`.
pub fn shapley_all(game: &DeterministicGame) -> Result<ShapleyResult> {
    let n = game.player_count();
    check_exact(n)?;
    let table = game.table()?;
    let weights = weight_table(n)?;
    let per_player: Vec<(f64, f64)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let m = table_moments(&table, n, &weights, i, 2);
            (m[0], variance_from_moments(m[0], m[1]))
        })
        .collect();
    Ok(ShapleyResult {
        phi: per_player.iter().map(|p| p.0).collect(),
        sigma2: per_player.iter().map(|p| p.1).collect(),
    })
}

/// `E[V²] − E[V]²`, with round-off negatives clamped to zero.
pub(crate) fn variance_from_moments(first: f64, second: f64) -> f64 {
    (second - first * first).max(0.0)
}

pub fn marginal_distribution(game: &DeterministicGame, player: usize) -> Result<MarginalDistribution> {
    marginal_distribution_with_tolerance(game, player, DEFAULT_MERGE_TOLERANCE)
}

pub fn marginal_distribution_with_tolerance(
    game: &DeterministicGame,
    player: usize,
    tolerance: f64,
) -> Result<MarginalDistribution> {
    let n = game.player_count();
    check_exact(n)?;
    check_player(n, player)?;
    let table = game.table()?;
    let weights = weight_table(n)?;
    Ok(MarginalDistribution {
        player,
        atoms: merge_atoms(raw_atoms(&table, n, &weights, player), tolerance),
    })
}

pub(crate) fn raw_atoms(table: &[f64], n: usize, weights: &[f64], player: usize) -> Vec<Atom> {
    let bit = 1u64 << player;
    enumerate_excluding(n, player)
        .expect("validated by caller")
        .map(|s| {
            let bits = s.bits();
            Atom {
                value: table[(bits | bit) as usize] - table[bits as usize],
                mass: weights[s.len()],
            }
        })
        .collect()
}

/// `E[V_i^k] = Σ_S w(S) [Δ_i v(S)]^k`.
pub fn moment(game: &DeterministicGame, player: usize, k: u32) -> Result<f64> {
    let n = game.player_count();
    check_exact(n)?;
    check_player(n, player)?;
    if k == 0 {
        return Err(ShapleyError::domain("moment order must be at least 1"));
    }
    let table = game.table()?;
    let weights = weight_table(n)?;
    Ok(table_moments(&table, n, &weights, player, k)[k as usize - 1])
}

/// `σ_i² = E[V_i²] − Φ_i²`.
pub fn intrinsic_variance(game: &DeterministicGame, player: usize) -> Result<f64> {
    let n = game.player_count();
    check_exact(n)?;
    check_player(n, player)?;
    let table = game.table()?;
    let weights = weight_table(n)?;
    let m = table_moments(&table, n, &weights, player, 2);
    Ok(variance_from_moments(m[0], m[1]))
}
