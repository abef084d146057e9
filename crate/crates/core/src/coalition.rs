//! Coalitions as bitmasks, subset enumeration and the Shapley weights.
//!
//! Bit `k` of a coalition's mask is set when zero-based player `k` belongs to
//! it. Exact enumeration is capped at [`MAX_EXACT_PLAYERS`]; sampling code may
//! use coalitions of up to [`MAX_PLAYERS`] players.

use std::fmt;

use crate::error::{Result, ShapleyError};

/// Largest player count accepted by the exact (full enumeration) engine.
pub const MAX_EXACT_PLAYERS: usize = 24;

/// Largest player count representable by a [`Coalition`].
pub const MAX_PLAYERS: usize = 64;

#[inline]
pub(crate) fn full_mask(n: usize) -> u64 {
    if n >= 64 {
        u64::MAX
    } else {
        (1u64 << n) - 1
    }
}

pub(crate) fn check_exact(n: usize) -> Result<()> {
    if n == 0 || n > MAX_EXACT_PLAYERS {
        return Err(ShapleyError::Capacity {
            players: n,
            max: MAX_EXACT_PLAYERS,
        });
    }
    Ok(())
}

/// A subset of the players `{0, .., n-1}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Coalition {
    bits: u64,
    n: u8,
}

impl Coalition {
    pub fn new(bits: u64, n: usize) -> Result<Self> {
        if n == 0 || n > MAX_PLAYERS {
            return Err(ShapleyError::Capacity {
                players: n,
                max: MAX_PLAYERS,
            });
        }
        if bits & !full_mask(n) != 0 {
            return Err(ShapleyError::domain(format!(
                "bitmask {bits} references players beyond n = {n}"
            )));
        }
        Ok(Self { bits, n: n as u8 })
    }

    /// Caller guarantees `bits` fits in `n` players.
    #[inline]
    pub(crate) fn from_bits_unchecked(bits: u64, n: usize) -> Self {
        debug_assert!(bits & !full_mask(n) == 0);
        Self { bits, n: n as u8 }
    }

    pub fn empty(n: usize) -> Result<Self> {
        Self::new(0, n)
    }

    pub fn grand(n: usize) -> Result<Self> {
        Self::new(full_mask(n), n)
    }

    /// Builds a coalition from zero-based player indices.
    pub fn from_players(players: &[usize], n: usize) -> Result<Self> {
        let mut bits = 0u64;
        for &p in players {
            if p >= n {
                return Err(ShapleyError::domain(format!(
                    "player index {p} out of range for n = {n}"
                )));
            }
            bits |= 1 << p;
        }
        Self::new(bits, n)
    }

    #[inline]
    pub fn bits(&self) -> u64 {
        self.bits
    }

    #[inline]
    pub fn player_count(&self) -> usize {
        self.n as usize
    }

    /// Cardinality `|S|`.
    #[inline]
    pub fn len(&self) -> usize {
        self.bits.count_ones() as usize
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.bits == 0
    }

    #[inline]
    pub fn contains(&self, player: usize) -> bool {
        player < self.n as usize && self.bits >> player & 1 == 1
    }

    /// `S ∪ {player}`.
    #[inline]
    pub fn with(&self, player: usize) -> Self {
        debug_assert!(player < self.n as usize);
        Self {
            bits: self.bits | 1 << player,
            n: self.n,
        }
    }

    /// `S \ {player}`.
    #[inline]
    pub fn without(&self, player: usize) -> Self {
        Self {
            bits: self.bits & !(1u64 << player),
            n: self.n,
        }
    }

    /// Zero-based members in ascending order.
    pub fn players(&self) -> impl Iterator<Item = usize> + '_ {
        let mut rest = self.bits;
        std::iter::from_fn(move || {
            if rest == 0 {
                None
            } else {
                let p = rest.trailing_zeros() as usize;
                rest &= rest - 1;
                Some(p)
            }
        })
    }

    /// Parses either a decimal bitmask (`"5"`) or a one-based player list
    /// (`"[1,3]"`).
    pub fn parse(text: &str, n: usize) -> Result<Self> {
        let text = text.trim();
        if let Some(inner) = text.strip_prefix('[').and_then(|t| t.strip_suffix(']')) {
            let mut players = Vec::new();
            for item in inner.split(',').map(str::trim).filter(|s| !s.is_empty()) {
                let one_based: usize = item.parse().map_err(|_| {
                    ShapleyError::malformed(format!("bad player `{item}` in coalition `{text}`"))
                })?;
                if one_based == 0 {
                    return Err(ShapleyError::malformed(format!(
                        "players are numbered from 1 in `{text}`"
                    )));
                }
                players.push(one_based - 1);
            }
            Self::from_players(&players, n)
        } else {
            let bits: u64 = text
                .parse()
                .map_err(|_| ShapleyError::malformed(format!("bad coalition key `{text}`")))?;
            Self::new(bits, n)
        }
    }

    /// Decimal bitmask string used as a JSON key.
    pub fn to_key(&self) -> String {
        self.bits.to_string()
    }
}

/// Renders as a sorted one-based player list, e.g. `[1,3]`.
impl fmt::Display for Coalition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("[")?;
        for (k, p) in self.players().enumerate() {
            if k > 0 {
                f.write_str(",")?;
            }
            write!(f, "{}", p + 1)?;
        }
        f.write_str("]")
    }
}

/// All `2^(n-1)` coalitions of `{0..n} \ {player}` in ascending bitmask order.
#[derive(Debug, Clone)]
pub struct ExcludingIter {
    n: usize,
    player: usize,
    next: u64,
    end: u64,
}

impl ExcludingIter {
    #[inline]
    fn spread(&self, k: u64) -> u64 {
        let low = k & ((1u64 << self.player) - 1);
        let high = (k >> self.player) << (self.player + 1);
        low | high
    }
}

impl Iterator for ExcludingIter {
    type Item = Coalition;

    fn next(&mut self) -> Option<Coalition> {
        if self.next >= self.end {
            return None;
        }
        let bits = self.spread(self.next);
        self.next += 1;
        Some(Coalition::from_bits_unchecked(bits, self.n))
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let left = (self.end - self.next) as usize;
        (left, Some(left))
    }
}

impl ExactSizeIterator for ExcludingIter {}

/// Enumerates every coalition that excludes `player`.
pub fn enumerate_excluding(n: usize, player: usize) -> Result<ExcludingIter> {
    check_exact(n)?;
    if player >= n {
        return Err(ShapleyError::domain(format!(
            "player {player} out of range for n = {n}"
        )));
    }
    Ok(ExcludingIter {
        n,
        player,
        next: 0,
        end: 1u64 << (n - 1),
    })
}

/// A probability mass `w(S)` attached to a coalition.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct CoalitionWeight(f64);

impl CoalitionWeight {
    #[inline]
    pub fn value(self) -> f64 {
        self.0
    }
}

impl From<CoalitionWeight> for f64 {
    fn from(w: CoalitionWeight) -> f64 {
        w.0
    }
}

/// `s!(n-s-1)!/n!`, evaluated as `1 / (n * C(n-1, s))` with the binomial
/// coefficient formed exactly in integer arithmetic.
pub fn shapley_weight(n: usize, size: usize) -> Result<CoalitionWeight> {
    if n == 0 || n > MAX_PLAYERS {
        return Err(ShapleyError::Capacity {
            players: n,
            max: MAX_PLAYERS,
        });
    }
    if size >= n {
        return Err(ShapleyError::domain(format!(
            "coalition size {size} must be below n = {n}"
        )));
    }
    let denom = n as u128 * binomial(n as u64 - 1, size as u64);
    Ok(CoalitionWeight(1.0 / denom as f64))
}

fn binomial(m: u64, k: u64) -> u128 {
    let k = k.min(m - k);
    let mut c: u128 = 1;
    for j in 1..=k as u128 {
        c = c * (m as u128 - k as u128 + j) / j;
    }
    c
}

/// `w(0), .., w(n-1)` for an `n`-player game.
pub fn weight_table(n: usize) -> Result<Vec<f64>> {
    (0..n).map(|s| shapley_weight(n, s).map(f64::from)).collect()
}

/// Probability `P(S)` of drawing `coalition` when coalitions excluding
/// `player` are sampled with the Shapley weights.
pub fn coalition_probability(
    n: usize,
    player: usize,
    coalition: Coalition,
) -> Result<CoalitionWeight> {
    if coalition.player_count() != n {
        return Err(ShapleyError::domain(format!(
            "coalition is over {} players, expected {n}",
            coalition.player_count()
        )));
    }
    if coalition.contains(player) {
        return Err(ShapleyError::domain(format!(
            "player {} is a member of coalition {coalition}",
            player + 1
        )));
    }
    shapley_weight(n, coalition.len())
}
