#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use ushap::{DeterministicGame, NoiseModel, UncertainGame};
use ushap::game::TableNoise;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// `{∅:0, {1}:1, {2}:2, {1,2}:4}`.
pub fn game_a() -> DeterministicGame {
    DeterministicGame::from_table(2, vec![0.0, 1.0, 2.0, 4.0]).unwrap()
}

/// Table noise on two players with means `0, 0.1, 0, 0.3` and variance 0.01.
pub fn example_table_noise() -> NoiseModel {
    let means = vec![0.0, 0.1, 0.0, 0.3];
    let m2 = means.iter().map(|m| m * m + 0.01).collect();
    NoiseModel::Table(TableNoise::new(2, means, m2).unwrap())
}

pub fn random_table(n: usize, rng: &mut impl Rng) -> Vec<f64> {
    (0..1usize << n).map(|_| rng.random_range(-10.0..10.0)).collect()
}

pub fn random_game(n: usize, rng: &mut impl Rng) -> DeterministicGame {
    DeterministicGame::from_table(n, random_table(n, rng)).unwrap()
}

/// Coalition-dependent Gaussian noise with random means and variances.
pub fn random_table_noise(n: usize, rng: &mut impl Rng) -> NoiseModel {
    let means: Vec<f64> = (0..1usize << n).map(|_| rng.random_range(-1.0..1.0)).collect();
    let m2 = means
        .iter()
        .map(|m| m * m + rng.random_range(0.0..0.5))
        .collect();
    NoiseModel::Table(TableNoise::new(n, means, m2).unwrap())
}

pub fn random_uncertain(n: usize, rng: &mut impl Rng) -> UncertainGame {
    let game = random_game(n, rng);
    let noise = random_table_noise(n, rng);
    UncertainGame::new(game, noise).unwrap()
}

/// Average marginal contribution over all `n!` orders (Heap's algorithm).
pub fn permutation_oracle(table: &[f64], n: usize) -> Vec<f64> {
    let mut order: Vec<usize> = (0..n).collect();
    let mut totals = vec![0.0; n];
    let mut count = 0u64;
    let mut visit = |order: &[usize]| {
        let mut bits = 0usize;
        for &p in order {
            let next = bits | (1 << p);
            totals[p] += table[next] - table[bits];
            bits = next;
        }
        count += 1;
    };
    let mut c = vec![0usize; n];
    visit(&order);
    let mut i = 0;
    while i < n {
        if c[i] < i {
            if i % 2 == 0 {
                order.swap(0, i);
            } else {
                order.swap(c[i], i);
            }
            visit(&order);
            c[i] += 1;
            i = 0;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
    totals.iter().map(|t| t / count as f64).collect()
}

pub fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}

/// Running mean and standard error of the mean.
#[derive(Default)]
pub struct Tally {
    n: f64,
    mean: f64,
    m2: f64,
}

impl Tally {
    pub fn push(&mut self, x: f64) {
        self.n += 1.0;
        let d = x - self.mean;
        self.mean += d / self.n;
        self.m2 += d * (x - self.mean);
    }
    pub fn mean(&self) -> f64 {
        self.mean
    }
    pub fn variance(&self) -> f64 {
        self.m2 / (self.n - 1.0)
    }
    pub fn std_error(&self) -> f64 {
        (self.variance() / self.n).sqrt()
    }
}
