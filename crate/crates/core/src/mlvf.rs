//! R² feature-attribution game for a linear regression model.
//!
//! A model `f(x) = θᵀx + b` is fitted once by least squares. The value of a
//! coalition of features is the R² score of that fixed model on the dataset
//! with every feature outside the coalition replaced by a baseline value
//! (zero by default).

use std::io::{Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Open01, StandardNormal};
use rayon::prelude::*;

use crate::coalition::{Coalition, MAX_EXACT_PLAYERS};
use crate::error::{Result, ShapleyError};
use crate::game::{DeterministicGame, NoiseModel};
use crate::rng::{substream, Domain};
use crate::sum::KahanSum;
use crate::text;

/// `K × d` features (row-major) and `K` targets.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    rows: usize,
    cols: usize,
    features: Vec<f64>,
    targets: Vec<f64>,
}

impl Dataset {
    pub fn new(rows: usize, cols: usize, features: Vec<f64>, targets: Vec<f64>) -> Result<Self> {
        if rows < 2 || cols == 0 {
            return Err(ShapleyError::domain(format!(
                "dataset needs at least 2 rows and 1 feature, got {rows}×{cols}"
            )));
        }
        if features.len() != rows * cols || targets.len() != rows {
            return Err(ShapleyError::domain("dataset shape does not match its buffers"));
        }
        if features.iter().chain(&targets).any(|x| !x.is_finite()) {
            return Err(ShapleyError::domain("dataset contains non-finite entries"));
        }
        Ok(Self {
            rows,
            cols,
            features,
            targets,
        })
    }

    pub fn num_points(&self) -> usize {
        self.rows
    }

    pub fn num_features(&self) -> usize {
        self.cols
    }

    pub fn row(&self, k: usize) -> &[f64] {
        &self.features[k * self.cols..(k + 1) * self.cols]
    }

    pub fn targets(&self) -> &[f64] {
        &self.targets
    }

    pub fn feature(&self, k: usize, j: usize) -> f64 {
        self.features[k * self.cols + j]
    }

    pub fn target_mean(&self) -> f64 {
        self.targets.iter().copied().collect::<KahanSum>().value() / self.rows as f64
    }

    /// `Σ (y − ȳ)²`.
    pub fn total_sum_of_squares(&self) -> f64 {
        let mean = self.target_mean();
        self.targets
            .iter()
            .map(|y| (y - mean).powi(2))
            .collect::<KahanSum>()
            .value()
    }

    /// Headerless CSV: feature columns then the target.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
        for k in 0..self.rows {
            let record = self
                .row(k)
                .iter()
                .chain(std::iter::once(&self.targets[k]))
                .map(|x| text::real(*x));
            w.write_record(record).map_err(csv_err)?;
        }
        w.flush().map_err(|e| ShapleyError::domain(format!("dataset write: {e}")))?;
        Ok(())
    }

    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new().has_headers(false).from_reader(input);
        let mut features = Vec::new();
        let mut targets = Vec::new();
        let mut cols = None;
        for record in reader.records() {
            let record = record.map_err(csv_err)?;
            let values = record
                .iter()
                .map(|f| {
                    f.trim()
                        .parse::<f64>()
                        .map_err(|_| ShapleyError::domain(format!("dataset: bad number `{f}`")))
                })
                .collect::<Result<Vec<f64>>>()?;
            if values.len() < 2 {
                return Err(ShapleyError::domain("dataset rows need a feature and a target"));
            }
            let d = values.len() - 1;
            if *cols.get_or_insert(d) != d {
                return Err(ShapleyError::domain("dataset rows have differing lengths"));
            }
            features.extend_from_slice(&values[..d]);
            targets.push(values[d]);
        }
        Self::new(targets.len(), cols.unwrap_or(0), features, targets)
    }

    pub fn read_csv_path(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path)
            .map_err(|e| ShapleyError::domain(format!("{}: {e}", path.display())))?;
        Self::read_csv(std::io::BufReader::new(file))
    }
}

fn csv_err(e: csv::Error) -> ShapleyError {
    ShapleyError::domain(format!("dataset CSV: {e}"))
}

/// Synthetic regression data and the coefficients that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedRegression {
    pub dataset: Dataset,
    pub coefficients: Vec<f64>,
}

/// Standard-normal features, coefficients `100·U(0,1)` (never zero) and
/// targets `Xw + noise_level·N(0,1)`.
pub fn generate_regression(
    num_points: usize,
    num_features: usize,
    noise_level: f64,
    seed: u64,
) -> Result<Dataset> {
    Ok(generate_regression_with_coefficients(num_points, num_features, noise_level, seed)?.dataset)
}

pub fn generate_regression_with_coefficients(
    num_points: usize,
    num_features: usize,
    noise_level: f64,
    seed: u64,
) -> Result<GeneratedRegression> {
    if num_points < 2 || num_features == 0 {
        return Err(ShapleyError::domain(format!(
            "need at least 2 points and 1 feature, got {num_points}×{num_features}"
        )));
    }
    if !(noise_level.is_finite() && noise_level >= 0.0) {
        return Err(ShapleyError::domain(format!("noise level {noise_level} must be ≥ 0")));
    }
    let mut rng = substream(seed, Domain::Dataset, 0);
    let features: Vec<f64> = (0..num_points * num_features)
        .map(|_| rng.sample::<f64, _>(StandardNormal))
        .collect();
    let coefficients: Vec<f64> = (0..num_features)
        .map(|_| 100.0 * rng.sample::<f64, _>(Open01))
        .collect();
    let targets = (0..num_points)
        .map(|k| {
            let row = &features[k * num_features..(k + 1) * num_features];
            let signal: f64 = row.iter().zip(&coefficients).map(|(x, w)| x * w).sum();
            signal + noise_level * rng.sample::<f64, _>(StandardNormal)
        })
        .collect();
    Ok(GeneratedRegression {
        dataset: Dataset::new(num_points, num_features, features, targets)?,
        coefficients,
    })
}

/// `f(x) = θᵀx + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    pub weights: Vec<f64>,
    pub intercept: f64,
}

impl LinearModel {
    pub fn predict(&self, x: &[f64]) -> f64 {
        self.intercept + x.iter().zip(&self.weights).map(|(a, b)| a * b).sum::<f64>()
    }
}

/// Least squares on `[1 | X]` via Householder QR.
pub fn fit_linear_regression(dataset: &Dataset) -> Result<LinearModel> {
    let (k, d) = (dataset.rows, dataset.cols);
    if d + 1 > k {
        return Err(ShapleyError::SingularFit);
    }
    let design = DMatrix::from_fn(k, d + 1, |r, c| {
        if c == 0 {
            1.0
        } else {
            dataset.feature(r, c - 1)
        }
    });
    let qr = design.qr();
    let r = qr.r();
    let diag_max = (0..=d).map(|j| r[(j, j)].abs()).fold(0.0, f64::max);
    if diag_max == 0.0 || (0..=d).any(|j| r[(j, j)].abs() <= 1e-12 * diag_max) {
        return Err(ShapleyError::SingularFit);
    }
    let mut rhs = DVector::from_column_slice(&dataset.targets);
    qr.q_tr_mul(&mut rhs);
    let top = rhs.rows(0, d + 1).into_owned();
    let beta = r
        .solve_upper_triangular(&top)
        .ok_or(ShapleyError::SingularFit)?;
    if beta.iter().any(|b| !b.is_finite()) {
        return Err(ShapleyError::SingularFit);
    }
    Ok(LinearModel {
        intercept: beta[0],
        weights: beta.iter().skip(1).copied().collect(),
    })
}

/// `1 − Σ(y − f(x))² / Σ(y − ȳ)²`.
pub fn r2_score(model: &LinearModel, dataset: &Dataset) -> Result<f64> {
    check_dims(model, dataset)?;
    let tss = nonzero_tss(dataset)?;
    let sse = (0..dataset.rows)
        .map(|k| (dataset.targets[k] - model.predict(dataset.row(k))).powi(2))
        .collect::<KahanSum>()
        .value();
    Ok(1.0 - sse / tss)
}

fn nonzero_tss(dataset: &Dataset) -> Result<f64> {
    let tss = dataset.total_sum_of_squares();
    if tss <= 0.0 {
        return Err(ShapleyError::domain("R² is undefined for a constant target"));
    }
    Ok(tss)
}

fn check_dims(model: &LinearModel, dataset: &Dataset) -> Result<()> {
    if model.weights.len() != dataset.cols {
        return Err(ShapleyError::domain(format!(
            "model has {} weights but the dataset has {} features",
            model.weights.len(),
            dataset.cols
        )));
    }
    Ok(())
}

/// The masked-R² value function. Features outside a coalition take their
/// baseline value; the model is never refitted.
#[derive(Debug, Clone)]
pub struct ImputedR2Game {
    dataset: Dataset,
    model: LinearModel,
    baseline: Vec<f64>,
    tss: f64,
}

/// Coalitions per independently evaluated Gray-code block.
const GRAY_BLOCK: u64 = 256;

fn gray(k: u64) -> u64 {
    k ^ (k >> 1)
}

impl ImputedR2Game {
    pub fn new(model: LinearModel, dataset: Dataset, baseline: Vec<f64>) -> Result<Self> {
        check_dims(&model, &dataset)?;
        if baseline.len() != dataset.cols || baseline.iter().any(|b| !b.is_finite()) {
            return Err(ShapleyError::domain("baseline must be finite with one value per feature"));
        }
        if dataset.cols > crate::coalition::MAX_PLAYERS {
            return Err(ShapleyError::Capacity {
                players: dataset.cols,
                max: crate::coalition::MAX_PLAYERS,
            });
        }
        let tss = nonzero_tss(&dataset)?;
        Ok(Self {
            dataset,
            model,
            baseline,
            tss,
        })
    }

    pub fn player_count(&self) -> usize {
        self.dataset.cols
    }

    /// `v(S)` computed directly in `O(K·d)`.
    pub fn value(&self, coalition: Coalition) -> f64 {
        let ds = &self.dataset;
        let sse = (0..ds.rows)
            .map(|k| {
                let row = ds.row(k);
                let pred = self.model.intercept
                    + (0..ds.cols)
                        .map(|j| {
                            let x = if coalition.contains(j) { row[j] } else { self.baseline[j] };
                            self.model.weights[j] * x
                        })
                        .sum::<f64>();
                (ds.targets[k] - pred).powi(2)
            })
            .collect::<KahanSum>()
            .value();
        1.0 - sse / self.tss
    }

    /// Every `v(S)` indexed by bitmask. Coalitions are visited in Gray-code
    /// order so each step adds or removes one feature's column from the
    /// running predictions; every block of [`GRAY_BLOCK`] steps restarts from
    /// a fresh evaluation.
    pub fn tabulate(&self) -> Result<Vec<f64>> {
        let d = self.dataset.cols;
        if d > MAX_EXACT_PLAYERS {
            return Err(ShapleyError::Capacity {
                players: d,
                max: MAX_EXACT_PLAYERS,
            });
        }
        let ds = &self.dataset;
        let k = ds.rows;
        // delta[j][r] = θ_j (x_rj − baseline_j): change in prediction when j joins.
        let delta: Vec<Vec<f64>> = (0..d)
            .map(|j| {
                (0..k)
                    .map(|r| self.model.weights[j] * (ds.feature(r, j) - self.baseline[j]))
                    .collect()
            })
            .collect();
        let empty_pred = self.model.intercept
            + self
                .model
                .weights
                .iter()
                .zip(&self.baseline)
                .map(|(w, b)| w * b)
                .sum::<f64>();
        let total = 1u64 << d;
        let blocks: Vec<Vec<(u64, f64)>> = (0..total.div_ceil(GRAY_BLOCK))
            .into_par_iter()
            .map(|block| {
                let start = block * GRAY_BLOCK;
                let end = (start + GRAY_BLOCK).min(total);
                let mut mask = gray(start);
                let mut pred = vec![empty_pred; k];
                for (j, column) in delta.iter().enumerate() {
                    if mask >> j & 1 == 1 {
                        for (p, dj) in pred.iter_mut().zip(column) {
                            *p += dj;
                        }
                    }
                }
                let mut out = Vec::with_capacity((end - start) as usize);
                for step in start..end {
                    if step > start {
                        let next = gray(step);
                        let j = (next ^ mask).trailing_zeros() as usize;
                        let sign = if next >> j & 1 == 1 { 1.0 } else { -1.0 };
                        for (p, dj) in pred.iter_mut().zip(&delta[j]) {
                            *p += sign * dj;
                        }
                        mask = next;
                    }
                    let sse = pred
                        .iter()
                        .zip(&ds.targets)
                        .map(|(p, y)| (y - p) * (y - p))
                        .collect::<KahanSum>()
                        .value();
                    out.push((mask, 1.0 - sse / self.tss));
                }
                out
            })
            .collect();
        let mut table = vec![0.0; total as usize];
        for (mask, v) in blocks.into_iter().flatten() {
            table[mask as usize] = v;
        }
        Ok(table)
    }

    /// Table game when `d` fits the exact engine, callback game otherwise.
    pub fn into_game(self) -> Result<DeterministicGame> {
        let d = self.dataset.cols;
        if d <= MAX_EXACT_PLAYERS {
            DeterministicGame::from_table(d, self.tabulate()?)
        } else {
            DeterministicGame::from_fn(d, move |s| self.value(s))
        }
    }
}

/// Zero-imputation R² game over the dataset's features.
pub fn zero_imputed_vf(model: &LinearModel, dataset: &Dataset) -> Result<DeterministicGame> {
    let baseline = vec![0.0; dataset.cols];
    ImputedR2Game::new(model.clone(), dataset.clone(), baseline)?.into_game()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReferenceNoise {
    Bernoulli,
    Gaussian,
}

/// Offset `0.05·Bernoulli(0.33)` or `N(0, 0.01²)`, both coalition-independent.
pub fn reference_noise(kind: ReferenceNoise) -> NoiseModel {
    match kind {
        ReferenceNoise::Bernoulli => NoiseModel::BernoulliOffset { p: 0.33, c: 0.05 },
        ReferenceNoise::Gaussian => NoiseModel::Gaussian { sigma: 0.01 },
    }
}
