//! The `ushap` command line.
//!
//! Subcommands: `solve`, `uncertain`, `estimate`, `dist`, `experiment` and
//! `replay`. Exit codes are 0 on success, 2 for bad input, 3 when the player
//! count exceeds the exact engine and 4 for numeric failures.
//!
//! Results go to stdout unless `--output` names a file, in which case a
//! `<file>.manifest.json` with the resolved parameters is written next to it.
//! `replay <manifest>` re-runs the recorded command.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use crate::error::ShapleyError;
use crate::estimator::{estimate_all, Estimate, EstimatorConfig, EstimatorMode};
use crate::game::{DeterministicGame, NoiseModel, UncertainGame};
use crate::mlvf::{
    fit_linear_regression, generate_regression, reference_noise, r2_score, ImputedR2Game, ReferenceNoise,
};
use crate::shapley_exact::{marginal_distribution, shapley_all, ShapleyResult};
use crate::shapley_uncertain::{linspace, mixture_density, uncertain_shapley, UncertainShapleyResult};
use crate::text;

pub const DEFAULT_SEED: u64 = 97531;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Input(String),
    #[error("{0}")]
    Capacity(String),
    #[error("{0}")]
    Numeric(String),
    #[error("i/o: {0}")]
    Io(#[from] io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Input(_) | CliError::Io(_) => 2,
            CliError::Capacity(_) => 3,
            CliError::Numeric(_) => 4,
        }
    }
}

impl From<ShapleyError> for CliError {
    fn from(e: ShapleyError) -> Self {
        let msg = e.to_string();
        match e {
            ShapleyError::Capacity { .. } => CliError::Capacity(msg),
            ShapleyError::Domain(_)
            | ShapleyError::MalformedGame(_)
            | ShapleyError::InvalidNoise(_)
            | ShapleyError::UnsupportedAnalytics(_) => CliError::Input(msg),
            ShapleyError::Evaluation(_) | ShapleyError::SingularFit | ShapleyError::Numeric(_) => {
                CliError::Numeric(msg)
            }
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "ushap", version, about = "Exact and uncertain Shapley values")]
pub struct Cli {
    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Json,
    Csv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VfNoise {
    None,
    Bernoulli,
    Gaussian,
}

#[derive(Debug, clap::Args)]
pub struct OutputArgs {
    #[arg(long, value_enum, default_value = "json")]
    pub format: Format,
    /// Write here instead of stdout (plus a `.manifest.json` sidecar).
    #[arg(long, short)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Shapley values and intrinsic variances of a table game.
    Solve {
        game: PathBuf,
        #[command(flatten)]
        out: OutputArgs,
    },
    /// Uncertain Shapley values and the variance decomposition.
    Uncertain {
        game: PathBuf,
        noise: PathBuf,
        #[command(flatten)]
        out: OutputArgs,
    },
    /// Sample-mean estimates with confidence intervals.
    Estimate {
        game: PathBuf,
        noise: PathBuf,
        #[arg(long, default_value_t = 100)]
        repeats: usize,
        #[arg(long, env = "USHAP_SEED", default_value_t = DEFAULT_SEED)]
        seed: u64,
        #[arg(long, default_value_t = 0.95)]
        confidence: f64,
        /// Use permutation sampling with this many permutations.
        #[arg(long)]
        permutations: Option<usize>,
        #[command(flatten)]
        out: OutputArgs,
    },
    /// Marginal-contribution distribution (or noisy mixture) as CSV.
    Dist {
        game: PathBuf,
        #[arg(long)]
        noise: Option<PathBuf>,
        /// One-based player index.
        #[arg(long)]
        player: usize,
        #[arg(long, requires_all = ["grid_max", "grid_points"])]
        grid_min: Option<f64>,
        #[arg(long)]
        grid_max: Option<f64>,
        #[arg(long)]
        grid_points: Option<usize>,
        #[arg(long, short)]
        output: Option<PathBuf>,
    },
    /// Synthetic regression, zero-imputation R² game and the full analysis.
    Experiment {
        #[arg(long, default_value_t = 10_000)]
        samples: usize,
        #[arg(long, default_value_t = 12)]
        features: usize,
        #[arg(long, default_value_t = 0.1)]
        noise_level: f64,
        #[arg(long, env = "USHAP_SEED", default_value_t = DEFAULT_SEED)]
        seed: u64,
        #[arg(long, value_enum, default_value = "none")]
        vf_noise: VfNoise,
        /// Also run the sample-mean estimator with this many repeats.
        #[arg(long)]
        repeats: Option<usize>,
        /// Read features/targets from a headerless CSV instead of generating them.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Also write the dataset as `dataset.csv`.
        #[arg(long)]
        save_data: bool,
        #[arg(long, default_value = "experiment-out")]
        out_dir: PathBuf,
    },
    /// Re-run the command recorded in a manifest.
    Replay { manifest: PathBuf },
}

/// Parameters and provenance recorded next to every output file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub argv: Vec<String>,
    pub parameters: serde_json::Value,
    pub seed: Option<u64>,
    pub version: String,
    /// Seconds since the Unix epoch.
    pub timestamp: u64,
}

impl RunManifest {
    fn new(command: &str, argv: &[String], parameters: serde_json::Value, seed: Option<u64>) -> Self {
        let timestamp = std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        Self {
            command: command.to_string(),
            argv: argv.to_vec(),
            parameters,
            seed,
            version: env!("CARGO_PKG_VERSION").to_string(),
            timestamp,
        }
    }

    fn write(&self, path: &Path) -> CliResult<()> {
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        fs::write(path, text + "\n")?;
        Ok(())
    }
}

fn read_text(path: &Path) -> CliResult<String> {
    fs::read_to_string(path).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

fn load_game(path: &Path) -> CliResult<DeterministicGame> {
    Ok(DeterministicGame::from_json(&read_text(path)?)?)
}

fn load_noise(path: &Path, n: usize) -> CliResult<NoiseModel> {
    Ok(NoiseModel::from_json(&read_text(path)?, n)?)
}

/// Parses `args` (including the program name) and runs the command, writing
/// stdout-bound output to `stdout`.
pub fn run_from_args<I, T>(args: I, stdout: &mut dyn Write) -> CliResult<()>
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let argv: Vec<String> = args
        .into_iter()
        .map(|a| a.into().to_string_lossy().into_owned())
        .collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(cli) => cli,
        // --help and --version
        Err(e) if !e.use_stderr() => {
            write!(stdout, "{e}")?;
            return Ok(());
        }
        Err(e) => return Err(CliError::Input(e.to_string())),
    };
    run(cli, &argv, stdout)
}

pub fn run(cli: Cli, argv: &[String], stdout: &mut dyn Write) -> CliResult<()> {
    match cli.threads {
        Some(t) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(t)
                .build()
                .map_err(|e| CliError::Input(format!("thread pool: {e}")))?;
            // The caller's writer need not be Send, so buffer inside the pool.
            let mut buf = Vec::new();
            pool.install(|| dispatch(cli.command, argv, &mut buf))?;
            stdout.write_all(&buf)?;
            Ok(())
        }
        None => dispatch(cli.command, argv, stdout),
    }
}

fn dispatch(command: Command, argv: &[String], stdout: &mut dyn Write) -> CliResult<()> {
    match command {
        Command::Solve { game, out } => {
            let g = load_game(&game)?;
            let result = shapley_all(&g)?;
            let params = json!({ "game": game, "format": out.format });
            emit(&out, stdout, "solve", argv, params, None, |w, fmt| {
                write_solve(w, fmt, &result)
            })
        }
        Command::Uncertain { game, noise, out } => {
            let g = load_game(&game)?;
            let noise_model = load_noise(&noise, g.player_count())?;
            let result = uncertain_shapley(&UncertainGame::new(g, noise_model)?)?;
            let params = json!({ "game": game, "noise": noise, "format": out.format });
            emit(&out, stdout, "uncertain", argv, params, None, |w, fmt| {
                write_uncertain(w, fmt, &result)
            })
        }
        Command::Estimate {
            game,
            noise,
            repeats,
            seed,
            confidence,
            permutations,
            out,
        } => {
            let g = load_game(&game)?;
            let noise_model = load_noise(&noise, g.player_count())?;
            let ug = UncertainGame::new(g, noise_model)?;
            let config = EstimatorConfig {
                repeats,
                seed,
                mode: match permutations {
                    Some(p) => EstimatorMode::PermutationSampling { permutations: p },
                    None => EstimatorMode::ExactEnumeration,
                },
                confidence_level: confidence,
            };
            let estimates = estimate_all(&ug, &config)?;
            let params = json!({
                "game": game, "noise": noise, "config": config, "format": out.format
            });
            emit(&out, stdout, "estimate", argv, params, Some(seed), |w, fmt| {
                write_estimates(w, fmt, &estimates)
            })
        }
        Command::Dist {
            game,
            noise,
            player,
            grid_min,
            grid_max,
            grid_points,
            output,
        } => {
            let g = load_game(&game)?;
            let n = g.player_count();
            if player == 0 || player > n {
                return Err(CliError::Input(format!(
                    "--player must lie in 1..={n}, got {player}"
                )));
            }
            let noise_model = match &noise {
                Some(p) => load_noise(p, n)?,
                None => NoiseModel::None,
            };
            let grid = match (grid_min, grid_max, grid_points) {
                (Some(lo), Some(hi), Some(points)) => {
                    if hi.partial_cmp(&lo) != Some(std::cmp::Ordering::Greater) || points < 2 {
                        return Err(CliError::Input(
                            "grid needs --grid-max > --grid-min and at least 2 points".into(),
                        ));
                    }
                    Some(linspace(lo, hi, points))
                }
                _ => None,
            };
            let mut buf = Vec::new();
            let ug = UncertainGame::new(g, noise_model)?;
            mixture_density(&ug, player - 1, grid.as_deref())?.write_csv(&mut buf, true)?;
            let params = json!({
                "game": game, "noise": noise, "player": player,
                "grid_min": grid_min, "grid_max": grid_max, "grid_points": grid_points
            });
            let out = OutputArgs {
                format: Format::Csv,
                output,
            };
            emit(&out, stdout, "dist", argv, params, None, |w, _| {
                w.write_all(&buf)
            })
        }
        Command::Experiment {
            samples,
            features,
            noise_level,
            seed,
            vf_noise,
            repeats,
            data,
            save_data,
            out_dir,
        } => {
            let params = ExperimentParams {
                samples,
                features,
                noise_level,
                seed,
                vf_noise,
                repeats,
                data,
                save_data,
            };
            let report = run_experiment(&params, &out_dir, argv)?;
            writeln!(stdout, "{}", serde_json::to_string_pretty(&report).expect("serializes"))?;
            Ok(())
        }
        Command::Replay { manifest } => {
            let m: RunManifest = serde_json::from_str(&read_text(&manifest)?)
                .map_err(|e| CliError::Input(format!("manifest: {e}")))?;
            if m.argv.get(1).map(String::as_str) == Some("replay") {
                return Err(CliError::Input("manifest records a replay".into()));
            }
            let cli = Cli::try_parse_from(&m.argv).map_err(|e| CliError::Input(e.to_string()))?;
            run(cli, &m.argv, stdout)
        }
    }
}

fn emit(
    out: &OutputArgs,
    stdout: &mut dyn Write,
    command: &str,
    argv: &[String],
    params: serde_json::Value,
    seed: Option<u64>,
    body: impl FnOnce(&mut dyn Write, Format) -> io::Result<()>,
) -> CliResult<()> {
    match &out.output {
        Some(path) => {
            let mut file = io::BufWriter::new(fs::File::create(path)?);
            body(&mut file, out.format)?;
            file.flush()?;
            RunManifest::new(command, argv, params, seed).write(&sidecar(path))?;
        }
        None => body(stdout, out.format)?,
    }
    Ok(())
}

fn sidecar(path: &Path) -> PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(".manifest.json");
    path.with_file_name(name)
}

#[derive(Serialize)]
struct SolveRow {
    player: usize,
    phi: f64,
    sigma2: f64,
}

fn write_solve(w: &mut dyn Write, fmt: Format, r: &ShapleyResult) -> io::Result<()> {
    match fmt {
        Format::Json => {
            let rows: Vec<SolveRow> = r
                .phi
                .iter()
                .zip(&r.sigma2)
                .enumerate()
                .map(|(i, (&phi, &sigma2))| SolveRow {
                    player: i + 1,
                    phi,
                    sigma2,
                })
                .collect();
            let doc = json!({ "n": r.phi.len(), "players": rows });
            writeln!(w, "{}", serde_json::to_string_pretty(&doc).expect("serializes"))
        }
        Format::Csv => {
            writeln!(w, "player,phi,sigma2")?;
            for (i, (phi, s2)) in r.phi.iter().zip(&r.sigma2).enumerate() {
                writeln!(w, "{},{},{}", i + 1, text::real(*phi), text::real(*s2))?;
            }
            Ok(())
        }
    }
}

#[derive(Serialize)]
struct UncertainRow {
    player: usize,
    #[serde(flatten)]
    values: crate::shapley_uncertain::PlayerUncertainty,
}

fn write_uncertain(w: &mut dyn Write, fmt: Format, r: &UncertainShapleyResult) -> io::Result<()> {
    match fmt {
        Format::Json => {
            let rows: Vec<UncertainRow> = r
                .players
                .iter()
                .enumerate()
                .map(|(i, p)| UncertainRow {
                    player: i + 1,
                    values: *p,
                })
                .collect();
            let doc = json!({ "n": rows.len(), "players": rows });
            writeln!(w, "{}", serde_json::to_string_pretty(&doc).expect("serializes"))
        }
        Format::Csv => r.write_csv(w),
    }
}

#[derive(Serialize)]
struct EstimateRow {
    player: usize,
    mean: f64,
    std_error: Option<f64>,
    ci_low: Option<f64>,
    ci_high: Option<f64>,
    evaluations: u64,
}

fn finite(x: f64) -> Option<f64> {
    x.is_finite().then_some(x)
}

fn write_estimates(w: &mut dyn Write, fmt: Format, estimates: &[Estimate]) -> io::Result<()> {
    match fmt {
        Format::Json => {
            // JSON has no infinity; an unidentified error is written as null.
            let rows: Vec<EstimateRow> = estimates
                .iter()
                .enumerate()
                .map(|(i, e)| EstimateRow {
                    player: i + 1,
                    mean: e.mean,
                    std_error: finite(e.std_error),
                    ci_low: finite(e.ci_low),
                    ci_high: finite(e.ci_high),
                    evaluations: e.evaluations_used,
                })
                .collect();
            let doc = json!({ "n": rows.len(), "estimates": rows });
            writeln!(w, "{}", serde_json::to_string_pretty(&doc).expect("serializes"))
        }
        Format::Csv => {
            writeln!(w, "player,mean,std_error,ci_low,ci_high,evaluations")?;
            for (i, e) in estimates.iter().enumerate() {
                writeln!(
                    w,
                    "{},{},{},{},{},{}",
                    i + 1,
                    text::real(e.mean),
                    text::real(e.std_error),
                    text::real(e.ci_low),
                    text::real(e.ci_high),
                    e.evaluations_used
                )?;
            }
            Ok(())
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentParams {
    pub samples: usize,
    pub features: usize,
    pub noise_level: f64,
    pub seed: u64,
    pub vf_noise: VfNoise,
    pub repeats: Option<usize>,
    pub data: Option<PathBuf>,
    pub save_data: bool,
}

/// Summary printed by `experiment` and written to `summary.json`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub samples: usize,
    pub features: usize,
    pub r2_full: f64,
    pub v_empty: f64,
    pub v_full: f64,
    pub sum_phi: f64,
    pub efficiency_residual: f64,
    pub model_weights: Vec<f64>,
    pub model_intercept: f64,
    pub players: Vec<crate::shapley_uncertain::PlayerUncertainty>,
    pub files: Vec<String>,
}

/// Files written to `out_dir`:
/// `shapley.csv` (one row per feature), `distributions.csv`,
/// `estimates.csv` when `repeats` is set, `dataset.csv` on request,
/// `summary.json` and `manifest.json`.
pub fn run_experiment(
    params: &ExperimentParams,
    out_dir: &Path,
    argv: &[String],
) -> CliResult<ExperimentReport> {
    let dataset = match &params.data {
        Some(path) => crate::mlvf::Dataset::read_csv_path(path)?,
        None => generate_regression(params.samples, params.features, params.noise_level, params.seed)?,
    };
    let d = dataset.num_features();
    if d > crate::coalition::MAX_EXACT_PLAYERS {
        return Err(ShapleyError::Capacity {
            players: d,
            max: crate::coalition::MAX_EXACT_PLAYERS,
        }
        .into());
    }
    let model = fit_linear_regression(&dataset)?;
    let r2_full = r2_score(&model, &dataset)?;
    let game = ImputedR2Game::new(model.clone(), dataset.clone(), vec![0.0; d])?.into_game()?;
    let noise = match params.vf_noise {
        VfNoise::None => NoiseModel::None,
        VfNoise::Bernoulli => reference_noise(ReferenceNoise::Bernoulli),
        VfNoise::Gaussian => reference_noise(ReferenceNoise::Gaussian),
    };
    let ug = UncertainGame::new(game.clone(), noise)?;
    let result = uncertain_shapley(&ug)?;
    let table = game.table()?;
    let (v_empty, v_full) = (table[0], table[table.len() - 1]);
    let sum_phi: f64 = result.players.iter().map(|p| p.phi).sum();

    fs::create_dir_all(out_dir)?;
    let mut files = Vec::new();
    let mut write_file = |name: &str, bytes: &[u8]| -> CliResult<()> {
        fs::write(out_dir.join(name), bytes)?;
        files.push(name.to_string());
        Ok(())
    };

    let mut buf = Vec::new();
    result.write_csv(&mut buf)?;
    write_file("shapley.csv", &buf)?;

    let mut buf = Vec::new();
    for i in 0..d {
        match params.vf_noise {
            VfNoise::None => marginal_distribution(&game, i)?.write_csv(&mut buf, i == 0)?,
            _ => mixture_density(&ug, i, None)?.write_csv(&mut buf, i == 0)?,
        }
    }
    write_file("distributions.csv", &buf)?;

    if let Some(repeats) = params.repeats {
        let estimates = estimate_all(&ug, &EstimatorConfig::enumeration(repeats, params.seed))?;
        let mut buf = Vec::new();
        write_estimates(&mut buf, Format::Csv, &estimates)?;
        write_file("estimates.csv", &buf)?;
    }

    if params.save_data {
        let mut buf = Vec::new();
        dataset.write_csv(&mut buf)?;
        write_file("dataset.csv", &buf)?;
    }

    let report = ExperimentReport {
        samples: dataset.num_points(),
        features: d,
        r2_full,
        v_empty,
        v_full,
        sum_phi,
        efficiency_residual: sum_phi - (v_full - v_empty),
        model_weights: model.weights.clone(),
        model_intercept: model.intercept,
        players: result.players.clone(),
        files: {
            let mut f = files.clone();
            f.push("summary.json".into());
            f.push("manifest.json".into());
            f
        },
    };
    fs::write(
        out_dir.join("summary.json"),
        serde_json::to_string_pretty(&report).expect("serializes") + "\n",
    )?;
    RunManifest::new(
        "experiment",
        argv,
        serde_json::to_value(params).expect("serializes"),
        Some(params.seed),
    )
    .write(&out_dir.join("manifest.json"))?;
    Ok(report)
}
