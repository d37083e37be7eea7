//! Command-line driver: `scalar`, `solve`, `sweep` and `report`.
//!
//! Every run writes into a fresh timestamped directory under `output_dir`.
//! Exit codes: 0 success, 2 configuration error, 3 solver error; errors are
//! also printed to stderr as one JSON object.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::config::ExperimentConfig;
use crate::coupled::{continuation, SolutionRecord, Stage};
use crate::diagnostics::DiagnosticsReport;
use crate::error::{Error, Result};
use crate::nehari::{multistart, MaximizerReport};
use crate::scalar::{compute_c_infinity, find_nodal_solution, NodalProfile, ProfileSummary};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_SOLVER: i32 = 3;

const MULTISTART_STARTS: usize = 8;
const MULTISTART_RADIUS: f64 = 2.0;

pub const SWEEP_HEADER: &str = "beta,energy,residual,d_to_K,max_overlap,beta_times_max_overlap,min_lambda_bar";

#[derive(Parser, Debug)]
#[command(name = "nodalsep", version, about = "Segregated nodal solutions of coupled cubic Schrödinger systems")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Nodal profile with h bumps and its energy c_∞.
    Scalar(Overrides),
    /// Coupled solution at a single β.
    Solve {
        #[command(flatten)]
        overrides: Overrides,
        #[arg(long)]
        beta: f64,
    },
    /// Continuation over the β schedule.
    Sweep(Overrides),
    /// Trend checks on the output directory of a sweep.
    Report { run_dir: PathBuf },
}

#[derive(Args, Debug, Default, Clone)]
pub struct Overrides {
    /// JSON config file, or a directory of them to run in parallel.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long = "dim")]
    pub dimension: Option<usize>,
    #[arg(long)]
    pub h: Option<usize>,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub sigma: Option<Vec<i64>>,
    #[arg(long, value_delimiter = ',')]
    pub beta_schedule: Option<Vec<f64>>,
    #[arg(long)]
    pub n_points: Option<usize>,
    #[arg(long)]
    pub r_max: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long = "out")]
    pub output_dir: Option<PathBuf>,
}

impl Overrides {
    /// Applies the flags on top of `base`. A `--sigma` without `--h` also sets `h`.
    pub fn apply(&self, mut base: ExperimentConfig) -> ExperimentConfig {
        if let Some(v) = self.dimension {
            base.dimension = v;
        }
        if let Some(v) = &self.sigma {
            base.sigma = v.clone();
            base.h = v.len();
        }
        if let Some(v) = self.h {
            base.h = v;
        }
        if let Some(v) = &self.beta_schedule {
            base.beta_schedule = v.clone();
        }
        if let Some(v) = self.n_points {
            base.n_points = v;
        }
        if let Some(v) = self.r_max {
            base.r_max = v;
        }
        if let Some(v) = self.seed {
            base.seed = v;
        }
        if let Some(v) = &self.output_dir {
            base.output_dir = v.clone();
        }
        base
    }

    /// One `(label, config)` per config file; the label names the run directory.
    fn resolve(&self) -> Result<Vec<(String, ExperimentConfig)>> {
        match &self.config {
            None => Ok(vec![(String::new(), self.apply(ExperimentConfig::default()))]),
            Some(p) if p.is_dir() => {
                let mut files: Vec<PathBuf> = std::fs::read_dir(p)?
                    .filter_map(|e| e.ok().map(|e| e.path()))
                    .filter(|f| f.extension().is_some_and(|x| x == "json"))
                    .collect();
                files.sort();
                if files.is_empty() {
                    return Err(Error::Config(format!("no .json configs in {}", p.display())));
                }
                files
                    .into_iter()
                    .map(|f| {
                        let label = f.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
                        Ok((label, self.apply(ExperimentConfig::load(&f)?)))
                    })
                    .collect()
            }
            Some(p) => Ok(vec![(String::new(), self.apply(ExperimentConfig::load(p)?))]),
        }
    }
}

pub fn exit_code(e: &Error) -> i32 {
    if e.is_config() {
        EXIT_CONFIG
    } else {
        EXIT_SOLVER
    }
}

pub fn error_json(e: &Error) -> String {
    json!({ "error": e.kind(), "message": e.to_string(), "exit_code": exit_code(e) }).to_string()
}

/// `β` as used in file names: shortest decimal form.
pub fn beta_tag(beta: f64) -> String {
    format!("{beta}")
}

/// Creates `<base>/<command>[_<label>]_<UTC timestamp>`, adding a counter on collision.
pub fn create_run_dir(base: &Path, command: &str, label: &str) -> Result<PathBuf> {
    std::fs::create_dir_all(base)?;
    let stamp = chrono::Utc::now().format("%Y%m%dT%H%M%S%.3fZ");
    let stem = if label.is_empty() {
        format!("{command}_{stamp}")
    } else {
        format!("{command}_{label}_{stamp}")
    };
    for n in 0.. {
        let dir = if n == 0 {
            base.join(&stem)
        } else {
            base.join(format!("{stem}-{n}"))
        };
        match std::fs::create_dir(&dir) {
            Ok(()) => return Ok(dir),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => continue,
            Err(e) => return Err(e.into()),
        }
    }
    unreachable!()
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

/// `r, W, w_1, …, w_h`.
pub fn profile_csv(profile: &NodalProfile) -> String {
    let mut s = String::from("r,W");
    for l in 1..=profile.h {
        let _ = write!(s, ",w_{l}");
    }
    s.push('\n');
    let signed = profile.signed_reconstruction();
    for (j, r) in profile.grid.nodes().iter().enumerate() {
        let _ = write!(s, "{r:.16e},{:.16e}", signed[j]);
        for b in &profile.bumps {
            let _ = write!(s, ",{:.16e}", b.values()[j]);
        }
        s.push('\n');
    }
    s
}

/// `r, U_1, …, U_k`.
pub fn solution_csv(record: &SolutionRecord) -> String {
    let comps = record.components();
    let mut s = String::from("r");
    for i in 1..=comps.len() {
        let _ = write!(s, ",U_{i}");
    }
    s.push('\n');
    for (j, r) in record.ensemble.grid().nodes().iter().enumerate() {
        let _ = write!(s, "{r:.16e}");
        for c in &comps {
            let _ = write!(s, ",{:.16e}", c.values()[j]);
        }
        s.push('\n');
    }
    s
}

pub fn sweep_row(record: &SolutionRecord) -> String {
    let s = record.summary();
    format!(
        "{:e},{:e},{:e},{:e},{:e},{:e},{:e}",
        s.beta, s.energy, s.residual, s.d_to_k, s.max_overlap, s.beta_times_max_overlap, s.min_lambda_bar
    )
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScalarOutput {
    #[serde(flatten)]
    pub profile: ProfileSummary,
    pub nehari_defect: f64,
    pub shooting_c_value: Option<f64>,
    pub shooting_node_radii: Option<Vec<f64>>,
    pub relative_gap: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StageDiagnostics {
    #[serde(flatten)]
    pub report: DiagnosticsReport,
    pub maximizer: MaximizerReport,
    pub multistart_spread: Option<f64>,
}

fn scalar_profile(cfg: &ExperimentConfig) -> Result<NodalProfile> {
    let grid = cfg.grid()?;
    let profile = compute_c_infinity(&grid, cfg.h)?;
    let defect = profile.nehari_defect();
    if defect > cfg.tol_nehari {
        return Err(Error::NonConvergence(format!("bump Nehari defect {defect:e}")));
    }
    Ok(profile)
}

/// Computes the profile by partition optimisation, cross-checks it against
/// shooting + Newton and writes `profile.json` and `profile.csv`.
pub fn cmd_scalar(cfg: &ExperimentConfig, label: &str) -> Result<(PathBuf, ScalarOutput)> {
    cfg.validate(false)?;
    let profile = scalar_profile(cfg)?;
    let shot = match find_nodal_solution(&profile.grid, cfg.h) {
        Ok(p) => Some(p),
        Err(e) => {
            warn!("shooting route failed: {e}");
            None
        }
    };
    let out = ScalarOutput {
        profile: profile.summary(),
        nehari_defect: profile.nehari_defect(),
        shooting_c_value: shot.as_ref().map(|p| p.c_value),
        shooting_node_radii: shot.as_ref().map(|p| p.node_radii.clone()),
        relative_gap: shot.as_ref().map(|p| (p.c_value - profile.c_value).abs() / profile.c_value),
    };
    let dir = create_run_dir(&cfg.output_dir, "scalar", label)?;
    write_json(&dir.join("config.json"), cfg)?;
    write_json(&dir.join("profile.json"), &out)?;
    std::fs::write(dir.join("profile.csv"), profile_csv(&profile))?;
    Ok((dir, out))
}

fn stage_diagnostics(rec: &SolutionRecord, profile: &NodalProfile, cfg: &ExperimentConfig, salt: u64) -> Result<StageDiagnostics> {
    let report = rec.diagnostics(profile, cfg.epsilon)?;
    let seed = cfg.seed.wrapping_add(salt);
    let multistart_spread = match multistart(rec.beta, &rec.ensemble, MULTISTART_STARTS, MULTISTART_RADIUS, seed) {
        Ok(runs) => Some(
            runs.iter()
                .flat_map(|r| {
                    r.lambda_bar
                        .as_slice()
                        .iter()
                        .zip(rec.lambda_bar.as_slice())
                        .map(|(a, b)| (a - b).abs())
                })
                .fold(0.0, f64::max),
        ),
        Err(e) => {
            warn!("beta = {}: multistart failed: {e}", rec.beta);
            None
        }
    };
    Ok(StageDiagnostics {
        report,
        maximizer: rec.maximizer.clone(),
        multistart_spread,
    })
}

/// Per-stage artifacts plus `sweep.csv`; returns the failed stages.
fn write_stages(dir: &Path, stages: &[Stage], profile: &NodalProfile, cfg: &ExperimentConfig) -> Result<Vec<(f64, Error)>> {
    let mut csv = String::from(SWEEP_HEADER);
    csv.push('\n');
    let mut failed = Vec::new();
    for (s, stage) in stages.iter().enumerate() {
        let tag = beta_tag(stage.beta);
        match &stage.outcome {
            Ok(rec) => {
                std::fs::write(dir.join(format!("solution_beta{tag}.csv")), solution_csv(rec))?;
                write_json(&dir.join(format!("record_beta{tag}.json")), &rec.summary())?;
                let diag = stage_diagnostics(rec, profile, cfg, s as u64)?;
                write_json(&dir.join(format!("diagnostics_beta{tag}.json")), &diag)?;
                csv.push_str(&sweep_row(rec));
                csv.push('\n');
            }
            Err(e) => {
                write_json(
                    &dir.join(format!("error_beta{tag}.json")),
                    &json!({ "beta": stage.beta, "error": e.kind(), "message": e.to_string() }),
                )?;
                failed.push((stage.beta, e.clone()));
            }
        }
    }
    std::fs::write(dir.join("sweep.csv"), csv)?;
    Ok(failed)
}

fn coupled_run(cfg: &ExperimentConfig, command: &str, label: &str) -> Result<(PathBuf, Vec<Stage>, Vec<(f64, Error)>)> {
    cfg.validate(true)?;
    let assignment = cfg.assignment()?;
    let profile = scalar_profile(cfg)?;
    let stages = continuation(&profile, &assignment, &cfg.solver())?;
    let dir = create_run_dir(&cfg.output_dir, command, label)?;
    write_json(&dir.join("config.json"), cfg)?;
    write_json(&dir.join("profile.json"), &profile.summary())?;
    let failed = write_stages(&dir, &stages, &profile, cfg)?;
    Ok((dir, stages, failed))
}

/// Coupled solution at a single `β` started from the target profile.
pub fn cmd_solve(cfg: &ExperimentConfig, beta: f64, label: &str) -> Result<(PathBuf, SolutionRecord)> {
    let cfg = ExperimentConfig {
        beta_schedule: vec![beta],
        ..cfg.clone()
    };
    let (dir, mut stages, _) = coupled_run(&cfg, "solve", label)?;
    let stage = stages.pop().expect("one stage");
    stage.outcome.map(|rec| (dir, rec))
}

/// Continuation over the schedule; failed stages leave an `error_beta<β>.json`.
pub fn cmd_sweep(cfg: &ExperimentConfig, label: &str) -> Result<(PathBuf, Vec<Stage>, Vec<(f64, Error)>)> {
    coupled_run(cfg, "sweep", label)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub beta: f64,
    pub energy: f64,
    pub residual: f64,
    #[serde(rename = "d_to_K")]
    pub d_to_k: f64,
    pub max_overlap: f64,
    pub beta_times_max_overlap: f64,
    pub min_lambda_bar: f64,
}

pub fn read_sweep_csv(path: &Path) -> Result<Vec<SweepRow>> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some(SWEEP_HEADER) {
        return Err(Error::Io(format!("{}: unexpected header", path.display())));
    }
    lines
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            let v = l
                .split(',')
                .map(|x| x.trim().parse::<f64>().map_err(|e| Error::Io(format!("{l}: {e}"))))
                .collect::<Result<Vec<f64>>>()?;
            if v.len() != 7 {
                return Err(Error::Io(format!("{l}: expected 7 columns")));
            }
            Ok(SweepRow {
                beta: v[0],
                energy: v[1],
                residual: v[2],
                d_to_k: v[3],
                max_overlap: v[4],
                beta_times_max_overlap: v[5],
                min_lambda_bar: v[6],
            })
        })
        .collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepReport {
    pub rows: usize,
    pub c_value: f64,
    pub energy_nondecreasing: bool,
    pub max_energy_excess: f64,
    pub overlap_drop: Option<f64>,
    pub beta_overlap_band: Option<f64>,
    pub d_nonincreasing_tail: Option<bool>,
    pub max_residual: f64,
}

/// Trend checks over the rows of `sweep.csv` in `run_dir`.
pub fn cmd_report(run_dir: &Path) -> Result<SweepReport> {
    let rows = read_sweep_csv(&run_dir.join("sweep.csv"))?;
    let profile: ProfileSummary = serde_json::from_str(&std::fs::read_to_string(run_dir.join("profile.json"))?)?;
    let tail = rows.len().saturating_sub(3);
    let tail_rows = &rows[tail..];
    Ok(SweepReport {
        rows: rows.len(),
        c_value: profile.c_value,
        energy_nondecreasing: rows.windows(2).all(|w| w[1].energy >= w[0].energy),
        max_energy_excess: rows.iter().map(|r| r.energy - profile.c_value).fold(f64::NEG_INFINITY, f64::max),
        overlap_drop: match (rows.first(), rows.last()) {
            (Some(a), Some(b)) if rows.len() > 1 => Some(a.max_overlap / b.max_overlap),
            _ => None,
        },
        beta_overlap_band: (tail_rows.len() == 3).then(|| {
            let v: Vec<f64> = tail_rows.iter().map(|r| r.beta_times_max_overlap).collect();
            v.iter().cloned().fold(0.0, f64::max) / v.iter().cloned().fold(f64::INFINITY, f64::min)
        }),
        d_nonincreasing_tail: (tail_rows.len() == 3).then(|| tail_rows.windows(2).all(|w| w[1].d_to_k <= w[0].d_to_k)),
        max_residual: rows.iter().map(|r| r.residual).fold(0.0, f64::max),
    })
}

fn print_json(value: &impl Serialize) {
    println!("{}", serde_json::to_string_pretty(value).expect("serializable"));
}

fn fail(e: &Error) -> i32 {
    eprintln!("{}", error_json(e));
    exit_code(e)
}

fn run_one(command: &Command, label: &str, cfg: &ExperimentConfig) -> i32 {
    match command {
        Command::Scalar(_) => match cmd_scalar(cfg, label) {
            Ok((dir, out)) => {
                info!("wrote {}", dir.display());
                print_json(&out);
                EXIT_OK
            }
            Err(e) => fail(&e),
        },
        Command::Solve { beta, .. } => match cmd_solve(cfg, *beta, label) {
            Ok((dir, rec)) => {
                info!("wrote {}", dir.display());
                print_json(&rec.summary());
                EXIT_OK
            }
            Err(e) => fail(&e),
        },
        Command::Sweep(_) => match cmd_sweep(cfg, label) {
            Ok((dir, stages, failed)) => {
                info!("wrote {}", dir.display());
                let rows: Vec<_> = stages
                    .iter()
                    .filter_map(|s| s.outcome.as_ref().ok().map(|r| r.summary()))
                    .collect();
                print_json(&json!({ "run_dir": dir, "records": rows }));
                for (beta, e) in &failed {
                    eprintln!(
                        "{}",
                        json!({ "beta": beta, "error": e.kind(), "message": e.to_string(), "exit_code": EXIT_SOLVER })
                    );
                }
                if failed.is_empty() {
                    EXIT_OK
                } else {
                    EXIT_SOLVER
                }
            }
            Err(e) => fail(&e),
        },
        Command::Report { .. } => unreachable!(),
    }
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).try_init();
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return EXIT_OK;
            }
            return fail(&Error::Config(e.to_string().trim().to_string()));
        }
    };
    let overrides = match &cli.command {
        Command::Scalar(o) | Command::Sweep(o) | Command::Solve { overrides: o, .. } => o,
        Command::Report { run_dir } => {
            return match cmd_report(run_dir) {
                Ok(r) => {
                    print_json(&r);
                    EXIT_OK
                }
                Err(e) => fail(&e),
            };
        }
    };
    let configs = match overrides.resolve() {
        Ok(c) => c,
        Err(e) => return fail(&e),
    };
    configs
        .par_iter()
        .map(|(label, cfg)| run_one(&cli.command, label, cfg))
        .collect::<Vec<i32>>()
        .into_iter()
        .max()
        .unwrap_or(EXIT_OK)
}
