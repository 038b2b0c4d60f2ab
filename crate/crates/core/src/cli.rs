//! Command implementations behind the `filterstab` binary. Each command
//! reads its input, writes its artifacts plus a manifest into one directory,
//! and returns the console text together with an exit status.

use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use thiserror::Error;

use crate::backward::{backward_report, BackwardError, BackwardReport};
use crate::config::{parse_model, ConfigError, ExperimentFile};
use crate::output::{divergence_svg, OutputSet, PlotSeries};
use crate::stability::{check_table1, fit_for, mc_divergence_curve, reproduce_table1, RateFit, StabilityError, Table1Options, Table1Tolerance};
use crate::structure::analyze;

pub const EXIT_OK: u8 = 0;
pub const EXIT_CONFIG: u8 = 2;
pub const EXIT_NUMERICAL: u8 = 3;
pub const EXIT_ACCEPTANCE: u8 = 4;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{path}: {source}")]
    Config { path: String, source: ConfigError },
    #[error("{0}")]
    Io(String),
    #[error(transparent)]
    Stability(#[from] StabilityError),
    #[error(transparent)]
    Backward(#[from] BackwardError),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config { .. } | CliError::Io(_) => EXIT_CONFIG,
            CliError::Stability(StabilityError::InvalidConfig(_)) => EXIT_CONFIG,
            CliError::Stability(_) | CliError::Backward(_) => EXIT_NUMERICAL,
        }
    }
}

fn io_err(context: &Path, e: io::Error) -> CliError {
    CliError::Io(format!("{}: {e}", context.display()))
}

/// Console text and exit status of a finished command.
#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub stdout: String,
    pub exit_code: u8,
    pub out_dir: PathBuf,
}

fn read_input(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| io_err(path, e))
}

fn config_err(path: &Path, source: ConfigError) -> CliError {
    CliError::Config { path: path.display().to_string(), source }
}

fn json_bytes<T: Serialize>(value: &T) -> Vec<u8> {
    let mut s = serde_json::to_string_pretty(value).expect("plain data serializes");
    s.push('\n');
    s.into_bytes()
}

/// `analyze <model>`: structural report as JSON plus a verdict line.
pub fn cmd_analyze(model_path: &Path, out_dir: &Path) -> Result<Outcome, CliError> {
    let started = Instant::now();
    let text = read_input(model_path)?;
    let model = parse_model(&text).map_err(|e| config_err(model_path, e))?;
    let report = analyze(&model);
    let mut out = OutputSet::create(out_dir).map_err(|e| io_err(out_dir, e))?;
    out.write("analysis.json", &json_bytes(&report.to_json())).map_err(|e| io_err(out_dir, e))?;
    out.finish("analyze", text.as_bytes(), None, started.elapsed().as_secs_f64()).map_err(|e| io_err(out_dir, e))?;
    let stdout = format!(
        "observable: {}, ergodic: {}, detectable: {}\nverdict: {}\ndim O = {}, dim S0 = {}\n",
        report.is_observable,
        report.is_ergodic,
        report.is_detectable,
        report.verdict().label(),
        report.observable_space.dim(),
        report.null_space.dim()
    );
    Ok(Outcome { stdout, exit_code: EXIT_OK, out_dir: out_dir.to_path_buf() })
}

#[derive(Serialize)]
struct FitRow<'a> {
    case: &'a str,
    rate: f64,
    fit: &'a RateFit,
    floor_hits: usize,
}

/// Parses and validates an experiment file; `seed` overrides the file's seed.
fn load_experiment(path: &Path, text: &str, seed: Option<u64>) -> Result<crate::config::Experiment, CliError> {
    let mut file = ExperimentFile::parse(text).map_err(|e| config_err(path, e))?;
    if seed.is_some() {
        file.seed = seed;
    }
    file.validate().map_err(|e| config_err(path, e))
}

/// `divergence <config>`: one CSV per case, fitted rates and a combined plot.
pub fn cmd_divergence(config_path: &Path, seed: Option<u64>, out_dir: &Path) -> Result<Outcome, CliError> {
    let started = Instant::now();
    let text = read_input(config_path)?;
    let exp = load_experiment(config_path, &text, seed)?;
    let mut out = OutputSet::create(out_dir).map_err(|e| io_err(out_dir, e))?;
    let mut curves = Vec::with_capacity(exp.cases.len());
    let mut stdout = String::new();
    for case in &exp.cases {
        let curve = mc_divergence_curve(&case.experiment)?;
        let fit = fit_for(&case.experiment, &curve).ok();
        out.write(&format!("{}.csv", case.name), curve.to_csv().as_bytes()).map_err(|e| io_err(out_dir, e))?;
        match &fit {
            Some(f) => {
                let _ = writeln!(stdout, "{:<16} rate {:>8.3}  R^2 {:.3}  window [{:.2}, {:.2}]", case.name, f.rate, f.r_squared, f.window.0, f.window.1);
            }
            None => {
                let _ = writeln!(stdout, "{:<16} rate n/a (curve below noise floor)", case.name);
            }
        }
        curves.push((case.name.as_str(), curve, fit));
    }
    let rows: Vec<FitRow<'_>> = curves
        .iter()
        .filter_map(|(name, c, f)| f.as_ref().map(|f| FitRow { case: name, rate: crate::stability::round3(f.rate), fit: f, floor_hits: c.floor_hits }))
        .collect();
    out.write("fits.json", &json_bytes(&rows)).map_err(|e| io_err(out_dir, e))?;
    let series: Vec<PlotSeries<'_>> = curves.iter().map(|(name, c, f)| PlotSeries { label: name, curve: c, fit: f.as_ref() }).collect();
    out.write("divergence.svg", divergence_svg(&series).as_bytes()).map_err(|e| io_err(out_dir, e))?;
    out.finish("divergence", text.as_bytes(), Some(exp.seed), started.elapsed().as_secs_f64()).map_err(|e| io_err(out_dir, e))?;
    Ok(Outcome { stdout, exit_code: EXIT_OK, out_dir: out_dir.to_path_buf() })
}

#[derive(Serialize)]
struct BackwardCaseJson<'a> {
    case: &'a str,
    all_pass: bool,
    #[serde(flatten)]
    report: &'a BackwardReport,
}

/// `backward <config>`: backward-map report per case; exit 4 if a guaranteed
/// property fails.
pub fn cmd_backward(config_path: &Path, seed: Option<u64>, out_dir: &Path) -> Result<Outcome, CliError> {
    let started = Instant::now();
    let text = read_input(config_path)?;
    let exp = load_experiment(config_path, &text, seed)?;
    let mut reports = Vec::with_capacity(exp.cases.len());
    let mut stdout = String::new();
    let mut failed = Vec::new();
    for case in &exp.cases {
        let r = backward_report(&exp.backward_setup(case), &exp.backward)?;
        let _ = writeln!(
            stdout,
            "{:<16} var y0 {:.4e}  var gamma_T {:.4e}  identity z {:.2}  jensen {}  cauchy-schwarz {}  decay {}  {}",
            case.name,
            r.var_y0.value,
            r.var_gamma_t.value,
            r.identity_z,
            r.jensen_pass,
            r.cauchy_schwarz.pass,
            r.variance_decay,
            if r.all_pass() { "PASS" } else { "FAIL" }
        );
        if !r.all_pass() {
            failed.push(case.name.clone());
        }
        reports.push(r);
    }
    let rows: Vec<BackwardCaseJson<'_>> =
        exp.cases.iter().zip(&reports).map(|(c, r)| BackwardCaseJson { case: &c.name, all_pass: r.all_pass(), report: r }).collect();
    let mut out = OutputSet::create(out_dir).map_err(|e| io_err(out_dir, e))?;
    out.write("backward.json", &json_bytes(&rows)).map_err(|e| io_err(out_dir, e))?;
    out.finish("backward", text.as_bytes(), Some(exp.seed), started.elapsed().as_secs_f64()).map_err(|e| io_err(out_dir, e))?;
    let exit_code = if failed.is_empty() {
        EXIT_OK
    } else {
        let _ = writeln!(stdout, "checks failed for: {}", failed.join(", "));
        EXIT_ACCEPTANCE
    };
    Ok(Outcome { stdout, exit_code, out_dir: out_dir.to_path_buf() })
}

/// `reproduce-table1`: runs the five benchmark rows, writes
/// `table1.json`, one CSV per row and `table1.svg`.
pub fn cmd_reproduce_table1(seed: u64, quick: bool, out_dir: &Path) -> Result<Outcome, CliError> {
    let started = Instant::now();
    let opts = Table1Options { seed, n_paths: if quick { 100 } else { 500 }, ..Table1Options::default() };
    let rows = reproduce_table1(&opts)?;
    let mut out = OutputSet::create(out_dir).map_err(|e| io_err(out_dir, e))?;
    for r in &rows {
        out.write(&format!("table1_{}.csv", r.case_name()), r.curve.to_csv().as_bytes()).map_err(|e| io_err(out_dir, e))?;
    }
    let json: Vec<_> = rows.iter().map(|r| r.json()).collect();
    out.write("table1.json", &json_bytes(&json)).map_err(|e| io_err(out_dir, e))?;
    let names: Vec<String> = rows.iter().map(|r| r.case_name()).collect();
    let series: Vec<PlotSeries<'_>> =
        rows.iter().zip(&names).map(|(r, n)| PlotSeries { label: n, curve: &r.curve, fit: Some(&r.fit) }).collect();
    out.write("table1.svg", divergence_svg(&series).as_bytes()).map_err(|e| io_err(out_dir, e))?;
    let settings = format!("seed={seed} n_paths={} horizon={} dt={}", opts.n_paths, opts.horizon, opts.dt);
    out.finish("reproduce-table1", settings.as_bytes(), Some(seed), started.elapsed().as_secs_f64()).map_err(|e| io_err(out_dir, e))?;

    let mut stdout = String::new();
    if quick {
        stdout.push_str("warning: --quick uses 100 paths; rate tolerances are widened\n");
    }
    let _ = writeln!(stdout, "{:<5} {:<3} {:<30} {:>7} {:>7} {:>6}", "eps", "h", "verdict", "rate", "ref", "R^2");
    for r in &rows {
        let j = r.json();
        let _ = writeln!(stdout, "{:<5} {:<3} {:<30} {:>7.3} {:>7.3} {:>6.3}", j.epsilon, j.h_name, j.verdict, j.rate, j.reference_rate, j.r_squared);
    }
    let tol = if quick { Table1Tolerance::QUICK } else { Table1Tolerance::STANDARD };
    let failures = check_table1(&rows, tol);
    let exit_code = match failures.first() {
        None => {
            stdout.push_str("all rows within tolerance\n");
            EXIT_OK
        }
        Some(first) => {
            let _ = writeln!(stdout, "tolerance failure: {first}");
            for f in &failures[1..] {
                let _ = writeln!(stdout, "also: {f}");
            }
            EXIT_ACCEPTANCE
        }
    };
    Ok(Outcome { stdout, exit_code, out_dir: out_dir.to_path_buf() })
}

/// Runs `f` on a dedicated pool of `threads` workers, or on the global pool.
pub fn with_threads<T: Send>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T, CliError> {
    match threads {
        None => Ok(f()),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new().num_threads(n).build().map_err(|e| CliError::Io(format!("thread pool: {e}")))?;
            Ok(pool.install(f))
        }
    }
}
