//! Chi-square divergence between twin filters, Monte-Carlo divergence
//! curves and exponential rate fits.

use rayon::prelude::*;
use serde::Serialize;
use std::fmt::Write as _;
use thiserror::Error;

use crate::model::{FiniteHmm, SimplexVector};
use crate::presets::{benchmark_model, benchmark_mu, benchmark_nu, BenchmarkRow, ObservationChoice, TABLE1};
use crate::rng::stream_rng;
use crate::simulate::{likelihood_ratio, FilterScheme, SimError, Start, TimeGrid, TwinSimulator, RATIO_FLOOR};
use crate::structure::{analyze, Verdict};

/// Curve values below this are treated as numerical noise by the fit.
pub const FIT_NOISE_FLOOR: f64 = 1e-14;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StabilityError {
    #[error("p charges state {state} where q is below the floor")]
    AbsoluteContinuityViolated { state: usize },
    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("fit window [{0}, {1}] holds fewer than two usable points")]
    WindowEmpty(f64, f64),
    #[error("path {path}: {source}")]
    Path { path: usize, source: SimError },
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("invalid experiment: {0}")]
    InvalidConfig(String),
}

/// `chi2(p | q) = sum_x p(x)^2 / q(x) - 1`.
///
/// States with `q(x) < RATIO_FLOOR` are skipped; it is an error for `p` to
/// carry more than the floor on any of them.
pub fn chi_square(p: &SimplexVector, q: &SimplexVector) -> Result<f64, StabilityError> {
    if p.len() != q.len() {
        return Err(StabilityError::DimensionMismatch(p.len(), q.len()));
    }
    let mut total = 0.0;
    for i in 0..p.len() {
        if q[i] < RATIO_FLOOR {
            if p[i] > RATIO_FLOOR {
                return Err(StabilityError::AbsoluteContinuityViolated { state: i });
            }
            continue;
        }
        total += p[i] * p[i] / q[i];
    }
    Ok((total - 1.0).max(0.0))
}

/// Chi-square through the floored likelihood ratio, as used along paths:
/// `pi_nu(gamma^2) - 1`. Returns the value and the number of floor hits.
pub(crate) fn chi_square_floored(p: &[f64], q: &[f64]) -> (f64, usize) {
    let (gamma, hits) = likelihood_ratio(p, q);
    let second: f64 = gamma.iter().zip(q).map(|(g, w)| w * g * g).sum();
    ((second - 1.0).max(0.0), hits)
}

/// Which prior `X_0` is drawn from.
#[derive(Debug, Clone, PartialEq)]
pub enum SamplingPrior {
    Mu,
    Nu,
    Custom(SimplexVector),
}

/// A fully assembled divergence experiment.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub name: String,
    pub model: FiniteHmm,
    pub mu: SimplexVector,
    pub nu: SimplexVector,
    pub sampling: SamplingPrior,
    pub grid: TimeGrid,
    pub n_paths: usize,
    pub seed: u64,
    /// Separates the random streams of experiments sharing a seed.
    pub stream_tag: u64,
    pub fit_window: Option<(f64, f64)>,
    pub scheme: FilterScheme,
}

impl ExperimentConfig {
    /// Benchmark model with the reference priors, sampled under `mu`.
    pub fn benchmark(epsilon: f64, h: ObservationChoice, grid: TimeGrid, n_paths: usize, seed: u64) -> Self {
        Self {
            name: format!("eps{epsilon}_{h}"),
            model: benchmark_model(epsilon, h),
            mu: benchmark_mu(),
            nu: benchmark_nu(),
            sampling: SamplingPrior::Mu,
            grid,
            n_paths,
            seed,
            stream_tag: 0,
            fit_window: None,
            scheme: FilterScheme::ZakaiSplit,
        }
    }

    pub fn sampling_prior(&self) -> &SimplexVector {
        match &self.sampling {
            SamplingPrior::Mu => &self.mu,
            SamplingPrior::Nu => &self.nu,
            SamplingPrior::Custom(p) => p,
        }
    }

    pub fn validate(&self) -> Result<(), StabilityError> {
        if self.n_paths == 0 {
            return Err(StabilityError::InvalidConfig("n_paths must be at least 1".into()));
        }
        let d = self.model.states();
        for (name, p) in [("mu", &self.mu), ("nu", &self.nu), ("sampling prior", self.sampling_prior())] {
            if p.len() != d {
                return Err(StabilityError::InvalidConfig(format!("{name} has {} entries, model has {d} states", p.len())));
            }
        }
        if !self.mu.is_absolutely_continuous_wrt(&self.nu) {
            return Err(StabilityError::InvalidConfig("mu must be absolutely continuous with respect to nu".into()));
        }
        if let Some((lo, hi)) = self.fit_window {
            if !(lo < hi) || lo < 0.0 || hi > self.grid.horizon() + 1e-12 {
                return Err(StabilityError::InvalidConfig(format!("fit window [{lo}, {hi}] outside [0, T]")));
            }
        }
        Ok(())
    }
}

/// Monte-Carlo mean of `chi2(pi_t^mu | pi_t^nu)` on the grid.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DivergenceCurve {
    pub times: Vec<f64>,
    pub mean_chi2: Vec<f64>,
    pub stderr: Vec<f64>,
    pub n_paths: usize,
    pub floor_hits: usize,
}

impl DivergenceCurve {
    /// CSV with header `t,mean_chi2,stderr,n_paths,floor_hits`; the last two
    /// columns are run totals repeated on every row.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("t,mean_chi2,stderr,n_paths,floor_hits\n");
        for k in 0..self.times.len() {
            let _ = writeln!(
                s,
                "{:.16e},{:.16e},{:.16e},{},{}",
                self.times[k], self.mean_chi2[k], self.stderr[k], self.n_paths, self.floor_hits
            );
        }
        s
    }

    /// Same curve multiplied by `c > 0`.
    pub fn scaled(&self, c: f64) -> Self {
        Self {
            mean_chi2: self.mean_chi2.iter().map(|v| v * c).collect(),
            stderr: self.stderr.iter().map(|v| v * c).collect(),
            ..self.clone()
        }
    }
}

/// Per-path chi-square trajectory.
pub(crate) fn chi2_trajectory(sim: &TwinSimulator<'_>, start: Start<'_>, n_steps: usize, rng: &mut crate::rng::PathRng) -> Result<(Vec<f64>, usize), SimError> {
    let mut out = Vec::with_capacity(n_steps + 1);
    let mut hits = 0;
    sim.run(start, n_steps, rng, |s| {
        let (c, h) = chi_square_floored(s.pi_mu, s.pi_nu);
        out.push(c);
        hits += h;
    })?;
    Ok((out, hits))
}

/// Mean and standard error of equally long sample rows, reduced in order.
pub(crate) fn column_stats(rows: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>) {
    let n = rows.len();
    let len = rows.first().map_or(0, Vec::len);
    let mut mean = vec![0.0; len];
    for r in rows {
        for (m, v) in mean.iter_mut().zip(r) {
            *m += v;
        }
    }
    for m in mean.iter_mut() {
        *m /= n as f64;
    }
    let mut stderr = vec![0.0; len];
    if n > 1 {
        for r in rows {
            for ((s, v), m) in stderr.iter_mut().zip(r).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        for s in stderr.iter_mut() {
            *s = (*s / ((n - 1) as f64) / n as f64).sqrt();
        }
    }
    (mean, stderr)
}

/// Estimates `E(chi2(pi_t^mu | pi_t^nu))` on the grid with `X_0` drawn from
/// the configured sampling prior. Path `i` uses stream `[stream_tag, i]`.
pub fn mc_divergence_curve(config: &ExperimentConfig) -> Result<DivergenceCurve, StabilityError> {
    config.validate()?;
    let sim = TwinSimulator::new(&config.model, &config.mu, &config.nu, config.grid.dt(), config.scheme)?;
    let sampling = config.sampling_prior().as_slice();
    let n_steps = config.grid.n_steps();
    let results: Vec<Result<(Vec<f64>, usize), StabilityError>> = (0..config.n_paths)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream_rng(config.seed, &[config.stream_tag, i as u64]);
            chi2_trajectory(&sim, Start::Sample(sampling), n_steps, &mut rng)
                .map_err(|source| StabilityError::Path { path: i, source })
        })
        .collect();
    let mut rows = Vec::with_capacity(config.n_paths);
    let mut floor_hits = 0;
    for r in results {
        let (row, hits) = r?;
        floor_hits += hits;
        rows.push(row);
    }
    let (mean_chi2, stderr) = column_stats(&rows);
    Ok(DivergenceCurve { times: config.grid.times(), mean_chi2, stderr, n_paths: config.n_paths, floor_hits })
}

/// Least-squares fit of `log(mean_chi2)` against `t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RateFit {
    /// Decay rate, `-slope`.
    pub rate: f64,
    pub intercept: f64,
    pub window: (f64, f64),
    pub r_squared: f64,
    pub n_points: usize,
    /// Points in the window skipped as numerical noise.
    pub dropped: usize,
}

pub fn fit_rate(curve: &DivergenceCurve, window: (f64, f64)) -> Result<RateFit, StabilityError> {
    let (lo, hi) = window;
    let eps = 1e-9 * hi.abs().max(1.0);
    let mut dropped = 0;
    let pts: Vec<(f64, f64)> = curve
        .times
        .iter()
        .zip(&curve.mean_chi2)
        .filter(|(t, _)| **t >= lo - eps && **t <= hi + eps)
        .filter_map(|(t, v)| {
            if *v < FIT_NOISE_FLOOR {
                dropped += 1;
                None
            } else {
                Some((*t, v.ln()))
            }
        })
        .collect();
    if pts.len() < 2 {
        return Err(StabilityError::WindowEmpty(lo, hi));
    }
    let n = pts.len() as f64;
    let tm = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let ym = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - tm) * (p.0 - tm)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - tm) * (p.1 - ym)).sum();
    let syy: f64 = pts.iter().map(|p| (p.1 - ym) * (p.1 - ym)).sum();
    // A flat curve fits exactly with zero slope.
    let (y_min, y_max) = pts.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), p| (a.min(p.1), b.max(p.1)));
    let flat = y_max - y_min <= 4.0 * f64::EPSILON * ym.abs().max(1.0);
    let slope = if flat { 0.0 } else { sxy / sxx };
    let intercept = ym - slope * tm;
    let ss_res: f64 = pts.iter().map(|p| (p.1 - intercept - slope * p.0).powi(2)).sum();
    let r_squared = if flat { 1.0 } else { (1.0 - ss_res / syy).clamp(0.0, 1.0) };
    Ok(RateFit { rate: -slope + 0.0, intercept, window, r_squared, n_points: pts.len(), dropped })
}

/// Two-pass fit: a first pass on `[T/2, T]` gives a rate guess `r`, the
/// final window is `[max(1, 2/r), T]` with its start capped at `T/2`.
pub fn fit_rate_default(curve: &DivergenceCurve) -> Result<RateFit, StabilityError> {
    let t_end = *curve.times.last().ok_or(StabilityError::WindowEmpty(0.0, 0.0))?;
    let half = 0.5 * t_end;
    let first = fit_rate(curve, (half, t_end))?;
    let start = if first.rate > 0.0 { (2.0 / first.rate).max(1.0) } else { half };
    fit_rate(curve, (start.min(half), t_end))
}

/// Fit with the configured window, or the two-pass default.
pub fn fit_for(config: &ExperimentConfig, curve: &DivergenceCurve) -> Result<RateFit, StabilityError> {
    match config.fit_window {
        Some(w) => fit_rate(curve, w),
        None => fit_rate_default(curve),
    }
}

/// Settings for the benchmark table run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Table1Options {
    pub seed: u64,
    pub n_paths: usize,
    pub horizon: f64,
    pub dt: f64,
    pub scheme: FilterScheme,
}

impl Default for Table1Options {
    fn default() -> Self {
        Self { seed: 20240601, n_paths: 500, horizon: 10.0, dt: 0.005, scheme: FilterScheme::ZakaiSplit }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Table1Row {
    pub reference: BenchmarkRow,
    pub verdict: Verdict,
    pub curve: DivergenceCurve,
    pub fit: RateFit,
}

#[derive(Debug, Clone, Serialize)]
pub struct Table1JsonRow {
    pub epsilon: f64,
    pub h_name: String,
    pub verdict: String,
    pub rate: f64,
    pub r_squared: f64,
    pub reference_rate: f64,
}

/// Rounds to 3 decimals.
pub fn round3(v: f64) -> f64 {
    (v * 1000.0).round() / 1000.0 + 0.0
}

impl Table1Row {
    pub fn json(&self) -> Table1JsonRow {
        Table1JsonRow {
            epsilon: self.reference.epsilon,
            h_name: self.reference.h.name().to_string(),
            verdict: self.verdict.label().to_string(),
            rate: round3(self.fit.rate),
            r_squared: self.fit.r_squared,
            reference_rate: self.reference.reported_rate,
        }
    }

    pub fn case_name(&self) -> String {
        format!("eps{}_{}", self.reference.epsilon, self.reference.h)
    }
}

/// Runs the five benchmark rows. Row `k` uses stream tag `k`.
pub fn reproduce_table1(opts: &Table1Options) -> Result<Vec<Table1Row>, StabilityError> {
    let grid = TimeGrid::new(opts.horizon, opts.dt)?;
    TABLE1
        .iter()
        .enumerate()
        .map(|(k, row)| {
            let mut cfg = ExperimentConfig::benchmark(row.epsilon, row.h, grid, opts.n_paths, opts.seed);
            cfg.stream_tag = k as u64;
            cfg.scheme = opts.scheme;
            let verdict = analyze(&cfg.model).verdict();
            let curve = mc_divergence_curve(&cfg)?;
            let fit = fit_rate_default(&curve)?;
            Ok(Table1Row { reference: *row, verdict, curve, fit })
        })
        .collect()
}

/// Tolerances for the table comparison.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Table1Tolerance {
    /// Bound on `|rate|` for the undetectable row.
    pub zero_rate: f64,
    /// Relative band around each reported positive rate.
    pub relative: f64,
}

impl Table1Tolerance {
    pub const STANDARD: Self = Self { zero_rate: 0.02, relative: 0.35 };
    /// Widened tolerances for reduced path counts.
    pub const QUICK: Self = Self { zero_rate: 0.04, relative: 0.6 };
}

/// Checks verdicts, the zero-rate row, positivity and ordering of the other
/// rows, and the relative band. Returns one message per failing check.
pub fn check_table1(rows: &[Table1Row], tol: Table1Tolerance) -> Vec<String> {
    let mut failures = Vec::new();
    for r in rows {
        if !r.reference.property.starts_with(r.verdict.label()) {
            failures.push(format!("{}: verdict `{}` vs reported `{}`", r.case_name(), r.verdict.label(), r.reference.property));
        }
        if r.reference.reported_rate == 0.0 {
            if r.fit.rate.abs() >= tol.zero_rate {
                failures.push(format!("{}: rate {:.3} not within +-{} of 0", r.case_name(), r.fit.rate, tol.zero_rate));
            }
        } else {
            let rel = (r.fit.rate - r.reference.reported_rate).abs() / r.reference.reported_rate;
            if r.fit.rate <= 0.0 || rel > tol.relative {
                failures.push(format!(
                    "{}: rate {:.3} vs reported {:.3} ({:.0}% off, limit {:.0}%)",
                    r.case_name(),
                    r.fit.rate,
                    r.reference.reported_rate,
                    100.0 * rel,
                    100.0 * tol.relative
                ));
            }
        }
    }
    let positive: Vec<&Table1Row> = rows.iter().filter(|r| r.reference.reported_rate > 0.0).collect();
    for w in positive.windows(2) {
        if w[0].fit.rate >= w[1].fit.rate {
            failures.push(format!("ordering: {} ({:.3}) >= {} ({:.3})", w[0].case_name(), w[0].fit.rate, w[1].case_name(), w[1].fit.rate));
        }
    }
    failures
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sv(v: &[f64]) -> SimplexVector {
        SimplexVector::new(v.to_vec()).unwrap()
    }

    fn synthetic(f: impl Fn(f64) -> f64) -> DivergenceCurve {
        let times: Vec<f64> = (0..=1000).map(|k| k as f64 * 0.01).collect();
        let mean_chi2: Vec<f64> = times.iter().map(|&t| f(t)).collect();
        let n = times.len();
        DivergenceCurve { times, mean_chi2, stderr: vec![0.0; n], n_paths: 1, floor_hits: 0 }
    }

    #[test]
    fn chi_square_examples() {
        let p = sv(&[0.5, 0.5]);
        assert_eq!(chi_square(&p, &p).unwrap(), 0.0);
        let v = chi_square(&p, &sv(&[0.25, 0.75])).unwrap();
        assert!((v - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(
            chi_square(&sv(&[1.0, 0.0]), &sv(&[0.0, 1.0])),
            Err(StabilityError::AbsoluteContinuityViolated { state: 0 })
        );
    }

    #[test]
    fn static_chi_square_of_reference_priors() {
        let v = chi_square(&benchmark_mu(), &benchmark_nu()).unwrap();
        assert!((v - 0.73125).abs() < 1e-12);
    }

    #[test]
    fn exact_exponential_fit() {
        let c = synthetic(|t| 0.7 * (-0.4 * t).exp());
        let f = fit_rate(&c, (1.0, 10.0)).unwrap();
        assert!((f.rate - 0.4).abs() < 1e-9);
        assert!((f.intercept - 0.7_f64.ln()).abs() < 1e-9);
        assert!((f.r_squared - 1.0).abs() < 1e-12);
    }

    #[test]
    fn constant_curve_has_zero_rate() {
        let c = synthetic(|_| 0.58);
        let f = fit_rate(&c, (1.0, 10.0)).unwrap();
        assert_eq!(f.rate, 0.0);
        assert!(f.rate.is_sign_positive());
        assert_eq!(fit_rate_default(&c).unwrap().rate, 0.0);
    }

    #[test]
    fn noise_points_are_dropped() {
        let c = synthetic(|t| if t > 5.0 { 0.0 } else { (-t).exp() });
        let f = fit_rate(&c, (1.0, 10.0)).unwrap();
        assert!((f.rate - 1.0).abs() < 1e-9);
        assert_eq!(f.dropped, 500);
        assert!(matches!(fit_rate(&c, (6.0, 10.0)), Err(StabilityError::WindowEmpty(..))));
    }

    #[test]
    fn default_window_tracks_rate() {
        let c = synthetic(|t| 0.7 * (-0.4 * t).exp() + 0.3 * (-3.0 * t).exp());
        let f = fit_rate_default(&c).unwrap();
        assert!((f.window.0 - 5.0).abs() < 1e-3);
        assert!((f.rate - 0.4).abs() < 1e-3);
    }

    #[test]
    fn equal_priors_give_zero_curve() {
        let grid = TimeGrid::new(1.0, 0.01).unwrap();
        let mut cfg = ExperimentConfig::benchmark(0.1, ObservationChoice::H3, grid, 20, 3);
        cfg.mu = benchmark_nu();
        let c = mc_divergence_curve(&cfg).unwrap();
        assert!(c.mean_chi2.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn zero_paths_is_rejected() {
        let grid = TimeGrid::new(1.0, 0.01).unwrap();
        let cfg = ExperimentConfig::benchmark(0.1, ObservationChoice::H3, grid, 0, 3);
        assert!(matches!(mc_divergence_curve(&cfg), Err(StabilityError::InvalidConfig(_))));
    }

    #[test]
    fn curve_starts_at_static_divergence() {
        let grid = TimeGrid::new(0.5, 0.01).unwrap();
        let cfg = ExperimentConfig::benchmark(0.1, ObservationChoice::H3, grid, 10, 3);
        let c = mc_divergence_curve(&cfg).unwrap();
        assert!((c.mean_chi2[0] - 0.73125).abs() < 1e-12);
        assert_eq!(c.stderr[0], 0.0);
        let csv = c.to_csv();
        assert!(csv.starts_with("t,mean_chi2,stderr,n_paths,floor_hits\n"));
        assert_eq!(csv.lines().count(), 52);
    }
}
