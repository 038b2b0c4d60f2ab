//! Monte-Carlo estimates of the backward map `y0(x) = E^nu(gamma_T(X_T) | X_0 = x)`
//! and of its time-`t` version `Y_t`, with the checks that tie them to the
//! chi-square divergence.
//!
//! All expectations written `E^nu` are over paths whose hidden state starts
//! from `nu`; both filters always start from their own priors, whatever the
//! initial state of the simulated chain.

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::model::{FiniteHmm, FunctionVector, SimplexVector};
use crate::rng::stream_rng;
use crate::simulate::{likelihood_ratio, FilterScheme, SimError, Start, TimeGrid, TwinSimulator};
use crate::stability::{chi_square, chi_square_floored, StabilityError};
use crate::structure::Witness;

const TAG_Y0: u64 = 0xB0;
const TAG_GAMMA: u64 = 0xB1;
const TAG_CHI2: u64 = 0xB2;
const TAG_NESTED: u64 = 0xB3;
const TAG_CLAIM2: u64 = 0xB4;

/// Round-off scale of path-level quantities; used as the smallest standard
/// error in z-scores and as absolute slack in inequality checks.
const ROUND_OFF: f64 = 1e-12;

/// Default cap on `outer * inner * n_steps` for nested runs.
pub const DEFAULT_STEP_BUDGET: u64 = 4_000_000_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BackwardError {
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Stability(#[from] StabilityError),
    #[error("invalid nested Monte-Carlo spec: {0}")]
    InvalidSpec(String),
    #[error("nested run needs {needed} filter steps, budget is {budget}")]
    BudgetExceeded { needed: u64, budget: u64 },
    #[error("variance {value:e} is within 3 standard errors ({stderr:e}) of zero")]
    VarianceIndistinguishableFromZero { value: f64, stderr: f64 },
    #[error("nested result lacks a checkpoint at t = {0}")]
    MissingCheckpoint(f64),
}

/// A Monte-Carlo estimate with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct McEstimate {
    pub value: f64,
    pub stderr: f64,
}

impl McEstimate {
    fn from_samples(xs: &[f64]) -> Self {
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        if xs.len() < 2 {
            return Self { value: mean, stderr: 0.0 };
        }
        let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
        Self { value: mean, stderr: (var / n).sqrt() }
    }
}

/// Everything a backward-map run needs besides sample sizes.
#[derive(Debug, Clone)]
pub struct BackwardSetup {
    pub model: FiniteHmm,
    pub mu: SimplexVector,
    pub nu: SimplexVector,
    pub grid: TimeGrid,
    pub scheme: FilterScheme,
    pub seed: u64,
    /// Separates the random streams of setups sharing a seed.
    pub stream_tag: u64,
}

impl BackwardSetup {
    pub fn new(model: FiniteHmm, mu: SimplexVector, nu: SimplexVector, grid: TimeGrid, seed: u64) -> Self {
        Self { model, mu, nu, grid, scheme: FilterScheme::default(), seed, stream_tag: 0 }
    }

    fn simulator(&self) -> Result<TwinSimulator<'_>, SimError> {
        TwinSimulator::new(&self.model, &self.mu, &self.nu, self.grid.dt(), self.scheme)
    }

    /// `chi2(mu | nu)`.
    pub fn static_chi_square(&self) -> Result<f64, BackwardError> {
        Ok(chi_square(&self.mu, &self.nu)?)
    }
}

/// Priors `(mu, nu) = (rho (1 + a f), rho)` built from an undetectability
/// witness. With `|a| max|f| < 1` the likelihood ratio stays `1 + a f` for all
/// time, so the variance of `y0` never decays.
pub fn witness_priors(witness: &Witness, amplitude: f64) -> Result<(SimplexVector, SimplexVector), BackwardError> {
    let rho = witness.rho.clone();
    let weights: Vec<f64> = rho.as_slice().iter().zip(witness.f.as_slice()).map(|(r, f)| r * (1.0 + amplitude * f)).collect();
    let mu = SimplexVector::normalized(weights).map_err(SimError::from)?;
    Ok((mu, rho))
}

#[derive(Debug, Clone, PartialEq)]
pub struct BackwardMapEstimate {
    pub y0: FunctionVector,
    pub stderr: Vec<f64>,
    /// Sample variance of `gamma_T(X_T)` per starting state.
    pub sample_var: Vec<f64>,
    pub horizon: f64,
    pub inner_paths: usize,
    pub nu: SimplexVector,
    pub floor_hits: usize,
}

/// `y0(x)` by averaging `gamma_T(X_T)` over `n_per_state` paths with `X_0 = x`.
pub fn estimate_y0(setup: &BackwardSetup, n_per_state: usize) -> Result<BackwardMapEstimate, BackwardError> {
    if n_per_state == 0 {
        return Err(BackwardError::InvalidSpec("n_per_state must be at least 1".into()));
    }
    let sim = setup.simulator()?;
    let d = setup.model.states();
    let n_steps = setup.grid.n_steps();
    let mut y0 = Vec::with_capacity(d);
    let mut stderr = Vec::with_capacity(d);
    let mut sample_var = Vec::with_capacity(d);
    let mut floor_hits = 0;
    for x in 0..d {
        let samples: Vec<Result<(f64, usize), SimError>> = (0..n_per_state)
            .into_par_iter()
            .map(|i| {
                let mut rng = stream_rng(setup.seed, &[setup.stream_tag, TAG_Y0, x as u64, i as u64]);
                let (xt, pi_mu, pi_nu) = sim.run(Start::Fixed(x), n_steps, &mut rng, |_| {})?;
                let (gamma, hits) = likelihood_ratio(&pi_mu, &pi_nu);
                Ok((gamma[xt], hits))
            })
            .collect();
        let mut values = Vec::with_capacity(n_per_state);
        for s in samples {
            let (v, h) = s?;
            values.push(v);
            floor_hits += h;
        }
        let est = McEstimate::from_samples(&values);
        y0.push(est.value);
        stderr.push(est.stderr);
        sample_var.push(est.stderr * est.stderr * n_per_state as f64);
    }
    Ok(BackwardMapEstimate {
        y0: FunctionVector::new(y0),
        stderr,
        sample_var,
        horizon: setup.grid.horizon(),
        inner_paths: n_per_state,
        nu: setup.nu.clone(),
        floor_hits,
    })
}

/// `var^nu(y0(X_0)) = sum_x nu(x) (y0(x) - 1)^2`.
pub fn variance_y0(y0: &FunctionVector, nu: &SimplexVector) -> f64 {
    y0.as_slice().iter().zip(nu.as_slice()).map(|(y, w)| w * (y - 1.0) * (y - 1.0)).sum()
}

/// Plug-in variance with the `O(1/n)` noise inflation removed, and its
/// standard error from the Gaussian moments of each `y0(x)` estimate.
pub fn variance_y0_debiased(est: &BackwardMapEstimate) -> McEstimate {
    let mut value = variance_y0(&est.y0, &est.nu);
    let mut se2 = 0.0;
    for x in 0..est.nu.len() {
        let w = est.nu[x];
        let s2 = est.stderr[x] * est.stderr[x];
        let dev = est.y0[x] - 1.0;
        value -= w * s2;
        se2 += w * w * (4.0 * dev * dev * s2 + 2.0 * s2 * s2);
    }
    McEstimate { value, stderr: se2.sqrt() }
}

/// `nu(y0)` with its standard error; should be 1.
pub fn normalization(est: &BackwardMapEstimate) -> McEstimate {
    weighted_mean(est, &est.nu)
}

fn weighted_mean(est: &BackwardMapEstimate, w: &SimplexVector) -> McEstimate {
    let value = est.y0.as_slice().iter().zip(w.as_slice()).map(|(y, w)| w * y).sum();
    let se2: f64 = est.stderr.iter().zip(w.as_slice()).map(|(s, w)| w * w * s * s).sum();
    McEstimate { value, stderr: se2.sqrt() }
}

fn terminal_chi2(setup: &BackwardSetup, prior: &SimplexVector, tag: u64, n_paths: usize) -> Result<(McEstimate, usize), BackwardError> {
    if n_paths == 0 {
        return Err(BackwardError::InvalidSpec("n_paths must be at least 1".into()));
    }
    let sim = setup.simulator()?;
    let n_steps = setup.grid.n_steps();
    let samples: Vec<Result<(f64, usize), SimError>> = (0..n_paths)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream_rng(setup.seed, &[setup.stream_tag, tag, i as u64]);
            let (_, pi_mu, pi_nu) = sim.run(Start::Sample(prior.as_slice()), n_steps, &mut rng, |_| {})?;
            Ok(chi_square_floored(&pi_mu, &pi_nu))
        })
        .collect();
    let mut values = Vec::with_capacity(n_paths);
    let mut hits = 0;
    for s in samples {
        let (v, h) = s?;
        values.push(v);
        hits += h;
    }
    Ok((McEstimate::from_samples(&values), hits))
}

/// `var^nu(gamma_T(X_T))`. Conditioning on the observations turns
/// `(gamma_T(X_T) - 1)^2` into `chi2(pi_T^mu | pi_T^nu)`, which is averaged
/// over paths with `X_0 ~ nu`.
pub fn variance_gamma_t(setup: &BackwardSetup, n_paths: usize) -> Result<McEstimate, BackwardError> {
    let nu = setup.nu.clone();
    Ok(terminal_chi2(setup, &nu, TAG_GAMMA, n_paths)?.0)
}

/// `E^mu(chi2(pi_T^mu | pi_T^nu))` from paths with `X_0 ~ mu`.
pub fn expected_chi2_t(setup: &BackwardSetup, n_paths: usize) -> Result<McEstimate, BackwardError> {
    let mu = setup.mu.clone();
    Ok(terminal_chi2(setup, &mu, TAG_CHI2, n_paths)?.0)
}

fn combined(a: f64, b: f64) -> f64 {
    (a * a + b * b).sqrt()
}

/// Non-expansiveness `var^nu(y0(X_0)) <= var^nu(gamma_T(X_T))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct JensenCheck {
    pub lhs: McEstimate,
    pub rhs: McEstimate,
    pub pass: bool,
}

pub fn jensen_check(est: &BackwardMapEstimate, var_gamma: McEstimate) -> JensenCheck {
    let lhs = variance_y0_debiased(est);
    let pass = lhs.value <= var_gamma.value + 3.0 * combined(lhs.stderr, var_gamma.stderr) + ROUND_OFF;
    JensenCheck { lhs, rhs: var_gamma, pass }
}

/// `E^mu(chi2(pi_T^mu | pi_T^nu)) = mu(y0) - 1`, compared through a z-score.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct IdentityCheck {
    pub lhs: McEstimate,
    pub rhs: McEstimate,
    pub z_score: f64,
}

pub fn chisq_identity_check(est: &BackwardMapEstimate, mu: &SimplexVector, chi2_mu: McEstimate) -> IdentityCheck {
    let m = weighted_mean(est, mu);
    let rhs = McEstimate { value: m.value - 1.0, stderr: m.stderr };
    let gap = (chi2_mu.value - rhs.value).abs();
    let se = combined(chi2_mu.stderr, rhs.stderr);
    // The floor keeps round-off from producing huge scores when both sides are 0.
    let z_score = gap / se.max(ROUND_OFF);
    IdentityCheck { lhs: chi2_mu, rhs, z_score }
}

/// `E^mu(chi2_T)^2 <= var^nu(y0(X_0)) chi2(mu | nu)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CauchySchwarzCheck {
    pub lhs_squared: f64,
    pub bound: f64,
    pub relative_stderr: f64,
    pub pass: bool,
}

pub fn cauchy_schwarz_check(est: &BackwardMapEstimate, chi2_mu: McEstimate, static_chi2: f64) -> CauchySchwarzCheck {
    let var = variance_y0_debiased(est);
    let lhs_squared = chi2_mu.value * chi2_mu.value;
    let bound = var.value.max(0.0) * static_chi2;
    let rel = |se: f64, v: f64| if v.abs() > 0.0 { se / v.abs() } else { 0.0 };
    let relative_stderr = combined(2.0 * rel(chi2_mu.stderr, chi2_mu.value), rel(var.stderr, var.value));
    let pass = lhs_squared <= bound * (1.0 + 3.0 * relative_stderr) + ROUND_OFF;
    CauchySchwarzCheck { lhs_squared, bound, relative_stderr, pass }
}

/// Sizes of a nested Monte-Carlo run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NestedMcSpec {
    pub checkpoint_times: Vec<f64>,
    pub outer_paths: usize,
    pub inner_paths: usize,
    pub step_budget: u64,
}

impl NestedMcSpec {
    /// Checkpoints `{0, T/4, T/2, 3T/4, T}` with 200 outer and 200 inner paths.
    pub fn standard(grid: &TimeGrid) -> Self {
        let t = grid.horizon();
        Self {
            checkpoint_times: [0.0, 0.25, 0.5, 0.75, 1.0].iter().map(|q| grid.time(grid.index_of(q * t))).collect(),
            outer_paths: 200,
            inner_paths: 200,
            step_budget: DEFAULT_STEP_BUDGET,
        }
    }

    fn indices(&self, grid: &TimeGrid) -> Result<Vec<usize>, BackwardError> {
        if self.outer_paths == 0 || self.inner_paths == 0 {
            return Err(BackwardError::InvalidSpec("outer and inner path counts must be at least 1".into()));
        }
        let mut out = Vec::with_capacity(self.checkpoint_times.len());
        for &t in &self.checkpoint_times {
            let k = grid.index_of(t);
            if t < 0.0 || (grid.time(k) - t).abs() > 1e-9 * grid.horizon().max(1.0) {
                return Err(BackwardError::InvalidSpec(format!("checkpoint {t} is not on the grid")));
            }
            if out.last().is_some_and(|&prev| prev >= k) {
                return Err(BackwardError::InvalidSpec("checkpoints must be strictly increasing".into()));
            }
            out.push(k);
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Checkpoint {
    pub t: f64,
    /// Debiased `var^nu(Y_t(X_t))` around its known mean 1.
    pub var: f64,
    pub stderr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NestedResult {
    pub checkpoints: Vec<Checkpoint>,
    /// `samples[c][i]`: debiased `(Y_t(X_t) - 1)^2` on outer path `i`.
    #[serde(skip)]
    pub samples: Vec<Vec<f64>>,
}

struct Snapshot {
    x: usize,
    pi_mu: Vec<f64>,
    pi_nu: Vec<f64>,
}

/// Nested estimate of `Y_t(X_t)` along outer paths with `X_0 ~ nu`.
///
/// At each checkpoint the observation history and both filters are frozen,
/// and `inner_paths` fresh continuations from the realised `X_t` average
/// `gamma_T(X_T)`. The squared deviation from 1 is debiased by the inner
/// sample variance over `inner_paths`.
pub fn nested_y_t(setup: &BackwardSetup, spec: &NestedMcSpec) -> Result<NestedResult, BackwardError> {
    let idx = spec.indices(&setup.grid)?;
    let n_steps = setup.grid.n_steps();
    let inner_steps: u64 = idx.iter().map(|&k| (n_steps - k) as u64).sum::<u64>().max(1);
    let needed = (spec.outer_paths as u64).saturating_mul(spec.inner_paths as u64).saturating_mul(inner_steps);
    if needed > spec.step_budget {
        return Err(BackwardError::BudgetExceeded { needed, budget: spec.step_budget });
    }
    let sim = setup.simulator()?;
    let per_outer: Vec<Result<Vec<f64>, SimError>> = (0..spec.outer_paths)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream_rng(setup.seed, &[setup.stream_tag, TAG_NESTED, i as u64]);
            let mut snaps = Vec::with_capacity(idx.len());
            let mut next = 0;
            sim.run(Start::Sample(setup.nu.as_slice()), n_steps, &mut rng, |s| {
                if next < idx.len() && s.k == idx[next] {
                    snaps.push(Snapshot { x: s.x, pi_mu: s.pi_mu.to_vec(), pi_nu: s.pi_nu.to_vec() });
                    next += 1;
                }
            })?;
            snaps
                .iter()
                .zip(&idx)
                .enumerate()
                .map(|(c, (snap, &k))| {
                    let inner: Vec<Result<f64, SimError>> = (0..spec.inner_paths)
                        .into_par_iter()
                        .map(|j| {
                            let mut rng = stream_rng(setup.seed, &[setup.stream_tag, TAG_NESTED, i as u64, c as u64, j as u64]);
                            let mut pi_mu = snap.pi_mu.clone();
                            let mut pi_nu = snap.pi_nu.clone();
                            let xt = sim.advance(snap.x, &mut pi_mu, &mut pi_nu, n_steps - k, &mut rng, |_| {})?;
                            Ok(likelihood_ratio(&pi_mu, &pi_nu).0[xt])
                        })
                        .collect();
                    let values = inner.into_iter().collect::<Result<Vec<f64>, _>>()?;
                    let est = McEstimate::from_samples(&values);
                    let dev = est.value - 1.0;
                    Ok(dev * dev - est.stderr * est.stderr)
                })
                .collect()
        })
        .collect();
    let mut samples = vec![Vec::with_capacity(spec.outer_paths); idx.len()];
    for r in per_outer {
        for (c, v) in r?.into_iter().enumerate() {
            samples[c].push(v);
        }
    }
    let checkpoints = idx
        .iter()
        .zip(&samples)
        .map(|(&k, s)| {
            let e = McEstimate::from_samples(s);
            Checkpoint { t: setup.grid.time(k), var: e.value, stderr: e.stderr }
        })
        .collect();
    Ok(NestedResult { checkpoints, samples })
}

/// Whether consecutive checkpoint variances never drop by more than three
/// combined standard errors.
pub fn is_monotone(result: &NestedResult) -> bool {
    result.checkpoints.windows(2).all(|w| w[1].var >= w[0].var - 3.0 * combined(w[0].stderr, w[1].stderr))
}

/// `var^nu(gamma_T(X_T)) - var^nu(Y_0(X_0))`, the energy dissipated over
/// `[0, T]`. Paired over outer paths.
pub fn integrated_energy(result: &NestedResult, horizon: f64) -> Result<McEstimate, BackwardError> {
    let find = |t: f64| {
        result
            .checkpoints
            .iter()
            .position(|c| (c.t - t).abs() <= 1e-9 * horizon.max(1.0))
            .ok_or(BackwardError::MissingCheckpoint(t))
    };
    let (first, last) = (find(0.0)?, find(horizon)?);
    let diffs: Vec<f64> = result.samples[last].iter().zip(&result.samples[first]).map(|(b, a)| b - a).collect();
    Ok(McEstimate::from_samples(&diffs))
}

/// `(1/T) log(var^nu(gamma_T(X_T)) / var^nu(y0(X_0)))`.
pub fn empirical_rate_bound(horizon: f64, var_gamma: McEstimate, var_y0: McEstimate) -> Result<f64, BackwardError> {
    for v in [var_gamma, var_y0] {
        if v.value <= 3.0 * v.stderr || v.value <= 0.0 {
            return Err(BackwardError::VarianceIndistinguishableFromZero { value: v.value, stderr: v.stderr });
        }
    }
    Ok((var_gamma.value / var_y0.value).ln() / horizon)
}

/// Mean of `pi_t^rho(f g)` over paths with `X_0 ~ rho`, for each `g` in
/// `basis`, at each checkpoint.
pub fn claim2_statistic(
    model: &FiniteHmm,
    witness: &Witness,
    basis: &[FunctionVector],
    grid: &TimeGrid,
    checkpoint_times: &[f64],
    n_paths: usize,
    seed: u64,
) -> Result<Vec<(f64, Vec<McEstimate>)>, BackwardError> {
    let spec = NestedMcSpec { checkpoint_times: checkpoint_times.to_vec(), outer_paths: n_paths, inner_paths: 1, step_budget: u64::MAX };
    let idx = spec.indices(grid)?;
    let sim = TwinSimulator::new(model, &witness.rho, &witness.rho, grid.dt(), FilterScheme::default())?;
    let fg: Vec<FunctionVector> = basis.iter().map(|g| witness.f.product(g)).collect();
    let per_path: Vec<Result<Vec<Vec<f64>>, SimError>> = (0..n_paths)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream_rng(seed, &[TAG_CLAIM2, i as u64]);
            let mut rows = Vec::with_capacity(idx.len());
            let mut next = 0;
            sim.run(Start::Sample(witness.rho.as_slice()), grid.n_steps(), &mut rng, |s| {
                if next < idx.len() && s.k == idx[next] {
                    rows.push(fg.iter().map(|v| v.as_slice().iter().zip(s.pi_mu).map(|(a, p)| a * p).sum()).collect());
                    next += 1;
                }
            })?;
            Ok(rows)
        })
        .collect();
    let per_path = per_path.into_iter().collect::<Result<Vec<_>, _>>()?;
    Ok(idx
        .iter()
        .enumerate()
        .map(|(c, &k)| {
            let stats = (0..fg.len())
                .map(|g| McEstimate::from_samples(&per_path.iter().map(|p| p[c][g]).collect::<Vec<_>>()))
                .collect();
            (grid.time(k), stats)
        })
        .collect())
}

/// Sample sizes for [`backward_report`].
#[derive(Debug, Clone, PartialEq)]
pub struct BackwardSizes {
    pub n_per_state: usize,
    pub n_paths: usize,
    pub nested: Option<NestedMcSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BackwardReport {
    pub horizon: f64,
    pub y0: Vec<f64>,
    pub stderr: Vec<f64>,
    pub nu_y0: McEstimate,
    pub var_y0: McEstimate,
    pub var_gamma_t: McEstimate,
    pub chi2_mu_t: McEstimate,
    pub static_chi2: f64,
    pub identity_z: f64,
    pub jensen_pass: bool,
    /// `var^nu(y0(X_0))` lies more than 3 standard errors below
    /// `var^nu(gamma_T(X_T))`.
    pub variance_decay: bool,
    pub cauchy_schwarz: CauchySchwarzCheck,
    pub checkpoints: Vec<Checkpoint>,
    pub monotone: Option<bool>,
    pub integrated_energy: Option<McEstimate>,
    pub empirical_rate_bound: Option<f64>,
    pub floor_hits: usize,
}

impl BackwardReport {
    /// All guaranteed properties hold within their tolerances.
    pub fn all_pass(&self) -> bool {
        let norm_ok = (self.nu_y0.value - 1.0).abs() <= 3.0 * self.nu_y0.stderr + 1e-12;
        norm_ok && self.jensen_pass && self.identity_z <= 3.0 && self.cauchy_schwarz.pass && self.monotone != Some(false)
    }
}

/// Runs the backward-map estimate and every check on one setup.
pub fn backward_report(setup: &BackwardSetup, sizes: &BackwardSizes) -> Result<BackwardReport, BackwardError> {
    let est = estimate_y0(setup, sizes.n_per_state)?;
    let (var_gamma, hits_nu) = terminal_chi2(setup, &setup.nu, TAG_GAMMA, sizes.n_paths)?;
    let (chi2_mu, hits_mu) = terminal_chi2(setup, &setup.mu, TAG_CHI2, sizes.n_paths)?;
    let static_chi2 = setup.static_chi_square()?;
    let var_y0 = variance_y0_debiased(&est);
    let jensen = jensen_check(&est, var_gamma);
    let identity = chisq_identity_check(&est, &setup.mu, chi2_mu);
    let cauchy_schwarz = cauchy_schwarz_check(&est, chi2_mu, static_chi2);
    let (checkpoints, monotone, energy) = match &sizes.nested {
        Some(spec) => {
            let nested = nested_y_t(setup, spec)?;
            let energy = integrated_energy(&nested, setup.grid.horizon()).ok();
            (nested.checkpoints.clone(), Some(is_monotone(&nested)), energy)
        }
        None => (Vec::new(), None, None),
    };
    Ok(BackwardReport {
        horizon: setup.grid.horizon(),
        y0: est.y0.to_vec(),
        stderr: est.stderr.clone(),
        nu_y0: normalization(&est),
        var_y0,
        var_gamma_t: var_gamma,
        chi2_mu_t: chi2_mu,
        static_chi2,
        identity_z: identity.z_score,
        jensen_pass: jensen.pass,
        variance_decay: var_y0.value < var_gamma.value - 3.0 * combined(var_y0.stderr, var_gamma.stderr),
        cauchy_schwarz,
        checkpoints,
        monotone,
        integrated_energy: energy,
        empirical_rate_bound: empirical_rate_bound(setup.grid.horizon(), var_gamma, var_y0).ok(),
        floor_hits: est.floor_hits + hits_nu + hits_mu,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::presets::{benchmark_model, benchmark_mu, benchmark_nu, ObservationChoice};
    use crate::structure::undetectable_witness;

    fn setup(eps: f64, h: ObservationChoice, horizon: f64, seed: u64) -> BackwardSetup {
        BackwardSetup::new(benchmark_model(eps, h), benchmark_mu(), benchmark_nu(), TimeGrid::new(horizon, 0.01).unwrap(), seed)
    }

    #[test]
    fn zero_horizon_gives_prior_ratio() {
        let s = setup(0.1, ObservationChoice::H3, 0.0, 1);
        let est = estimate_y0(&s, 5).unwrap();
        for x in 0..4 {
            assert!((est.y0[x] - benchmark_mu()[x] / benchmark_nu()[x]).abs() < 1e-12);
            assert_eq!(est.stderr[x], 0.0);
        }
        assert!((normalization(&est).value - 1.0).abs() < 1e-12);
    }

    #[test]
    fn forced_start_does_not_move_nu_filter() {
        // With A = 0 and H = 0 nothing is learned: gamma_T = mu/nu for every
        // start, which only holds if both filters start at their priors.
        let model = FiniteHmm::from_rows(&[vec![0.0, 0.0], vec![0.0, 0.0]], &[vec![0.0], vec![0.0]]).unwrap();
        let mu = SimplexVector::new(vec![0.8, 0.2]).unwrap();
        let nu = SimplexVector::new(vec![0.5, 0.5]).unwrap();
        let s = BackwardSetup::new(model, mu, nu, TimeGrid::new(1.0, 0.1).unwrap(), 2);
        let est = estimate_y0(&s, 4).unwrap();
        assert!((est.y0[0] - 1.6).abs() < 1e-12);
        assert!((est.y0[1] - 0.4).abs() < 1e-12);
    }

    #[test]
    fn equal_priors_are_trivial() {
        let mut s = setup(0.1, ObservationChoice::H3, 1.0, 3);
        s.mu = s.nu.clone();
        let sizes = BackwardSizes { n_per_state: 20, n_paths: 20, nested: None };
        let r = backward_report(&s, &sizes).unwrap();
        assert!(r.y0.iter().all(|y| (y - 1.0).abs() < 1e-12));
        assert!(r.var_y0.value.abs() < 1e-20);
        assert!(r.chi2_mu_t.value.abs() < 1e-12);
        assert!(r.identity_z < 1.0);
        assert!(r.jensen_pass && r.cauchy_schwarz.pass);
        assert!(r.empirical_rate_bound.is_none());
    }

    #[test]
    fn variance_arithmetic() {
        let nu = SimplexVector::new(vec![0.5, 0.5]).unwrap();
        assert!((variance_y0(&FunctionVector::new(vec![1.2, 0.8]), &nu) - 0.04).abs() < 1e-15);
        assert_eq!(variance_y0(&FunctionVector::constant(2, 1.0), &nu), 0.0);
    }

    #[test]
    fn identity_and_inequalities_hold() {
        let s = setup(0.1, ObservationChoice::H3, 1.0, 4);
        let sizes = BackwardSizes { n_per_state: 1500, n_paths: 3000, nested: None };
        let r = backward_report(&s, &sizes).unwrap();
        assert!((r.nu_y0.value - 1.0).abs() <= 3.0 * r.nu_y0.stderr, "{:?}", r.nu_y0);
        assert!(r.identity_z <= 4.0, "z = {}", r.identity_z);
        assert!(r.jensen_pass);
        assert!(r.cauchy_schwarz.pass);
        assert!(r.y0.iter().all(|&y| y >= 0.0));
    }

    #[test]
    fn nested_endpoints() {
        let s = setup(0.1, ObservationChoice::H3, 0.5, 5);
        let spec = NestedMcSpec { checkpoint_times: vec![0.0, 0.5], outer_paths: 40, inner_paths: 30, step_budget: DEFAULT_STEP_BUDGET };
        let r = nested_y_t(&s, &spec).unwrap();
        // At t = T the continuation is empty, so there is no inner noise.
        assert_eq!(r.checkpoints.len(), 2);
        assert!(r.checkpoints[1].var > 0.0);
        let small = NestedMcSpec { step_budget: 10, ..spec.clone() };
        assert!(matches!(nested_y_t(&s, &small), Err(BackwardError::BudgetExceeded { .. })));
        let off_grid = NestedMcSpec { checkpoint_times: vec![0.003], ..spec };
        assert!(matches!(nested_y_t(&s, &off_grid), Err(BackwardError::InvalidSpec(_))));
    }

    #[test]
    fn witness_priors_freeze_the_ratio() {
        let model = benchmark_model(0.0, ObservationChoice::H1);
        let w = undetectable_witness(&model).unwrap();
        let (mu, nu) = witness_priors(&w, 0.5).unwrap();
        let expected = [0.5, 0.25, 1.0 / 6.0, 1.0 / 12.0];
        for x in 0..4 {
            assert!((mu[x] - expected[x]).abs() < 1e-12);
        }
        let s = BackwardSetup::new(model, mu, nu, TimeGrid::new(2.0, 0.01).unwrap(), 6);
        let est = estimate_y0(&s, 50).unwrap();
        let v = variance_y0_debiased(&est);
        assert!((v.value - 0.25).abs() < 1e-6, "{v:?}");
    }

    #[test]
    fn rate_bound_needs_signal() {
        let zero = McEstimate { value: 0.0, stderr: 0.0 };
        let one = McEstimate { value: 1.0, stderr: 0.01 };
        assert!(matches!(empirical_rate_bound(1.0, zero, one), Err(BackwardError::VarianceIndistinguishableFromZero { .. })));
        assert!((empirical_rate_bound(2.0, McEstimate { value: 1.0, stderr: 0.0 }, McEstimate { value: (-1.0f64).exp(), stderr: 0.0 }).unwrap() - 0.5).abs() < 1e-12);
    }
}
