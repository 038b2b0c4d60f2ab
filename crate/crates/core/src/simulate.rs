//! Sampling of the hidden chain and its white-noise observations, and
//! time stepping of the Wonham (Kushner-Stratonovich) filter.
//!
//! The observation increment over `[t_k, t_k + dt]` is
//! `dZ_k = h(X_{t_k}) dt + sqrt(dt) xi_k` with `xi_k ~ N(0, I_m)`.
//! The chain itself is sampled exactly (exponential holding times) and read
//! out on the grid.
//!
//! Two filter schemes are available. [`FilterScheme::ZakaiSplit`] predicts
//! with `I + dt A^T`, multiplies by the likelihood
//! `exp(h^T dZ - |h|^2 dt / 2)` and normalises; it stays on the simplex
//! without clipping. [`FilterScheme::KsEuler`] is the explicit Euler step of
//! the Kushner-Stratonovich equation followed by clipping and
//! renormalisation.

use std::fmt::Write as _;

use rand::Rng;
use rand_distr::{Exp1, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{FiniteHmm, FunctionVector, ModelError, SimplexVector};
use crate::rng::PathRng;

/// Filter weights below this are treated as zero when forming likelihood ratios.
pub const RATIO_FLOOR: f64 = 1e-12;
/// Normaliser below which a filter step is declared degenerate.
pub const DEGENERATE_NORMALIZER: f64 = 1e-300;
/// Step used in the benchmark experiments.
pub const DEFAULT_DT: f64 = 0.005;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("invalid time grid: {0}")]
    InvalidGrid(String),
    #[error("step {dt} too large for exit rate {rate}: dt * rate must be <= 1")]
    StepTooLarge { dt: f64, rate: f64 },
    #[error("filter normaliser collapsed ({normalizer:e})")]
    DegenerateFilter { normalizer: f64 },
    #[error("mu is not absolutely continuous with respect to nu (state {state})")]
    PriorNotAbsolutelyContinuous { state: usize },
    #[error("observation increment has length {found}, expected {expected}")]
    ObservationDim { expected: usize, found: usize },
}

/// Uniform grid `t_k = k dt`, `k = 0..=n_steps`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    horizon: f64,
    dt: f64,
    n_steps: usize,
}

impl TimeGrid {
    /// A horizon of zero gives a grid with no steps.
    pub fn new(horizon: f64, dt: f64) -> Result<Self, SimError> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(SimError::InvalidGrid(format!("dt must be positive, got {dt}")));
        }
        if !(horizon >= 0.0 && horizon.is_finite()) {
            return Err(SimError::InvalidGrid(format!("horizon must be non-negative, got {horizon}")));
        }
        let n_steps = (horizon / dt).round() as usize;
        if (n_steps as f64 * dt - horizon).abs() > 1e-12 * horizon.max(1.0) {
            return Err(SimError::InvalidGrid(format!("horizon {horizon} is not a multiple of dt {dt}")));
        }
        Ok(Self { horizon, dt, n_steps })
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn time(&self, k: usize) -> f64 {
        k as f64 * self.dt
    }

    pub fn times(&self) -> Vec<f64> {
        (0..=self.n_steps).map(|k| self.time(k)).collect()
    }

    /// Index of the grid point nearest to `t`.
    pub fn index_of(&self, t: f64) -> usize {
        ((t / self.dt).round() as usize).min(self.n_steps)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FilterScheme {
    #[default]
    ZakaiSplit,
    KsEuler,
}

/// Precomputed per-step filter operator for one model and step size.
#[derive(Debug, Clone)]
pub(crate) struct FilterKernel {
    d: usize,
    m: usize,
    dt: f64,
    scheme: FilterScheme,
    /// `(I + dt A^T)` row-major.
    predict: Vec<f64>,
    /// `A^T` row-major.
    rates_t: Vec<f64>,
    /// `H` row-major, `d x m`.
    h: Vec<f64>,
    half_h2: Vec<f64>,
}

impl FilterKernel {
    pub(crate) fn new(model: &FiniteHmm, dt: f64, scheme: FilterScheme) -> Result<Self, SimError> {
        let d = model.states();
        let m = model.obs_dim();
        let a = model.rates();
        let max_rate = (0..d).map(|i| -a[(i, i)]).fold(0.0, f64::max);
        if scheme == FilterScheme::ZakaiSplit && dt * max_rate > 1.0 {
            return Err(SimError::StepTooLarge { dt, rate: max_rate });
        }
        let mut predict = vec![0.0; d * d];
        let mut rates_t = vec![0.0; d * d];
        for i in 0..d {
            for j in 0..d {
                rates_t[i * d + j] = a[(j, i)];
                predict[i * d + j] = if i == j { 1.0 } else { 0.0 } + dt * a[(j, i)];
            }
        }
        let hm = model.observation();
        let h: Vec<f64> = (0..d).flat_map(|i| (0..m).map(move |j| hm[(i, j)])).collect();
        let half_h2 = (0..d)
            .map(|i| 0.5 * (0..m).map(|j| hm[(i, j)] * hm[(i, j)]).sum::<f64>())
            .collect();
        Ok(Self { d, m, dt, scheme, predict, rates_t, h, half_h2 })
    }

    /// Advances `pi` in place by one step. `scratch` must have length `d + m`.
    pub(crate) fn step(&self, pi: &mut [f64], scratch: &mut [f64], dz: &[f64]) -> Result<(), SimError> {
        match self.scheme {
            FilterScheme::ZakaiSplit => self.zakai_step(pi, scratch, dz),
            FilterScheme::KsEuler => self.euler_step(pi, scratch, dz),
        }
    }

    fn zakai_step(&self, pi: &mut [f64], scratch: &mut [f64], dz: &[f64]) -> Result<(), SimError> {
        let (d, m) = (self.d, self.m);
        for i in 0..d {
            let row = &self.predict[i * d..(i + 1) * d];
            scratch[i] = row.iter().zip(pi.iter()).map(|(p, q)| p * q).sum();
        }
        // log-likelihood per state, shifted by its maximum before exponentiating
        let mut max_log = f64::NEG_INFINITY;
        for i in 0..d {
            let hi = &self.h[i * m..(i + 1) * m];
            let log = hi.iter().zip(dz).map(|(a, b)| a * b).sum::<f64>() - self.half_h2[i] * self.dt;
            pi[i] = log;
            max_log = max_log.max(log);
        }
        let mut total = 0.0;
        for i in 0..d {
            pi[i] = scratch[i].max(0.0) * (pi[i] - max_log).exp();
            total += pi[i];
        }
        normalize(pi, total)
    }

    fn euler_step(&self, pi: &mut [f64], scratch: &mut [f64], dz: &[f64]) -> Result<(), SimError> {
        let (d, m) = (self.d, self.m);
        let (scratch, pi_h) = scratch.split_at_mut(d);
        for (j, ph) in pi_h.iter_mut().enumerate() {
            *ph = (0..d).map(|i| pi[i] * self.h[i * m + j]).sum();
        }
        for i in 0..d {
            let row = &self.rates_t[i * d..(i + 1) * d];
            let drift: f64 = row.iter().zip(pi.iter()).map(|(a, p)| a * p).sum();
            let innov: f64 = (0..m)
                .map(|j| (self.h[i * m + j] - pi_h[j]) * (dz[j] - pi_h[j] * self.dt))
                .sum();
            scratch[i] = pi[i] + drift * self.dt + pi[i] * innov;
        }
        let mut total = 0.0;
        for i in 0..d {
            pi[i] = scratch[i].max(0.0);
            total += pi[i];
        }
        normalize(pi, total)
    }
}

fn normalize(pi: &mut [f64], total: f64) -> Result<(), SimError> {
    if !(total > DEGENERATE_NORMALIZER) || !total.is_finite() {
        return Err(SimError::DegenerateFilter { normalizer: total });
    }
    for p in pi.iter_mut() {
        *p /= total;
    }
    Ok(())
}

/// One filter update from `pi` given the increment `dz` over a step `dt`.
pub fn filter_step(
    model: &FiniteHmm,
    pi: &SimplexVector,
    dz: &[f64],
    dt: f64,
    scheme: FilterScheme,
) -> Result<SimplexVector, SimError> {
    model.check_len(pi.len())?;
    if dz.len() != model.obs_dim() {
        return Err(SimError::ObservationDim { expected: model.obs_dim(), found: dz.len() });
    }
    let kernel = FilterKernel::new(model, dt, scheme)?;
    let mut state = pi.to_vec();
    let mut scratch = vec![0.0; pi.len() + model.obs_dim()];
    kernel.step(&mut state, &mut scratch, dz)?;
    Ok(SimplexVector::from_raw(nalgebra::DVector::from_vec(state)))
}

/// Exact jump sampler for the chain.
#[derive(Debug, Clone)]
pub(crate) struct JumpSampler {
    exit: Vec<f64>,
    /// Per state: `(target, cumulative probability)`.
    targets: Vec<Vec<(usize, f64)>>,
}

impl JumpSampler {
    pub(crate) fn new(model: &FiniteHmm) -> Self {
        let a = model.rates();
        let d = model.states();
        let mut exit = Vec::with_capacity(d);
        let mut targets = Vec::with_capacity(d);
        for i in 0..d {
            let rate: f64 = (0..d).filter(|&j| j != i).map(|j| a[(i, j)]).sum();
            let mut cum = 0.0;
            let mut row = Vec::new();
            for j in (0..d).filter(|&j| j != i && a[(i, j)] > 0.0) {
                cum += a[(i, j)] / rate;
                row.push((j, cum));
            }
            if let Some(last) = row.last_mut() {
                last.1 = 1.0;
            }
            exit.push(rate);
            targets.push(row);
        }
        Self { exit, targets }
    }

    fn holding(&self, state: usize, rng: &mut PathRng) -> f64 {
        let rate = self.exit[state];
        if rate > 0.0 {
            let e: f64 = rng.sample(Exp1);
            e / rate
        } else {
            f64::INFINITY
        }
    }

    fn jump(&self, state: usize, rng: &mut PathRng) -> usize {
        let u: f64 = rng.random();
        let row = &self.targets[state];
        row.iter().find(|(_, c)| u < *c).map_or(row[row.len() - 1].0, |(j, _)| *j)
    }

    /// Fills `out` with the states at `k dt`, `k = 0..=n_steps`, starting from `x0`.
    pub(crate) fn segment(&self, x0: usize, n_steps: usize, dt: f64, rng: &mut PathRng, out: &mut Vec<usize>) {
        out.clear();
        out.push(x0);
        let mut state = x0;
        let mut next_jump = self.holding(state, rng);
        for k in 1..=n_steps {
            let t = k as f64 * dt;
            while next_jump <= t {
                state = self.jump(state, rng);
                next_jump += self.holding(state, rng);
            }
            out.push(state);
        }
    }
}

pub(crate) fn sample_state(weights: &[f64], rng: &mut PathRng) -> usize {
    let u: f64 = rng.random();
    let mut cum = 0.0;
    let mut last = 0;
    for (i, w) in weights.iter().enumerate() {
        if *w > 0.0 {
            cum += w;
            last = i;
            if u < cum {
                return i;
            }
        }
    }
    last
}

/// Samples `X` on the grid with `X_0 ~ prior`.
pub fn sample_ctmc(model: &FiniteHmm, prior: &SimplexVector, grid: &TimeGrid, rng: &mut PathRng) -> Result<Vec<usize>, SimError> {
    model.check_len(prior.len())?;
    let x0 = sample_state(prior.as_slice(), rng);
    let mut out = Vec::with_capacity(grid.n_steps() + 1);
    JumpSampler::new(model).segment(x0, grid.n_steps(), grid.dt(), rng, &mut out);
    Ok(out)
}

pub(crate) fn observation_increment(model: &FiniteHmm, x: usize, dt: f64, rng: &mut PathRng, out: &mut [f64]) {
    let h = model.observation();
    let sd = dt.sqrt();
    for (j, o) in out.iter_mut().enumerate() {
        let xi: f64 = rng.sample(StandardNormal);
        *o = h[(x, j)] * dt + sd * xi;
    }
}

/// Observation increments `dZ_k`, one `m`-vector per step.
pub fn sample_observations(model: &FiniteHmm, x_path: &[usize], grid: &TimeGrid, rng: &mut PathRng) -> Vec<Vec<f64>> {
    (0..grid.n_steps())
        .map(|k| {
            let mut dz = vec![0.0; model.obs_dim()];
            observation_increment(model, x_path[k], grid.dt(), rng, &mut dz);
            dz
        })
        .collect()
}

/// Floored likelihood ratio `dpi_mu / dpi_nu`.
///
/// States where `pi_nu < RATIO_FLOOR` get ratio 0; each such state that
/// still carries `pi_mu` mass above the floor counts as a floor hit. The
/// ratio is rescaled so that `pi_nu(gamma) = 1`.
pub fn likelihood_ratio(pi_mu: &[f64], pi_nu: &[f64]) -> (Vec<f64>, usize) {
    let mut hits = 0;
    let mut gamma: Vec<f64> = pi_mu
        .iter()
        .zip(pi_nu)
        .map(|(&p, &q)| {
            if q >= RATIO_FLOOR {
                p / q
            } else {
                if p > RATIO_FLOOR {
                    hits += 1;
                }
                0.0
            }
        })
        .collect();
    let total: f64 = gamma.iter().zip(pi_nu).map(|(g, q)| g * q).sum();
    if total > 0.0 {
        for g in gamma.iter_mut() {
            *g /= total;
        }
    }
    (gamma, hits)
}

/// One realisation of the chain and its observations together with both
/// filters run on the same increments.
#[derive(Debug, Clone, PartialEq)]
pub struct PathBundle {
    pub grid: TimeGrid,
    pub x_path: Vec<usize>,
    /// `dz[k]` is the increment over `[t_k, t_{k+1}]`.
    pub dz: Vec<Vec<f64>>,
    pub pi_mu: Vec<SimplexVector>,
    pub pi_nu: Vec<SimplexVector>,
    pub gamma_t: FunctionVector,
    pub floor_hits: usize,
    /// Stream address the path was drawn from, if known.
    pub stream: Vec<u64>,
}

impl PathBundle {
    /// Columnar CSV: `t,x,dz_1..dz_m,pi_mu_1..pi_mu_d,pi_nu_1..pi_nu_d`.
    /// Row `k` carries the increment that ended at `t_k` (zeros on row 0).
    pub fn to_csv(&self) -> String {
        let d = self.pi_mu.first().map_or(0, SimplexVector::len);
        let m = self.dz.first().map_or(0, Vec::len);
        let mut s = String::from("t,x");
        for j in 0..m {
            let _ = write!(s, ",dz_{}", j + 1);
        }
        for i in 0..d {
            let _ = write!(s, ",pi_mu_{}", i + 1);
        }
        for i in 0..d {
            let _ = write!(s, ",pi_nu_{}", i + 1);
        }
        s.push('\n');
        for k in 0..=self.grid.n_steps() {
            let _ = write!(s, "{:.16e},{}", self.grid.time(k), self.x_path[k]);
            for j in 0..m {
                let v = if k == 0 { 0.0 } else { self.dz[k - 1][j] };
                let _ = write!(s, ",{v:.16e}");
            }
            for v in self.pi_mu[k].as_slice().iter().chain(self.pi_nu[k].as_slice()) {
                let _ = write!(s, ",{v:.16e}");
            }
            s.push('\n');
        }
        s
    }
}

/// Shared machinery for twin-filter paths. Keeps the RNG draw order in one
/// place so the streamed statistics and [`run_twin_filters`] agree path by
/// path.
#[derive(Debug, Clone)]
pub(crate) struct TwinSimulator<'a> {
    pub(crate) model: &'a FiniteHmm,
    pub(crate) kernel: FilterKernel,
    jumps: JumpSampler,
    pub(crate) mu: Vec<f64>,
    pub(crate) nu: Vec<f64>,
    pub(crate) dt: f64,
}

/// Filter pair and chain state at one grid point.
pub(crate) struct TwinState<'s> {
    pub k: usize,
    pub x: usize,
    pub pi_mu: &'s [f64],
    pub pi_nu: &'s [f64],
    /// Increment that led to this point (empty at the start of a segment).
    pub dz: &'s [f64],
}

pub(crate) fn check_priors(mu: &SimplexVector, nu: &SimplexVector) -> Result<(), SimError> {
    match (0..mu.len()).find(|&i| mu[i] > 0.0 && nu[i] <= 0.0) {
        Some(state) => Err(SimError::PriorNotAbsolutelyContinuous { state }),
        None => Ok(()),
    }
}

impl<'a> TwinSimulator<'a> {
    pub(crate) fn new(
        model: &'a FiniteHmm,
        mu: &SimplexVector,
        nu: &SimplexVector,
        dt: f64,
        scheme: FilterScheme,
    ) -> Result<Self, SimError> {
        model.check_len(mu.len())?;
        model.check_len(nu.len())?;
        check_priors(mu, nu)?;
        Ok(Self {
            model,
            kernel: FilterKernel::new(model, dt, scheme)?,
            jumps: JumpSampler::new(model),
            mu: mu.to_vec(),
            nu: nu.to_vec(),
            dt,
        })
    }

    /// Runs `n_steps` from chain state `x0` and filters `(pi_mu, pi_nu)`,
    /// updated in place. `visit` sees every grid point including the first.
    /// Draw order: the whole chain segment, then one normal vector per step.
    pub(crate) fn advance<F>(
        &self,
        x0: usize,
        pi_mu: &mut [f64],
        pi_nu: &mut [f64],
        n_steps: usize,
        rng: &mut PathRng,
        mut visit: F,
    ) -> Result<usize, SimError>
    where
        F: FnMut(TwinState<'_>),
    {
        let d = self.model.states();
        let mut path = Vec::with_capacity(n_steps + 1);
        self.jumps.segment(x0, n_steps, self.dt, rng, &mut path);
        let mut scratch = vec![0.0; d + self.model.obs_dim()];
        let mut dz = vec![0.0; self.model.obs_dim()];
        visit(TwinState { k: 0, x: x0, pi_mu, pi_nu, dz: &[] });
        for k in 0..n_steps {
            observation_increment(self.model, path[k], self.dt, rng, &mut dz);
            self.kernel.step(pi_mu, &mut scratch, &dz)?;
            self.kernel.step(pi_nu, &mut scratch, &dz)?;
            visit(TwinState { k: k + 1, x: path[k + 1], pi_mu, pi_nu, dz: &dz });
        }
        Ok(path[n_steps])
    }

    /// Full path from the priors with `X_0 ~ sampling` (or fixed `X_0`).
    pub(crate) fn run<F>(&self, start: Start<'_>, n_steps: usize, rng: &mut PathRng, visit: F) -> Result<(usize, Vec<f64>, Vec<f64>), SimError>
    where
        F: FnMut(TwinState<'_>),
    {
        let x0 = match start {
            Start::Sample(w) => sample_state(w, rng),
            Start::Fixed(x) => x,
        };
        let mut pi_mu = self.mu.clone();
        let mut pi_nu = self.nu.clone();
        let xt = self.advance(x0, &mut pi_mu, &mut pi_nu, n_steps, rng, visit)?;
        Ok((xt, pi_mu, pi_nu))
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) enum Start<'w> {
    Sample(&'w [f64]),
    Fixed(usize),
}

/// Simulates one path with `X_0 ~ sampling_prior` and runs the filters from
/// `mu` and `nu` on the same observation increments.
pub fn run_twin_filters(
    model: &FiniteHmm,
    mu: &SimplexVector,
    nu: &SimplexVector,
    grid: &TimeGrid,
    sampling_prior: &SimplexVector,
    scheme: FilterScheme,
    rng: &mut PathRng,
) -> Result<PathBundle, SimError> {
    model.check_len(sampling_prior.len())?;
    let sim = TwinSimulator::new(model, mu, nu, grid.dt(), scheme)?;
    let n = grid.n_steps();
    let mut x_path = Vec::with_capacity(n + 1);
    let mut dz_path = Vec::with_capacity(n);
    let mut pi_mu = Vec::with_capacity(n + 1);
    let mut pi_nu = Vec::with_capacity(n + 1);
    let to_simplex = |v: &[f64]| SimplexVector::from_raw(nalgebra::DVector::from_column_slice(v));
    let (_, last_mu, last_nu) = sim.run(Start::Sample(sampling_prior.as_slice()), n, rng, |s| {
        x_path.push(s.x);
        if s.k > 0 {
            dz_path.push(s.dz.to_vec());
        }
        pi_mu.push(to_simplex(s.pi_mu));
        pi_nu.push(to_simplex(s.pi_nu));
    })?;
    let (gamma, floor_hits) = likelihood_ratio(&last_mu, &last_nu);
    Ok(PathBundle {
        grid: *grid,
        x_path,
        dz: dz_path,
        pi_mu,
        pi_nu,
        gamma_t: FunctionVector::new(gamma),
        floor_hits,
        stream: Vec::new(),
    })
}
