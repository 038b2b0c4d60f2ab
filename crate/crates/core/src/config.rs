//! TOML model and experiment files.
//!
//! A model is either a benchmark preset or an explicit pair of matrices:
//!
//! ```toml
//! epsilon = 0.1
//! h = "h3"
//! ```
//!
//! ```toml
//! rates = [[-1.0, 1.0], [2.0, -2.0]]
//! observation = [[1.0], [0.0]]
//! ```
//!
//! An experiment file holds shared settings and one `[[cases]]` table per
//! model, each of which may override the priors.

use serde::Deserialize;
use thiserror::Error;

use crate::backward::{BackwardSetup, BackwardSizes, NestedMcSpec, DEFAULT_STEP_BUDGET};
use crate::model::{FiniteHmm, ModelError, SimplexVector};
use crate::presets::{benchmark_model, benchmark_mu, benchmark_nu, ObservationChoice};
use crate::simulate::{FilterScheme, SimError, TimeGrid, DEFAULT_DT};
use crate::stability::{ExperimentConfig, SamplingPrior};
use crate::structure::undetectable_witness;

pub const DEFAULT_SEED: u64 = 20240601;
pub const DEFAULT_HORIZON: f64 = 10.0;
pub const DEFAULT_PATHS: usize = 500;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{0}")]
    Parse(#[from] toml::de::Error),
    #[error("{context}: {source}")]
    Model { context: String, source: ModelError },
    #[error("{context}: {source}")]
    Grid { context: String, source: SimError },
    #[error("{0}")]
    Invalid(String),
}

/// Model description shared by model files and experiment cases.
#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub epsilon: Option<f64>,
    pub h: Option<ObservationChoice>,
    pub rates: Option<Vec<Vec<f64>>>,
    pub observation: Option<Vec<Vec<f64>>>,
}

impl ModelSpec {
    pub fn build(&self) -> Result<FiniteHmm, ConfigError> {
        match (self.epsilon, self.h, &self.rates, &self.observation) {
            (Some(eps), Some(h), None, None) => {
                if !(eps >= 0.0 && eps.is_finite()) {
                    return Err(ConfigError::Invalid(format!("epsilon must be a non-negative number, got {eps}")));
                }
                Ok(benchmark_model(eps, h))
            }
            (None, None, Some(rates), Some(obs)) => FiniteHmm::from_rows(rates, obs)
                .map_err(|source| ConfigError::Model { context: "field `rates`/`observation`".into(), source }),
            _ => Err(ConfigError::Invalid(
                "a model needs either `epsilon` and `h`, or `rates` and `observation`".into(),
            )),
        }
    }

    /// Short label such as `eps0.1_h3`, or `None` for explicit matrices.
    pub fn label(&self) -> Option<String> {
        Some(format!("eps{}_{}", self.epsilon?, self.h?))
    }
}

pub fn parse_model(text: &str) -> Result<FiniteHmm, ConfigError> {
    let spec: ModelSpec = toml::from_str(text)?;
    spec.build()
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(untagged)]
pub enum PriorChoice {
    Named(String),
    Weights(Vec<f64>),
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CaseSpec {
    pub name: Option<String>,
    pub epsilon: Option<f64>,
    pub h: Option<ObservationChoice>,
    pub rates: Option<Vec<Vec<f64>>>,
    pub observation: Option<Vec<Vec<f64>>>,
    pub mu: Option<Vec<f64>>,
    pub nu: Option<Vec<f64>>,
    /// Use the undetectability witness priors `(rho (1 + a f), rho)` with this
    /// amplitude `a`.
    pub witness: Option<f64>,
}

impl CaseSpec {
    pub fn model_spec(&self) -> ModelSpec {
        ModelSpec { epsilon: self.epsilon, h: self.h, rates: self.rates.clone(), observation: self.observation.clone() }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NestedSection {
    pub outer_paths: Option<usize>,
    pub inner_paths: Option<usize>,
    pub checkpoints: Option<Vec<f64>>,
    pub step_budget: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackwardSection {
    pub n_per_state: Option<usize>,
    pub n_paths: Option<usize>,
    pub nested: Option<NestedSection>,
}

/// Raw experiment file.
#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentFile {
    pub seed: Option<u64>,
    pub horizon: Option<f64>,
    pub dt: Option<f64>,
    pub n_paths: Option<usize>,
    pub scheme: Option<FilterScheme>,
    pub sampling_prior: Option<PriorChoice>,
    pub mu: Option<Vec<f64>>,
    pub nu: Option<Vec<f64>>,
    pub fit_window: Option<(f64, f64)>,
    #[serde(default)]
    pub cases: Vec<CaseSpec>,
    pub backward: Option<BackwardSection>,
}

/// A validated case ready to run.
#[derive(Debug, Clone)]
pub struct Case {
    pub name: String,
    pub experiment: ExperimentConfig,
}

/// Validated experiment file.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub seed: u64,
    pub grid: TimeGrid,
    pub cases: Vec<Case>,
    pub backward: BackwardSizes,
}

fn simplex(field: &str, weights: &[f64]) -> Result<SimplexVector, ConfigError> {
    SimplexVector::new(weights.to_vec()).map_err(|source| ConfigError::Model { context: format!("field `{field}`"), source })
}

impl ExperimentFile {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        Ok(toml::from_str(text)?)
    }

    pub fn validate(&self) -> Result<Experiment, ConfigError> {
        let seed = self.seed.unwrap_or(DEFAULT_SEED);
        let horizon = self.horizon.unwrap_or(DEFAULT_HORIZON);
        let dt = self.dt.unwrap_or(DEFAULT_DT);
        let grid = TimeGrid::new(horizon, dt).map_err(|source| ConfigError::Grid { context: "fields `horizon`/`dt`".into(), source })?;
        let n_paths = self.n_paths.unwrap_or(DEFAULT_PATHS);
        if n_paths == 0 {
            return Err(ConfigError::Invalid("field `n_paths` must be at least 1".into()));
        }
        if self.cases.is_empty() {
            return Err(ConfigError::Invalid("at least one `[[cases]]` table is required".into()));
        }
        let mut cases = Vec::with_capacity(self.cases.len());
        for (k, spec) in self.cases.iter().enumerate() {
            let ctx = |msg: String| ConfigError::Invalid(format!("cases[{k}]: {msg}"));
            let model_spec = spec.model_spec();
            let model = model_spec.build().map_err(|e| ctx(e.to_string()))?;
            let name = spec.name.clone().or_else(|| model_spec.label()).unwrap_or_else(|| format!("case{k}"));
            if !name.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '_' | '-' | '.')) {
                return Err(ctx(format!("name `{name}` may only contain letters, digits, `_`, `-`, `.`")));
            }
            let (mu, nu) = if let Some(a) = spec.witness {
                if spec.mu.is_some() || spec.nu.is_some() {
                    return Err(ctx("`witness` cannot be combined with `mu`/`nu`".into()));
                }
                let w = undetectable_witness(&model).map_err(|e| ctx(e.to_string()))?;
                crate::backward::witness_priors(&w, a).map_err(|e| ctx(e.to_string()))?
            } else {
                let mu = spec.mu.as_ref().or(self.mu.as_ref()).map(|v| simplex("mu", v)).transpose()?;
                let nu = spec.nu.as_ref().or(self.nu.as_ref()).map(|v| simplex("nu", v)).transpose()?;
                (mu.unwrap_or_else(benchmark_mu), nu.unwrap_or_else(benchmark_nu))
            };
            let sampling = match &self.sampling_prior {
                None => SamplingPrior::Mu,
                Some(PriorChoice::Named(s)) if s == "mu" => SamplingPrior::Mu,
                Some(PriorChoice::Named(s)) if s == "nu" => SamplingPrior::Nu,
                Some(PriorChoice::Named(s)) => {
                    return Err(ConfigError::Invalid(format!("field `sampling_prior`: expected \"mu\", \"nu\" or weights, got \"{s}\"")))
                }
                Some(PriorChoice::Weights(w)) => SamplingPrior::Custom(simplex("sampling_prior", w)?),
            };
            let experiment = ExperimentConfig {
                name: name.clone(),
                model,
                mu,
                nu,
                sampling,
                grid,
                n_paths,
                seed,
                stream_tag: k as u64,
                fit_window: self.fit_window,
                scheme: self.scheme.unwrap_or_default(),
            };
            experiment.validate().map_err(|e| ctx(e.to_string()))?;
            cases.push(Case { name, experiment });
        }
        let mut names: Vec<&str> = cases.iter().map(|c| c.name.as_str()).collect();
        names.sort_unstable();
        if let Some(w) = names.windows(2).find(|w| w[0] == w[1]) {
            return Err(ConfigError::Invalid(format!("duplicate case name `{}`", w[0])));
        }
        let backward = self.backward_sizes(&grid)?;
        Ok(Experiment { seed, grid, cases, backward })
    }

    fn backward_sizes(&self, grid: &TimeGrid) -> Result<BackwardSizes, ConfigError> {
        let section = self.backward.clone().unwrap_or(BackwardSection { n_per_state: None, n_paths: None, nested: None });
        let sizes = BackwardSizes {
            n_per_state: section.n_per_state.unwrap_or(2000),
            n_paths: section.n_paths.unwrap_or(4000),
            nested: section.nested.map(|n| {
                let standard = NestedMcSpec::standard(grid);
                NestedMcSpec {
                    checkpoint_times: n.checkpoints.unwrap_or(standard.checkpoint_times),
                    outer_paths: n.outer_paths.unwrap_or(standard.outer_paths),
                    inner_paths: n.inner_paths.unwrap_or(standard.inner_paths),
                    step_budget: n.step_budget.unwrap_or(DEFAULT_STEP_BUDGET),
                }
            }),
        };
        if sizes.n_per_state == 0 || sizes.n_paths == 0 {
            return Err(ConfigError::Invalid("backward path counts must be at least 1".into()));
        }
        Ok(sizes)
    }
}

impl Experiment {
    pub fn backward_setup(&self, case: &Case) -> BackwardSetup {
        let e = &case.experiment;
        BackwardSetup {
            model: e.model.clone(),
            mu: e.mu.clone(),
            nu: e.nu.clone(),
            grid: e.grid,
            scheme: e.scheme,
            seed: e.seed,
            stream_tag: e.stream_tag,
        }
    }
}

/// The benchmark experiment as a config file: all five table rows.
pub const BENCHMARK_CONFIG: &str = r#"seed = 20240601
horizon = 10.0
dt = 0.005
n_paths = 500
scheme = "zakai-split"
sampling_prior = "mu"
mu = [0.25, 0.40, 0.30, 0.05]
nu = [0.1, 0.2, 0.3, 0.4]

[[cases]]
epsilon = 0.0
h = "h1"

[[cases]]
epsilon = 0.0
h = "h2"

[[cases]]
epsilon = 0.0
h = "h3"

[[cases]]
epsilon = 0.1
h = "h1"

[[cases]]
epsilon = 0.1
h = "h3"
"#;
