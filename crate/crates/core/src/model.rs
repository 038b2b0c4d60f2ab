//! Finite-state generator algebra.
//!
//! A model is a rate matrix `A` (rows are "from" states, rows sum to zero)
//! together with an observation matrix `H` whose column `j` is the `j`-th
//! observation function. Functions on the state space are column vectors,
//! measures are row vectors, and `mu(f) = mu^T f`.

use nalgebra::{DMatrix, DVector};
use petgraph::algo::tarjan_scc;
use petgraph::graph::DiGraph;
use thiserror::Error;

use crate::linalg::{complement_basis, expm, max_abs, scaled_tol};

/// Absolute row-sum tolerance for a rate matrix.
pub const ROW_SUM_TOL: f64 = 1e-12;
/// Simplex sum tolerance.
pub const SIMPLEX_TOL: f64 = 1e-10;
/// Residual allowed in `mu^T A = 0` when a measure is claimed invariant.
pub const INVARIANCE_TOL: f64 = 1e-8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("rate matrix must be square, got {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },
    #[error("model needs at least 2 states, got {0}")]
    TooFewStates(usize),
    #[error("observation matrix needs at least one column")]
    NoObservations,
    #[error("non-finite entry at ({row}, {col})")]
    NonFinite { row: usize, col: usize },
    #[error("negative off-diagonal rate {value} at ({row}, {col})")]
    NegativeOffDiagonal { row: usize, col: usize, value: f64 },
    #[error("row {row} of the rate matrix sums to {residual:e}, expected 0")]
    RowSumNonZero { row: usize, residual: f64 },
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("weights are not a probability vector: {0}")]
    NotOnSimplex(String),
    #[error("measure is not invariant for the generator (residual {residual:e})")]
    NotInvariantMeasure { residual: f64 },
    #[error("negative time {0}")]
    NegativeTime(f64),
    #[error("time grid must be strictly increasing")]
    UnsortedTimes,
}

/// Checks that `a` is a valid rate matrix.
///
/// On failure reports the first negative off-diagonal entry, or the row
/// with the largest row-sum residual.
pub fn validate_generator(a: &DMatrix<f64>) -> Result<(), ModelError> {
    if a.nrows() != a.ncols() {
        return Err(ModelError::NotSquare { rows: a.nrows(), cols: a.ncols() });
    }
    for i in 0..a.nrows() {
        for j in 0..a.ncols() {
            let v = a[(i, j)];
            if !v.is_finite() {
                return Err(ModelError::NonFinite { row: i, col: j });
            }
            if i != j && v < 0.0 {
                return Err(ModelError::NegativeOffDiagonal { row: i, col: j, value: v });
            }
        }
    }
    let mut worst: Option<(usize, f64)> = None;
    for i in 0..a.nrows() {
        let row = a.row(i);
        let residual: f64 = row.iter().sum();
        let scale = row.iter().fold(1.0_f64, |m, v| m.max(v.abs()));
        if residual.abs() > ROW_SUM_TOL * scale
            && worst.is_none_or(|(_, r)| residual.abs() > r.abs())
        {
            worst = Some((i, residual));
        }
    }
    match worst {
        Some((row, residual)) => Err(ModelError::RowSumNonZero { row, residual }),
        None => Ok(()),
    }
}

/// A function on the state space.
#[derive(Debug, Clone, PartialEq)]
pub struct FunctionVector(DVector<f64>);

impl FunctionVector {
    pub fn new(values: Vec<f64>) -> Self {
        Self(DVector::from_vec(values))
    }

    pub fn constant(d: usize, c: f64) -> Self {
        Self(DVector::from_element(d, c))
    }

    pub fn from_vector(v: DVector<f64>) -> Self {
        Self(v)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_vector(&self) -> &DVector<f64> {
        &self.0
    }

    pub fn as_slice(&self) -> &[f64] {
        self.0.as_slice()
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.0.iter().copied().collect()
    }

    /// Pointwise product.
    pub fn product(&self, other: &FunctionVector) -> FunctionVector {
        FunctionVector(self.0.component_mul(&other.0))
    }
}

impl std::ops::Index<usize> for FunctionVector {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

/// A probability vector on the state space.
#[derive(Debug, Clone, PartialEq)]
pub struct SimplexVector(DVector<f64>);

impl SimplexVector {
    pub fn new(weights: Vec<f64>) -> Result<Self, ModelError> {
        if weights.is_empty() {
            return Err(ModelError::NotOnSimplex("empty".into()));
        }
        if let Some(w) = weights.iter().find(|w| !w.is_finite() || **w < 0.0) {
            return Err(ModelError::NotOnSimplex(format!("entry {w}")));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > SIMPLEX_TOL {
            return Err(ModelError::NotOnSimplex(format!("sum {total}")));
        }
        Ok(Self(DVector::from_vec(weights)))
    }

    /// Rescales non-negative weights to sum to one.
    pub fn normalized(weights: Vec<f64>) -> Result<Self, ModelError> {
        let total: f64 = weights.iter().sum();
        if !(total.is_finite() && total > 0.0) || weights.iter().any(|w| *w < 0.0) {
            return Err(ModelError::NotOnSimplex(format!("cannot normalize, sum {total}")));
        }
        Ok(Self(DVector::from_iterator(
            weights.len(),
            weights.iter().map(|w| w / total),
        )))
    }

    pub fn uniform(d: usize) -> Self {
        Self(DVector::from_element(d, 1.0 / d as f64))
    }

    pub fn point_mass(d: usize, state: usize) -> Self {
        let mut v = DVector::zeros(d);
        v[state] = 1.0;
        Self(v)
    }

    /// Wraps a vector already known to be on the simplex.
    pub(crate) fn from_raw(v: DVector<f64>) -> Self {
        Self(v)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_vector(&self) -> &DVector<f64> {
        &self.0
    }

    pub fn as_slice(&self) -> &[f64] {
        self.0.as_slice()
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.0.iter().copied().collect()
    }

    /// `mu(f)`.
    pub fn expect(&self, f: &FunctionVector) -> f64 {
        self.0.dot(f.as_vector())
    }

    /// States carrying positive mass.
    pub fn support(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.0[i] > 0.0).collect()
    }

    /// `self << other`: every state charged by `self` is charged by `other`.
    pub fn is_absolutely_continuous_wrt(&self, other: &SimplexVector) -> bool {
        self.0.iter().zip(other.0.iter()).all(|(p, q)| *p <= 0.0 || *q > 0.0)
    }
}

impl std::ops::Index<usize> for SimplexVector {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

/// A finite-state HMM `(A, H)` with white-noise observations.
#[derive(Debug, Clone, PartialEq)]
pub struct FiniteHmm {
    rates: DMatrix<f64>,
    observation: DMatrix<f64>,
}

impl FiniteHmm {
    pub fn new(rates: DMatrix<f64>, observation: DMatrix<f64>) -> Result<Self, ModelError> {
        validate_generator(&rates)?;
        let d = rates.nrows();
        if d < 2 {
            return Err(ModelError::TooFewStates(d));
        }
        if observation.nrows() != d {
            return Err(ModelError::DimensionMismatch { expected: d, found: observation.nrows() });
        }
        if observation.ncols() == 0 {
            return Err(ModelError::NoObservations);
        }
        for i in 0..observation.nrows() {
            for j in 0..observation.ncols() {
                if !observation[(i, j)].is_finite() {
                    return Err(ModelError::NonFinite { row: i, col: j });
                }
            }
        }
        Ok(Self { rates, observation })
    }

    /// Builds a model from row-major nested vectors.
    pub fn from_rows(rates: &[Vec<f64>], observation: &[Vec<f64>]) -> Result<Self, ModelError> {
        Self::new(matrix_from_rows(rates)?, matrix_from_rows(observation)?)
    }

    /// Number of states `d`.
    pub fn states(&self) -> usize {
        self.rates.nrows()
    }

    /// Observation dimension `m`.
    pub fn obs_dim(&self) -> usize {
        self.observation.ncols()
    }

    pub fn rates(&self) -> &DMatrix<f64> {
        &self.rates
    }

    pub fn observation(&self) -> &DMatrix<f64> {
        &self.observation
    }

    /// Observation function `H^j`.
    pub fn observation_column(&self, j: usize) -> FunctionVector {
        FunctionVector(self.observation.column(j).into_owned())
    }

    /// Scale used by the tolerance policy.
    pub fn norm_scale(&self) -> f64 {
        max_abs(&self.rates).max(max_abs(&self.observation))
    }

    /// `A f`.
    pub fn apply(&self, f: &FunctionVector) -> Result<FunctionVector, ModelError> {
        self.check_len(f.len())?;
        Ok(FunctionVector(&self.rates * f.as_vector()))
    }

    pub(crate) fn check_len(&self, n: usize) -> Result<(), ModelError> {
        if n == self.states() {
            Ok(())
        } else {
            Err(ModelError::DimensionMismatch { expected: self.states(), found: n })
        }
    }
}

pub(crate) fn matrix_from_rows(rows: &[Vec<f64>]) -> Result<DMatrix<f64>, ModelError> {
    let nrows = rows.len();
    let ncols = rows.first().map_or(0, Vec::len);
    if let Some(bad) = rows.iter().find(|r| r.len() != ncols) {
        return Err(ModelError::DimensionMismatch { expected: ncols, found: bad.len() });
    }
    Ok(DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
}

/// Carré du champ `Gamma(f, g) = A(fg) - f Ag - g Af`.
pub fn carre_du_champ(
    model: &FiniteHmm,
    f: &FunctionVector,
    g: &FunctionVector,
) -> Result<FunctionVector, ModelError> {
    model.check_len(f.len())?;
    model.check_len(g.len())?;
    let a = model.rates();
    let fg = f.as_vector().component_mul(g.as_vector());
    let afg = a * fg;
    let af = a * f.as_vector();
    let ag = a * g.as_vector();
    Ok(FunctionVector(
        afg - f.as_vector().component_mul(&ag) - g.as_vector().component_mul(&af),
    ))
}

/// Transition matrix `exp(tA)`.
pub fn transition_matrix(model: &FiniteHmm, t: f64) -> Result<DMatrix<f64>, ModelError> {
    if t < 0.0 || !t.is_finite() {
        return Err(ModelError::NegativeTime(t));
    }
    Ok(expm(&(model.rates() * t)))
}

/// `P_t f = exp(tA) f`.
pub fn semigroup_apply(
    model: &FiniteHmm,
    t: f64,
    f: &FunctionVector,
) -> Result<FunctionVector, ModelError> {
    model.check_len(f.len())?;
    if t == 0.0 {
        return Ok(f.clone());
    }
    Ok(FunctionVector(transition_matrix(model, t)? * f.as_vector()))
}

/// Closed communicating classes (sorted by smallest member) and the
/// remaining transient states, from the digraph with an edge `i -> j`
/// whenever `A(i, j) > 0`.
pub fn closed_classes(rates: &DMatrix<f64>) -> (Vec<Vec<usize>>, Vec<usize>) {
    let d = rates.nrows();
    let mut graph = DiGraph::<usize, ()>::with_capacity(d, d * d);
    let nodes: Vec<_> = (0..d).map(|i| graph.add_node(i)).collect();
    for i in 0..d {
        for j in 0..d {
            if i != j && rates[(i, j)] > 0.0 {
                graph.add_edge(nodes[i], nodes[j], ());
            }
        }
    }
    let mut classes = Vec::new();
    let mut transient = Vec::new();
    for scc in tarjan_scc(&graph) {
        let mut members: Vec<usize> = scc.iter().map(|n| graph[*n]).collect();
        members.sort_unstable();
        let closed = members.iter().all(|&i| {
            (0..d).all(|j| members.binary_search(&j).is_ok() || rates[(i, j)] <= 0.0)
        });
        if closed {
            classes.push(members);
        } else {
            transient.extend(members);
        }
    }
    classes.sort_by_key(|c| c[0]);
    transient.sort_unstable();
    (classes, transient)
}

/// Stationary distribution of the chain restricted to a closed class.
///
/// Least-squares solve of `[A_C^T; 1^T] pi = [0; 1]`.
fn class_stationary(rates: &DMatrix<f64>, class: &[usize]) -> DVector<f64> {
    let n = class.len();
    let d = rates.nrows();
    let mut system = DMatrix::zeros(n + 1, n);
    for (r, &j) in class.iter().enumerate() {
        for (c, &i) in class.iter().enumerate() {
            system[(r, c)] = rates[(i, j)];
        }
    }
    for c in 0..n {
        system[(n, c)] = 1.0;
    }
    let mut rhs = DVector::zeros(n + 1);
    rhs[n] = 1.0;
    let svd = system.svd(true, true);
    let local = svd
        .solve(&rhs, f64::EPSILON)
        .expect("singular vectors were computed");
    let mut full = DVector::zeros(d);
    for (k, &i) in class.iter().enumerate() {
        full[i] = local[k].max(0.0);
    }
    let total = full.sum();
    full / total
}

/// One invariant measure per closed recurrent class, supported on it.
pub fn invariant_measures(model: &FiniteHmm) -> Vec<(Vec<usize>, SimplexVector)> {
    let (classes, _) = closed_classes(model.rates());
    classes
        .into_iter()
        .map(|c| {
            let m = class_stationary(model.rates(), &c);
            (c, SimplexVector(m))
        })
        .collect()
}

/// `max_j |(mu^T A)_j|`.
pub fn invariance_residual(model: &FiniteHmm, measure: &SimplexVector) -> f64 {
    let row = measure.as_vector().transpose() * model.rates();
    row.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
}

fn check_invariant(model: &FiniteHmm, measure: &SimplexVector) -> Result<(), ModelError> {
    model.check_len(measure.len())?;
    let residual = invariance_residual(model, measure);
    if residual > INVARIANCE_TOL * max_abs(model.rates()).max(1.0) {
        return Err(ModelError::NotInvariantMeasure { residual });
    }
    Ok(())
}

/// `mu(f^2) - mu(f)^2`, computed in centred form.
pub fn classical_variance(measure: &SimplexVector, f: &FunctionVector) -> Result<f64, ModelError> {
    if measure.len() != f.len() {
        return Err(ModelError::DimensionMismatch { expected: measure.len(), found: f.len() });
    }
    let mean = measure.expect(f);
    let v: f64 = measure
        .as_slice()
        .iter()
        .zip(f.as_slice())
        .map(|(w, x)| w * (x - mean) * (x - mean))
        .sum();
    Ok(v.max(0.0))
}

/// `mu(Gamma f)` for an invariant `mu`.
pub fn classical_energy(
    model: &FiniteHmm,
    measure: &SimplexVector,
    f: &FunctionVector,
) -> Result<f64, ModelError> {
    check_invariant(model, measure)?;
    let gamma = carre_du_champ(model, f, f)?;
    Ok(measure.expect(&gamma).max(0.0))
}

/// Largest deviation from `d/dt V(P_t f) = -E(P_t f)` on `times`.
///
/// The derivative is a five-point central difference with step `delta`, so
/// the residual is `O(delta^4)` plus rounding of order `eps / delta`.
pub fn dissipation_check(
    model: &FiniteHmm,
    measure: &SimplexVector,
    f: &FunctionVector,
    times: &[f64],
    delta: f64,
) -> Result<f64, ModelError> {
    check_invariant(model, measure)?;
    model.check_len(f.len())?;
    if times.windows(2).any(|w| w[1] <= w[0]) {
        return Err(ModelError::UnsortedTimes);
    }
    let a = model.rates();
    let flow = |t: f64| FunctionVector(expm(&(a * t)) * f.as_vector());
    let mut worst = 0.0_f64;
    for &t in times {
        if t < 0.0 {
            return Err(ModelError::NegativeTime(t));
        }
        let v = |s: f64| classical_variance(measure, &flow(t + s * delta));
        let derivative = (8.0 * (v(1.0)? - v(-1.0)?) - (v(2.0)? - v(-2.0)?)) / (12.0 * delta);
        let energy = measure.expect(&carre_du_champ(model, &flow(t), &flow(t))?);
        worst = worst.max((derivative + energy).abs());
    }
    Ok(worst)
}

/// Sharpest `c` with `E(f) >= c V(f)` under the invariant measure.
///
/// Works on `supp(mu)`: minimises the Rayleigh quotient
/// `-2 <f, Af>_mu / <f, f>_mu` over `f` orthogonal to constants, as the
/// smallest eigenvalue of the symmetrised generator on that complement.
/// A support of one state has no non-constant functions and yields
/// `f64::INFINITY`. Values within the tolerance of zero are returned as
/// exactly `0.0`.
pub fn classical_poincare_constant(
    model: &FiniteHmm,
    measure: &SimplexVector,
) -> Result<f64, ModelError> {
    check_invariant(model, measure)?;
    let support = measure.support();
    let n = support.len();
    if n < 2 {
        return Ok(f64::INFINITY);
    }
    let a = model.rates();
    let sqrt_w: Vec<f64> = support.iter().map(|&i| measure[i].sqrt()).collect();
    // S = -(D^{1/2} A D^{-1/2} + its transpose) restricted to the support.
    let mut sym = DMatrix::zeros(n, n);
    for (r, &i) in support.iter().enumerate() {
        for (c, &j) in support.iter().enumerate() {
            sym[(r, c)] = -(sqrt_w[r] * a[(i, j)] / sqrt_w[c] + sqrt_w[c] * a[(j, i)] / sqrt_w[r]);
        }
    }
    let s = DVector::from_vec(sqrt_w);
    let basis = complement_basis(&(s.clone() / s.norm()));
    let reduced = basis.transpose() * &sym * &basis;
    let reduced = (&reduced + reduced.transpose()) * 0.5;
    let eig = reduced.symmetric_eigen();
    let min = eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
    let tol = scaled_tol(max_abs(&sym));
    Ok(if min <= tol { 0.0 } else { min })
}
