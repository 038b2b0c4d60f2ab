//! Structural analysis of `(A, H)`: the observable space, null
//! eigenfunctions, ergodic partition, the observable / ergodic / detectable
//! predicates and, for undetectable models, a witness prior.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use thiserror::Error;

use crate::linalg::{column_span, max_abs, projection_residual, scaled_tol, to_rows, RANK_TOL};
use crate::model::{closed_classes, invariant_measures, FiniteHmm, FunctionVector, SimplexVector};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StructureError {
    #[error("model is detectable: no undetectability witness exists")]
    ModelIsDetectable,
}

/// Orthonormal basis of a subspace of functions on the state space.
#[derive(Debug, Clone, PartialEq)]
pub struct SubspaceBasis {
    basis: DMatrix<f64>,
    tol: f64,
    spectrum: Vec<f64>,
}

impl SubspaceBasis {
    pub fn dim(&self) -> usize {
        self.basis.ncols()
    }

    /// `d x dim` matrix with orthonormal columns.
    pub fn basis(&self) -> &DMatrix<f64> {
        &self.basis
    }

    /// Absolute membership tolerance.
    pub fn tol(&self) -> f64 {
        self.tol
    }

    /// Singular values seen at the final rank decision, descending.
    pub fn spectrum(&self) -> &[f64] {
        &self.spectrum
    }

    pub fn vectors(&self) -> Vec<FunctionVector> {
        (0..self.dim())
            .map(|k| FunctionVector::from_vector(self.basis.column(k).into_owned()))
            .collect()
    }

    /// Distance from `v` to the subspace.
    pub fn residual(&self, v: &DVector<f64>) -> f64 {
        projection_residual(&self.basis, v)
    }

    pub fn contains(&self, v: &DVector<f64>) -> bool {
        self.residual(v) <= self.tol * v.norm().max(1.0)
    }
}

/// Closed recurrent classes, transient states and one invariant measure per class.
#[derive(Debug, Clone, PartialEq)]
pub struct ErgodicDecomposition {
    pub recurrent_classes: Vec<Vec<usize>>,
    pub transient_states: Vec<usize>,
    pub class_measures: Vec<SimplexVector>,
}

/// Headline classification in the vocabulary of the benchmark table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Verdict {
    NotDetectable,
    Ergodic,
    Observable,
    DetectableNonErgodic,
}

impl Verdict {
    pub fn label(self) -> &'static str {
        match self {
            Verdict::NotDetectable => "Not detectable",
            Verdict::Ergodic => "Ergodic",
            Verdict::Observable => "Observable",
            Verdict::DetectableNonErgodic => "Non-ergodic but detectable",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StructureReport {
    pub observable_space: SubspaceBasis,
    pub null_space: SubspaceBasis,
    pub decomposition: ErgodicDecomposition,
    pub generator_singular_values: Vec<f64>,
    pub is_observable: bool,
    pub is_ergodic: bool,
    pub is_detectable: bool,
}

impl StructureReport {
    pub fn verdict(&self) -> Verdict {
        if !self.is_detectable {
            Verdict::NotDetectable
        } else if self.is_ergodic {
            Verdict::Ergodic
        } else if self.is_observable {
            Verdict::Observable
        } else {
            Verdict::DetectableNonErgodic
        }
    }

    pub fn to_json(&self) -> StructureJson {
        StructureJson {
            states: self.observable_space.basis.nrows(),
            tolerance: self.observable_space.tol,
            rank_tolerance: RANK_TOL,
            observable_dim: self.observable_space.dim(),
            observable_basis: to_rows(&self.observable_space.basis),
            observable_spectrum: self.observable_space.spectrum.clone(),
            null_dim: self.null_space.dim(),
            null_basis: to_rows(&self.null_space.basis),
            generator_singular_values: self.generator_singular_values.clone(),
            recurrent_classes: self.decomposition.recurrent_classes.clone(),
            transient_states: self.decomposition.transient_states.clone(),
            class_measures: self.decomposition.class_measures.iter().map(SimplexVector::to_vec).collect(),
            is_observable: self.is_observable,
            is_ergodic: self.is_ergodic,
            is_detectable: self.is_detectable,
            verdict: self.verdict().label().to_string(),
        }
    }
}

/// Serialized form of [`StructureReport`]; matrices are row-major and
/// state indices are zero-based.
#[derive(Debug, Clone, Serialize)]
pub struct StructureJson {
    pub states: usize,
    pub tolerance: f64,
    pub rank_tolerance: f64,
    pub observable_dim: usize,
    pub observable_basis: Vec<Vec<f64>>,
    pub observable_spectrum: Vec<f64>,
    pub null_dim: usize,
    pub null_basis: Vec<Vec<f64>>,
    pub generator_singular_values: Vec<f64>,
    pub recurrent_classes: Vec<Vec<usize>>,
    pub transient_states: Vec<usize>,
    pub class_measures: Vec<Vec<f64>>,
    pub is_observable: bool,
    pub is_ergodic: bool,
    pub is_detectable: bool,
    pub verdict: String,
}

fn membership_tol(model: &FiniteHmm) -> f64 {
    scaled_tol(model.norm_scale())
}

/// Dimensions visited by the closure iteration, ending at `dim(O)`.
pub fn observable_closure_dims(model: &FiniteHmm) -> Vec<usize> {
    closure(model).1
}

fn closure(model: &FiniteHmm) -> (SubspaceBasis, Vec<usize>) {
    let d = model.states();
    let a = model.rates();
    let h = model.observation();
    let mut q = DMatrix::from_element(d, 1, 1.0 / (d as f64).sqrt());
    let mut spectrum = vec![1.0];
    let mut dims = vec![1];
    for _ in 0..d {
        let k = q.ncols();
        let m = h.ncols();
        let mut cand = DMatrix::zeros(d, k * (2 + m));
        cand.columns_mut(0, k).copy_from(&q);
        cand.columns_mut(k, k).copy_from(&(a * &q));
        for j in 0..m {
            let hj = DMatrix::from_diagonal(&h.column(j).into_owned());
            cand.columns_mut(k * (2 + j), k).copy_from(&(hj * &q));
        }
        let (next, sv) = column_span(&cand, RANK_TOL);
        spectrum = sv;
        let grew = next.ncols() > k;
        q = next;
        dims.push(q.ncols());
        if !grew {
            break;
        }
    }
    let basis = SubspaceBasis { basis: q, tol: membership_tol(model), spectrum };
    (basis, dims)
}

/// Smallest subspace containing the constants and closed under `g -> Ag`
/// and `g -> H^j g`, built by closure iteration with re-orthonormalisation.
pub fn observable_space(model: &FiniteHmm) -> SubspaceBasis {
    closure(model).0
}

/// `x -> P_x(chain is eventually absorbed in class k)`, one per class.
pub fn absorption_probabilities(model: &FiniteHmm, classes: &[Vec<usize>], transient: &[usize]) -> Vec<DVector<f64>> {
    let d = model.states();
    let a = model.rates();
    let nt = transient.len();
    let a_tt = DMatrix::from_fn(nt, nt, |r, c| a[(transient[r], transient[c])]);
    let lu = a_tt.lu();
    classes
        .iter()
        .map(|class| {
            let mut v = DVector::zeros(d);
            for &i in class {
                v[i] = 1.0;
            }
            if nt > 0 {
                let rhs = DVector::from_fn(nt, |r, _| -class.iter().map(|&j| a[(transient[r], j)]).sum::<f64>());
                let sol = lu.solve(&rhs).expect("transient block of a generator is nonsingular");
                for (r, &i) in transient.iter().enumerate() {
                    v[i] = sol[r];
                }
            }
            v
        })
        .collect()
}

/// Kernel of `A`. Spanned by the absorption probabilities of the closed
/// classes, so its dimension is the number of recurrent classes.
pub fn null_eigenfunctions(model: &FiniteHmm) -> SubspaceBasis {
    let (classes, transient) = closed_classes(model.rates());
    let vecs = absorption_probabilities(model, &classes, &transient);
    let cols = DMatrix::from_columns(&vecs);
    let (basis, spectrum) = column_span(&cols, RANK_TOL);
    SubspaceBasis { basis, tol: membership_tol(model), spectrum }
}

pub fn ergodic_partition(model: &FiniteHmm) -> ErgodicDecomposition {
    let (recurrent_classes, transient_states) = closed_classes(model.rates());
    let class_measures = invariant_measures(model).into_iter().map(|(_, m)| m).collect();
    ErgodicDecomposition { recurrent_classes, transient_states, class_measures }
}

pub fn is_observable(model: &FiniteHmm) -> bool {
    observable_space(model).dim() == model.states()
}

pub fn is_ergodic(model: &FiniteHmm) -> bool {
    null_eigenfunctions(model).dim() == 1
}

pub fn is_detectable(model: &FiniteHmm) -> bool {
    let obs = observable_space(model);
    null_eigenfunctions(model)
        .vectors()
        .iter()
        .all(|v| obs.contains(v.as_vector()))
}

pub fn analyze(model: &FiniteHmm) -> StructureReport {
    let observable_space = observable_space(model);
    let null_space = null_eigenfunctions(model);
    let decomposition = ergodic_partition(model);
    let generator_singular_values = {
        let mut sv: Vec<f64> = model.rates().clone().singular_values().iter().copied().collect();
        sv.sort_by(|a, b| b.total_cmp(a));
        sv
    };
    let is_observable = observable_space.dim() == model.states();
    let is_ergodic = null_space.dim() == 1;
    let is_detectable = null_space
        .vectors()
        .iter()
        .all(|v| observable_space.contains(v.as_vector()));
    StructureReport {
        observable_space,
        null_space,
        decomposition,
        generator_singular_values,
        is_observable,
        is_ergodic,
        is_detectable,
    }
}

/// A prior `rho` and a null eigenfunction `f` with `rho(f^2) > 0` and
/// `rho(f g) = 0` for every observable `g`.
#[derive(Debug, Clone, PartialEq)]
pub struct Witness {
    pub rho: SimplexVector,
    pub f: FunctionVector,
    /// Classes mixed into `rho`.
    pub classes: Vec<usize>,
}

/// Builds an undetectability witness.
///
/// Looks for a pair of recurrent classes `(k, l)`, in lexicographic order,
/// whose invariant measures agree on the observable space. Then
/// `rho = (mu_k + mu_l) / 2` and `f` is the difference of their absorption
/// probabilities (`1_k - 1_l` when there are no transient states). If no
/// pair works, a general combination `sum_k u_k mu_k` with `u` in the left
/// kernel of `[mu_k(o_i)]` is used; such `u` exists whenever `S_0` is not
/// contained in `O`.
pub fn undetectable_witness(model: &FiniteHmm) -> Result<Witness, StructureError> {
    let report = analyze(model);
    if report.is_detectable {
        return Err(StructureError::ModelIsDetectable);
    }
    let obs = report.observable_space.basis();
    let dec = &report.decomposition;
    let absorb = absorption_probabilities(model, &dec.recurrent_classes, &dec.transient_states);
    let k = dec.class_measures.len();
    // moments[k][i] = mu_k(o_i)
    let moments = DMatrix::from_fn(k, obs.ncols(), |r, c| dec.class_measures[r].as_vector().dot(&obs.column(c)));
    let tol = scaled_tol(max_abs(&moments));

    let mut weights: Option<DVector<f64>> = None;
    'pairs: for a in 0..k {
        for b in a + 1..k {
            if (moments.row(a) - moments.row(b)).amax() <= tol {
                let mut u = DVector::zeros(k);
                u[a] = 1.0;
                u[b] = -1.0;
                weights = Some(u);
                break 'pairs;
            }
        }
    }
    let u = match weights {
        Some(u) => u,
        None => left_kernel(&moments),
    };

    // With weights |u_c| / |u|_1 the coefficients u_c / w_c all have
    // magnitude |u|_1, so f is a signed sum of absorption probabilities.
    let l1: f64 = u.iter().map(|v| v.abs()).sum();
    let first_sign = u.iter().find(|v| v.abs() > tol).map_or(1.0, |v| v.signum());
    let mut rho = DVector::zeros(model.states());
    let mut f = DVector::zeros(model.states());
    let mut classes = Vec::new();
    for c in 0..k {
        if u[c].abs() <= tol {
            continue;
        }
        classes.push(c);
        rho += dec.class_measures[c].as_vector() * (u[c].abs() / l1);
        f += &absorb[c] * (first_sign * u[c].signum());
    }
    let rho = SimplexVector::normalized(rho.iter().copied().collect()).expect("non-empty mixture");
    Ok(Witness { rho, f: FunctionVector::from_vector(f), classes })
}

/// Unit vector minimising `|u^T M|`, i.e. in the left kernel when `M` is
/// row-rank deficient.
fn left_kernel(moments: &DMatrix<f64>) -> DVector<f64> {
    let k = moments.nrows();
    let gram = moments * moments.transpose();
    let eig = gram.symmetric_eigen();
    let (idx, _) = eig
        .eigenvalues
        .iter()
        .enumerate()
        .fold((0, f64::INFINITY), |acc, (i, v)| if *v < acc.1 { (i, *v) } else { acc });
    DVector::from_fn(k, |r, _| eig.eigenvectors[(r, idx)])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::presets::{benchmark_model, benchmark_rates, ObservationChoice::*};
    use approx::assert_relative_eq;

    fn two_state(l12: f64, l21: f64, h1: f64, h2: f64) -> FiniteHmm {
        FiniteHmm::from_rows(&[vec![-l12, l12], vec![l21, -l21]], &[vec![h1], vec![h2]]).unwrap()
    }

    #[test]
    fn observable_space_examples() {
        let o = observable_space(&benchmark_model(0.0, H1));
        assert_eq!(o.dim(), 2);
        // spanned by (a, b, a, b) patterns
        assert!(o.contains(&DVector::from_vec(vec![1.0, 0.0, 1.0, 0.0])));
        assert!(o.contains(&DVector::from_vec(vec![0.0, 1.0, 0.0, 1.0])));
        assert_eq!(observable_space(&benchmark_model(0.0, H3)).dim(), 4);
        assert_eq!(observable_space(&two_state(1.0, 2.0, 0.5, 0.5)).dim(), 1);
        assert_eq!(observable_space(&two_state(1.0, 2.0, 0.5, 0.7)).dim(), 2);
    }

    #[test]
    fn observable_space_contains_one_and_is_invariant() {
        for eps in [0.0, 0.1] {
            for h in [H1, H2, H3] {
                let m = benchmark_model(eps, h);
                let o = observable_space(&m);
                assert!(o.residual(&DVector::from_element(4, 1.0)) < 1e-12);
                for v in o.vectors() {
                    assert!(o.contains(&(m.rates() * v.as_vector())));
                    assert!(o.contains(&v.as_vector().component_mul(&m.observation().column(0))));
                }
            }
        }
    }

    #[test]
    fn null_eigenfunction_examples() {
        let s0 = null_eigenfunctions(&benchmark_model(0.0, H1));
        assert_eq!(s0.dim(), 2);
        assert!(s0.contains(&DVector::from_vec(vec![1.0, 1.0, 0.0, 0.0])));
        assert!(s0.contains(&DVector::from_vec(vec![0.0, 0.0, 1.0, 1.0])));
        assert_eq!(null_eigenfunctions(&benchmark_model(0.1, H1)).dim(), 1);
        let zero = FiniteHmm::new(DMatrix::zeros(3, 3), DMatrix::from_element(3, 1, 1.0)).unwrap();
        assert_eq!(null_eigenfunctions(&zero).dim(), 3);
        for v in s0.vectors() {
            assert!((benchmark_rates(0.0) * v.as_vector()).norm() <= s0.tol());
        }
    }

    #[test]
    fn null_space_with_transient_state() {
        // state 0 leaks into two absorbing states
        let m = FiniteHmm::from_rows(
            &[vec![-3.0, 1.0, 2.0], vec![0.0, 0.0, 0.0], vec![0.0, 0.0, 0.0]],
            &[vec![0.0], vec![1.0], vec![2.0]],
        )
        .unwrap();
        let s0 = null_eigenfunctions(&m);
        assert_eq!(s0.dim(), 2);
        for v in s0.vectors() {
            assert!((m.rates() * v.as_vector()).norm() < 1e-12);
        }
    }

    #[test]
    fn partition_examples() {
        let p = ergodic_partition(&benchmark_model(0.0, H1));
        assert_eq!(p.recurrent_classes, vec![vec![0, 1], vec![2, 3]]);
        assert!(p.transient_states.is_empty());
        let p = ergodic_partition(&benchmark_model(0.1, H1));
        assert_eq!(p.recurrent_classes, vec![vec![0, 1, 2, 3]]);
        let m = FiniteHmm::from_rows(&[vec![-1.0, 1.0], vec![0.0, 0.0]], &[vec![0.0], vec![1.0]]).unwrap();
        let p = ergodic_partition(&m);
        assert_eq!(p.recurrent_classes, vec![vec![1]]);
        assert_eq!(p.transient_states, vec![0]);
        assert_eq!(p.class_measures[0].to_vec(), vec![0.0, 1.0]);
    }

    #[test]
    fn predicates_on_benchmark() {
        let r = analyze(&benchmark_model(0.0, H1));
        assert!(!r.is_detectable && !r.is_ergodic && !r.is_observable);
        let r = analyze(&benchmark_model(0.0, H2));
        assert!(!r.is_observable && r.is_detectable);
        let r = analyze(&benchmark_model(0.0, H3));
        assert!(r.is_observable && r.is_detectable);
        for h in [H1, H2, H3] {
            let r = analyze(&benchmark_model(0.1, h));
            assert!(r.is_ergodic && r.is_detectable);
        }
    }

    #[test]
    fn witness_on_undetectable_benchmark() {
        let m = benchmark_model(0.0, H1);
        let w = undetectable_witness(&m).unwrap();
        let rho = [1.0 / 3.0, 1.0 / 6.0, 1.0 / 3.0, 1.0 / 6.0];
        let f = [1.0, 1.0, -1.0, -1.0];
        for i in 0..4 {
            assert_relative_eq!(w.rho[i], rho[i], epsilon = 1e-12);
            assert_relative_eq!(w.f[i], f[i], epsilon = 1e-12);
        }
        let obs = observable_space(&m);
        for g in obs.vectors() {
            assert!(w.rho.expect(&w.f.product(&g)).abs() <= 1e-10);
        }
        assert!((m.rates() * w.f.as_vector()).norm() <= 1e-10);
        assert!(w.rho.expect(&w.f).abs() <= 1e-12);
        assert!(w.rho.expect(&w.f.product(&w.f)) > 0.0);
    }

    #[test]
    fn witness_refused_for_detectable_models() {
        assert_eq!(undetectable_witness(&benchmark_model(0.0, H2)), Err(StructureError::ModelIsDetectable));
        assert_eq!(undetectable_witness(&benchmark_model(0.1, H1)), Err(StructureError::ModelIsDetectable));
    }

    #[test]
    fn witness_with_three_classes_and_transient() {
        // classes {0}, {1}, {2}; state 3 transient; h separates class 0 only
        let m = FiniteHmm::from_rows(
            &[
                vec![0.0, 0.0, 0.0, 0.0],
                vec![0.0, 0.0, 0.0, 0.0],
                vec![0.0, 0.0, 0.0, 0.0],
                vec![1.0, 1.0, 1.0, -3.0],
            ],
            &[vec![1.0], vec![0.0], vec![0.0], vec![0.0]],
        )
        .unwrap();
        let w = undetectable_witness(&m).unwrap();
        let obs = observable_space(&m);
        for g in obs.vectors() {
            assert!(w.rho.expect(&w.f.product(&g)).abs() <= 1e-10);
        }
        assert!((m.rates() * w.f.as_vector()).norm() <= 1e-10);
        assert!(w.rho.expect(&w.f.product(&w.f)) > 0.0);
        assert_eq!(w.classes, vec![1, 2]);
    }

    #[test]
    fn verdict_labels() {
        assert_eq!(analyze(&benchmark_model(0.0, H1)).verdict(), Verdict::NotDetectable);
        assert_eq!(analyze(&benchmark_model(0.0, H2)).verdict(), Verdict::DetectableNonErgodic);
        assert_eq!(analyze(&benchmark_model(0.0, H3)).verdict(), Verdict::Observable);
        assert_eq!(analyze(&benchmark_model(0.1, H3)).verdict(), Verdict::Ergodic);
    }
}
