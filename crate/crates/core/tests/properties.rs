mod common;

use approx::assert_relative_eq;
use filter_stability::model::{
    carre_du_champ, classical_energy, classical_poincare_constant, classical_variance, invariant_measures, transition_matrix,
    FunctionVector, SimplexVector,
};
use filter_stability::stability::{chi_square, fit_rate, DivergenceCurve};
use filter_stability::structure::{analyze, undetectable_witness};
use proptest::prelude::*;

fn model_params() -> impl Strategy<Value = (usize, usize, bool, u64)> {
    (2usize..=6, 1usize..=2, any::<bool>(), any::<u64>())
}

fn vector(d: usize, seed: u64) -> FunctionVector {
    use rand::Rng;
    let mut r = common::rng(seed);
    FunctionVector::new((0..d).map(|_| r.random_range(-3.0..3.0)).collect())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn carre_du_champ_is_nonnegative_and_bilinear((d, m, erg, seed) in model_params(), a in -2.0f64..2.0, b in -2.0f64..2.0) {
        let model = common::random_model(d, m, erg, &mut common::rng(seed));
        let (f, g, h) = (vector(d, seed ^ 1), vector(d, seed ^ 2), vector(d, seed ^ 3));
        let gff = carre_du_champ(&model, &f, &f).unwrap();
        prop_assert!(gff.as_slice().iter().all(|v| *v >= -1e-12));
        let comb = FunctionVector::from_vector(f.as_vector() * a + g.as_vector() * b);
        let lhs = carre_du_champ(&model, &comb, &h).unwrap();
        let rhs = carre_du_champ(&model, &f, &h).unwrap().as_vector() * a + carre_du_champ(&model, &g, &h).unwrap().as_vector() * b;
        prop_assert!((lhs.as_vector() - rhs).amax() < 1e-12 * (1.0 + lhs.as_vector().amax()) * 10.0);
    }

    #[test]
    fn semigroup_is_stochastic((d, m, erg, seed) in model_params(), t in 0.0f64..5.0) {
        let model = common::random_model(d, m, erg, &mut common::rng(seed));
        let p = transition_matrix(&model, t).unwrap();
        prop_assert!(p.iter().all(|v| *v >= -1e-12));
        for i in 0..d {
            prop_assert!((p.row(i).sum() - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn invariant_measures_annihilate_generator((d, m, erg, seed) in model_params()) {
        let model = common::random_model(d, m, erg, &mut common::rng(seed));
        let f = vector(d, seed ^ 5);
        for (_, mu) in invariant_measures(&model) {
            let af = model.apply(&f).unwrap();
            prop_assert!(mu.expect(&af).abs() < 1e-10);
            // Energy equals -2 <f, Af>_mu.
            let e = classical_energy(&model, &mu, &f).unwrap();
            let direct = -2.0 * mu.expect(&f.product(&af));
            prop_assert!((e - direct).abs() < 1e-9 * (1.0 + e.abs()));
        }
    }

    #[test]
    fn variance_is_nonincreasing((d, seed) in (2usize..=6, any::<u64>())) {
        let model = common::random_model(d, 1, true, &mut common::rng(seed));
        let (_, mu) = invariant_measures(&model).remove(0);
        let f = vector(d, seed ^ 7);
        let mut prev = f64::INFINITY;
        for k in 0..20 {
            let pf = FunctionVector::from_vector(transition_matrix(&model, 0.25 * k as f64).unwrap() * f.as_vector());
            let v = classical_variance(&mu, &pf).unwrap();
            prop_assert!(v <= prev + 1e-12);
            prev = v;
        }
    }

    #[test]
    fn structural_predicates_are_consistent((d, m, erg, seed) in model_params()) {
        let model = common::random_model(d, m, erg, &mut common::rng(seed));
        let r = analyze(&model);
        prop_assert_eq!(r.is_observable, r.observable_space.dim() == d);
        prop_assert_eq!(r.is_ergodic, r.null_space.dim() == 1);
        if r.is_observable || r.is_ergodic {
            prop_assert!(r.is_detectable);
        }
        prop_assert_eq!(r.decomposition.recurrent_classes.len(), r.null_space.dim());
        match undetectable_witness(&model) {
            Ok(w) => {
                prop_assert!(!r.is_detectable);
                for g in r.observable_space.vectors() {
                    prop_assert!(w.rho.expect(&w.f.product(&g)).abs() < 1e-9);
                }
                prop_assert!(classical_variance_under(&w.rho, &w.f) > 1e-6);
            }
            Err(_) => prop_assert!(r.is_detectable),
        }
    }

    #[test]
    fn chi_square_matches_variance_form((d, seed) in (2usize..=8, any::<u64>())) {
        let mut r = common::rng(seed);
        let p = common::random_simplex(d, &mut r);
        let q = common::random_simplex(d, &mut r);
        let v: f64 = (0..d).map(|i| (p[i] / q[i] - 1.0).powi(2) * q[i]).sum();
        prop_assert!((chi_square(&p, &q).unwrap() - v).abs() < 1e-12 * (1.0 + v));
        prop_assert!(chi_square(&p, &p).unwrap().abs() < 1e-14);
    }

    #[test]
    fn fitted_rate_ignores_scale(rate in 0.01f64..2.0, c in 1e-3f64..1e3, noise_seed in any::<u64>()) {
        use rand::Rng;
        let mut r = common::rng(noise_seed);
        let times: Vec<f64> = (0..=200).map(|k| k as f64 * 0.05).collect();
        let mean_chi2: Vec<f64> = times.iter().map(|t| (-rate * t).exp() * (1.0 + 0.05 * r.random_range(-1.0..1.0))).collect();
        let n = times.len();
        let curve = DivergenceCurve { times, mean_chi2, stderr: vec![0.0; n], n_paths: 1, floor_hits: 0 };
        let a = fit_rate(&curve, (1.0, 10.0)).unwrap();
        let b = fit_rate(&curve.scaled(c), (1.0, 10.0)).unwrap();
        prop_assert!((a.rate - b.rate).abs() < 1e-9);
        prop_assert!((b.intercept - a.intercept - c.ln()).abs() < 1e-9);
    }
}

fn classical_variance_under(rho: &SimplexVector, f: &FunctionVector) -> f64 {
    let mean = rho.expect(f);
    rho.as_slice().iter().zip(f.as_slice()).map(|(w, x)| w * (x - mean).powi(2)).sum()
}

#[test]
fn poincare_constant_matches_rayleigh_scan() {
    let mut r = common::rng(99);
    for d in 2..=5 {
        let model = common::random_model(d, 1, true, &mut r);
        let (_, mu) = invariant_measures(&model).remove(0);
        let c = classical_poincare_constant(&model, &mu).unwrap();
        let scan = common::rayleigh_scan(model.rates(), mu.as_slice(), 8, &mut r);
        assert_relative_eq!(c, scan, epsilon = 1e-8, max_relative = 1e-8);
    }
}

#[test]
fn two_state_structure_grid() {
    use filter_stability::model::FiniteHmm;
    for l12 in [0.0, 0.5, 1.0] {
        for l21 in [0.0, 2.0] {
            for (h1, h2) in [(1.0, 1.0), (1.0, 0.0), (0.0, -3.0)] {
                let m = FiniteHmm::from_rows(&[vec![-l12, l12], vec![l21, -l21]], &[vec![h1], vec![h2]]).unwrap();
                let r = analyze(&m);
                assert_eq!(r.is_observable, h1 != h2, "l12={l12} l21={l21} h=({h1},{h2})");
                assert_eq!(r.is_ergodic, l12 + l21 > 0.0, "l12={l12} l21={l21}");
            }
        }
    }
}
