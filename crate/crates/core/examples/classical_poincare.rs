//! Classical variance, energy and Poincare constant of the hidden chain,
//! with a finite-difference check that energy is the rate of variance loss.

use filter_stability::model::{
    classical_energy, classical_poincare_constant, classical_variance, dissipation_check, invariant_measures, semigroup_apply,
    FunctionVector,
};
use filter_stability::presets::{benchmark_model, ObservationChoice};

fn main() {
    for eps in [0.0, 0.01, 0.1, 1.0] {
        let model = benchmark_model(eps, ObservationChoice::H1);
        let measures = invariant_measures(&model);
        println!("eps={eps}: {} invariant measure(s)", measures.len());
        for (class, m) in &measures {
            let c = classical_poincare_constant(&model, m).expect("constant");
            println!("  class {class:?}: mu_bar = {:.4?}, Poincare constant = {c:.6}", m.as_slice());
        }
    }

    let model = benchmark_model(0.1, ObservationChoice::H1);
    let (_, mu_bar) = invariant_measures(&model).remove(0);
    let f = FunctionVector::new(vec![1.0, -2.0, 0.5, 3.0]);
    let c = classical_poincare_constant(&model, &mu_bar).expect("constant");
    println!("\nt      var(P_t f)   energy(P_t f)  var bound e^(-ct) var(f)");
    let v0 = classical_variance(&mu_bar, &f).expect("variance");
    for t in [0.0, 1.0, 2.0, 5.0, 10.0] {
        let pf = semigroup_apply(&model, t, &f).expect("semigroup");
        let v = classical_variance(&mu_bar, &pf).expect("variance");
        let e = classical_energy(&model, &mu_bar, &pf).expect("energy");
        println!("{t:<6} {v:<12.6e} {e:<14.6e} {:.6e}", (-c * t).exp() * v0);
    }
    let residual = dissipation_check(&model, &mu_bar, &f, &[0.5, 1.0, 2.0], 1e-4).expect("check");
    println!("\nworst dissipation residual: {residual:.2e}");
}
