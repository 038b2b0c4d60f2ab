//! Builds the undetectability witness for the benchmark model with
//! `epsilon = 0` and `h1`, checks that `rho(f g)` vanishes on the observable
//! space, and shows that the backward-map variance does not decay under the
//! witness priors.

use filter_stability::backward::{claim2_statistic, estimate_y0, variance_y0_debiased, witness_priors, BackwardSetup};
use filter_stability::presets::{benchmark_model, ObservationChoice};
use filter_stability::simulate::{TimeGrid, DEFAULT_DT};
use filter_stability::structure::{observable_space, undetectable_witness};

fn main() {
    let model = benchmark_model(0.0, ObservationChoice::H1);
    let w = undetectable_witness(&model).expect("model is not detectable");
    println!("rho = {:?}", w.rho.as_slice());
    println!("f   = {:?}", w.f.as_slice());

    let basis = observable_space(&model).vectors();
    for (i, g) in basis.iter().enumerate() {
        println!("rho(f g_{i}) = {:.2e}", w.rho.expect(&w.f.product(g)));
    }

    let grid = TimeGrid::new(4.0, DEFAULT_DT).expect("grid");
    let stats = claim2_statistic(&model, &w, &basis, &grid, &[0.0, 1.0, 2.0, 3.0, 4.0], 500, 11).expect("simulation");
    for (t, row) in stats {
        let cells: Vec<String> = row.iter().map(|e| format!("{:+.1e} +- {:.1e}", e.value, e.stderr)).collect();
        println!("t={t:.1}: pi_t(f g) = [{}]", cells.join(", "));
    }

    let (mu, nu) = witness_priors(&w, 0.5).expect("priors");
    for horizon in [1.0, 4.0] {
        let setup = BackwardSetup::new(model.clone(), mu.clone(), nu.clone(), TimeGrid::new(horizon, DEFAULT_DT).expect("grid"), 12);
        let v = variance_y0_debiased(&estimate_y0(&setup, 500).expect("estimate"));
        println!("T={horizon}: var rho(y0) = {:.5} +- {:.5}", v.value, v.stderr);
    }
}
