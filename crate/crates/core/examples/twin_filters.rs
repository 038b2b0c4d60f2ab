//! One path of the hidden chain with the two filters started from the
//! mismatched priors, written as CSV to stdout (or a file given as the first
//! argument).

use filter_stability::presets::{benchmark_model, benchmark_mu, benchmark_nu, ObservationChoice};
use filter_stability::rng::stream_rng;
use filter_stability::simulate::{run_twin_filters, FilterScheme, TimeGrid};
use filter_stability::stability::chi_square;

fn main() {
    let model = benchmark_model(0.1, ObservationChoice::H3);
    let grid = TimeGrid::new(5.0, 0.005).expect("grid");
    let mut rng = stream_rng(42, &[0]);
    let path = run_twin_filters(&model, &benchmark_mu(), &benchmark_nu(), &grid, &benchmark_mu(), FilterScheme::ZakaiSplit, &mut rng).expect("path");

    for k in (0..=grid.n_steps()).step_by(200) {
        let c = chi_square(&path.pi_mu[k], &path.pi_nu[k]).expect("chi2");
        eprintln!("t={:<4} x={} chi2={c:.3e}", grid.time(k), path.x_path[k] + 1);
    }
    eprintln!("gamma_T = {:.4?} (floor hits: {})", path.gamma_t.as_slice(), path.floor_hits);
    match std::env::args().nth(1) {
        Some(file) => std::fs::write(&file, path.to_csv()).expect("write csv"),
        None => print!("{}", path.to_csv()),
    }
}
