//! Monte-Carlo chi-square curve for one benchmark model, its fitted rate and
//! an SVG plot.
//!
//! Usage: `divergence_curve [epsilon] [h1|h2|h3] [n_paths] [out.svg]`.

use filter_stability::output::{divergence_svg, PlotSeries};
use filter_stability::presets::ObservationChoice;
use filter_stability::simulate::TimeGrid;
use filter_stability::stability::{fit_rate, fit_rate_default, mc_divergence_curve, ExperimentConfig};

fn main() {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let epsilon: f64 = args.first().map_or(0.1, |s| s.parse().expect("epsilon"));
    let h: ObservationChoice = args.get(1).map_or(ObservationChoice::H1, |s| s.parse().expect("h"));
    let n_paths: usize = args.get(2).map_or(500, |s| s.parse().expect("n_paths"));

    let grid = TimeGrid::new(10.0, 0.005).expect("grid");
    let cfg = ExperimentConfig::benchmark(epsilon, h, grid, n_paths, 1);
    let curve = mc_divergence_curve(&cfg).expect("curve");
    for k in (0..curve.times.len()).step_by(200) {
        println!("t={:<5} E chi2 = {:.4e} +- {:.1e}", curve.times[k], curve.mean_chi2[k], curve.stderr[k]);
    }
    let fit = fit_rate_default(&curve).expect("fit");
    println!("default fit: rate {:.3} on [{:.2}, {:.2}], R^2 {:.3}", fit.rate, fit.window.0, fit.window.1, fit.r_squared);
    let full = fit_rate(&curve, (1.0, 10.0)).expect("fit");
    println!("fit on [1, 10]: rate {:.3}", full.rate);
    if let Some(path) = args.get(3) {
        let label = cfg.name.clone();
        let svg = divergence_svg(&[PlotSeries { label: &label, curve: &curve, fit: Some(&fit) }]);
        std::fs::write(path, svg).expect("write svg");
    }
}
