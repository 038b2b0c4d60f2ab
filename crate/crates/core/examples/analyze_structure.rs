//! Observable space, null eigenfunctions and the detectability verdict for
//! every benchmark model, plus the JSON report for one of them.

use filter_stability::presets::{benchmark_model, ObservationChoice};
use filter_stability::structure::{analyze, observable_closure_dims};

fn main() {
    for eps in [0.0, 0.1] {
        for h in [ObservationChoice::H1, ObservationChoice::H2, ObservationChoice::H3] {
            let model = benchmark_model(eps, h);
            let r = analyze(&model);
            println!(
                "eps={eps:<4} {h}: dim O = {} (closure {:?}), dim S0 = {}, classes {:?} -> {}",
                r.observable_space.dim(),
                observable_closure_dims(&model),
                r.null_space.dim(),
                r.decomposition.recurrent_classes,
                r.verdict().label()
            );
        }
    }
    let report = analyze(&benchmark_model(0.0, ObservationChoice::H2));
    println!("\n{}", serde_json::to_string_pretty(&report.to_json()).expect("json"));
}
