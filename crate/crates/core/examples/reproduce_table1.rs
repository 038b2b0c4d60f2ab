//! Runs the five benchmark rows and prints fitted rates next to the
//! reported ones. Pass `--quick` for 100 paths.

use filter_stability::stability::{check_table1, reproduce_table1, Table1Options, Table1Tolerance};

fn main() {
    let quick = std::env::args().any(|a| a == "--quick");
    let mut opts = Table1Options::default();
    if quick {
        opts.n_paths = 100;
    }
    let rows = reproduce_table1(&opts).expect("table run");
    println!("{:<6} {:<4} {:<28} {:>8} {:>8} {:>6} {:>14}", "eps", "h", "verdict", "rate", "ref", "R^2", "window");
    for r in &rows {
        println!(
            "{:<6} {:<4} {:<28} {:>8.3} {:>8.3} {:>6.3} [{:>5.2}, {:>5.2}]",
            r.reference.epsilon,
            r.reference.h,
            r.verdict.label(),
            r.fit.rate,
            r.reference.reported_rate,
            r.fit.r_squared,
            r.fit.window.0,
            r.fit.window.1
        );
    }
    let tol = if quick { Table1Tolerance::QUICK } else { Table1Tolerance::STANDARD };
    let failures = check_table1(&rows, tol);
    if failures.is_empty() {
        println!("all rows within tolerance");
    } else {
        for f in failures {
            println!("MISMATCH {f}");
        }
    }
}
