#![allow(dead_code)]

use filter_stability::model::{FiniteHmm, SimplexVector};
use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Random generator on `d` states. With `ergodic` every off-diagonal rate is
/// positive; otherwise about half of them are zero.
pub fn random_model(d: usize, m: usize, ergodic: bool, rng: &mut ChaCha8Rng) -> FiniteHmm {
    let mut a = DMatrix::zeros(d, d);
    for i in 0..d {
        for j in 0..d {
            if i != j && (ergodic || rng.random_bool(0.4)) {
                a[(i, j)] = rng.random_range(0.05..2.0);
            }
        }
        let s: f64 = a.row(i).sum();
        a[(i, i)] = -s;
    }
    let h = DMatrix::from_fn(d, m, |_, _| rng.random_range(-2.0..2.0));
    FiniteHmm::new(a, h).expect("valid generator")
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_simplex(d: usize, rng: &mut ChaCha8Rng) -> SimplexVector {
    SimplexVector::normalized((0..d).map(|_| rng.random_range(0.01..1.0)).collect()).unwrap()
}

/// Brute-force Poincare constant: minimum Rayleigh quotient
/// `E(f) / V(f)` over random directions, refined by projected gradient
/// descent on the `mu`-weighted unit sphere orthogonal to constants.
/// Independent of the library's eigen-solve: it only evaluates the
/// quadratic forms.
pub fn rayleigh_scan(a: &DMatrix<f64>, mu: &[f64], samples: usize, rng: &mut ChaCha8Rng) -> f64 {
    let d = mu.len();
    let energy = |f: &[f64]| -> f64 {
        let mut e = 0.0;
        for i in 0..d {
            for j in 0..d {
                if i != j {
                    e += mu[i] * a[(i, j)] * (f[j] - f[i]).powi(2);
                }
            }
        }
        e
    };
    let normalize = |f: &mut Vec<f64>| {
        let mean: f64 = f.iter().zip(mu).map(|(x, w)| x * w).sum();
        f.iter_mut().for_each(|x| *x -= mean);
        let n: f64 = f.iter().zip(mu).map(|(x, w)| w * x * x).sum::<f64>().sqrt();
        f.iter_mut().for_each(|x| *x /= n);
    };
    // The quadratic form E(f) = f^T K f with K symmetric; its gradient is 2 K f.
    let mut k: DMatrix<f64> = DMatrix::zeros(d, d);
    for i in 0..d {
        for j in 0..d {
            if i != j {
                let w = mu[i] * a[(i, j)];
                k[(i, i)] += w;
                k[(j, j)] += w;
                k[(i, j)] -= w;
                k[(j, i)] -= w;
            }
        }
    }
    // Gradient of E in the mu-weighted inner product is 2 M^-1 K f; the step
    // is bounded by the largest eigenvalue of M^-1/2 K M^-1/2.
    let scaled: DMatrix<f64> = DMatrix::from_fn(d, d, |i, j| k[(i, j)] / (mu[i] * mu[j]).sqrt());
    let step = 0.2 / SymmetricEigen::new(scaled).eigenvalues.amax().max(1e-12);
    let mut best = f64::INFINITY;
    for _ in 0..samples {
        let mut f: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
        normalize(&mut f);
        best = best.min(energy(&f));
        for _ in 0..3000 {
            let kf = &k * nalgebra::DVector::from_column_slice(&f);
            let g: Vec<f64> = (0..d).map(|i| 2.0 * kf[i] / mu[i]).collect();
            for i in 0..d {
                f[i] -= step * g[i];
            }
            normalize(&mut f);
        }
        best = best.min(energy(&f));
    }
    best
}
