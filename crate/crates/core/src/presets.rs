//! The four-state benchmark model and its observation choices.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::model::{FiniteHmm, SimplexVector};

/// Two 2-state blocks `{1,2}` and `{3,4}` with rates 1 and 2, coupled
/// between states 2 and 3 at rate `epsilon`.
pub fn benchmark_rates(epsilon: f64) -> DMatrix<f64> {
    #[rustfmt::skip]
    let base = DMatrix::from_row_slice(4, 4, &[
        -1.0,  1.0,  0.0,  0.0,
         2.0, -2.0,  0.0,  0.0,
         0.0,  0.0, -1.0,  1.0,
         0.0,  0.0,  2.0, -2.0,
    ]);
    #[rustfmt::skip]
    let coupling = DMatrix::from_row_slice(4, 4, &[
        0.0,  0.0,  0.0, 0.0,
        0.0, -1.0,  1.0, 0.0,
        0.0,  1.0, -1.0, 0.0,
        0.0,  0.0,  0.0, 0.0,
    ]);
    base + coupling * epsilon
}

/// The three scalar observation functions of the benchmark.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ObservationChoice {
    H1,
    H2,
    H3,
}

impl ObservationChoice {
    pub fn values(self) -> [f64; 4] {
        match self {
            ObservationChoice::H1 => [2.0, 0.0, 2.0, 0.0],
            ObservationChoice::H2 => [2.0, 0.0, 0.0, 0.0],
            ObservationChoice::H3 => [2.0, 0.0, -2.0, 0.0],
        }
    }

    pub fn matrix(self) -> DMatrix<f64> {
        DMatrix::from_column_slice(4, 1, &self.values())
    }

    pub fn name(self) -> &'static str {
        match self {
            ObservationChoice::H1 => "h1",
            ObservationChoice::H2 => "h2",
            ObservationChoice::H3 => "h3",
        }
    }
}

impl fmt::Display for ObservationChoice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ObservationChoice {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "h1" => Ok(Self::H1),
            "h2" => Ok(Self::H2),
            "h3" => Ok(Self::H3),
            other => Err(format!("unknown observation function `{other}` (expected h1, h2, h3)")),
        }
    }
}

pub fn benchmark_model(epsilon: f64, h: ObservationChoice) -> FiniteHmm {
    FiniteHmm::new(benchmark_rates(epsilon), h.matrix()).expect("benchmark model is valid")
}

/// True prior used in the benchmark experiments.
pub fn benchmark_mu() -> SimplexVector {
    SimplexVector::new(vec![0.25, 0.40, 0.30, 0.05]).expect("valid prior")
}

/// Mismatched prior used by the filter under test.
pub fn benchmark_nu() -> SimplexVector {
    SimplexVector::new(vec![0.1, 0.2, 0.3, 0.4]).expect("valid prior")
}

/// One row of the benchmark table.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BenchmarkRow {
    pub epsilon: f64,
    pub h: ObservationChoice,
    pub property: &'static str,
    pub reported_rate: f64,
}

pub const TABLE1: [BenchmarkRow; 5] = [
    BenchmarkRow { epsilon: 0.0, h: ObservationChoice::H1, property: "Not detectable", reported_rate: 0.0 },
    BenchmarkRow { epsilon: 0.0, h: ObservationChoice::H2, property: "Non-ergodic but detectable", reported_rate: 0.075 },
    BenchmarkRow { epsilon: 0.0, h: ObservationChoice::H3, property: "Observable", reported_rate: 0.155 },
    BenchmarkRow { epsilon: 0.1, h: ObservationChoice::H1, property: "Ergodic with h(1)=h(3)", reported_rate: 0.196 },
    BenchmarkRow { epsilon: 0.1, h: ObservationChoice::H3, property: "Ergodic with h(1)!=h(3)", reported_rate: 0.412 },
];
