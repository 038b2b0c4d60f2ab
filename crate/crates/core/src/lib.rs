pub mod linalg;
pub mod model;
pub mod presets;
pub mod structure;
pub mod rng;
pub mod simulate;
pub mod stability;
pub mod backward;
pub mod config;
pub mod output;
pub mod cli;
