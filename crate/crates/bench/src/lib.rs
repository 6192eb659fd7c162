//! Shared fixtures for the criterion benches.

use treeicp::{sem, Dataset};

/// A builtin model sampled with a fixed seed.
pub fn fixture(spec: &str, n: usize) -> Dataset {
    let spec = sem::builtin_spec(spec).expect("builtin model");
    sem::simulate(&spec, n, 1).expect("simulation succeeds")
}
