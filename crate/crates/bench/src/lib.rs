//! Benchmark fixtures shared by the criterion benches.

use onebit_core::harness::matrix_entry;
use onebit_core::{Distribution, FamilyParams};

/// A named fixture from the standard matrix with its family parameters.
pub fn fixture(name: &str) -> (Distribution, FamilyParams) {
    let entry = matrix_entry(name).expect("known matrix fixture");
    (entry.distribution().expect("valid fixture"), entry.params)
}
