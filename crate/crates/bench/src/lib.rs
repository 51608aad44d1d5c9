//! Shared fixtures for the criterion benches.

use ensemble_core::model::Family;
use ensemble_core::{ComplexProfile, Grid, HarmonicSpec, SystemSpec, C64};

/// The harmonic ensemble on `[-10, 10]`, `T = 1`, `n` frequency and time samples.
pub fn harmonic_spec(n: usize) -> HarmonicSpec {
    HarmonicSpec::new(-10.0, 10.0, 1.0, n, n, 1e-6).expect("valid harmonic spec")
}

/// `p0 = 1` to the origin on `n` frequencies.
pub fn unit_to_origin(n: usize) -> (ComplexProfile, ComplexProfile) {
    (ComplexProfile::constant(C64::new(1.0, 0.0), n), ComplexProfile::constant(C64::new(0.0, 0.0), n))
}

/// The complex-form harmonic family on an `nt × ns` grid.
pub fn harmonic_operator_setup(nt: usize, ns: usize) -> (SystemSpec, Grid) {
    let sys = Family::Harmonic { omega1: -10.0, omega2: 10.0, t_final: 1.0, complex_form: true }
        .build()
        .expect("valid family");
    let grid = Grid::uniform(1.0, nt, (-10.0, 10.0), ns).expect("valid grid");
    (sys, grid)
}
