//! Open-loop steering of parameterized families of linear systems.
//!
//! The pipeline: build a [`SystemSpec`], compute transition matrices on a
//! [`Grid`], assemble the control-to-endpoint operator, take its singular
//! system and synthesize the truncated minimum-norm control. The harmonic
//! oscillator ensemble has a dedicated route through discrete prolate
//! spheroidal sequences, and the amplitude-constrained variant is a
//! box-constrained QP.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

/// Crate version, recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub mod control;
pub mod error;
pub mod grid;
pub mod model;
pub mod operator;
pub mod oscillator;
pub mod qp;
pub mod quadrature;
pub mod spheroidal;

pub use control::ControlSignal;
pub use nalgebra::{DMatrix, DVector};
pub use num_complex::Complex64 as C64;
pub use error::{EnsembleError, Result};
pub use grid::Grid;
pub use model::{
    repeated_eigenvalue_check, simulate_ensemble, transition_matrices, EnsembleTrajectory, Family, SystemSpec,
    TransitionTensor,
};
pub use operator::{
    apply_adjoint, assemble, illposedness_demo, picard_diagnostic, singular_system, synthesize_min_norm, target_offset,
    DiscreteOperator, PicardThresholds, SingularSystem, TargetOffset,
};
pub use spheroidal::{continuous_basis, dpss, sinc_matrix, ContinuousBasis, SpheroidalBasis};
pub use oscillator::{synthesize_alpha, verify_by_simulation, ComplexProfile, HarmonicSpec};
pub use qp::{build_qp, certify_positive_definite, solve_box_qp, solve_box_qp_from, QpProblem, QpSolution};
