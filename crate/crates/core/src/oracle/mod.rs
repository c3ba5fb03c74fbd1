//! Independent checks: closed forms, residual operators, Madelung split and
//! a Crank-Nicolson reference solver.

pub mod analytic;
pub mod bohm;
pub mod compare;
pub mod crank_nicolson;
pub mod madelung;
pub mod residual;

pub use bohm::{bohm_potential, branch_bohm_stats, field_bohm_stats, BohmSlice, BohmStats, DENSITY_FLOOR};
pub use compare::{compare_slice, compare_waves, worst_slice, Comparison};
pub use crank_nicolson::{crank_nicolson_evolve, evolve_profile, evolve_regularized_dirac, regularized_dirac, CnReport};
pub use madelung::{continuity_residual, madelung_decompose, recompose, wrap, ContinuityNorms, MadelungPair};
pub use residual::{
    caustic_mask, phase_resolution_mask, residual_report, residual_report_with, stencil_resolution_mask, RawNorms, ResidualOptions,
    ResidualReport,
};
