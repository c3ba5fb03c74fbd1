//! Classical characteristics and per-branch field reconstruction.

mod branch;
mod integrate;
pub mod interp;

pub use branch::{
    build_branch_fields, build_branch_fields_from, fan_bohm, laplacian_action, propagate_density,
    segments, BranchBuilder, BranchField, BranchSlice, FanBohm, Segment, SliceScalar,
};
pub use integrate::{
    integrate_characteristic, integrate_characteristic_with, Characteristic, FanSlice, FanStepper,
    Sample, StepControl, Tracker,
};
