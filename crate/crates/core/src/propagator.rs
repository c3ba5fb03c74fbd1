//! Branch propagators `psi_j = sqrt(rho_o) exp(-D_c / 2) exp(i phi_j / hbar)`
//! and their branch sum. `D_c` carries `i pi` per caustic crossing.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::clock::ClockSpec;
use crate::dynamics::{
    build_branch_fields, fan_bohm, propagate_density, BranchField, FanBohm, FanSlice, StepControl,
};
use crate::error::{Error, Result};
use crate::model::{
    ComplexField, DiracKind, FanSpec, InitialCondition, PhysicalSetup, RhoAmplitude,
    SpaceTimeGrid,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CalibrationMethod {
    Analytic,
    Explicit,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub rho_o: f64,
    pub method: CalibrationMethod,
}

/// `prod_i m_i / (2 pi hbar eps)` for a position start, `(2 pi hbar)^-d` for a
/// momentum start.
pub fn calibrate_rho_o(setup: &PhysicalSetup, ic: &InitialCondition) -> f64 {
    let two_pi_hbar = 2.0 * PI * setup.hbar;
    match ic.kind {
        DiracKind::Position(_) => setup
            .mass
            .iter()
            .map(|m| m / (two_pi_hbar * ic.epsilon))
            .product(),
        DiracKind::Momentum(_) => two_pi_hbar.powi(-(setup.dimension as i32)),
    }
}

/// Resolve an Auto amplitude with the analytic rule.
pub fn resolve_normalization(
    setup: &PhysicalSetup,
    ic: &InitialCondition,
) -> (InitialCondition, Normalization) {
    match ic.rho_o_amplitude {
        RhoAmplitude::Explicit(a) => (
            ic.clone(),
            Normalization {
                rho_o: a * a,
                method: CalibrationMethod::Explicit,
            },
        ),
        RhoAmplitude::Auto => {
            let rho_o = calibrate_rho_o(setup, ic);
            (
                ic.clone().with_rho_o(rho_o),
                Normalization {
                    rho_o,
                    method: CalibrationMethod::Analytic,
                },
            )
        }
    }
}

#[derive(Debug, Clone)]
pub struct PropagatorField {
    pub branches: Vec<ComplexField>,
    pub sum: ComplexField,
    /// Branches covering each node, slice-major.
    pub branch_count: Vec<u32>,
    pub maslov: Vec<u32>,
    pub normalization: Normalization,
    pub source: InitialCondition,
}

pub fn assemble_propagator(
    branches: &[BranchField],
    setup: &PhysicalSetup,
    ic: &InitialCondition,
) -> Result<PropagatorField> {
    let rho_o = ic.rho_o()?;
    let normalization = Normalization {
        rho_o,
        method: CalibrationMethod::Explicit,
    };
    let Some(first) = branches.first() else {
        return Err(Error::AllMasked("propagator assembly (no branches)"));
    };
    let (axis, time) = (first.axis, first.time);
    let amp_o = rho_o.sqrt();
    let hbar = setup.hbar;
    let mut sum = ComplexField::zeros(axis, time);
    let mut any_invalid = vec![false; axis.n * time.n];
    let mut branch_count = vec![0u32; axis.n * time.n];
    let mut fields = Vec::with_capacity(branches.len());
    for b in branches {
        if !b.axis.same_as(&axis) || !b.time.same_as(&time) {
            return Err(Error::GridMismatch("branches on different grids".into()));
        }
        let mut f = ComplexField::zeros(axis, time);
        f.branch = Some(b.index);
        let maslov = Complex64::from_polar(1.0, -0.5 * PI * b.maslov as f64);
        for (k, s) in b.slices.iter().enumerate() {
            for loc in 0..s.len() {
                let i = s.first + loc;
                let idx = f.index(k, i);
                let psi = amp_o
                    * (-0.5 * s.d[loc]).exp()
                    * maslov
                    * Complex64::from_polar(1.0, s.phi[loc] / hbar);
                f.values[idx] = psi;
                f.valid[idx] = s.valid[loc];
                branch_count[idx] += 1;
                sum.values[idx] += psi;
                if !s.valid[loc] {
                    any_invalid[idx] = true;
                }
            }
        }
        fields.push(f);
    }
    for idx in 0..sum.values.len() {
        sum.valid[idx] = branch_count[idx] > 0 && !any_invalid[idx];
    }
    Ok(PropagatorField {
        branches: fields,
        sum,
        branch_count,
        maslov: branches.iter().map(|b| b.maslov).collect(),
        normalization,
        source: ic.clone(),
    })
}

/// Characteristic-level audit gathered while the fan is traced.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct TraceAudit {
    /// Bohm potential across characteristics (raw units).
    pub fan_bohm: FanBohm,
    /// Largest `|exp(-D) - |J(eps)/J|| / |J(eps)/J|` outside caustic windows.
    pub transport_max_rel: f64,
    /// Largest `|H - H(eps)| / max(|H(eps)|, energy_scale)`.
    pub energy_drift: f64,
    pub flagged_samples: usize,
    pub samples: usize,
}

impl TraceAudit {
    pub fn observe(&mut self, slice: &FanSlice, h0: &[f64], setup: &PhysicalSetup, rho_o: f64, energy_scale: f64) {
        for (s, &e0) in slice.samples.iter().zip(h0) {
            self.samples += 1;
            let drift = (s.energy - e0).abs() / e0.abs().max(energy_scale);
            self.energy_drift = self.energy_drift.max(drift);
            if s.flagged {
                self.flagged_samples += 1;
                continue;
            }
            let rel = ((-s.d).exp() - s.jac_ratio).abs() / s.jac_ratio;
            self.transport_max_rel = self.transport_max_rel.max(rel);
        }
        self.fan_bohm.merge(&fan_bohm(slice, setup, rho_o));
    }
}

#[derive(Debug, Clone)]
pub struct KernelSpec<'a> {
    pub setup: &'a PhysicalSetup,
    pub ic: InitialCondition,
    pub fan: FanSpec,
    pub grid: SpaceTimeGrid,
    pub control: StepControl,
    pub clock: ClockSpec,
    pub energy_scale: f64,
}

pub struct KernelRun {
    pub branches: Vec<BranchField>,
    pub propagator: PropagatorField,
    pub audit: TraceAudit,
}

/// Trace, interpolate, transport density, and assemble in one pass. `visit`
/// sees every fan slice.
pub fn build_kernel(spec: &KernelSpec<'_>, mut visit: impl FnMut(usize, &FanSlice)) -> Result<KernelRun> {
    let (ic, normalization) = resolve_normalization(spec.setup, &spec.ic);
    let rho_o = normalization.rho_o;
    let mut audit = TraceAudit::default();
    let mut h0: Vec<f64> = Vec::new();
    let branches = build_branch_fields(
        spec.setup,
        &ic,
        &spec.fan,
        &spec.grid,
        spec.control,
        spec.clock,
        |k, slice| {
            if k == 0 {
                h0 = slice.samples.iter().map(|s| s.energy).collect();
            }
            audit.observe(slice, &h0, spec.setup, rho_o, spec.energy_scale);
            visit(k, slice);
        },
    )?;
    let branches = branches
        .into_iter()
        .map(|b| propagate_density(b, &ic))
        .collect::<Result<Vec<_>>>()?;
    let mut propagator = assemble_propagator(&branches, spec.setup, &ic)?;
    propagator.normalization = normalization;
    Ok(KernelRun {
        branches,
        propagator,
        audit,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{make_scenario, Overrides};
    use crate::oracle::analytic::free_kernel;

    #[test]
    fn calibration_values() {
        let s = make_scenario("free", &Overrides::new()).unwrap();
        let rho = calibrate_rho_o(&s.setup, &s.initial);
        assert!((rho - 159.154_943_091_895_3).abs() < 1e-9);
        let ic = InitialCondition::momentum(1.0, 1e-3);
        assert!((calibrate_rho_o(&s.setup, &ic) - 1.0 / (2.0 * PI)).abs() < 1e-15);
        let mut ov = Overrides::new();
        ov.insert("dimension".into(), "2".into());
        ov.insert("m".into(), "2".into());
        let s2 = make_scenario("free", &ov).unwrap();
        let per_axis = 2.0 / (2.0 * PI * 1e-3);
        assert!((calibrate_rho_o(&s2.setup, &s2.initial) - per_axis * per_axis).abs() < 1e-6);
    }

    #[test]
    fn unresolved_normalization_is_an_error() {
        let s = make_scenario("free", &Overrides::new()).unwrap();
        assert!(matches!(
            assemble_propagator(&[], &s.setup, &s.initial),
            Err(Error::UnresolvedNormalization)
        ));
    }

    #[test]
    fn free_kernel_magnitude_and_phase() {
        let mut ov = Overrides::new();
        ov.insert("t_max".into(), "0.6".into());
        let s = make_scenario("free", &ov).unwrap();
        let run = build_kernel(
            &KernelSpec {
                setup: &s.setup,
                ic: s.initial.clone(),
                fan: s.fan,
                grid: s.grid.clone(),
                control: StepControl::for_time_axis(&s.grid.time),
                clock: ClockSpec::default(),
                energy_scale: s.energy_scale,
            },
            |_, _| {},
        )
        .unwrap();
        let f = &run.propagator.sum;
        let k = f.time.n - 1;
        let t = f.time.time(k);
        let mut checked = 0;
        for i in 0..f.axis.n {
            if !f.is_valid(k, i) {
                continue;
            }
            let psi = f.at(k, i);
            assert!((psi.norm_sqr() * 2.0 * PI * t - 1.0).abs() < 1e-9);
            // Assembled phase omits the constant -pi/4 of the analytic kernel.
            let reference = free_kernel(1.0, 1.0, f.axis.node(i), 0.0, t) * Complex64::from_polar(1.0, 0.25 * PI);
            assert!((psi - reference).norm() / reference.norm() < 1e-8);
            checked += 1;
        }
        assert!(checked > 100);
        // |psi_j|^2 equals the branch density.
        let b = &run.branches[0];
        for (loc, rho) in b.slices[k].rho.iter().enumerate() {
            let psi = run.propagator.branches[0].at(k, b.slices[k].first + loc);
            assert!((psi.norm_sqr() - rho).abs() <= 1e-10 * rho);
        }
        assert!(run.audit.transport_max_rel < 1e-6);
        assert_eq!(run.audit.fan_bohm.max_abs, 0.0);
    }
}
