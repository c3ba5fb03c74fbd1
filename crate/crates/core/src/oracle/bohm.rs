//! Bohm quantum potential `Q = -(hbar^2 / 2m) (sqrt rho)'' / sqrt rho`.

use serde::{Deserialize, Serialize};

use crate::dynamics::BranchField;
use crate::error::{Error, Result};
use crate::model::{Axis, ComplexField, PhysicalSetup};

/// Densities below `DENSITY_FLOOR * max` are not divided by.
pub const DENSITY_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct BohmSlice {
    pub values: Vec<f64>,
    pub valid: Vec<bool>,
    /// Absolute floor used on this slice.
    pub floor: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct BohmStats {
    pub max_abs: f64,
    pub mean_abs: f64,
    pub count: usize,
}

impl BohmStats {
    fn accumulate(stats: &mut (f64, f64, usize), q: f64) {
        stats.0 = stats.0.max(q.abs());
        stats.1 += q.abs();
        stats.2 += 1;
    }

    fn finish(stats: (f64, f64, usize)) -> Self {
        BohmStats {
            max_abs: stats.0,
            mean_abs: if stats.2 > 0 { stats.1 / stats.2 as f64 } else { 0.0 },
            count: stats.2,
        }
    }
}

/// Central-difference Bohm potential on one slice. `valid` marks usable
/// densities; Q is defined where a node and both neighbours are usable and
/// the density exceeds the floor.
pub fn bohm_potential(rho: &[f64], valid: &[bool], axis: &Axis, setup: &PhysicalSetup) -> Result<BohmSlice> {
    let m = setup.mass_1d()?;
    let n = rho.len();
    if n != axis.n || valid.len() != n {
        return Err(Error::GridMismatch("density length differs from the axis".into()));
    }
    if rho.iter().zip(valid).any(|(&r, &v)| v && r < 0.0) {
        return Err(Error::param("rho", "density must be non-negative"));
    }
    let max = rho
        .iter()
        .zip(valid)
        .filter(|(_, &v)| v)
        .map(|(&r, _)| r)
        .fold(0.0_f64, f64::max);
    let floor = DENSITY_FLOOR * max;
    let h = axis.h();
    let c = -0.5 * setup.hbar * setup.hbar / (m * h * h);
    let mut values = vec![f64::NAN; n];
    let mut ok = vec![false; n];
    let mut any = false;
    for i in 1..n.saturating_sub(1) {
        if !(valid[i - 1] && valid[i] && valid[i + 1]) || !(rho[i] > floor) || max <= 0.0 {
            continue;
        }
        let (a0, a1, a2) = (rho[i - 1].sqrt(), rho[i].sqrt(), rho[i + 1].sqrt());
        values[i] = c * ((a2 - a1) - (a1 - a0)) / a1;
        ok[i] = true;
        any = true;
    }
    if !any {
        return Err(Error::AllMasked("bohm_potential"));
    }
    Ok(BohmSlice {
        values,
        valid: ok,
        floor,
    })
}

/// Statistics of Q over `|psi|^2` of every slice, skipping `exclude`d nodes.
pub fn field_bohm_stats(field: &ComplexField, setup: &PhysicalSetup, exclude: Option<&[bool]>) -> Result<BohmStats> {
    let n = field.axis.n;
    let mut acc = (0.0, 0.0, 0usize);
    let mut any_slice = false;
    for k in 0..field.time.n {
        let rho: Vec<f64> = field.slice(k).iter().map(|z| z.norm_sqr()).collect();
        let valid = field.valid_slice(k);
        let Ok(q) = bohm_potential(&rho, valid, &field.axis, setup) else { continue };
        any_slice = true;
        for i in 0..n {
            if q.valid[i] && !exclude.is_some_and(|e| e[k * n + i]) {
                BohmStats::accumulate(&mut acc, q.values[i]);
            }
        }
    }
    if !any_slice {
        return Err(Error::AllMasked("field_bohm_stats"));
    }
    Ok(BohmStats::finish(acc))
}

/// Statistics of Q over the transported density of one branch.
pub fn branch_bohm_stats(branch: &BranchField, setup: &PhysicalSetup, exclude: Option<&[bool]>) -> Result<BohmStats> {
    let n = branch.axis.n;
    let mut acc = (0.0, 0.0, 0usize);
    let mut any_slice = false;
    let mut rho = vec![0.0; n];
    let mut valid = vec![false; n];
    for (k, s) in branch.slices.iter().enumerate() {
        if s.len() < 3 {
            continue;
        }
        if s.rho.len() != s.len() {
            return Err(Error::UnresolvedNormalization);
        }
        rho.iter_mut().for_each(|r| *r = 0.0);
        valid.iter_mut().for_each(|v| *v = false);
        for loc in 0..s.len() {
            rho[s.first + loc] = s.rho[loc];
            valid[s.first + loc] = s.valid[loc];
        }
        let Ok(q) = bohm_potential(&rho, &valid, &branch.axis, setup) else { continue };
        any_slice = true;
        for i in 0..n {
            if q.valid[i] && !exclude.is_some_and(|e| e[k * n + i]) {
                BohmStats::accumulate(&mut acc, q.values[i]);
            }
        }
    }
    if !any_slice {
        return Err(Error::AllMasked("branch_bohm_stats"));
    }
    Ok(BohmStats::finish(acc))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::PotentialSpec;

    fn setup() -> PhysicalSetup {
        PhysicalSetup::one_dimensional(1.0, 1.0, PotentialSpec::Free)
    }

    #[test]
    fn constant_density_has_zero_potential() {
        let axis = Axis::new(-1.0, 1.0, 41).unwrap();
        let q = bohm_potential(&vec![0.3; 41], &vec![true; 41], &axis, &setup()).unwrap();
        assert!(q.values.iter().zip(&q.valid).filter(|(_, &v)| v).all(|(q, _)| *q == 0.0));
    }

    #[test]
    fn gaussian_density_matches_closed_form() {
        let sigma = 0.7;
        let axis = Axis::new(-3.0, 3.0, 1201).unwrap();
        let rho: Vec<f64> = axis.nodes().iter().map(|x| (-x * x / (2.0 * sigma * sigma)).exp()).collect();
        let q = bohm_potential(&rho, &vec![true; axis.n], &axis, &setup()).unwrap();
        let s4 = sigma.powi(4);
        for i in (1..axis.n - 1).step_by(50) {
            let x = axis.node(i);
            let exact = -0.5 * (x * x / (4.0 * s4) - 1.0 / (2.0 * sigma * sigma));
            assert!((q.values[i] - exact).abs() < 1e-4, "{x}: {} vs {exact}", q.values[i]);
        }
        let mid = axis.n / 2;
        assert!((q.values[mid] - 1.0 / (4.0 * sigma * sigma)).abs() < 1e-5);
    }

    #[test]
    fn all_masked_is_an_error() {
        let axis = Axis::new(-1.0, 1.0, 11).unwrap();
        assert!(matches!(
            bohm_potential(&vec![1.0; 11], &vec![false; 11], &axis, &setup()),
            Err(Error::AllMasked(_))
        ));
    }
}
