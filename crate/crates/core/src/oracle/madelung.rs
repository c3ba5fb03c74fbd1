//! Polar decomposition `psi = sqrt(rho) exp(i phi / hbar)` and the
//! continuity residual of the pair.

use num_complex::Complex64;
use serde::Serialize;

use super::bohm::DENSITY_FLOOR;
use crate::error::{Error, Result};
use crate::model::{Axis, PhysicalSetup, TimeAxis, WaveField};

#[derive(Debug, Clone, PartialEq)]
pub struct MadelungPair {
    pub axis: Axis,
    pub time: TimeAxis,
    pub rho: Vec<f64>,
    /// `hbar` times the unwrapped phase.
    pub phi: Vec<f64>,
    pub valid: Vec<bool>,
    /// Adjacent wrapped phase steps above `pi / 2` on resolved density.
    pub ambiguous_steps: usize,
    pub warnings: Vec<String>,
}

/// Wrap an angle into `(-pi, pi]`.
#[inline]
pub fn wrap(a: f64) -> f64 {
    use std::f64::consts::{PI, TAU};
    let mut r = a.rem_euclid(TAU);
    if r > PI {
        r -= TAU;
    }
    r
}

pub fn madelung_decompose(psi: &WaveField, hbar: f64) -> Result<MadelungPair> {
    let (axis, time) = (psi.axis, psi.time);
    let n = axis.n;
    let mut rho = vec![0.0; n * time.n];
    let mut phi = vec![f64::NAN; n * time.n];
    let mut ambiguous = 0usize;
    let mut warnings = Vec::new();
    for k in 0..time.n {
        let row = psi.slice(k);
        let ok = psi.valid_slice(k);
        let max = row
            .iter()
            .zip(ok)
            .filter(|(_, &v)| v)
            .map(|(z, _)| z.norm_sqr())
            .fold(0.0_f64, f64::max);
        let floor = DENSITY_FLOOR * max;
        for i in 0..n {
            rho[k * n + i] = row[i].norm_sqr();
        }
        // Start from the valid node nearest to the centre and walk outward.
        let centre = n / 2;
        let Some(start) = (0..n)
            .filter(|&i| ok[i])
            .min_by_key(|&i| i.abs_diff(centre))
        else {
            continue;
        };
        let mut slice_ambiguous = 0usize;
        phi[k * n + start] = row[start].arg();
        let mut walk = |range: Box<dyn Iterator<Item = usize>>, step: isize| {
            let mut prev = start;
            for i in range {
                if !ok[i] {
                    continue;
                }
                let d = wrap(row[i].arg() - row[prev].arg());
                if d.abs() > 0.5 * std::f64::consts::PI
                    && rho[k * n + i] > floor
                    && rho[k * n + prev] > floor
                    && (i as isize - prev as isize) == step
                {
                    slice_ambiguous += 1;
                }
                phi[k * n + i] = phi[k * n + prev] + d;
                prev = i;
            }
        };
        walk(Box::new(start + 1..n), 1);
        walk(Box::new((0..start).rev()), -1);
        if slice_ambiguous > 0 && warnings.len() < 8 {
            warnings.push(format!(
                "t = {}: {slice_ambiguous} adjacent phase steps exceed pi/2; unwrapping may be ambiguous",
                time.time(k)
            ));
        }
        ambiguous += slice_ambiguous;
    }
    for v in &mut phi {
        *v *= hbar;
    }
    Ok(MadelungPair {
        axis,
        time,
        rho,
        phi,
        valid: psi.valid.clone(),
        ambiguous_steps: ambiguous,
        warnings,
    })
}

pub fn recompose(pair: &MadelungPair, hbar: f64) -> Vec<Complex64> {
    pair.rho
        .iter()
        .zip(&pair.phi)
        .map(|(&r, &p)| Complex64::from_polar(r.sqrt(), p / hbar))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ContinuityNorms {
    pub l2: f64,
    pub linf: f64,
    pub nodes: usize,
}

/// `rho_t + d/dx (rho (phi_x - qA) / m)` in flux form, normalized like the
/// Schroedinger residual: `sqrt(sum hbar^2 c^2 / (4 rho)) / (sqrt(sum rho) E)`.
pub fn continuity_residual(pair: &MadelungPair, setup: &PhysicalSetup, energy_scale: f64) -> Result<ContinuityNorms> {
    let (axis, time) = (pair.axis, pair.time);
    if time.n < 3 {
        return Err(Error::TooFewSlices {
            what: "continuity_residual",
            found: time.n,
            needed: 3,
        });
    }
    let m = setup.mass_1d()?;
    let qa = setup.qa_1d();
    let hbar = setup.hbar;
    let (n, h, dt) = (axis.n, axis.h(), time.dt);
    let ok = |k: usize, i: usize| pair.valid[k * n + i] && pair.phi[k * n + i].is_finite();
    let (mut s_c, mut s_rho, mut max_c, mut max_a, mut nodes) = (0.0, 0.0, 0.0_f64, 0.0_f64, 0usize);
    for k in 1..time.n - 1 {
        let floor = DENSITY_FLOOR
            * (0..n)
                .filter(|&i| ok(k, i))
                .map(|i| pair.rho[k * n + i])
                .fold(0.0_f64, f64::max);
        for i in 1..n - 1 {
            if !(ok(k, i) && ok(k, i - 1) && ok(k, i + 1) && ok(k - 1, i) && ok(k + 1, i)) {
                continue;
            }
            let r = |kk: usize, ii: usize| pair.rho[kk * n + ii];
            let p = |kk: usize, ii: usize| pair.phi[kk * n + ii];
            let rho = r(k, i);
            if !(rho > floor) {
                continue;
            }
            let flux = |a: usize, b: usize| 0.5 * (r(k, a) + r(k, b)) * ((p(k, b) - p(k, a)) / h - qa) / m;
            let c = (r(k + 1, i) - r(k - 1, i)) / (2.0 * dt) + (flux(i, i + 1) - flux(i - 1, i)) / h;
            s_c += hbar * hbar * c * c / (4.0 * rho);
            s_rho += rho;
            max_c = max_c.max(hbar * c.abs() / (2.0 * rho.sqrt()));
            max_a = max_a.max(rho.sqrt());
            nodes += 1;
        }
    }
    if nodes == 0 {
        return Err(Error::AllMasked("continuity_residual"));
    }
    Ok(ContinuityNorms {
        l2: (s_c / s_rho).sqrt() / energy_scale,
        linf: max_c / (max_a * energy_scale),
        nodes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ComplexField, PotentialSpec};

    #[test]
    fn plane_wave_round_trip_and_zero_continuity() {
        let axis = Axis::new(-5.0, 5.0, 201).unwrap();
        let time = TimeAxis::new(0.0, 0.01, 5).unwrap();
        let p = 1.7;
        let mut f = ComplexField::zeros(axis, time);
        for k in 0..time.n {
            for i in 0..axis.n {
                let (x, t) = (axis.node(i), time.time(k));
                f.set(k, i, Complex64::from_polar(1.0, p * x - 0.5 * p * p * t), true);
            }
        }
        let pair = madelung_decompose(&f, 1.0).unwrap();
        let back = recompose(&pair, 1.0);
        for (a, b) in back.iter().zip(&f.values) {
            assert!((a - b).norm() < 1e-12);
        }
        let k = 2;
        let slope = (pair.phi[k * 201 + 150] - pair.phi[k * 201 + 50]) / (axis.node(150) - axis.node(50));
        assert!((slope - p).abs() < 1e-10);
        let setup = PhysicalSetup::one_dimensional(1.0, 1.0, PotentialSpec::Free);
        let c = continuity_residual(&pair, &setup, 1.0).unwrap();
        assert!(c.l2 < 1e-12);
    }

    #[test]
    fn frozen_density_has_continuity_residual() {
        // rho = Gaussian moving with velocity 1, but frozen in time.
        let axis = Axis::new(-5.0, 5.0, 201).unwrap();
        let time = TimeAxis::new(0.0, 0.01, 3).unwrap();
        let mut f = ComplexField::zeros(axis, time);
        for k in 0..3 {
            for i in 0..axis.n {
                let x = axis.node(i);
                f.set(k, i, Complex64::from_polar((-x * x / 2.0).exp(), x), true);
            }
        }
        let pair = madelung_decompose(&f, 1.0).unwrap();
        let setup = PhysicalSetup::one_dimensional(1.0, 1.0, PotentialSpec::Free);
        assert!(continuity_residual(&pair, &setup, 1.0).unwrap().l2 > 0.1);
    }
}
