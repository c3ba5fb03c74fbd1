//! Schroedinger, continuity and Hamilton-Jacobi(+Q) residuals of a gridded wave.
//!
//! All norms are taken over one common set of audited nodes. `l2` norms are
//! `sqrt(sum |r|^2) / (sqrt(sum |psi|^2) E)`; the Madelung residuals are
//! weighted so that `|r|^2 = rho hjq^2 + hbar^2 c^2 / (4 rho)` pointwise.

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::bohm::{bohm_potential, DENSITY_FLOOR};
use super::madelung::{madelung_decompose, wrap, MadelungPair};
use crate::dynamics::BranchField;
use crate::error::{Error, Result};
use crate::model::{PhysicalSetup, WaveField};

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct RawNorms {
    pub schrodinger_l2: f64,
    pub schrodinger_linf: f64,
    pub continuity_l2: f64,
    pub hjq_l2: f64,
    pub hj_l2: f64,
    pub bohm_max: f64,
    pub bohm_mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualReport {
    pub schrodinger_l2: f64,
    pub schrodinger_linf: f64,
    pub continuity_l2: f64,
    pub hjq_l2: f64,
    pub bohm_max: f64,
    pub bohm_mean: f64,
    /// Interior nodes excluded by validity or caustic masks.
    pub mask_fraction: f64,
    pub continuity_linf: f64,
    pub hjq_linf: f64,
    /// Hamilton-Jacobi residual without the Bohm term.
    pub hj_l2: f64,
    pub hj_linf: f64,
    /// Interior nodes excluded only by the stencil-resolution mask.
    pub resolution_fraction: f64,
    pub audited_nodes: usize,
    pub energy_scale: f64,
    pub h: f64,
    pub dt: f64,
    pub density_floor: f64,
    pub warnings: Vec<String>,
    /// Same quantities in physical units (not divided by the energy scale).
    pub raw: RawNorms,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct ResidualOptions<'a> {
    pub energy_scale: f64,
    /// Nodes inside caustic windows.
    pub caustic_mask: Option<&'a [bool]>,
    /// Nodes whose stencils do not resolve the field.
    pub resolution_mask: Option<&'a [bool]>,
}

impl<'a> ResidualOptions<'a> {
    pub fn new(energy_scale: f64) -> Self {
        ResidualOptions {
            energy_scale,
            caustic_mask: None,
            resolution_mask: None,
        }
    }
}

#[derive(Default, Clone, Copy)]
struct Acc {
    r2: f64,
    psi2: f64,
    r_max: f64,
    psi_max: f64,
    c2: f64,
    c_max: f64,
    hjq2: f64,
    hjq_max: f64,
    hj2: f64,
    hj_max: f64,
    q_max: f64,
    q_sum: f64,
    nodes: usize,
    masked: usize,
    unresolved: usize,
    interior: usize,
}

impl Acc {
    fn merge(mut self, o: Acc) -> Acc {
        self.r2 += o.r2;
        self.psi2 += o.psi2;
        self.r_max = self.r_max.max(o.r_max);
        self.psi_max = self.psi_max.max(o.psi_max);
        self.c2 += o.c2;
        self.c_max = self.c_max.max(o.c_max);
        self.hjq2 += o.hjq2;
        self.hjq_max = self.hjq_max.max(o.hjq_max);
        self.hj2 += o.hj2;
        self.hj_max = self.hj_max.max(o.hj_max);
        self.q_max = self.q_max.max(o.q_max);
        self.q_sum += o.q_sum;
        self.nodes += o.nodes;
        self.masked += o.masked;
        self.unresolved += o.unresolved;
        self.interior += o.interior;
        self
    }
}

/// Full residual audit of `psi`.
pub fn residual_report(psi: &WaveField, setup: &PhysicalSetup, opts: ResidualOptions<'_>) -> Result<ResidualReport> {
    let pair = madelung_decompose(psi, setup.hbar)?;
    residual_report_with(psi, &pair, setup, opts)
}

pub fn residual_report_with(
    psi: &WaveField,
    pair: &MadelungPair,
    setup: &PhysicalSetup,
    opts: ResidualOptions<'_>,
) -> Result<ResidualReport> {
    let (axis, time) = (psi.axis, psi.time);
    if time.n < 3 {
        return Err(Error::TooFewSlices {
            what: "schrodinger_residual",
            found: time.n,
            needed: 3,
        });
    }
    if !(opts.energy_scale > 0.0) {
        return Err(Error::param("energy_scale", "must be positive"));
    }
    let m = setup.mass_1d()?;
    let qa = setup.qa_1d();
    let hbar = setup.hbar;
    let (n, h, dt) = (axis.n, axis.h(), time.dt);
    for mask in [opts.caustic_mask, opts.resolution_mask].into_iter().flatten() {
        if mask.len() != n * time.n {
            return Err(Error::GridMismatch("mask length differs from the field".into()));
        }
    }
    let finite = |z: Complex64| z.re.is_finite() && z.im.is_finite();
    let usable = |k: usize, i: usize| psi.is_valid(k, i) && finite(psi.at(k, i)) && pair.phi[k * n + i].is_finite();
    let caustic = |k: usize, i: usize| opts.caustic_mask.is_some_and(|c| c[k * n + i]);
    let unresolved = |k: usize, i: usize| opts.resolution_mask.is_some_and(|c| c[k * n + i]);
    let potential: Vec<f64> = (0..n).map(|i| setup.potential_1d(axis.node(i)).0).collect();
    let lap_c = hbar * hbar / (2.0 * m * h * h);

    // Slices in parallel, merged in order so results are reproducible.
    let acc = (1..time.n - 1)
        .into_par_iter()
        .map(|k| {
            let mut a = Acc::default();
            let rho_k = &pair.rho[k * n..(k + 1) * n];
            let valid_k: Vec<bool> = (0..n).map(|i| usable(k, i)).collect();
            let q = bohm_potential(rho_k, &valid_k, &axis, setup).ok();
            let max_rho = (0..n).filter(|&i| valid_k[i]).map(|i| rho_k[i]).fold(0.0_f64, f64::max);
            let floor = DENSITY_FLOOR * max_rho;
            for i in 1..n - 1 {
                a.interior += 1;
                let stencil = [(k, i), (k, i - 1), (k, i + 1), (k - 1, i), (k + 1, i)];
                if !stencil.iter().all(|&(kk, ii)| usable(kk, ii)) || stencil.iter().any(|&(kk, ii)| caustic(kk, ii)) {
                    a.masked += 1;
                    continue;
                }
                if unresolved(k, i) {
                    a.unresolved += 1;
                    continue;
                }
                let rho = rho_k[i];
                if !(rho > floor) {
                    continue;
                }
                let Some(q) = q.as_ref().filter(|q| q.valid[i]) else { continue };
                let qi = q.values[i];

                let z = psi.at(k, i);
                let zt = (psi.at(k + 1, i) - psi.at(k - 1, i)) / (2.0 * dt);
                let zx = (psi.at(k, i + 1) - psi.at(k, i - 1)) / (2.0 * h);
                let zxx = (psi.at(k, i + 1) - z) - (z - psi.at(k, i - 1));
                let i_unit = Complex64::i();
                let hz = -lap_c * zxx + i_unit * hbar * qa / m * zx + (0.5 * qa * qa / m + potential[i]) * z;
                let r = i_unit * hbar * zt - hz;
                a.r2 += r.norm_sqr();
                a.psi2 += z.norm_sqr();
                a.r_max = a.r_max.max(r.norm());
                a.psi_max = a.psi_max.max(z.norm());

                let ph = |kk: usize, ii: usize| pair.phi[kk * n + ii];
                let r_at = |ii: usize| pair.rho[k * n + ii];
                let dphi = |a: f64, b: f64| hbar * wrap((b - a) / hbar);
                let phi_t = dphi(ph(k - 1, i), ph(k + 1, i)) / (2.0 * dt);
                let phi_x = dphi(ph(k, i - 1), ph(k, i + 1)) / (2.0 * h);
                let hj = phi_t + (phi_x - qa) * (phi_x - qa) / (2.0 * m) + potential[i];
                let hjq = hj + qi;
                let sq = rho.sqrt();
                a.hj2 += rho * hj * hj;
                a.hjq2 += rho * hjq * hjq;
                a.hj_max = a.hj_max.max(sq * hj.abs());
                a.hjq_max = a.hjq_max.max(sq * hjq.abs());

                let flux = |l: usize, rr: usize| {
                    0.5 * (r_at(l) + r_at(rr)) * (dphi(ph(k, l), ph(k, rr)) / h - qa) / m
                };
                let c = (pair.rho[(k + 1) * n + i] - pair.rho[(k - 1) * n + i]) / (2.0 * dt)
                    + (flux(i, i + 1) - flux(i - 1, i)) / h;
                a.c2 += hbar * hbar * c * c / (4.0 * rho);
                a.c_max = a.c_max.max(hbar * c.abs() / (2.0 * sq));

                a.q_max = a.q_max.max(qi.abs());
                a.q_sum += qi.abs();
                a.nodes += 1;
            }
            a
        })
        .collect::<Vec<_>>()
        .into_iter()
        .fold(Acc::default(), Acc::merge);

    if acc.nodes == 0 {
        return Err(Error::AllMasked("residual audit"));
    }
    let l2 = |s: f64| (s / acc.psi2).sqrt();
    let linf = |s: f64| s / acc.psi_max;
    let raw = RawNorms {
        schrodinger_l2: l2(acc.r2),
        schrodinger_linf: linf(acc.r_max),
        continuity_l2: l2(acc.c2),
        hjq_l2: l2(acc.hjq2),
        hj_l2: l2(acc.hj2),
        bohm_max: acc.q_max,
        bohm_mean: acc.q_sum / acc.nodes as f64,
    };
    let e = opts.energy_scale;
    let interior = acc.interior.max(1) as f64;
    let mut warnings = pair.warnings.clone();
    if acc.psi2 > 0.0 && pair.ambiguous_steps > 0 {
        warnings.push(format!("{} ambiguous phase steps in total", pair.ambiguous_steps));
    }
    Ok(ResidualReport {
        schrodinger_l2: raw.schrodinger_l2 / e,
        schrodinger_linf: raw.schrodinger_linf / e,
        continuity_l2: raw.continuity_l2 / e,
        hjq_l2: raw.hjq_l2 / e,
        bohm_max: raw.bohm_max / e,
        bohm_mean: raw.bohm_mean / e,
        mask_fraction: acc.masked as f64 / interior,
        continuity_linf: linf(acc.c_max) / e,
        hjq_linf: linf(acc.hjq_max) / e,
        hj_l2: raw.hj_l2 / e,
        hj_linf: linf(acc.hj_max) / e,
        resolution_fraction: acc.unresolved as f64 / interior,
        audited_nodes: acc.nodes,
        energy_scale: e,
        h,
        dt,
        density_floor: DENSITY_FLOOR,
        warnings,
        raw,
    })
}

/// Nodes where some branch's density changes by more than `limit` (relative)
/// over one time step, `dt |lap phi| > limit`, so central time differences
/// of the gridded wave are not resolved.
pub fn stencil_resolution_mask(branches: &[BranchField], limit: f64) -> Vec<bool> {
    let Some(first) = branches.first() else { return Vec::new() };
    let (n, dt) = (first.axis.n, first.time.dt);
    let mut mask = vec![false; n * first.time.n];
    for b in branches {
        for (k, s) in b.slices.iter().enumerate() {
            for loc in 0..s.len() {
                let lap = s.lap_phi[loc];
                if !lap.is_finite() || dt * lap.abs() > limit {
                    mask[k * n + s.first + loc] = true;
                }
            }
        }
    }
    mask
}

/// Same criterion as [`stencil_resolution_mask`] for a wave with no branch
/// record: `lap phi` is taken from the wave's own phase.
pub fn phase_resolution_mask(pair: &MadelungPair, setup: &PhysicalSetup, limit: f64) -> Result<Vec<bool>> {
    let m = setup.mass_1d()?;
    let (n, h, dt, hbar) = (pair.axis.n, pair.axis.h(), pair.time.dt, setup.hbar);
    let mut mask = vec![false; pair.phi.len()];
    for k in 0..pair.time.n {
        let o = k * n;
        for i in 1..n.saturating_sub(1) {
            let (l, c, r) = (o + i - 1, o + i, o + i + 1);
            if !(pair.valid[l] && pair.valid[c] && pair.valid[r]) {
                continue;
            }
            let up = hbar * wrap((pair.phi[r] - pair.phi[c]) / hbar);
            let down = hbar * wrap((pair.phi[c] - pair.phi[l]) / hbar);
            let lap = (up - down) / (h * h * m);
            if !lap.is_finite() || dt * lap.abs() > limit {
                mask[c] = true;
            }
        }
    }
    Ok(mask)
}

/// Covered nodes that some branch leaves invalid (inside caustic windows).
pub fn caustic_mask(branches: &[BranchField]) -> Vec<bool> {
    let Some(first) = branches.first() else { return Vec::new() };
    let n = first.axis.n;
    let mut mask = vec![false; n * first.time.n];
    for b in branches {
        for (k, s) in b.slices.iter().enumerate() {
            for loc in 0..s.len() {
                if !s.valid[loc] {
                    mask[k * n + s.first + loc] = true;
                }
            }
        }
    }
    mask
}
