//! Crank-Nicolson (Cayley form) reference solver on a Dirichlet box.

use num_complex::Complex64;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{Axis, PhysicalSetup, TimeAxis, WaveField};

/// Boundary amplitudes (relative to the peak) above this raise a warning.
pub const BOUNDARY_TOLERANCE: f64 = 1e-8;

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct CnReport {
    pub steps: usize,
    pub dt: f64,
    /// Largest `| ||psi_{n+1}||^2 / ||psi_n||^2 - 1 |` over all steps.
    pub max_norm_drift_per_step: f64,
    /// Largest `|psi|` next to the walls relative to the peak.
    pub boundary_max: f64,
    pub warnings: Vec<String>,
}

/// Solve `a_i x_{i-1} + b_i x_i + c_i x_{i+1} = d_i` (Thomas algorithm).
/// `a[0]` and `c[n-1]` are ignored.
pub fn solve_tridiagonal(a: &[Complex64], b: &[Complex64], c: &[Complex64], d: &mut [Complex64], scratch: &mut Vec<Complex64>) {
    let n = d.len();
    scratch.clear();
    scratch.resize(n, Complex64::new(0.0, 0.0));
    let cp = scratch;
    cp[0] = c[0] / b[0];
    d[0] /= b[0];
    for i in 1..n {
        let denom = b[i] - a[i] * cp[i - 1];
        cp[i] = if i + 1 < n { c[i] / denom } else { Complex64::new(0.0, 0.0) };
        d[i] = (d[i] - a[i] * d[i - 1]) / denom;
    }
    for i in (0..n - 1).rev() {
        let next = d[i + 1];
        d[i] -= cp[i] * next;
    }
}

struct Stepper {
    // Tridiagonal Hamiltonian on interior nodes.
    lower: Complex64,
    upper: Complex64,
    diag: Vec<f64>,
    dt: f64,
    hbar: f64,
    a: Vec<Complex64>,
    b: Vec<Complex64>,
    c: Vec<Complex64>,
    rhs: Vec<Complex64>,
    scratch: Vec<Complex64>,
}

impl Stepper {
    fn new(setup: &PhysicalSetup, axis: &Axis, dt: f64) -> Result<Self> {
        let m = setup.mass_1d()?;
        let hbar = setup.hbar;
        let qa = setup.qa_1d();
        let h = axis.h();
        let kin = hbar * hbar / (2.0 * m * h * h);
        let drift = hbar * qa / (2.0 * m * h);
        let diag: Vec<f64> = (1..axis.n - 1)
            .map(|i| 2.0 * kin + setup.potential_1d(axis.node(i)).0 + 0.5 * qa * qa / m)
            .collect();
        let lower = Complex64::new(-kin, -drift);
        let upper = Complex64::new(-kin, drift);
        let n = diag.len();
        let half = Complex64::new(0.0, 0.5 * dt / hbar);
        let a = vec![half * lower; n];
        let c = vec![half * upper; n];
        let b = diag.iter().map(|&d| 1.0 + half * d).collect();
        Ok(Stepper {
            lower,
            upper,
            diag,
            dt,
            hbar,
            a,
            b,
            c,
            rhs: vec![Complex64::new(0.0, 0.0); n],
            scratch: Vec::with_capacity(n),
        })
    }

    /// One step on the interior values `u` (walls are zero).
    fn step(&mut self, u: &mut [Complex64]) {
        let n = u.len();
        let half = Complex64::new(0.0, 0.5 * self.dt / self.hbar);
        for i in 0..n {
            let mut hu = self.diag[i] * u[i];
            if i > 0 {
                hu += self.lower * u[i - 1];
            }
            if i + 1 < n {
                hu += self.upper * u[i + 1];
            }
            self.rhs[i] = u[i] - half * hu;
        }
        solve_tridiagonal(&self.a, &self.b, &self.c, &mut self.rhs, &mut self.scratch);
        u.copy_from_slice(&self.rhs);
    }
}

fn sum_sq(u: &[Complex64]) -> f64 {
    u.iter().map(|z| z.norm_sqr()).sum()
}

/// Evolve `psi0` (samples on `axis` at time `t0`) and record the slices of
/// `record`. The step is the largest value not above `dt_max` that divides
/// every recording interval.
pub fn crank_nicolson_evolve(
    setup: &PhysicalSetup,
    psi0: &[Complex64],
    axis: Axis,
    t0: f64,
    record: TimeAxis,
    dt_max: f64,
) -> Result<(WaveField, CnReport)> {
    axis.validate()?;
    record.validate()?;
    if psi0.len() != axis.n {
        return Err(Error::GridMismatch("initial samples differ from the axis".into()));
    }
    if !(dt_max > 0.0) {
        return Err(Error::param("dt", "must be positive"));
    }
    if record.start < t0 - 1e-12 * (1.0 + t0.abs()) {
        return Err(Error::param("t_start", "recording starts before the initial time"));
    }
    let steps_per = (record.dt / dt_max).ceil().max(1.0) as usize;
    let dt = record.dt / steps_per as f64;
    let lead = record.start - t0;
    let lead_steps = (lead / dt_max).ceil() as usize;
    let lead_dt = if lead_steps > 0 { lead / lead_steps as f64 } else { dt };

    let mut u: Vec<Complex64> = psi0[1..axis.n - 1].to_vec();
    let mut report = CnReport {
        dt,
        ..CnReport::default()
    };
    let observe = |u: &[Complex64], report: &mut CnReport| {
        let peak = u.iter().map(|z| z.norm()).fold(0.0_f64, f64::max);
        if peak > 0.0 {
            let edge = u[0].norm().max(u[u.len() - 1].norm());
            report.boundary_max = report.boundary_max.max(edge / peak);
        }
    };

    let run = |stepper: &mut Stepper, u: &mut Vec<Complex64>, count: usize, report: &mut CnReport| {
        for _ in 0..count {
            let before = sum_sq(u);
            stepper.step(u);
            let after = sum_sq(u);
            if before > 0.0 {
                report.max_norm_drift_per_step = report.max_norm_drift_per_step.max((after / before - 1.0).abs());
            }
            report.steps += 1;
        }
    };

    if lead_steps > 0 {
        let mut s = Stepper::new(setup, &axis, lead_dt)?;
        run(&mut s, &mut u, lead_steps, &mut report);
    }
    let mut out = WaveField::zeros(axis, record);
    let mut stepper = Stepper::new(setup, &axis, dt)?;
    let zero = Complex64::new(0.0, 0.0);
    for k in 0..record.n {
        if k > 0 {
            run(&mut stepper, &mut u, steps_per, &mut report);
        }
        observe(&u, &mut report);
        out.set(k, 0, zero, true);
        out.set(k, axis.n - 1, zero, true);
        for (j, z) in u.iter().enumerate() {
            out.set(k, j + 1, *z, true);
        }
    }
    if report.boundary_max > BOUNDARY_TOLERANCE {
        report.warnings.push(format!(
            "boundary amplitude {:.3e} of the peak exceeds {BOUNDARY_TOLERANCE:.0e}; enlarge the box",
            report.boundary_max
        ));
    }
    Ok((out, report))
}

/// Evolve a profile on a box refined by `refine` and padded by `pad` on each
/// side, then sample the target grid. Target nodes coincide with fine nodes.
pub fn evolve_profile(
    setup: &PhysicalSetup,
    target: Axis,
    record: TimeAxis,
    t0: f64,
    profile: impl Fn(f64) -> Complex64,
    refine: usize,
    pad: f64,
    dt_max: f64,
) -> Result<(WaveField, CnReport)> {
    let refine = refine.max(1);
    let fine_h = target.h() / refine as f64;
    let extra = (pad.max(0.0) / fine_h).ceil() as usize;
    let n = (target.n - 1) * refine + 1 + 2 * extra;
    let fine = Axis::new(target.min - extra as f64 * fine_h, target.max + extra as f64 * fine_h, n)?;
    let psi0: Vec<Complex64> = (0..fine.n)
        .map(|i| if i == 0 || i == fine.n - 1 { Complex64::new(0.0, 0.0) } else { profile(fine.node(i)) })
        .collect();
    let (wave, report) = crank_nicolson_evolve(setup, &psi0, fine, t0, record, dt_max)?;
    let mut out = WaveField::zeros(target, record);
    for k in 0..record.n {
        for i in 0..target.n {
            let j = extra + i * refine;
            out.set(k, i, wave.at(k, j), true);
        }
    }
    Ok((out, report))
}

/// `sqrt(m / (2 pi hbar eps)) exp(-m (x - x_o)^2 / (2 hbar eps))`: the free
/// kernel at imaginary time `-i eps`, a Dirac of width `sqrt(hbar eps / m)`.
pub fn regularized_dirac(mass: f64, hbar: f64, epsilon: f64, x_o: f64, x: f64) -> Complex64 {
    let amp = (mass / (2.0 * std::f64::consts::PI * hbar * epsilon)).sqrt();
    Complex64::new(amp * (-mass * (x - x_o).powi(2) / (2.0 * hbar * epsilon)).exp(), 0.0)
}

/// Regularized Dirac at `x_o` evolved to time `t` and sampled on `target`.
/// The fine step resolves the initial width `sqrt(hbar eps / m)`, and the box
/// is padded until the spreading envelope falls below the boundary tolerance.
pub fn evolve_regularized_dirac(
    setup: &PhysicalSetup,
    x_o: f64,
    epsilon: f64,
    target: Axis,
    t: f64,
) -> Result<(WaveField, CnReport)> {
    let m = setup.mass_1d()?;
    let hbar = setup.hbar;
    let sigma = (hbar * epsilon / m).sqrt();
    let fine_h = (sigma / 3.0).min(0.005);
    let refine = (target.h() / fine_h).ceil() as usize;
    let envelope = t * (2.0 * (1.0 / BOUNDARY_TOLERANCE).ln() * hbar / (m * epsilon)).sqrt();
    let near = (x_o - target.min).min(target.max - x_o);
    let pad = (envelope - near).max(0.0) + 1.0;
    let record = TimeAxis::new(t, 1.0, 1)?;
    evolve_profile(
        setup,
        target,
        record,
        0.0,
        |x| regularized_dirac(m, hbar, epsilon, x_o, x),
        refine,
        pad,
        0.1 * epsilon,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::PotentialSpec;
    use crate::oracle::analytic::free_gaussian;

    #[test]
    fn thomas_matches_dense_solve() {
        let a = vec![Complex64::new(0.0, 0.0), Complex64::new(1.0, 0.5), Complex64::new(-0.3, 0.1)];
        let b = vec![Complex64::new(4.0, 0.0), Complex64::new(3.0, 1.0), Complex64::new(5.0, -1.0)];
        let c = vec![Complex64::new(0.2, 0.2), Complex64::new(-1.0, 0.0), Complex64::new(0.0, 0.0)];
        let x = [Complex64::new(1.0, 2.0), Complex64::new(-0.5, 0.0), Complex64::new(0.25, -1.0)];
        let mut d: Vec<Complex64> = (0..3)
            .map(|i| {
                let mut v = b[i] * x[i];
                if i > 0 {
                    v += a[i] * x[i - 1];
                }
                if i < 2 {
                    v += c[i] * x[i + 1];
                }
                v
            })
            .collect();
        solve_tridiagonal(&a, &b, &c, &mut d, &mut Vec::new());
        for i in 0..3 {
            assert!((d[i] - x[i]).norm() < 1e-14);
        }
    }

    #[test]
    fn free_gaussian_is_reproduced() {
        let setup = PhysicalSetup::one_dimensional(1.0, 1.0, PotentialSpec::Free);
        let axis = Axis::new(-15.0, 15.0, 1501).unwrap();
        let psi0: Vec<Complex64> = axis.nodes().iter().map(|&x| free_gaussian(1.0, 1.0, 1.0, 0.0, 1.0, x, 0.0)).collect();
        let record = TimeAxis::new(0.0, 0.5, 3).unwrap();
        let (w, rep) = crank_nicolson_evolve(&setup, &psi0, axis, 0.0, record, 0.005).unwrap();
        assert!(rep.max_norm_drift_per_step < 1e-12);
        assert!(rep.warnings.is_empty());
        let mut err: f64 = 0.0;
        for i in 0..axis.n {
            let exact = free_gaussian(1.0, 1.0, 1.0, 0.0, 1.0, axis.node(i), 1.0);
            err = err.max((w.at(2, i) - exact).norm());
        }
        assert!(err < 2e-3, "{err}");
    }
}
