//! Closed-form reference waves.

use std::f64::consts::PI;

use num_complex::Complex64;

use crate::model::{Axis, ComplexField, DiracKind, InitialCondition, PhysicalSetup, PotentialSpec, TimeAxis};

/// `sqrt(m / (2 pi i hbar t)) exp(i m (x - x_o)^2 / (2 hbar t))`.
pub fn free_kernel(mass: f64, hbar: f64, x: f64, x_o: f64, t: f64) -> Complex64 {
    let amp = (mass / (2.0 * PI * hbar * t)).sqrt();
    let phase = mass * (x - x_o) * (x - x_o) / (2.0 * hbar * t) - 0.25 * PI;
    Complex64::from_polar(amp, phase)
}

/// Kernel for `V = -f x`.
pub fn linear_kernel(mass: f64, hbar: f64, force: f64, x: f64, x_o: f64, t: f64) -> Complex64 {
    let extra = force * t * (x + x_o) / 2.0 - force * force * t.powi(3) / (24.0 * mass);
    free_kernel(mass, hbar, x, x_o, t) * Complex64::from_polar(1.0, extra / hbar)
}

/// Mehler kernel, including `exp(-i pi / 2)` for every crossing of `omega t = k pi`.
pub fn harmonic_kernel(mass: f64, hbar: f64, omega: f64, x: f64, x_o: f64, t: f64) -> Complex64 {
    let s = (omega * t).sin();
    let c = (omega * t).cos();
    let amp = (mass * omega / (2.0 * PI * hbar * s.abs())).sqrt();
    let crossings = (omega * t / PI).floor();
    let phase = mass * omega * ((x * x + x_o * x_o) * c - 2.0 * x * x_o) / (2.0 * hbar * s)
        - 0.25 * PI
        - 0.5 * PI * crossings;
    Complex64::from_polar(amp, phase)
}

/// Closed-form kernel for a position start, when one is known.
pub fn analytic_kernel(setup: &PhysicalSetup, ic: &InitialCondition) -> Option<impl Fn(f64, f64) -> Complex64> {
    if setup.dimension != 1 || setup.qa_1d() != 0.0 {
        return None;
    }
    let DiracKind::Position(x) = &ic.kind else { return None };
    let (m, hbar, x_o) = (setup.mass[0], setup.hbar, x[0]);
    let potential = setup.potential.clone();
    match potential {
        PotentialSpec::Free | PotentialSpec::Linear { .. } | PotentialSpec::Harmonic { .. } => {}
        _ => return None,
    }
    Some(move |x: f64, t: f64| match potential {
        PotentialSpec::Free => free_kernel(m, hbar, x, x_o, t),
        PotentialSpec::Linear { force } => linear_kernel(m, hbar, force, x, x_o, t),
        PotentialSpec::Harmonic { omega } => harmonic_kernel(m, hbar, omega, x, x_o, t),
        _ => unreachable!(),
    })
}

/// Free Gaussian packet with `|psi(x, 0)|^2 ~ N(center, width^2)`, momentum `p`.
pub fn free_gaussian(mass: f64, hbar: f64, width: f64, center: f64, p: f64, x: f64, t: f64) -> Complex64 {
    let s2 = width * width;
    let a = Complex64::new(s2, hbar * t / (2.0 * mass));
    let xi = x - center - p * t / mass;
    let pref = (2.0 * PI * s2).powf(-0.25) * (Complex64::new(s2, 0.0) / a).sqrt();
    let phase = p * x / hbar - p * p * t / (2.0 * mass * hbar);
    pref * (-(xi * xi) / (4.0 * a)).exp() * Complex64::from_polar(1.0, phase)
}

/// Sample `f(x, t)` on a grid; every node valid where the value is finite.
pub fn sample_field(axis: Axis, time: TimeAxis, f: impl Fn(f64, f64) -> Complex64) -> ComplexField {
    let mut out = ComplexField::zeros(axis, time);
    for k in 0..time.n {
        let t = time.time(k);
        for i in 0..axis.n {
            let v = f(axis.node(i), t);
            let ok = v.re.is_finite() && v.im.is_finite();
            out.set(k, i, v, ok);
        }
    }
    out
}
