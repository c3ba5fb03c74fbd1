//! General waves as quadratures of propagators over initial conditions.

use std::f64::consts::PI;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::clock::ClockSpec;
use crate::dynamics::StepControl;
use crate::error::{Error, Result};
use crate::model::{
    Axis, ComplexField, FanSpec, InitialCondition, PacketSpec, PhysicalSetup, PointSource, SpaceTimeGrid,
    SuperpositionSpec, TimeAxis, WaveField,
};
use crate::propagator::{build_kernel, KernelSpec, PropagatorField};

/// Largest admissible mass of the initial wave outside the source grid, and
/// the relative amplitude below which a source needs no kernel.
pub const TAIL_LIMIT: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Representation {
    Position,
    Momentum,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Profile {
    Gaussian(PacketSpec),
    TwoPointSources { x1: f64, x2: f64, phase: f64 },
    /// Samples on `axis`, linearly interpolated elsewhere and zero outside.
    Tabulated { axis: Axis, values: Vec<Complex64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InitialWave {
    pub representation: Representation,
    pub profile: Profile,
}

impl InitialWave {
    pub fn gaussian(packet: PacketSpec) -> Self {
        InitialWave {
            representation: Representation::Position,
            profile: Profile::Gaussian(packet),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match &self.profile {
            Profile::Gaussian(p) => {
                if !(p.width > 0.0) || !p.width.is_finite() {
                    return Err(Error::param("packet.width", "must be positive"));
                }
                if !p.center.is_finite() || !p.momentum.is_finite() {
                    return Err(Error::param("packet", "must be finite"));
                }
            }
            Profile::TwoPointSources { x1, x2, phase } => {
                if !(x1.is_finite() && x2.is_finite() && phase.is_finite()) || x1 == x2 {
                    return Err(Error::param("sources", "need two distinct finite positions"));
                }
            }
            Profile::Tabulated { axis, values } => {
                axis.validate()?;
                if values.len() != axis.n {
                    return Err(Error::GridMismatch("tabulated samples differ from their axis".into()));
                }
                if values.iter().any(|z| !(z.re.is_finite() && z.im.is_finite())) {
                    return Err(Error::param("values", "must be finite"));
                }
            }
        }
        Ok(())
    }
}

/// `(2 pi s^2)^{-1/4} exp(-(x - c)^2 / (4 s^2) + i p x / hbar)`.
pub fn gaussian_packet(packet: &PacketSpec, hbar: f64, x: f64) -> Complex64 {
    let s2 = packet.width * packet.width;
    let amp = (2.0 * PI * s2).powf(-0.25) * (-(x - packet.center).powi(2) / (4.0 * s2)).exp();
    Complex64::from_polar(amp, packet.momentum * x / hbar)
}

fn trapezoid_norm(axis: &Axis, v: &[Complex64]) -> f64 {
    v.iter().enumerate().map(|(i, z)| axis.weight(i) * z.norm_sqr()).sum::<f64>().sqrt()
}

/// Samples of `wave` on `axis`, normalized to unit trapezoid norm.
pub fn sample_initial_wave(wave: &InitialWave, axis: &Axis, hbar: f64) -> Result<Vec<Complex64>> {
    wave.validate()?;
    if wave.representation != Representation::Position {
        return Err(Error::Unsupported("momentum-representation superposition".into()));
    }
    let mut v: Vec<Complex64> = match &wave.profile {
        Profile::Gaussian(p) => {
            let z = |x: f64| (x - p.center) / (std::f64::consts::SQRT_2 * p.width);
            let tail = 0.5 * libm::erfc(z(axis.max)) + 0.5 * libm::erfc(-z(axis.min));
            if tail > TAIL_LIMIT {
                return Err(Error::TailMass {
                    tail,
                    limit: TAIL_LIMIT,
                });
            }
            axis.nodes().iter().map(|&x| gaussian_packet(p, hbar, x)).collect()
        }
        Profile::TwoPointSources { x1, x2, phase } => {
            let mut v = vec![Complex64::new(0.0, 0.0); axis.n];
            for (x, w) in [(*x1, Complex64::new(1.0, 0.0)), (*x2, Complex64::from_polar(1.0, *phase))] {
                let i = axis.nearest(x).ok_or(Error::TailMass {
                    tail: 0.5,
                    limit: TAIL_LIMIT,
                })?;
                if i == 0 || i == axis.n - 1 {
                    return Err(Error::TailMass {
                        tail: 0.5,
                        limit: TAIL_LIMIT,
                    });
                }
                v[i] += w;
            }
            v
        }
        Profile::Tabulated { axis: src, values } => {
            let total: f64 = values.iter().enumerate().map(|(i, z)| src.weight(i) * z.norm_sqr()).sum();
            let outside: f64 = values
                .iter()
                .enumerate()
                .filter(|(i, _)| {
                    let x = src.node(*i);
                    x < axis.min || x > axis.max
                })
                .map(|(i, z)| src.weight(i) * z.norm_sqr())
                .sum();
            if total > 0.0 && outside / total > TAIL_LIMIT {
                return Err(Error::TailMass {
                    tail: outside / total,
                    limit: TAIL_LIMIT,
                });
            }
            axis.nodes()
                .iter()
                .map(|&x| {
                    if x < src.min || x > src.max {
                        return Complex64::new(0.0, 0.0);
                    }
                    let u = (x - src.min) / src.h();
                    let j = (u.floor() as usize).min(src.n - 2);
                    let f = u - j as f64;
                    values[j] * (1.0 - f) + values[j + 1] * f
                })
                .collect()
        }
    };
    let norm = trapezoid_norm(axis, &v);
    if !(norm > 0.0) {
        return Err(Error::param("initial_wave", "zero norm on the source grid"));
    }
    v.iter_mut().for_each(|z| *z /= norm);
    Ok(v)
}

/// One kernel per source node (`None` where no kernel was requested).
#[derive(Debug, Clone)]
pub struct KernelFamily {
    pub axis: Axis,
    pub time: TimeAxis,
    pub kernels: Vec<Option<ComplexField>>,
    /// Largest per-kernel transport error seen while tracing.
    pub transport_max_rel: f64,
    /// Largest characteristic-level Bohm potential (raw units).
    pub fan_bohm_max: f64,
}

impl KernelFamily {
    pub fn built(&self) -> usize {
        self.kernels.iter().filter(|k| k.is_some()).count()
    }
}

/// Step control used for kernel families: a looser density-step bound than
/// single-kernel runs, since quadrature dominates the error budget.
pub fn family_control(time: &TimeAxis) -> StepControl {
    StepControl {
        kappa_d: 0.05,
        ..StepControl::for_time_axis(time)
    }
}

/// Sources whose initial amplitude exceeds `TAIL_LIMIT` of the peak.
pub fn required_sources(psi0: &[Complex64]) -> Vec<bool> {
    let peak = psi0.iter().map(|z| z.norm()).fold(0.0_f64, f64::max);
    psi0.iter().map(|z| z.norm() > TAIL_LIMIT * peak).collect()
}

pub struct FamilySpec<'a> {
    pub setup: &'a PhysicalSetup,
    pub axis: Axis,
    pub time: TimeAxis,
    pub fan: FanSpec,
    pub epsilon: f64,
    pub control: StepControl,
    pub clock: ClockSpec,
    pub energy_scale: f64,
}

impl<'a> FamilySpec<'a> {
    pub fn from_scenario(setup: &'a PhysicalSetup, sup: &SuperpositionSpec, epsilon: f64, energy_scale: f64) -> Self {
        FamilySpec {
            setup,
            axis: sup.axis,
            time: sup.time,
            fan: sup.fan,
            epsilon,
            control: family_control(&sup.time),
            clock: ClockSpec::default(),
            energy_scale,
        }
    }
}

/// Kernels `K(x, t; x_o)` for every source node with `wanted[o]`, on the
/// source grid itself.
pub fn build_kernel_family(spec: &FamilySpec<'_>, wanted: &[bool]) -> Result<KernelFamily> {
    if wanted.len() != spec.axis.n {
        return Err(Error::GridMismatch("source mask differs from the axis".into()));
    }
    let grid = SpaceTimeGrid {
        space: vec![spec.axis],
        time: spec.time,
    };
    let built = (0..spec.axis.n)
        .into_par_iter()
        .map(|o| -> Result<Option<(ComplexField, f64, f64)>> {
            if !wanted[o] {
                return Ok(None);
            }
            let ks = KernelSpec {
                setup: spec.setup,
                ic: InitialCondition::position(spec.axis.node(o), spec.epsilon),
                fan: spec.fan,
                grid: grid.clone(),
                control: spec.control,
                clock: spec.clock,
                energy_scale: spec.energy_scale,
            };
            let run = build_kernel(&ks, |_, _| {})?;
            let PropagatorField { sum, .. } = run.propagator;
            Ok(Some((sum, run.audit.transport_max_rel, run.audit.fan_bohm.max_abs)))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut family = KernelFamily {
        axis: spec.axis,
        time: spec.time,
        kernels: Vec::with_capacity(built.len()),
        transport_max_rel: 0.0,
        fan_bohm_max: 0.0,
    };
    for b in built {
        match b {
            Some((k, tr, q)) => {
                family.transport_max_rel = family.transport_max_rel.max(tr);
                family.fan_bohm_max = family.fan_bohm_max.max(q);
                family.kernels.push(Some(k));
            }
            None => family.kernels.push(None),
        }
    }
    Ok(family)
}

#[derive(Debug, Clone)]
pub struct Superposed {
    pub wave: WaveField,
    /// Factor applied so that the first slice has unit norm.
    pub normalization: f64,
    pub norms: Vec<f64>,
}

/// `sum_o w_o K(x, t; x_o) psi0(x_o)` with trapezoid weights, unnormalized.
/// A node is valid when every required kernel is valid there.
pub fn superpose_raw(family: &KernelFamily, psi0: &[Complex64]) -> Result<WaveField> {
    let (axis, time) = (family.axis, family.time);
    if psi0.len() != axis.n || family.kernels.len() != axis.n {
        return Err(Error::GridMismatch("initial samples differ from the kernel family".into()));
    }
    let required = required_sources(psi0);
    let missing: Vec<f64> = (0..axis.n)
        .filter(|&o| required[o] && family.kernels[o].is_none())
        .map(|o| axis.node(o))
        .collect();
    if !missing.is_empty() {
        return Err(Error::CoverageGap { missing });
    }
    let n = axis.n;
    let mut out = WaveField::zeros(axis, time);
    out.values
        .par_chunks_mut(n)
        .zip(out.valid.par_chunks_mut(n))
        .enumerate()
        .for_each(|(k, (vals, valid))| {
            valid.iter_mut().for_each(|v| *v = true);
            for (o, kernel) in family.kernels.iter().enumerate() {
                let Some(kernel) = kernel else { continue };
                let w = psi0[o] * axis.weight(o);
                let row = kernel.slice(k);
                let ok = kernel.valid_slice(k);
                for i in 0..n {
                    if ok[i] {
                        vals[i] += row[i] * w;
                    } else if required[o] {
                        valid[i] = false;
                    }
                }
            }
        });
    for (v, ok) in out.values.iter_mut().zip(&out.valid) {
        if !ok {
            *v = Complex64::new(0.0, 0.0);
        }
    }
    Ok(out)
}

/// Superpose and normalize to unit norm on the first slice.
pub fn superpose(family: &KernelFamily, psi0: &[Complex64]) -> Result<Superposed> {
    let mut wave = superpose_raw(family, psi0)?;
    let first = wave.slice_norm(0);
    if !(first > 0.0) {
        return Err(Error::AllMasked("superpose (first slice)"));
    }
    let normalization = 1.0 / first;
    wave.scale(normalization);
    let norms = (0..wave.time.n).map(|k| wave.slice_norm(k)).collect();
    Ok(Superposed {
        wave,
        normalization,
        norms,
    })
}

/// `sum_s w_s K(x, t; x_s)` for point sources, one kernel each on `grid`.
pub fn superpose_point_sources(
    setup: &PhysicalSetup,
    sources: &[PointSource],
    epsilon: f64,
    fan: FanSpec,
    grid: &SpaceTimeGrid,
    control: StepControl,
    energy_scale: f64,
) -> Result<(WaveField, Vec<ComplexField>)> {
    if sources.is_empty() {
        return Err(Error::param("sources", "need at least one point source"));
    }
    let kernels = sources
        .iter()
        .map(|s| {
            let ks = KernelSpec {
                setup,
                ic: InitialCondition::position(s.x, epsilon),
                fan,
                grid: grid.clone(),
                control,
                clock: ClockSpec::default(),
                energy_scale,
            };
            Ok(build_kernel(&ks, |_, _| {})?.propagator.sum)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut out = WaveField::zeros(*grid.axis(), grid.time);
    for j in 0..out.values.len() {
        out.valid[j] = kernels.iter().all(|k| k.valid[j]);
        if out.valid[j] {
            out.values[j] = sources.iter().zip(&kernels).map(|(s, k)| s.weight * k.values[j]).sum();
        }
    }
    Ok((out, kernels))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FringeMeasurement {
    pub t: f64,
    pub peaks: Vec<f64>,
    pub spacing: f64,
    pub expected: f64,
    pub rel_error: f64,
}

/// `2 pi hbar t / (m separation)`.
pub fn expected_fringe_spacing(mass: f64, hbar: f64, t: f64, separation: f64) -> f64 {
    2.0 * PI * hbar * t / (mass * separation.abs())
}

/// Local maxima of `|psi|^2` on slice `k` within `[lo, hi]`, refined by a
/// parabola through each peak and its neighbours; the spacing is the mean
/// distance between consecutive peaks.
pub fn fringe_spacing(wave: &WaveField, k: usize, lo: f64, hi: f64) -> Result<(Vec<f64>, f64)> {
    let axis = wave.axis;
    let rho: Vec<f64> = wave.slice(k).iter().map(|z| z.norm_sqr()).collect();
    let ok = wave.valid_slice(k);
    let mut peaks = Vec::new();
    for i in 1..axis.n - 1 {
        let x = axis.node(i);
        if x < lo || x > hi || !(ok[i - 1] && ok[i] && ok[i + 1]) {
            continue;
        }
        if rho[i] > rho[i - 1] && rho[i] >= rho[i + 1] {
            let denom = rho[i - 1] - 2.0 * rho[i] + rho[i + 1];
            let shift = if denom < 0.0 { 0.5 * (rho[i - 1] - rho[i + 1]) / denom } else { 0.0 };
            peaks.push(x + shift * axis.h());
        }
    }
    if peaks.len() < 2 {
        return Err(Error::InsufficientNodes {
            what: "fringe_spacing (peaks)",
            found: peaks.len(),
            needed: 2,
        });
    }
    let spacing = (peaks[peaks.len() - 1] - peaks[0]) / (peaks.len() - 1) as f64;
    Ok((peaks, spacing))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{make_scenario, Overrides};

    #[test]
    fn gaussian_samples_are_normalized() {
        let axis = Axis::new(-10.0, 10.0, 512).unwrap();
        let w = InitialWave::gaussian(PacketSpec {
            center: 0.0,
            width: 1.0,
            momentum: 0.0,
        });
        let v = sample_initial_wave(&w, &axis, 1.0).unwrap();
        assert!((trapezoid_norm(&axis, &v) - 1.0).abs() < 1e-12);
        let peak = v.iter().map(|z| z.norm()).fold(0.0, f64::max);
        assert!((peak - (2.0 * PI).powf(-0.25)).abs() < 1e-3);
    }

    #[test]
    fn invalid_and_truncated_waves_are_rejected() {
        let axis = Axis::new(-3.0, 3.0, 64).unwrap();
        let zero = InitialWave::gaussian(PacketSpec {
            center: 0.0,
            width: 0.0,
            momentum: 0.0,
        });
        assert!(matches!(sample_initial_wave(&zero, &axis, 1.0), Err(Error::InvalidParameter { .. })));
        let wide = InitialWave::gaussian(PacketSpec {
            center: 0.0,
            width: 1.0,
            momentum: 0.0,
        });
        assert!(matches!(sample_initial_wave(&wide, &axis, 1.0), Err(Error::TailMass { .. })));
    }

    #[test]
    fn point_mass_returns_its_kernel() {
        let mut ov = Overrides::new();
        ov.insert("sup.n".into(), "65".into());
        ov.insert("sup.n_t".into(), "3".into());
        let s = make_scenario("free", &ov).unwrap();
        let spec = FamilySpec::from_scenario(&s.setup, &s.superposition, s.initial.epsilon, s.energy_scale);
        let mut wanted = vec![false; spec.axis.n];
        let o = spec.axis.n / 2;
        wanted[o] = true;
        let family = build_kernel_family(&spec, &wanted).unwrap();
        let mut psi0 = vec![Complex64::new(0.0, 0.0); spec.axis.n];
        psi0[o] = Complex64::new(1.0 / spec.axis.weight(o), 0.0);
        let wave = superpose_raw(&family, &psi0).unwrap();
        let kernel = family.kernels[o].as_ref().unwrap();
        for j in 0..wave.values.len() {
            if kernel.valid[j] {
                assert!((wave.values[j] - kernel.values[j]).norm() <= 1e-12 * kernel.values[j].norm());
            }
        }
        // Dropping the only required kernel is a coverage gap.
        let empty = KernelFamily {
            kernels: vec![None; spec.axis.n],
            ..family
        };
        assert!(matches!(superpose_raw(&empty, &psi0), Err(Error::CoverageGap { .. })));
    }

    #[test]
    fn fringes_of_analytic_two_source_pattern() {
        let axis = Axis::new(-8.0, 8.0, 801).unwrap();
        let time = TimeAxis::new(1.0, 0.1, 1).unwrap();
        let wave = crate::oracle::analytic::sample_field(axis, time, |x, t| {
            crate::oracle::analytic::free_kernel(1.0, 1.0, x, -1.0, t) + crate::oracle::analytic::free_kernel(1.0, 1.0, x, 1.0, t)
        });
        let (_, spacing) = fringe_spacing(&wave, 0, -6.0, 6.0).unwrap();
        let expected = expected_fringe_spacing(1.0, 1.0, 1.0, 2.0);
        assert!((spacing / expected - 1.0).abs() < 1e-3, "{spacing}");
    }
}
