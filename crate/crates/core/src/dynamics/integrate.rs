//! RK4 integration of characteristics together with their variational
//! equations, the divergence integral `D`, and the clock.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::clock::ClockSpec;
use crate::error::Result;
use crate::model::{DiracKind, FanSpec, InitialCondition, PhysicalSetup, TimeAxis};

/// Substep control. A step never exceeds `h_max`, `kappa_dyn / sqrt(|V''|/m)`,
/// or (while `D` is accumulating) `kappa_d |J / J'|`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepControl {
    pub h_max: f64,
    pub kappa_d: f64,
    pub kappa_dyn: f64,
    /// Caustic window: `|J| < eta * max |J|`.
    pub eta: f64,
}

impl Default for StepControl {
    fn default() -> Self {
        StepControl {
            h_max: 1e-3,
            kappa_d: 0.01,
            kappa_dyn: 0.02,
            eta: 1e-3,
        }
    }
}

impl StepControl {
    pub fn for_time_axis(time: &TimeAxis) -> Self {
        StepControl {
            h_max: time.dt,
            ..StepControl::default()
        }
    }

    /// Every step bound halved.
    pub fn halved(&self) -> Self {
        StepControl {
            h_max: 0.5 * self.h_max,
            kappa_d: 0.5 * self.kappa_d,
            kappa_dyn: 0.5 * self.kappa_dyn,
            eta: self.eta,
        }
    }
}

/// Snapshot of one characteristic at a recorded time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sample {
    pub lambda: f64,
    pub x: f64,
    pub p: f64,
    /// Accumulated action; equals `phi` at `x`.
    pub s: f64,
    /// Divergence integral `int_eps^t lap_phi`.
    pub d: f64,
    /// Jacobian `dx/dlambda`.
    pub j: f64,
    /// `dp/dlambda`.
    pub jp: f64,
    /// `lap_phi = (dp/dx) / m`.
    pub lap_phi: f64,
    /// `|J(eps) / J(t)|`.
    pub jac_ratio: f64,
    pub clock: f64,
    pub clock_valid: bool,
    /// Inside the caustic window.
    pub flagged: bool,
    /// Sign changes of `J` so far.
    pub maslov: u32,
    pub energy: f64,
}

const X: usize = 0;
const P: usize = 1;
const JX: usize = 2;
const JP: usize = 3;
const S: usize = 4;
const D: usize = 5;
const CLK: usize = 6;

type State = [f64; 7];

struct Rhs<'a> {
    setup: &'a PhysicalSetup,
    clock: ClockSpec,
    mass: f64,
    qa: f64,
}

impl Rhs<'_> {
    #[inline]
    fn eval(&self, y: &State, accumulate: bool, clock_on: bool) -> State {
        let (v, dv, d2v) = self.setup.potential_1d(y[X]);
        let m = self.mass;
        let vel = (y[P] - self.qa) / m;
        let kinetic = 0.5 * m * vel * vel;
        let d_rate = if accumulate { y[JP] / (m * y[JX]) } else { 0.0 };
        let c_rate = if accumulate && clock_on {
            d_rate / self.clock.speed(y[CLK])
        } else {
            0.0
        };
        [
            vel,
            -dv,
            y[JP] / m,
            -d2v * y[JX],
            y[P] * vel - (kinetic + v),
            d_rate,
            c_rate,
        ]
    }

    fn energy(&self, y: &State) -> f64 {
        let vel = (y[P] - self.qa) / self.mass;
        0.5 * self.mass * vel * vel + self.setup.potential_1d(y[X]).0
    }

    fn rk4(&self, y: &State, h: f64, accumulate: bool, clock_on: bool) -> State {
        let k1 = self.eval(y, accumulate, clock_on);
        let y2 = axpy(y, 0.5 * h, &k1);
        let k2 = self.eval(&y2, accumulate, clock_on);
        let y3 = axpy(y, 0.5 * h, &k2);
        let k3 = self.eval(&y3, accumulate, clock_on);
        let y4 = axpy(y, h, &k3);
        let k4 = self.eval(&y4, accumulate, clock_on);
        let mut out = *y;
        for i in 0..7 {
            out[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        out
    }
}

#[inline]
fn axpy(y: &State, a: f64, k: &State) -> State {
    let mut out = *y;
    for i in 0..7 {
        out[i] += a * k[i];
    }
    out
}

/// Integration state of one characteristic, advanced slice by slice.
#[derive(Debug, Clone)]
pub struct Tracker {
    pub lambda: f64,
    t: f64,
    y: State,
    epsilon: f64,
    active: bool,
    j_eps: f64,
    j_max: f64,
    in_window: bool,
    j_entry: f64,
    maslov: u32,
    clock_valid: bool,
    pub caustic_times: Vec<f64>,
}

impl Tracker {
    /// Characteristic with label `lambda`: the initial momentum for a position
    /// start, the initial position for a momentum start. Integration starts at
    /// `t = 0`; `D` and the clock accumulate from `eps`.
    pub fn new(ic: &InitialCondition, lambda: f64) -> Self {
        let y = match &ic.kind {
            DiracKind::Position(x) => [x[0], lambda, 0.0, 1.0, 0.0, 0.0, 0.0],
            DiracKind::Momentum(p) => [lambda, p[0], 1.0, 0.0, p[0] * lambda, 0.0, 0.0],
        };
        Tracker {
            lambda,
            t: 0.0,
            y,
            epsilon: ic.epsilon,
            active: false,
            j_eps: f64::NAN,
            j_max: 0.0,
            in_window: false,
            j_entry: 0.0,
            maslov: 0,
            clock_valid: true,
            caustic_times: Vec::new(),
        }
    }

    fn activate(&mut self) {
        self.active = true;
        self.j_eps = self.y[JX];
        self.j_max = self.y[JX].abs();
    }

    fn advance(&mut self, rhs: &Rhs<'_>, ctl: &StepControl, t_target: f64) {
        let tiny = 1e-14 * t_target.abs().max(1.0);
        if !self.active && self.t >= self.epsilon - tiny {
            self.activate();
        }
        while self.t < t_target - tiny {
            let mut h = ctl.h_max.min(t_target - self.t);
            if !self.active {
                h = h.min(self.epsilon - self.t);
            }
            let (_, _, d2v) = rhs.setup.potential_1d(self.y[X]);
            if d2v != 0.0 {
                h = h.min(ctl.kappa_dyn / (d2v.abs() / rhs.mass).sqrt());
            }
            let accumulate = self.active && !self.in_window;
            if accumulate {
                let jdot = self.y[JP] / rhs.mass;
                if jdot != 0.0 {
                    let speed = if self.clock_valid {
                        rhs.clock.speed(self.y[CLK]).min(1.0)
                    } else {
                        1.0
                    };
                    h = h.min(ctl.kappa_d * (self.y[JX] / jdot).abs() * speed);
                }
            }
            let j_before = self.y[JX];
            let next = rhs.rk4(&self.y, h, accumulate, self.clock_valid);
            let t_next = if (t_target - (self.t + h)).abs() <= tiny {
                t_target
            } else if !self.active && (self.epsilon - (self.t + h)).abs() <= tiny {
                self.epsilon
            } else {
                self.t + h
            };
            self.y = next;
            let j_now = self.y[JX];
            if self.active && j_before * j_now < 0.0 {
                self.maslov += 1;
                let u = j_before / (j_before - j_now);
                self.caustic_times.push(self.t + u * (t_next - self.t));
            }
            self.t = t_next;
            if !self.active {
                if self.t >= self.epsilon - tiny {
                    self.activate();
                }
                continue;
            }
            let threshold = ctl.eta * self.j_max;
            if self.in_window {
                if j_now.abs() >= threshold {
                    self.in_window = false;
                    self.y[D] += (j_now / self.j_entry).abs().ln();
                }
            } else if j_now.abs() < threshold {
                self.in_window = true;
                self.j_entry = j_now;
                self.clock_valid = false;
            }
            if !self.in_window {
                self.j_max = self.j_max.max(j_now.abs());
            }
        }
    }

    fn sample(&self, rhs: &Rhs<'_>) -> Sample {
        let y = &self.y;
        Sample {
            lambda: self.lambda,
            x: y[X],
            p: y[P],
            s: y[S],
            d: y[D],
            j: y[JX],
            jp: y[JP],
            lap_phi: y[JP] / (rhs.mass * y[JX]),
            jac_ratio: (self.j_eps / y[JX]).abs(),
            clock: y[CLK],
            clock_valid: self.clock_valid && !self.in_window,
            flagged: self.in_window,
            maslov: self.maslov,
            energy: rhs.energy(y),
        }
    }
}

/// Whole-history record of one characteristic.
#[derive(Debug, Clone)]
pub struct Characteristic {
    pub lambda: f64,
    pub times: Vec<f64>,
    pub samples: Vec<Sample>,
    pub caustic_times: Vec<f64>,
}

impl Characteristic {
    /// Largest `|H(t) - H(eps)| / max(|H(eps)|, scale)`.
    pub fn energy_drift(&self, scale: f64) -> f64 {
        let h0 = self.samples[0].energy;
        let denom = h0.abs().max(scale);
        self.samples
            .iter()
            .map(|s| (s.energy - h0).abs() / denom)
            .fold(0.0, f64::max)
    }
}

/// Integrate a single characteristic and record it on `times` (which start at eps).
pub fn integrate_characteristic(
    setup: &PhysicalSetup,
    ic: &InitialCondition,
    lambda: f64,
    times: &TimeAxis,
) -> Result<Characteristic> {
    integrate_characteristic_with(
        setup,
        ic,
        lambda,
        times,
        StepControl::for_time_axis(times),
        ClockSpec::default(),
    )
}

pub fn integrate_characteristic_with(
    setup: &PhysicalSetup,
    ic: &InitialCondition,
    lambda: f64,
    times: &TimeAxis,
    control: StepControl,
    clock: ClockSpec,
) -> Result<Characteristic> {
    setup.validate()?;
    ic.validate(setup.dimension)?;
    let rhs = Rhs {
        setup,
        clock,
        mass: setup.mass_1d()?,
        qa: setup.qa_1d(),
    };
    let mut tracker = Tracker::new(ic, lambda);
    let mut samples = Vec::with_capacity(times.n);
    for k in 0..times.n {
        tracker.advance(&rhs, &control, times.time(k));
        samples.push(tracker.sample(&rhs));
    }
    Ok(Characteristic {
        lambda,
        times: times.times(),
        samples,
        caustic_times: tracker.caustic_times,
    })
}

/// All characteristics of the fan at one recorded time, in label order.
#[derive(Debug, Clone)]
pub struct FanSlice {
    pub t: f64,
    pub samples: Vec<Sample>,
}

/// Advances the whole fan together so that only the current slice is held
/// in memory.
pub struct FanStepper<'a> {
    setup: &'a PhysicalSetup,
    clock: ClockSpec,
    control: StepControl,
    mass: f64,
    qa: f64,
    trackers: Vec<Tracker>,
}

impl<'a> FanStepper<'a> {
    pub fn new(
        setup: &'a PhysicalSetup,
        ic: &InitialCondition,
        fan: &FanSpec,
        control: StepControl,
        clock: ClockSpec,
    ) -> Result<Self> {
        setup.validate()?;
        ic.validate(setup.dimension)?;
        fan.validate()?;
        let trackers = fan
            .labels()
            .into_iter()
            .map(|l| Tracker::new(ic, l))
            .collect();
        Ok(FanStepper {
            setup,
            clock,
            control,
            mass: setup.mass_1d()?,
            qa: setup.qa_1d(),
            trackers,
        })
    }

    pub fn advance_to(&mut self, t: f64) -> Result<FanSlice> {
        let rhs = Rhs {
            setup: self.setup,
            clock: self.clock,
            mass: self.mass,
            qa: self.qa,
        };
        let ctl = self.control;
        let samples = self
            .trackers
            .par_iter_mut()
            .map(|tr| {
                tr.advance(&rhs, &ctl, t);
                tr.sample(&rhs)
            })
            .collect();
        Ok(FanSlice { t, samples })
    }

    pub fn trackers(&self) -> &[Tracker] {
        &self.trackers
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::PotentialSpec;
    use std::f64::consts::PI;

    fn free() -> PhysicalSetup {
        PhysicalSetup::one_dimensional(1.0, 1.0, PotentialSpec::Free)
    }

    #[test]
    fn free_characteristic_matches_closed_form() {
        let ic = InitialCondition::position(0.0, 1e-3);
        let times = TimeAxis::spanning(1e-3, 1.0, 1e-3).unwrap();
        let c = integrate_characteristic(&free(), &ic, 2.0, &times).unwrap();
        let last = c.samples.last().unwrap();
        assert!((c.times.last().unwrap() - 1.0).abs() < 1e-12);
        assert!((last.x - 2.0).abs() < 1e-12);
        assert!((last.p - 2.0).abs() < 1e-14);
        assert!((last.s - 2.0).abs() < 1e-12);
        assert!((last.d - (1.0 / 1e-3_f64).ln()).abs() < 1e-9);
        assert!((last.lap_phi - 1.0).abs() < 1e-12);
    }

    #[test]
    fn harmonic_action_vanishes_at_quarter_period() {
        let setup = PhysicalSetup::one_dimensional(1.0, 1.0, PotentialSpec::Harmonic { omega: 1.0 });
        let ic = InitialCondition::position(1.0, 1e-3);
        let times = TimeAxis::new(1e-3, (0.5 * PI - 1e-3) / 1000.0, 1001).unwrap();
        let c = integrate_characteristic(&setup, &ic, 0.0, &times).unwrap();
        let last = c.samples.last().unwrap();
        assert!(last.x.abs() < 1e-10);
        // S = int (p^2/2 - x^2/2) dt = -sin(2t)/4 with x = cos t, p = -sin t.
        assert!(last.s.abs() < 1e-10);
        // J = sin t; lap_phi = cot t.
        assert!((last.j - 1.0).abs() < 1e-10);
        assert!(last.lap_phi.abs() < 1e-9);
    }

    #[test]
    fn harmonic_caustic_at_half_period() {
        let setup = PhysicalSetup::one_dimensional(1.0, 1.0, PotentialSpec::Harmonic { omega: 1.0 });
        let ic = InitialCondition::position(0.0, 1e-3);
        let times = TimeAxis::spanning(1e-3, 4.0, 1e-3).unwrap();
        let c = integrate_characteristic(&setup, &ic, 1.0, &times).unwrap();
        assert_eq!(c.caustic_times.len(), 1);
        assert!((c.caustic_times[0] - PI).abs() < 1e-6);
        let last = c.samples.last().unwrap();
        assert_eq!(last.maslov, 1);
        // D stays equal to ln|J/J(eps)| through the caustic.
        let expected = (4.0_f64.sin() / 1e-3_f64.sin()).abs().ln();
        assert!((last.d - expected).abs() < 1e-7, "{} vs {expected}", last.d);
        assert!(c.samples.iter().any(|s| s.flagged));
        assert!(!last.clock_valid);
    }

    #[test]
    fn momentum_start_is_a_plane_wave_for_free_motion() {
        let ic = InitialCondition::momentum(1.5, 1e-3);
        let times = TimeAxis::spanning(1e-3, 0.5, 1e-3).unwrap();
        let c = integrate_characteristic(&free(), &ic, -0.25, &times).unwrap();
        let last = c.samples.last().unwrap();
        assert!((last.x - (-0.25 + 0.75)).abs() < 1e-12);
        assert_eq!(last.d, 0.0);
        // phi = p x - p^2 t / 2.
        assert!((last.s - (1.5 * last.x - 1.125 * 0.5)).abs() < 1e-12);
    }
}
