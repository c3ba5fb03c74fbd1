//! Clock rescaling: `dt'/dt = lap_phi / T(t')` integrated along
//! characteristics, and the checks that the transported density is a
//! function of `t'` alone.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{FanStepper, StepControl};
use crate::error::{Error, Result};
use crate::model::{FanSpec, InitialCondition, PhysicalSetup, TimeAxis};

/// Clock speed `T(t')`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ClockSpec {
    Constant { value: f64 },
    /// `T(t') = a + b t'`.
    Affine { a: f64, b: f64 },
}

impl Default for ClockSpec {
    fn default() -> Self {
        ClockSpec::Constant { value: 1.0 }
    }
}

impl ClockSpec {
    #[inline]
    pub fn speed(&self, tp: f64) -> f64 {
        match *self {
            ClockSpec::Constant { value } => value,
            ClockSpec::Affine { a, b } => a + b * tp,
        }
    }

    /// `F(t') = int_0^t' T`.
    #[inline]
    pub fn integral(&self, tp: f64) -> f64 {
        match *self {
            ClockSpec::Constant { value } => value * tp,
            ClockSpec::Affine { a, b } => a * tp + 0.5 * b * tp * tp,
        }
    }

    /// Smallest speed over `[0, tp_max]`.
    pub fn min_speed(&self, tp_max: f64) -> f64 {
        self.speed(0.0).min(self.speed(tp_max))
    }

    /// Lipschitz constant of `1/T` over `[0, tp_max]`.
    pub fn lipschitz_bound(&self, tp_max: f64) -> f64 {
        match *self {
            ClockSpec::Constant { .. } => 0.0,
            ClockSpec::Affine { b, .. } => {
                let t_min = self.min_speed(tp_max);
                b.abs() / (t_min * t_min)
            }
        }
    }

    pub fn validate(&self, tp_max: f64) -> Result<()> {
        let ok = match *self {
            ClockSpec::Constant { value } => value > 0.0 && value.is_finite(),
            ClockSpec::Affine { a, b } => a.is_finite() && b.is_finite() && a > 0.0,
        };
        if !ok || !(self.min_speed(tp_max.max(0.0)) > 0.0) {
            return Err(Error::param(
                "clock",
                format!("speed must stay positive on [0, {tp_max}]"),
            ));
        }
        Ok(())
    }
}

/// Clock samples along one characteristic.
#[derive(Debug, Clone, PartialEq)]
pub struct ClockTrack {
    pub lambda: f64,
    pub t: Vec<f64>,
    pub t_prime: Vec<f64>,
    /// Transported density `rho_o exp(-D)`.
    pub rho: Vec<f64>,
    /// `rho_o exp(-F(t'))`.
    pub rho_formula: Vec<f64>,
    pub lap_phi: Vec<f64>,
    pub valid: Vec<bool>,
}

#[derive(Debug, Clone)]
pub struct ClockField {
    pub spec: ClockSpec,
    pub rho_o: f64,
    pub tracks: Vec<ClockTrack>,
    pub time: TimeAxis,
}

/// Integrate the clock along every characteristic of the fan. The clock is
/// masked from the first caustic on.
pub fn solve_clock(
    setup: &PhysicalSetup,
    ic: &InitialCondition,
    fan: &FanSpec,
    time: &TimeAxis,
    spec: ClockSpec,
    control: StepControl,
) -> Result<ClockField> {
    spec.validate(0.0)?;
    let rho_o = ic.rho_o()?;
    let mut stepper = FanStepper::new(setup, ic, fan, control, spec)?;
    let labels = fan.labels();
    let mut tracks: Vec<ClockTrack> = labels
        .iter()
        .map(|&lambda| ClockTrack {
            lambda,
            t: Vec::with_capacity(time.n),
            t_prime: Vec::with_capacity(time.n),
            rho: Vec::with_capacity(time.n),
            rho_formula: Vec::with_capacity(time.n),
            lap_phi: Vec::with_capacity(time.n),
            valid: Vec::with_capacity(time.n),
        })
        .collect();
    for k in 0..time.n {
        let t = time.time(k);
        let slice = stepper.advance_to(t)?;
        for (track, s) in tracks.iter_mut().zip(&slice.samples) {
            let rho = rho_o * (-s.d).exp();
            track.t.push(t);
            track.t_prime.push(s.clock);
            track.rho.push(rho);
            track.rho_formula.push(rho_o * (-spec.integral(s.clock)).exp());
            track.lap_phi.push(s.lap_phi);
            track.valid.push(s.clock_valid && !s.flagged);
        }
    }
    let tp_max = tracks
        .iter()
        .flat_map(|tr| tr.t_prime.iter().zip(&tr.valid))
        .filter(|(_, &v)| v)
        .map(|(tp, _)| *tp)
        .fold(0.0_f64, f64::max);
    spec.validate(tp_max)?;
    Ok(ClockField {
        spec,
        rho_o,
        tracks,
        time: *time,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CollapseReport {
    /// Largest relative gap between `rho` and `rho_o exp(-F(t'))`.
    pub formula_max_rel: f64,
    /// Cross-characteristic discrepancy, other density interpolated to the same `t'`.
    pub max_discrepancy: f64,
    /// Same pairs, compared at the nearest stored sample instead.
    pub binned_discrepancy: f64,
    pub pair_count: usize,
    pub delta: f64,
    pub reference_characteristics: usize,
    /// Smallest `t'` increment between consecutive valid samples where `lap_phi > 0`.
    pub min_increment: f64,
}

/// Formula and collapse checks. At most `max_refs` characteristics (evenly
/// strided) take part in the pairwise collapse comparison.
pub fn rescaled_density_check(clock: &ClockField, max_refs: usize) -> Result<CollapseReport> {
    let usable: Vec<&ClockTrack> = clock
        .tracks
        .iter()
        .filter(|tr| tr.valid.iter().filter(|&&v| v).count() >= 2)
        .collect();
    if usable.len() < 2 {
        return Err(Error::InsufficientNodes {
            what: "collapse check characteristics",
            found: usable.len(),
            needed: 2,
        });
    }

    let mut formula_max_rel = 0.0_f64;
    let mut min_increment = f64::INFINITY;
    let mut tp_max = 0.0_f64;
    for tr in &usable {
        let mut prev: Option<f64> = None;
        for k in 0..tr.t.len() {
            if !tr.valid[k] {
                prev = None;
                continue;
            }
            let rel = (tr.rho[k] - tr.rho_formula[k]).abs() / tr.rho[k];
            formula_max_rel = formula_max_rel.max(rel);
            tp_max = tp_max.max(tr.t_prime[k]);
            if let Some(p) = prev {
                if tr.lap_phi[k] > 0.0 {
                    min_increment = min_increment.min(tr.t_prime[k] - p);
                }
            }
            prev = Some(tr.t_prime[k]);
        }
    }
    let delta = 1e-3 * tp_max;

    let stride = usable.len().div_ceil(max_refs.max(2));
    let refs: Vec<&ClockTrack> = usable.iter().step_by(stride.max(1)).copied().collect();
    // Monotone (t', ln rho) tables of the reference characteristics.
    let tables: Vec<Vec<(f64, f64)>> = refs
        .iter()
        .map(|tr| {
            let mut pts: Vec<(f64, f64)> = Vec::new();
            for k in 0..tr.t.len() {
                if !tr.valid[k] {
                    continue;
                }
                let tp = tr.t_prime[k];
                if pts.last().is_some_and(|&(last, _)| tp <= last) {
                    continue;
                }
                pts.push((tp, tr.rho[k].ln()));
            }
            pts
        })
        .collect();

    let per_ref: Vec<(f64, f64, usize)> = (0..refs.len())
        .into_par_iter()
        .map(|a| {
            let mut worst = 0.0_f64;
            let mut worst_binned = 0.0_f64;
            let mut pairs = 0usize;
            for &(tp, ln_rho) in &tables[a] {
                for (b, table) in tables.iter().enumerate() {
                    if b == a || table.len() < 2 {
                        continue;
                    }
                    let pos = table.partition_point(|&(x, _)| x < tp);
                    let nearest = match (pos.checked_sub(1), table.get(pos)) {
                        (Some(l), Some(&r)) => {
                            if tp - table[l].0 <= r.0 - tp {
                                table[l]
                            } else {
                                r
                            }
                        }
                        (Some(l), None) => table[l],
                        (None, Some(&r)) => r,
                        (None, None) => continue,
                    };
                    if (nearest.0 - tp).abs() > delta {
                        continue;
                    }
                    pairs += 1;
                    worst_binned = worst_binned.max((nearest.1 - ln_rho).exp_m1().abs());
                    if pos == 0 || pos >= table.len() {
                        // Outside the other characteristic's range; nearest only.
                        worst = worst.max((nearest.1 - ln_rho).exp_m1().abs());
                        continue;
                    }
                    let (x0, y0) = table[pos - 1];
                    let (x1, y1) = table[pos];
                    let u = (tp - x0) / (x1 - x0);
                    let y = y0 + u * (y1 - y0);
                    worst = worst.max((y - ln_rho).exp_m1().abs());
                }
            }
            (worst, worst_binned, pairs)
        })
        .collect();

    let mut report = CollapseReport {
        formula_max_rel,
        max_discrepancy: 0.0,
        binned_discrepancy: 0.0,
        pair_count: 0,
        delta,
        reference_characteristics: refs.len(),
        min_increment: if min_increment.is_finite() { min_increment } else { 0.0 },
    };
    for (w, wb, n) in per_ref {
        report.max_discrepancy = report.max_discrepancy.max(w);
        report.binned_discrepancy = report.binned_discrepancy.max(wb);
        report.pair_count += n;
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{make_scenario, Overrides};
    use crate::propagator::calibrate_rho_o;

    #[test]
    fn spec_integral_matches_quadrature() {
        let spec = ClockSpec::Affine { a: 1.5, b: 0.25 };
        let n = 2000;
        let h = 3.0 / n as f64;
        let mut acc = 0.0;
        for i in 0..n {
            let a = i as f64 * h;
            acc += 0.5 * h * (spec.speed(a) + spec.speed(a + h));
        }
        assert!((acc - spec.integral(3.0)).abs() < 1e-12);
        assert!(ClockSpec::Affine { a: 1.0, b: -1.0 }.validate(2.0).is_err());
        assert!((spec.lipschitz_bound(2.0) - 0.25 / (1.5 * 1.5)).abs() < 1e-15);
    }

    #[test]
    fn free_clock_is_log_time() {
        let mut ov = Overrides::new();
        ov.insert("t_max".into(), "0.2".into());
        ov.insert("fan.n".into(), "41".into());
        let s = make_scenario("free", &ov).unwrap();
        let ic = s.initial.clone().with_rho_o(calibrate_rho_o(&s.setup, &s.initial));
        let clock = solve_clock(
            &s.setup,
            &ic,
            &s.fan,
            &s.grid.time,
            ClockSpec::default(),
            StepControl::for_time_axis(&s.grid.time),
        )
        .unwrap();
        for tr in &clock.tracks {
            for (t, tp) in tr.t.iter().zip(&tr.t_prime) {
                assert!((tp - (t / s.initial.epsilon).ln()).abs() < 1e-8);
            }
        }
        let report = rescaled_density_check(&clock, 10).unwrap();
        assert!(report.formula_max_rel < 1e-6);
        assert!(report.max_discrepancy < 1e-6);
        assert!(report.min_increment > 0.0);
    }
}
