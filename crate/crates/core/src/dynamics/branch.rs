//! Branch decomposition of the fan and interpolation of characteristic data
//! onto grid nodes.

use serde::Serialize;

use super::integrate::{Characteristic, FanSlice, FanStepper, Sample, StepControl};
use super::interp::{
    hermite3, hermite5, invert_hermite3, limit_monotone, pchip_slopes, second_derivative_3pt,
};
use crate::clock::ClockSpec;
use crate::error::{Error, Result};
use crate::model::{Axis, FanSpec, InitialCondition, PhysicalSetup, SpaceTimeGrid, TimeAxis};

/// Maximal run of consecutive labels sharing a Maslov count.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Segment {
    pub maslov: u32,
    /// Position among segments with the same count, in label order.
    pub ordinal: usize,
    pub start: usize,
    pub end: usize,
}

pub fn segments(samples: &[Sample]) -> Vec<Segment> {
    let mut out: Vec<Segment> = Vec::new();
    let mut start = 0;
    for i in 1..=samples.len() {
        if i == samples.len() || samples[i].maslov != samples[start].maslov {
            if i - start >= 2 {
                let maslov = samples[start].maslov;
                let ordinal = out.iter().filter(|s| s.maslov == maslov).count();
                out.push(Segment {
                    maslov,
                    ordinal,
                    start,
                    end: i,
                });
            }
            start = i;
        }
    }
    out
}

/// Branch data on the contiguous node range `first..first + len` of one slice.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct BranchSlice {
    pub first: usize,
    pub phi: Vec<f64>,
    pub lap_phi: Vec<f64>,
    pub d: Vec<f64>,
    pub jac_ratio: Vec<f64>,
    /// NaN where the clock is masked.
    pub clock: Vec<f64>,
    pub lambda: Vec<f64>,
    /// False inside the caustic window.
    pub valid: Vec<bool>,
    /// Filled by [`propagate_density`].
    pub rho: Vec<f64>,
}

impl BranchSlice {
    pub fn len(&self) -> usize {
        self.phi.len()
    }

    pub fn is_empty(&self) -> bool {
        self.phi.is_empty()
    }

    /// Local index of grid node `i`.
    #[inline]
    pub fn local(&self, i: usize) -> Option<usize> {
        if i >= self.first && i < self.first + self.len() {
            Some(i - self.first)
        } else {
            None
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BranchField {
    pub index: usize,
    pub maslov: u32,
    pub ordinal: usize,
    pub axis: Axis,
    pub time: TimeAxis,
    /// One entry per time slice (empty where the branch is absent).
    pub slices: Vec<BranchSlice>,
    pub caustic_times: Vec<f64>,
}

impl BranchField {
    /// Nodes covered but excluded by the caustic window.
    pub fn masked_count(&self) -> usize {
        self.slices
            .iter()
            .map(|s| s.valid.iter().filter(|&&v| !v).count())
            .sum()
    }

    pub fn covered_count(&self) -> usize {
        self.slices.iter().map(|s| s.len()).sum()
    }
}

/// Interpolate one segment of a slice onto the grid.
fn interpolate_segment(
    seg: &[Sample],
    axis: &Axis,
    t: f64,
    qa: f64,
) -> Result<Option<BranchSlice>> {
    let n = seg.len();
    let dir = (seg[n - 1].x - seg[0].x).signum();
    if dir == 0.0 || !dir.is_finite() {
        return Ok(None);
    }
    let h = axis.h();
    let limit = 2.0 * h;
    let lambda: Vec<f64> = seg.iter().map(|s| s.lambda).collect();
    let field = |f: fn(&Sample) -> f64| -> (Vec<f64>, Vec<f64>) {
        let y: Vec<f64> = seg.iter().map(f).collect();
        let d = pchip_slopes(&lambda, &y);
        (y, d)
    };
    let lap = field(|s| s.lap_phi);
    let dd = field(|s| s.d);
    let jr = field(|s| s.jac_ratio);
    let clk = field(|s| s.clock);

    // Node range reachable from the segment.
    let (x_min, x_max) = seg
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), s| (a.min(s.x), b.max(s.x)));
    let lo = ((x_min - axis.min) / h).ceil().max(0.0);
    let hi = ((x_max - axis.min) / h).floor().min((axis.n - 1) as f64);
    if lo > hi {
        return Ok(None);
    }
    let (lo, hi) = (lo as usize, hi as usize);
    let span = hi - lo + 1;
    let mut out = BranchSlice {
        first: lo,
        phi: vec![f64::NAN; span],
        lap_phi: vec![f64::NAN; span],
        d: vec![f64::NAN; span],
        jac_ratio: vec![f64::NAN; span],
        clock: vec![f64::NAN; span],
        lambda: vec![f64::NAN; span],
        valid: vec![false; span],
        rho: Vec::new(),
    };
    let mut filled = vec![false; span];

    for i in 0..n - 1 {
        let (a, b) = if dir > 0.0 { (i, i + 1) } else { (i + 1, i) };
        let (sa, sb) = (&seg[a], &seg[b]);
        let dx = sb.x - sa.x;
        let overlaps = sb.x >= axis.min && sa.x <= axis.max;
        if !(dx > 0.0) {
            // Fold inside the caustic window; leave uncovered.
            continue;
        }
        if dx > limit && overlaps && !(sa.flagged || sb.flagged) {
            return Err(Error::FanTooSparse { t, gap: dx, limit });
        }
        if !overlaps {
            continue;
        }
        let first = ((sa.x - axis.min) / h).ceil().max(lo as f64) as usize;
        let last = (((sb.x - axis.min) / h).floor().min(hi as f64)) as usize;
        if first > last {
            continue;
        }
        let dl = sb.lambda - sa.lambda;
        let (m0, m1) = limit_monotone(dx, sa.j * dl, sb.j * dl);
        let flagged = sa.flagged || sb.flagged;
        let clock_ok = sa.clock_valid && sb.clock_valid;
        let li = i;
        let dl_fwd = lambda[li + 1] - lambda[li];
        for node in first..=last {
            let loc = node - lo;
            if filled[loc] {
                continue;
            }
            let xn = axis.node(node);
            let u = invert_hermite3(sa.x, sb.x, m0, m1, xn);
            let lam = sa.lambda + u * dl;
            let w = if dir > 0.0 { u } else { 1.0 - u };
            let eval = |(y, d): &(Vec<f64>, Vec<f64>)| {
                hermite3(y[li], y[li + 1], d[li] * dl_fwd, d[li + 1] * dl_fwd, w)
            };
            let phi = hermite5(
                sa.x,
                sb.x,
                [sa.s, sa.p - qa, sa.jp / sa.j],
                [sb.s, sb.p - qa, sb.jp / sb.j],
                xn,
            );
            out.phi[loc] = phi;
            out.lap_phi[loc] = eval(&lap);
            out.d[loc] = eval(&dd);
            out.jac_ratio[loc] = eval(&jr);
            out.clock[loc] = if clock_ok { eval(&clk) } else { f64::NAN };
            out.lambda[loc] = lam;
            out.valid[loc] = !flagged
                && phi.is_finite()
                && out.d[loc].is_finite()
                && out.lap_phi[loc].is_finite();
            filled[loc] = true;
        }
    }

    // Trim to the filled hull; interior holes stay invalid.
    let Some(first_f) = filled.iter().position(|&f| f) else {
        return Ok(None);
    };
    let last_f = filled.iter().rposition(|&f| f).unwrap_or(first_f);
    let trim = |v: &mut Vec<f64>| {
        v.truncate(last_f + 1);
        v.drain(..first_f);
    };
    trim(&mut out.phi);
    trim(&mut out.lap_phi);
    trim(&mut out.d);
    trim(&mut out.jac_ratio);
    trim(&mut out.clock);
    trim(&mut out.lambda);
    out.valid.truncate(last_f + 1);
    out.valid.drain(..first_f);
    out.first = lo + first_f;
    Ok(Some(out))
}

/// Accumulates branch fields slice by slice.
pub struct BranchBuilder {
    axis: Axis,
    time: TimeAxis,
    qa: f64,
    branches: Vec<BranchField>,
    in_caustic: Vec<bool>,
}

impl BranchBuilder {
    pub fn new(setup: &PhysicalSetup, axis: Axis, time: TimeAxis) -> Result<Self> {
        axis.validate()?;
        time.validate()?;
        setup.mass_1d()?;
        Ok(BranchBuilder {
            axis,
            time,
            qa: setup.qa_1d(),
            branches: Vec::new(),
            in_caustic: Vec::new(),
        })
    }

    /// Add time slice `k`.
    pub fn push(&mut self, k: usize, slice: &FanSlice) -> Result<()> {
        for seg in segments(&slice.samples) {
            let samples = &slice.samples[seg.start..seg.end];
            let interpolated = interpolate_segment(samples, &self.axis, slice.t, self.qa)?;
            let flagged = samples.iter().any(|s| s.flagged);
            let Some(data) = interpolated else { continue };
            let idx = match self
                .branches
                .iter()
                .position(|b| b.maslov == seg.maslov && b.ordinal == seg.ordinal)
            {
                Some(idx) => idx,
                None => {
                    self.branches.push(BranchField {
                        index: self.branches.len(),
                        maslov: seg.maslov,
                        ordinal: seg.ordinal,
                        axis: self.axis,
                        time: self.time,
                        slices: vec![BranchSlice::default(); self.time.n],
                        caustic_times: Vec::new(),
                    });
                    self.in_caustic.push(false);
                    self.branches.len() - 1
                }
            };
            if flagged && !self.in_caustic[idx] {
                self.branches[idx].caustic_times.push(slice.t);
            }
            self.in_caustic[idx] = flagged;
            self.branches[idx].slices[k] = data;
        }
        Ok(())
    }

    pub fn finish(self) -> Vec<BranchField> {
        self.branches
    }
}

/// Trace the fan over the grid's time axis and build branch fields. `visit`
/// sees every fan slice (for dumps and characteristic-level audits).
pub fn build_branch_fields(
    setup: &PhysicalSetup,
    ic: &InitialCondition,
    fan: &FanSpec,
    grid: &SpaceTimeGrid,
    control: StepControl,
    clock: ClockSpec,
    mut visit: impl FnMut(usize, &FanSlice),
) -> Result<Vec<BranchField>> {
    grid.validate(ic.epsilon)?;
    let mut stepper = FanStepper::new(setup, ic, fan, control, clock)?;
    let mut builder = BranchBuilder::new(setup, *grid.axis(), grid.time)?;
    for k in 0..grid.time.n {
        let slice = stepper.advance_to(grid.time.time(k))?;
        visit(k, &slice);
        builder.push(k, &slice)?;
    }
    Ok(builder.finish())
}

/// Build branch fields from stored characteristic histories recorded on `time`.
pub fn build_branch_fields_from(
    setup: &PhysicalSetup,
    characteristics: &[Characteristic],
    axis: Axis,
    time: TimeAxis,
) -> Result<Vec<BranchField>> {
    let mut builder = BranchBuilder::new(setup, axis, time)?;
    for k in 0..time.n {
        let samples = characteristics
            .iter()
            .map(|c| {
                c.samples.get(k).copied().ok_or(Error::TooFewSlices {
                    what: "characteristic history",
                    found: c.samples.len(),
                    needed: time.n,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        builder.push(
            k,
            &FanSlice {
                t: time.time(k),
                samples,
            },
        )?;
    }
    Ok(builder.finish())
}

/// `rho = rho_o exp(-D)` on every covered node.
pub fn propagate_density(mut branch: BranchField, ic: &InitialCondition) -> Result<BranchField> {
    let rho_o = ic.rho_o()?;
    for s in &mut branch.slices {
        s.rho = s.d.iter().map(|d| rho_o * (-d).exp()).collect();
    }
    Ok(branch)
}

/// Scalar data on part of one slice.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SliceScalar {
    pub first: usize,
    pub values: Vec<f64>,
    pub valid: Vec<bool>,
}

/// Central-difference `phi'' / m` on every interior node of the branch.
pub fn laplacian_action(branch: &BranchField, mass: f64) -> Result<Vec<SliceScalar>> {
    let h = branch.axis.h();
    let mut total = 0usize;
    let out: Vec<SliceScalar> = branch
        .slices
        .iter()
        .map(|s| {
            let n = s.len();
            let mut values = vec![f64::NAN; n];
            let mut valid = vec![false; n];
            for i in 1..n.saturating_sub(1) {
                if s.valid[i - 1] && s.valid[i] && s.valid[i + 1] {
                    values[i] = (s.phi[i + 1] - 2.0 * s.phi[i] + s.phi[i - 1]) / (mass * h * h);
                    valid[i] = true;
                    total += 1;
                }
            }
            SliceScalar {
                first: s.first,
                values,
                valid,
            }
        })
        .collect();
    if total < 3 {
        return Err(Error::InsufficientNodes {
            what: "laplacian_action",
            found: total,
            needed: 3,
        });
    }
    Ok(out)
}

/// Bohm potential statistics evaluated across characteristics of one slice,
/// using the transported density at the characteristics themselves.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct FanBohm {
    pub max_abs: f64,
    pub sum_abs: f64,
    pub count: usize,
}

impl FanBohm {
    pub fn merge(&mut self, other: &FanBohm) {
        self.max_abs = self.max_abs.max(other.max_abs);
        self.sum_abs += other.sum_abs;
        self.count += other.count;
    }

    pub fn mean_abs(&self) -> f64 {
        if self.count == 0 {
            0.0
        } else {
            self.sum_abs / self.count as f64
        }
    }
}

pub fn fan_bohm(slice: &FanSlice, setup: &PhysicalSetup, rho_o: f64) -> FanBohm {
    let m = setup.mass[0];
    let hbar = setup.hbar;
    let mut out = FanBohm::default();
    for seg in segments(&slice.samples) {
        let s = &slice.samples[seg.start..seg.end];
        for i in 1..s.len().saturating_sub(1) {
            if s[i - 1].flagged || s[i].flagged || s[i + 1].flagged {
                continue;
            }
            let amp = |k: usize| (rho_o * (-s[k].d).exp()).sqrt();
            let (xs, ys) = if s[i + 1].x > s[i - 1].x {
                ([s[i - 1].x, s[i].x, s[i + 1].x], [amp(i - 1), amp(i), amp(i + 1)])
            } else {
                ([s[i + 1].x, s[i].x, s[i - 1].x], [amp(i + 1), amp(i), amp(i - 1)])
            };
            if !(xs[1] > xs[0] && xs[2] > xs[1]) {
                continue;
            }
            let q = -0.5 * hbar * hbar / m * second_derivative_3pt(xs, ys) / ys[1];
            if q.is_finite() {
                out.max_abs = out.max_abs.max(q.abs());
                out.sum_abs += q.abs();
                out.count += 1;
            }
        }
    }
    out
}
