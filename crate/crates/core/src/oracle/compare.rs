//! Global-phase-aligned comparison of two waves on a common grid.

use num_complex::Complex64;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::WaveField;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Comparison {
    pub l2_error: f64,
    pub linf_error: f64,
    /// `arg <b, a>`; `b e^{i phase}` is compared against `a`.
    pub phase_used: f64,
    pub nodes: usize,
}

fn check(a: &WaveField, b: &WaveField) -> Result<()> {
    if !a.axis.same_as(&b.axis) || !a.time.same_as(&b.time) {
        return Err(Error::GridMismatch("waves sampled on different grids".into()));
    }
    Ok(())
}

fn compare_nodes(a: &WaveField, b: &WaveField, nodes: impl Iterator<Item = usize> + Clone) -> Result<Comparison> {
    let ok = |j: usize| {
        let (x, y) = (a.values[j], b.values[j]);
        a.valid[j] && b.valid[j] && x.re.is_finite() && x.im.is_finite() && y.re.is_finite() && y.im.is_finite()
    };
    let mut overlap = Complex64::new(0.0, 0.0);
    let mut count = 0usize;
    for j in nodes.clone().filter(|&j| ok(j)) {
        overlap += b.values[j].conj() * a.values[j];
        count += 1;
    }
    if count == 0 {
        return Err(Error::AllMasked("compare_waves"));
    }
    let phase = overlap.arg();
    let rot = Complex64::from_polar(1.0, phase);
    let (mut e2, mut a2, mut emax, mut amax) = (0.0, 0.0, 0.0_f64, 0.0_f64);
    for j in nodes.filter(|&j| ok(j)) {
        let d = (a.values[j] - b.values[j] * rot).norm();
        e2 += d * d;
        a2 += a.values[j].norm_sqr();
        emax = emax.max(d);
        amax = amax.max(a.values[j].norm());
    }
    if !(a2 > 0.0) {
        return Err(Error::AllMasked("compare_waves (reference is zero)"));
    }
    Ok(Comparison {
        l2_error: (e2 / a2).sqrt(),
        linf_error: emax / amax,
        phase_used: phase,
        nodes: count,
    })
}

/// Errors over all nodes valid in both waves, normalized by `a`.
pub fn compare_waves(a: &WaveField, b: &WaveField) -> Result<Comparison> {
    check(a, b)?;
    compare_nodes(a, b, 0..a.values.len())
}

/// Comparison of slice `k` alone, with its own alignment phase.
pub fn compare_slice(a: &WaveField, b: &WaveField, k: usize) -> Result<Comparison> {
    check(a, b)?;
    let n = a.axis.n;
    compare_nodes(a, b, k * n..(k + 1) * n)
}

/// Worst per-slice errors, each slice aligned separately. Slices with no
/// common valid node are skipped.
pub fn worst_slice(a: &WaveField, b: &WaveField) -> Result<Comparison> {
    check(a, b)?;
    let mut worst: Option<Comparison> = None;
    for k in 0..a.time.n {
        let Ok(c) = compare_slice(a, b, k) else { continue };
        worst = Some(match worst {
            None => c,
            Some(w) => Comparison {
                l2_error: w.l2_error.max(c.l2_error),
                linf_error: w.linf_error.max(c.linf_error),
                phase_used: if c.l2_error > w.l2_error { c.phase_used } else { w.phase_used },
                nodes: w.nodes + c.nodes,
            },
        });
    }
    worst.ok_or(Error::AllMasked("worst_slice"))
}
