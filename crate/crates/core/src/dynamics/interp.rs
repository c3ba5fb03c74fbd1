//! Hermite interpolation primitives used to move characteristic data onto
//! grid nodes.

/// Cubic Hermite on `u in [0, 1]` in difference form, so constant data stay
/// bitwise constant. `m0`, `m1` are slopes in `u` units.
#[inline]
pub fn hermite3(y0: f64, y1: f64, m0: f64, m1: f64, u: f64) -> f64 {
    let u2 = u * u;
    let u3 = u2 * u;
    let h01 = 3.0 * u2 - 2.0 * u3;
    let h10 = u3 - 2.0 * u2 + u;
    let h11 = u3 - u2;
    y0 + h01 * (y1 - y0) + h10 * m0 + h11 * m1
}

#[inline]
pub fn hermite3_deriv(y0: f64, y1: f64, m0: f64, m1: f64, u: f64) -> f64 {
    let u2 = u * u;
    let dh01 = 6.0 * u - 6.0 * u2;
    let dh10 = 3.0 * u2 - 4.0 * u + 1.0;
    let dh11 = 3.0 * u2 - 2.0 * u;
    dh01 * (y1 - y0) + dh10 * m0 + dh11 * m1
}

/// Fritsch-Carlson limiting of endpoint slopes for increasing data with
/// secant `delta > 0` (all in `u` units).
pub fn limit_monotone(delta: f64, m0: f64, m1: f64) -> (f64, f64) {
    let mut a = (m0 / delta).max(0.0);
    let mut b = (m1 / delta).max(0.0);
    let r = a * a + b * b;
    if r > 9.0 {
        let tau = 3.0 / r.sqrt();
        a *= tau;
        b *= tau;
    }
    (a * delta, b * delta)
}

/// Solve `hermite3(x0, x1, m0, m1, u) = target` on `[0, 1]` for increasing,
/// monotone data. Newton with bisection fallback.
pub fn invert_hermite3(x0: f64, x1: f64, m0: f64, m1: f64, target: f64) -> f64 {
    let span = x1 - x0;
    if span <= 0.0 {
        return 0.0;
    }
    let (mut lo, mut hi) = (0.0_f64, 1.0_f64);
    let mut u = ((target - x0) / span).clamp(0.0, 1.0);
    for _ in 0..60 {
        let f = hermite3(x0, x1, m0, m1, u) - target;
        if f.abs() <= 1e-15 * (x0.abs().max(x1.abs()) + span) {
            return u;
        }
        if f > 0.0 {
            hi = u;
        } else {
            lo = u;
        }
        let df = hermite3_deriv(x0, x1, m0, m1, u);
        let mut next = if df > 0.0 { u - f / df } else { f64::NAN };
        if !(next > lo && next < hi) {
            next = 0.5 * (lo + hi);
        }
        if (next - u).abs() <= 1e-16 {
            return next;
        }
        u = next;
    }
    u
}

/// Quintic Hermite through value, first and second derivative at both ends
/// of `[x0, x1]`, evaluated at `x`.
#[inline]
pub fn hermite5(x0: f64, x1: f64, f0: [f64; 3], f1: [f64; 3], x: f64) -> f64 {
    let h = x1 - x0;
    let t = (x - x0) / h;
    let t2 = t * t;
    let t3 = t2 * t;
    let t4 = t3 * t;
    let t5 = t4 * t;
    let h10 = t - 6.0 * t3 + 8.0 * t4 - 3.0 * t5;
    let h20 = 0.5 * (t2 - 3.0 * t3 + 3.0 * t4 - t5);
    let h01 = 10.0 * t3 - 15.0 * t4 + 6.0 * t5;
    let h11 = -4.0 * t3 + 7.0 * t4 - 3.0 * t5;
    let h21 = 0.5 * (t3 - 2.0 * t4 + t5);
    // Difference form: h00 + h01 = 1.
    f0[0]
        + h01 * (f1[0] - f0[0])
        + h * (h10 * f0[1] + h11 * f1[1])
        + h * h * (h20 * f0[2] + h21 * f1[2])
}

/// PCHIP slopes (per unit of `x`) for data `y` on strictly monotone knots `x`.
pub fn pchip_slopes(x: &[f64], y: &[f64]) -> Vec<f64> {
    let n = x.len();
    let mut d = vec![0.0; n];
    if n < 2 {
        return d;
    }
    let h: Vec<f64> = x.windows(2).map(|w| w[1] - w[0]).collect();
    let del: Vec<f64> = (0..n - 1).map(|i| (y[i + 1] - y[i]) / h[i]).collect();
    if n == 2 {
        d[0] = del[0];
        d[1] = del[0];
        return d;
    }
    for k in 1..n - 1 {
        if del[k - 1] == 0.0 || del[k] == 0.0 || del[k - 1].signum() != del[k].signum() {
            d[k] = 0.0;
        } else {
            let w1 = 2.0 * h[k] + h[k - 1];
            let w2 = h[k] + 2.0 * h[k - 1];
            d[k] = (w1 + w2) / (w1 / del[k - 1] + w2 / del[k]);
        }
    }
    d[0] = end_slope(h[0], h[1], del[0], del[1]);
    d[n - 1] = end_slope(h[n - 2], h[n - 3], del[n - 2], del[n - 3]);
    d
}

fn end_slope(h0: f64, h1: f64, del0: f64, del1: f64) -> f64 {
    let d = ((2.0 * h0 + h1) * del0 - h0 * del1) / (h0 + h1);
    if d.signum() != del0.signum() {
        0.0
    } else if del0.signum() != del1.signum() && d.abs() > (3.0 * del0).abs() {
        3.0 * del0
    } else {
        d
    }
}

/// Second derivative at the middle of three nonuniform points.
#[inline]
pub fn second_derivative_3pt(x: [f64; 3], y: [f64; 3]) -> f64 {
    let h0 = x[1] - x[0];
    let h1 = x[2] - x[1];
    2.0 * (h0 * (y[2] - y[1]) - h1 * (y[1] - y[0])) / (h0 * h1 * (h0 + h1))
}
