//! Order-of-convergence fits.

/// Least-squares slope of `ln y` against `ln x` over pairs with both
/// positive and finite. `None` with fewer than two such pairs.
pub fn fit_order(x: &[f64], y: &[f64]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = x
        .iter()
        .zip(y)
        .filter(|(a, b)| a.is_finite() && b.is_finite() && **a > 0.0 && **b > 0.0)
        .map(|(a, b)| (a.ln(), b.ln()))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    Some(sxy / sxx)
}

/// Richardson extrapolation to zero step from values at `h` and `h / r`
/// for a method of order `p`.
pub fn richardson(coarse: f64, fine: f64, ratio: f64, order: f64) -> f64 {
    let f = ratio.powf(order);
    (f * fine - coarse) / (f - 1.0)
}

/// True when every entry is strictly below its predecessor.
pub fn strictly_decreasing(y: &[f64]) -> bool {
    y.windows(2).all(|w| w[1] < w[0])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn recovers_power_law() {
        let x = [0.1, 0.05, 0.025];
        let y: Vec<f64> = x.iter().map(|h: &f64| 3.0 * h.powi(2)).collect();
        assert!((fit_order(&x, &y).unwrap() - 2.0).abs() < 1e-12);
        assert!(strictly_decreasing(&y));
        assert_eq!(fit_order(&x, &[0.0, 0.0, 0.0]), None);
    }

    #[test]
    fn richardson_removes_leading_error() {
        let f = |h: f64| 1.0 + 0.5 * h * h;
        assert!((richardson(f(0.1), f(0.05), 2.0, 2.0) - 1.0).abs() < 1e-14);
    }
}
