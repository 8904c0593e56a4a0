// SPDX-License-Identifier: Apache-2.0

//! Central finite differences for checking hand-written gradients.

/// Numerical gradient of `f` at `x` by central differences with step `h`.
pub fn central_diff(mut f: impl FnMut(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = probe[i];
            probe[i] = orig + h;
            let up = f(&probe);
            probe[i] = orig - h;
            let down = f(&probe);
            probe[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Largest `|a - n| / max(|a|, |n|, floor)` over all entries.
///
/// `floor` keeps entries whose true gradient is (near) zero from dominating.
pub fn max_rel_error(analytic: &[f64], numeric: &[f64], floor: f64) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| (a - n).abs() / a.abs().max(n.abs()).max(floor))
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cubic_gradient() {
        let x = [0.5, -1.25, 2.0];
        let num = central_diff(|v| v.iter().map(|a| a * a * a).sum(), &x, 1e-5);
        let exact: Vec<f64> = x.iter().map(|a| 3.0 * a * a).collect();
        assert!(max_rel_error(&exact, &num, 1e-8) < 1e-9);
    }
}
