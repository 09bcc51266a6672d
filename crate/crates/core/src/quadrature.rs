//! Gauss–Legendre rules on `[0, 1]`.

use crate::error::{Error, Result};

/// Nodes and weights of the `n`-point Gauss–Legendre rule mapped to `[0, 1]`.
///
/// Nodes come in exact mirror pairs `(t, 1 - t)` with identical weights,
/// built by Newton iteration on the Legendre recurrence.
pub fn gauss_legendre_unit(n: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    if n == 0 {
        return Err(Error::config("quadrature needs at least one node"));
    }
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let half = n.div_ceil(2);
    for i in 0..half {
        // Chebyshev-style initial guess for the i-th root (descending).
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre(n, x);
        if d != 0.0 {
            dp = d;
        }
        let w = 1.0 / ((1.0 - x * x) * dp * dp);
        // Map [-1, 1] -> [0, 1]; the pair shares one weight.
        let hi = 0.5 * (1.0 + x);
        nodes[i] = 1.0 - hi;
        nodes[n - 1 - i] = hi;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.5;
    }
    Ok((nodes, weights))
}

/// `P_n(x)` and `P_n'(x)`.
fn legendre(n: usize, x: f64) -> (f64, f64) {
    let (mut p0, mut p1) = (1.0, x);
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn weights_sum_to_one_and_nodes_mirror() {
        for n in [1, 2, 5, 64, 128] {
            let (x, w) = gauss_legendre_unit(n).unwrap();
            assert_abs_diff_eq!(w.iter().sum::<f64>(), 1.0, epsilon = 1e-13);
            for i in 0..n {
                assert!(x[i] > 0.0 && x[i] < 1.0);
                assert_eq!(x[i], 1.0 - x[n - 1 - i]);
                assert_eq!(w[i], w[n - 1 - i]);
            }
            assert!(x.windows(2).all(|p| p[0] < p[1]));
        }
    }

    #[test]
    fn exact_for_polynomials() {
        // An n-point rule integrates degree 2n-1 exactly: int_0^1 t^k dt = 1/(k+1).
        let n = 10;
        let (x, w) = gauss_legendre_unit(n).unwrap();
        for k in 0..(2 * n) {
            let q: f64 = x.iter().zip(&w).map(|(t, w)| w * t.powi(k as i32)).sum();
            assert_abs_diff_eq!(q, 1.0 / (k as f64 + 1.0), epsilon = 1e-14);
        }
    }

    #[test]
    fn smooth_integrand() {
        let (x, w) = gauss_legendre_unit(64).unwrap();
        let q: f64 = x.iter().zip(&w).map(|(t, w)| w * t.exp()).sum();
        assert_abs_diff_eq!(q, std::f64::consts::E - 1.0, epsilon = 1e-14);
    }

    #[test]
    fn rejects_zero_nodes() {
        assert!(gauss_legendre_unit(0).is_err());
    }
}
