//! Gaussian integrals over products of four Hermite polynomials.
//!
//! These are the raw ingredients of a fully summed closed form for the
//! shell-averaged collision kernel. The compact expression built from them
//! (`closed_form_printed`) does not reproduce the brute-force shell sums up
//! to any single constant, so the production tables use the projector-kernel
//! quadrature in `utilde` instead; this module keeps the expression and its
//! integrals available as a documented diagnostic.

use super::fac::ln_factorial;
use super::quadrature::gauss_hermite;

/// Physicists' Hermite polynomial values H_0..H_max at x.
fn hermite_poly_row(max: usize, x: f64) -> Vec<f64> {
    let mut h = Vec::with_capacity(max + 1);
    h.push(1.0);
    if max >= 1 {
        h.push(2.0 * x);
    }
    for j in 1..max {
        let next = 2.0 * x * h[j] - 2.0 * j as f64 * h[j - 1];
        h.push(next);
    }
    h
}

/// Exact value of the weighted moment
///
///   I^k_{nmpq} = int e^{-x^2} x^k H_n(x) H_m(x) H_p(x) H_q(x) dx,
///
/// by a Gauss-Hermite rule sized to the integrand's polynomial degree.
/// Vanishes by parity when k + n + m + p + q is odd. Polynomial magnitudes
/// limit the usable index range to a few tens; table production does not go
/// through here.
pub fn hermite_quad_integral(k: usize, n: usize, m: usize, p: usize, q: usize) -> f64 {
    let degree = k + n + m + p + q;
    if degree % 2 == 1 {
        return 0.0;
    }
    let rule = gauss_hermite(degree / 2 + 1);
    let top = n.max(m).max(p).max(q);
    let mut acc = 0.0;
    for (&x, &w) in rule.nodes.iter().zip(&rule.weights) {
        let h = hermite_poly_row(top, x);
        acc += w * x.powi(k as i32) * h[n] * h[m] * h[p] * h[q];
    }
    acc
}

/// The compact closed form for the shell-summed squared collision element,
/// as a function of the four shell indices (unit contact strength):
///
///   (2 / pi^4) sum [I^4 I^0 - (I^2)^2] / (2^(n+m+p+q) n! m! p! q!),
///
/// each index running over its shell's parity class, n = e1, e1 - 2, .., and
/// likewise for m, p, q. Retained verbatim for comparison: the ratio against
/// the brute-force shell sum is not constant (it varies by factors of
/// several even among channels of equal total energy), so no global
/// calibration makes this expression usable and the projector-kernel
/// quadrature is the production path.
pub fn closed_form_printed(e: [usize; 4]) -> f64 {
    let mut acc = 0.0f64;
    let lo = |ei: usize| ei % 2;
    let mut n = lo(e[0]);
    while n <= e[0] {
        let mut m = lo(e[1]);
        while m <= e[1] {
            let mut p = lo(e[2]);
            while p <= e[2] {
                let mut q = lo(e[3]);
                while q <= e[3] {
                    let i0 = hermite_quad_integral(0, n, m, p, q);
                    let i2 = hermite_quad_integral(2, n, m, p, q);
                    let i4 = hermite_quad_integral(4, n, m, p, q);
                    let ln_den = (n + m + p + q) as f64 * std::f64::consts::LN_2
                        + ln_factorial(n)
                        + ln_factorial(m)
                        + ln_factorial(p)
                        + ln_factorial(q);
                    acc += (i4 * i0 - i2 * i2) * (-ln_den).exp();
                    q += 2;
                }
                p += 2;
            }
            m += 2;
        }
        n += 2;
    }
    2.0 / std::f64::consts::PI.powi(4) * acc
}
