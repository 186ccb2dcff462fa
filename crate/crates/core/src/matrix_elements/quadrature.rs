//! Gauss-Legendre and Gauss-Hermite rules with node counts chosen by the
//! callers so that every polynomial integrand in the tables is integrated
//! exactly, never approximately.
//!
//! Nodes are found by Newton iteration on the orthonormal three-term
//! recurrences. For the Hermite rule the iteration runs on the bounded
//! oscillator functions phi_k(x) = H_k(x) exp(-x^2/2) / sqrt(2^k k! sqrt(pi)),
//! which keeps every intermediate in range for orders well past 10^3.

/// A one-dimensional quadrature rule.
#[derive(Debug, Clone)]
pub struct Rule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

/// Gauss-Hermite rule: sum_i w_i f(x_i) = int e^{-x^2} f(x) dx exactly for
/// polynomial f of degree <= 2n - 1.
///
/// `lifted_weights` additionally returns w_i e^{x_i^2}, computed without
/// underflow; use those when the integrand already contains its own Gaussian.
pub fn gauss_hermite(n: usize) -> Rule {
    assert!(n >= 1, "hermite rule needs at least one node");
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = (n + 1) / 2;
    let mut z = 0.0f64;
    let mut z_prev = 0.0f64;
    for i in 0..m {
        // Stroud/Secrest style initial guesses, largest root first.
        z = match i {
            0 => {
                let c = (2.0 * n as f64 + 1.0).sqrt();
                c - 1.85575 * c.powf(-1.0 / 3.0)
            }
            1 => z - 1.14 * (n as f64).powf(0.426) / z,
            2 => 1.86 * z - 0.86 * z_prev,
            3 => 1.91 * z - 0.91 * z_prev,
            _ => 2.0 * z - z_prev,
        };
        z_prev = if i == 0 { z } else { nodes[n - i] };
        // Newton steps on phi_n; phi_n'(x) = sqrt(2n) phi_{n-1}(x) - x phi_n(x).
        let mut phi_last = 0.0;
        for _ in 0..100 {
            let (p_n, p_nm1) = hermite_fn_pair(n, z);
            phi_last = p_nm1;
            let deriv = (2.0 * n as f64).sqrt() * p_nm1 - z * p_n;
            let dz = p_n / deriv;
            z -= dz;
            if dz.abs() < 1e-15 * z.abs().max(1.0) {
                let (_, p_nm1) = hermite_fn_pair(n, z);
                phi_last = p_nm1;
                break;
            }
        }
        // w_i e^{x_i^2} = 1 / (n phi_{n-1}(x_i)^2); multiply the Gaussian
        // back in for the plain weight.
        let lifted = 1.0 / (n as f64 * phi_last * phi_last);
        nodes[n - 1 - i] = z;
        nodes[i] = -z;
        let w = lifted * (-z * z).exp();
        weights[n - 1 - i] = w;
        weights[i] = w;
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
        let (_, p_nm1) = hermite_fn_pair(n, 0.0);
        weights[n / 2] = 1.0 / (n as f64 * p_nm1 * p_nm1);
    }
    Rule { nodes, weights }
}

/// Same nodes as [`gauss_hermite`] with weights w_i e^{x_i^2}.
///
/// Rebuilt from the bounded oscillator functions rather than by scaling the
/// plain weights, so edge nodes do not round through a denormal.
pub fn gauss_hermite_lifted(n: usize) -> Rule {
    let mut rule = gauss_hermite(n);
    for i in 0..n {
        let (_, p_nm1) = hermite_fn_pair(n, rule.nodes[i]);
        rule.weights[i] = 1.0 / (n as f64 * p_nm1 * p_nm1);
    }
    rule
}

/// Oscillator eigenfunctions (phi_n, phi_{n-1}) at x, including the e^{-x^2/2}
/// factor. Bounded by about 0.8 everywhere, so products of many of them stay
/// representable.
fn hermite_fn_pair(n: usize, x: f64) -> (f64, f64) {
    let mut p_prev = 0.0f64;
    let mut p = std::f64::consts::PI.powf(-0.25) * (-0.5 * x * x).exp();
    for k in 0..n {
        let kf = k as f64;
        let p_next = x * (2.0 / (kf + 1.0)).sqrt() * p - (kf / (kf + 1.0)).sqrt() * p_prev;
        p_prev = p;
        p = p_next;
    }
    (p, p_prev)
}

/// Gauss-Legendre rule on [-1, 1], exact for polynomials of degree <= 2n - 1.
pub fn gauss_legendre(n: usize) -> Rule {
    assert!(n >= 1, "legendre rule needs at least one node");
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = (n + 1) / 2;
    for i in 0..m {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut pp = 0.0;
        for _ in 0..100 {
            let (p, p_prev) = legendre_pair(n, z);
            pp = n as f64 * (z * p - p_prev) / (z * z - 1.0);
            let dz = p / pp;
            z -= dz;
            if dz.abs() < 1e-15 {
                break;
            }
        }
        nodes[i] = -z;
        nodes[n - 1 - i] = z;
        let w = 2.0 / ((1.0 - z * z) * pp * pp);
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    Rule { nodes, weights }
}

fn legendre_pair(n: usize, x: f64) -> (f64, f64) {
    let mut p_prev = 1.0f64;
    let mut p = x;
    if n == 1 {
        return (x, 1.0);
    }
    for k in 1..n {
        let kf = k as f64;
        let p_next = ((2.0 * kf + 1.0) * x * p - kf * p_prev) / (kf + 1.0);
        p_prev = p;
        p = p_next;
    }
    (p, p_prev)
}
