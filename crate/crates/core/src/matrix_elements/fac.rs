//! Cached logarithms of factorials and half-integer gamma values.

use std::sync::OnceLock;

const TABLE_LEN: usize = 2048;

fn table() -> &'static [f64] {
    static TABLE: OnceLock<Vec<f64>> = OnceLock::new();
    TABLE.get_or_init(|| {
        let mut t = Vec::with_capacity(TABLE_LEN);
        t.push(0.0);
        for k in 1..TABLE_LEN {
            t.push(t[k - 1] + (k as f64).ln());
        }
        t
    })
}

/// ln(n!), table-backed for every n used by the shell tables.
pub(crate) fn ln_factorial(n: usize) -> f64 {
    let t = table();
    assert!(n < t.len(), "ln_factorial table exceeded at n = {n}");
    t[n]
}

fn half_table() -> &'static [f64] {
    static TABLE: OnceLock<Vec<f64>> = OnceLock::new();
    TABLE.get_or_init(|| {
        // lnGamma(k/2) by lnGamma(x + 1) = ln x + lnGamma(x) from the seeds
        // Gamma(1/2) = sqrt(pi) and Gamma(1) = 1.
        let mut t = vec![f64::NAN; TABLE_LEN];
        t[1] = 0.5 * std::f64::consts::PI.ln();
        t[2] = 0.0;
        for k in 3..TABLE_LEN {
            t[k] = ((k - 2) as f64 / 2.0).ln() + t[k - 2];
        }
        t
    })
}

/// lnGamma(k/2) for positive k.
pub(crate) fn ln_gamma_half(k: usize) -> f64 {
    let t = half_table();
    assert!(k >= 1 && k < t.len(), "ln_gamma_half table exceeded at k = {k}");
    t[k]
}
