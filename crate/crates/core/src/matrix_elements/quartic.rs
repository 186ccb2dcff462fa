//! Quartic products of oscillator eigenfunctions on one axis.
//!
//! The contact interaction couples four single-particle states, and in the
//! cartesian basis its matrix element factorizes into one integral
//! Q(a,b,c,d) = int phi_a phi_b phi_c phi_d dx per axis. The integrand is a
//! polynomial of degree a+b+c+d times e^{-2x^2}, so after x -> y/sqrt(2) a
//! Gauss-Hermite rule with lifted weights evaluates it exactly from bounded
//! eigenfunction values. No factorial ratios appear anywhere, so the same
//! code serves level 0 and level 80.

use super::quadrature::gauss_hermite_lifted;

/// Exact integral of four oscillator eigenfunctions over one axis.
pub fn quartic_1d(a: usize, b: usize, c: usize, d: usize) -> f64 {
    if (a + b + c + d) % 2 == 1 {
        return 0.0;
    }
    let n = (a + b + c + d) / 2 + 1;
    let rule = gauss_hermite_lifted(n);
    let inv_sqrt2 = std::f64::consts::FRAC_1_SQRT_2;
    let mut acc = 0.0;
    for (&y, &w) in rule.nodes.iter().zip(&rule.weights) {
        let x = y * inv_sqrt2;
        acc += w * eigenfunction_row_product(&[a, b, c, d], x);
    }
    acc * inv_sqrt2
}

fn eigenfunction_row_product(levels: &[usize], x: f64) -> f64 {
    let top = *levels.iter().max().unwrap();
    let mut vals = vec![0.0f64; top + 1];
    let mut p_prev = 0.0f64;
    let mut p = std::f64::consts::PI.powf(-0.25) * (-0.5 * x * x).exp();
    vals[0] = p;
    for k in 0..top {
        let kf = k as f64;
        let next = x * (2.0 / (kf + 1.0)).sqrt() * p - (kf / (kf + 1.0)).sqrt() * p_prev;
        p_prev = p;
        p = next;
        vals[k + 1] = p;
    }
    levels.iter().map(|&n| vals[n]).product()
}

/// Dense table of Q(a,b,c,d) for all levels up to `max_level`.
///
/// Symmetric under any permutation of its indices; the full hypercube is
/// stored anyway because lookups dominate and (max_level+1)^4 doubles stay
/// small for the shell ranges brute-force summation is used on.
#[derive(Debug)]
pub struct QuarticTable {
    len: usize,
    vals: Vec<f64>,
}

impl QuarticTable {
    pub fn build(max_level: usize) -> Self {
        let len = max_level + 1;
        let mut vals = vec![0.0f64; len * len * len * len];
        // One shared rule, sized for the worst total degree in the table.
        let rule = gauss_hermite_lifted(2 * max_level + 1);
        let inv_sqrt2 = std::f64::consts::FRAC_1_SQRT_2;
        // Eigenfunction values per node, then four nested contractions.
        let mut phi = vec![0.0f64; rule.nodes.len() * len];
        for (i, &y) in rule.nodes.iter().enumerate() {
            let x = y * inv_sqrt2;
            let row = &mut phi[i * len..(i + 1) * len];
            let mut p_prev = 0.0f64;
            let mut p = std::f64::consts::PI.powf(-0.25) * (-0.5 * x * x).exp();
            row[0] = p;
            for k in 0..max_level {
                let kf = k as f64;
                let next =
                    x * (2.0 / (kf + 1.0)).sqrt() * p - (kf / (kf + 1.0)).sqrt() * p_prev;
                p_prev = p;
                p = next;
                row[k + 1] = p;
            }
        }
        for a in 0..len {
            for b in a..len {
                for c in b..len {
                    for d in c..len {
                        if (a + b + c + d) % 2 == 1 {
                            continue;
                        }
                        let mut acc = 0.0;
                        for (i, &w) in rule.weights.iter().enumerate() {
                            let row = &phi[i * len..(i + 1) * len];
                            acc += w * row[a] * row[b] * row[c] * row[d];
                        }
                        let q = acc * inv_sqrt2;
                        for perm in permutations4([a, b, c, d]) {
                            let [pa, pb, pc, pd] = perm;
                            vals[((pa * len + pb) * len + pc) * len + pd] = q;
                        }
                    }
                }
            }
        }
        Self { len, vals }
    }

    #[inline]
    pub fn get(&self, a: usize, b: usize, c: usize, d: usize) -> f64 {
        self.vals[((a * self.len + b) * self.len + c) * self.len + d]
    }
}

fn permutations4(v: [usize; 4]) -> impl Iterator<Item = [usize; 4]> {
    const ORDERS: [[usize; 4]; 24] = [
        [0, 1, 2, 3], [0, 1, 3, 2], [0, 2, 1, 3], [0, 2, 3, 1], [0, 3, 1, 2], [0, 3, 2, 1],
        [1, 0, 2, 3], [1, 0, 3, 2], [1, 2, 0, 3], [1, 2, 3, 0], [1, 3, 0, 2], [1, 3, 2, 0],
        [2, 0, 1, 3], [2, 0, 3, 1], [2, 1, 0, 3], [2, 1, 3, 0], [2, 3, 0, 1], [2, 3, 1, 0],
        [3, 0, 1, 2], [3, 0, 2, 1], [3, 1, 0, 2], [3, 1, 2, 0], [3, 2, 0, 1], [3, 2, 1, 0],
    ];
    ORDERS.into_iter().map(move |o| [v[o[0]], v[o[1]], v[o[2]], v[o[3]]])
}
