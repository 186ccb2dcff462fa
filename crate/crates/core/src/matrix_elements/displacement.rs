//! One-dimensional recoil overlaps between harmonic oscillator levels.
//!
//! A photon with projection kappa = eta |k_hat_axis| onto an axis displaces
//! that axis by e^{i kappa (a + a^dag)}. The squared overlap between levels
//! has the closed Laguerre form
//!
//!   |<b| e^{i kappa x} |a>|^2
//!     = e^{-kappa^2} (n_<! / n_>!) kappa^{2 d} [L_{n_<}^{(d)}(kappa^2)]^2,
//!
//! with d = |a - b|. Factorial ratios are taken in log space so levels near
//! the top of an 80-shell trap do not overflow.

use super::fac::ln_factorial;

/// Squared overlap |<n_f| e^{i kappa x} |n_i>|^2 for one axis.
///
/// Symmetric in (n_f, n_i) and depends on kappa only through kappa^2.
pub fn overlap_1d_sq(n_f: usize, n_i: usize, kappa: f64) -> f64 {
    let kappa = kappa.abs();
    let (lo, hi) = if n_f <= n_i { (n_f, n_i) } else { (n_i, n_f) };
    let d = hi - lo;
    if kappa == 0.0 {
        return if d == 0 { 1.0 } else { 0.0 };
    }
    let u = kappa * kappa;
    let lag = laguerre(lo, d as f64, u);
    if lag == 0.0 {
        return 0.0;
    }
    let ln_val =
        -u + d as f64 * u.ln() + ln_factorial(lo) - ln_factorial(hi) + 2.0 * lag.abs().ln();
    ln_val.exp()
}

/// Generalized Laguerre polynomial L_n^{(alpha)}(x) by the stable upward
/// three-term recurrence.
fn laguerre(n: usize, alpha: f64, x: f64) -> f64 {
    if n == 0 {
        return 1.0;
    }
    let mut lm1 = 1.0f64;
    let mut l = 1.0 + alpha - x;
    for k in 1..n {
        let kf = k as f64;
        let next = ((2.0 * kf + 1.0 + alpha - x) * l - (kf + alpha) * lm1) / (kf + 1.0);
        lm1 = l;
        l = next;
    }
    l
}

/// Dense table of squared overlaps for all level pairs at one kappa.
///
/// Built by the displacement operator recurrence on signed amplitudes
/// r_{a,b} = i^{-(a+b)} <a| e^{i kappa x} |b>:
///
///   r_{0,b}   = e^{-kappa^2/2} kappa^b / sqrt(b!),
///   r_{a+1,b} = (kappa r_{a,b} - sqrt(b) r_{a,b-1}) / sqrt(a + 1).
///
/// Rows of a unitary matrix, so every entry is bounded by one. This fills an
/// entire (a_max+1) x (b_max+1) block in O(a_max b_max), which is what the
/// emission-average table builder iterates per quadrature direction.
#[derive(Debug, Clone)]
pub struct OverlapBlock {
    b_len: usize,
    sq: Vec<f64>,
}

impl OverlapBlock {
    pub fn build(a_max: usize, b_max: usize, kappa: f64) -> Self {
        let kappa = kappa.abs();
        let b_len = b_max + 1;
        let mut amp = vec![0.0f64; (a_max + 1) * b_len];
        // Row a = 0 from the coherent-state expansion, in log space.
        let base = -0.5 * kappa * kappa;
        for b in 0..=b_max {
            let ln = base + b as f64 * kappa.max(f64::MIN_POSITIVE).ln() - 0.5 * ln_factorial(b);
            amp[b] = if kappa == 0.0 && b > 0 { 0.0 } else { ln.exp() };
        }
        if kappa == 0.0 {
            amp[0] = 1.0;
        }
        for a in 0..a_max {
            let (done, todo) = amp.split_at_mut((a + 1) * b_len);
            let prev = &done[a * b_len..];
            let next = &mut todo[..b_len];
            let inv = 1.0 / ((a + 1) as f64).sqrt();
            next[0] = kappa * prev[0] * inv;
            for b in 1..b_len {
                next[b] = (kappa * prev[b] - (b as f64).sqrt() * prev[b - 1]) * inv;
            }
        }
        for v in amp.iter_mut() {
            *v *= *v;
        }
        Self { b_len, sq: amp }
    }

    #[inline]
    pub fn sq(&self, a: usize, b: usize) -> f64 {
        self.sq[a * self.b_len + b]
    }

    /// Row of squared overlaps for fixed bra level a.
    #[inline]
    pub fn row(&self, a: usize) -> &[f64] {
        &self.sq[a * self.b_len..(a + 1) * self.b_len]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix_elements::quadrature::gauss_hermite;
    use approx::assert_relative_eq;

    /// Oracle: |<a| e^{i kappa (a + a^dag)} |b>|^2 by direct numerical
    /// integration of oscillator eigenfunctions against cos and sin parts.
    /// In the position representation a + a^dag = sqrt(2) x.
    fn overlap_sq_numeric(a: usize, b: usize, kappa: f64) -> f64 {
        let rule = gauss_hermite(220);
        let phase = std::f64::consts::SQRT_2 * kappa;
        let mut re = 0.0;
        let mut im = 0.0;
        for (&x, &w) in rule.nodes.iter().zip(&rule.weights) {
            // phi_a phi_b carries e^{-x^2}; the rule supplies it, so divide
            // it back out of the eigenfunction product.
            let pa = oscillator_fn(a, x);
            let pb = oscillator_fn(b, x);
            let f = pa * pb * (x * x).exp();
            re += w * f * (phase * x).cos();
            im += w * f * (phase * x).sin();
        }
        re * re + im * im
    }

    fn oscillator_fn(n: usize, x: f64) -> f64 {
        let mut p_prev = 0.0f64;
        let mut p = std::f64::consts::PI.powf(-0.25) * (-0.5 * x * x).exp();
        for k in 0..n {
            let kf = k as f64;
            let next = x * (2.0 / (kf + 1.0)).sqrt() * p - (kf / (kf + 1.0)).sqrt() * p_prev;
            p_prev = p;
            p = next;
        }
        p
    }

    #[test]
    fn carrier_and_first_sideband_at_eta_two() {
        // exp(-4) and 4 exp(-4), the Lamb-Dicke 2 reference values.
        assert_relative_eq!(overlap_1d_sq(0, 0, 2.0), 0.018315638888734178, max_relative = 1e-12);
        assert_relative_eq!(overlap_1d_sq(1, 0, 2.0), 0.07326255555493671, max_relative = 1e-12);
    }

    #[test]
    fn zero_recoil_is_the_identity() {
        assert_eq!(overlap_1d_sq(7, 7, 0.0), 1.0);
        assert_eq!(overlap_1d_sq(3, 5, 0.0), 0.0);
    }

    #[test]
    fn closed_form_matches_numeric_integration() {
        for &(a, b) in &[(0usize, 0usize), (1, 0), (4, 4), (10, 3), (25, 30), (40, 38)] {
            for &kappa in &[0.3, 1.1, 2.0] {
                let closed = overlap_1d_sq(a, b, kappa);
                let numeric = overlap_sq_numeric(a, b, kappa);
                assert_relative_eq!(closed, numeric, max_relative = 1e-8, epsilon = 1e-14);
            }
        }
    }

    #[test]
    fn block_recurrence_matches_closed_form() {
        let block = OverlapBlock::build(45, 60, 1.37);
        for a in [0usize, 1, 13, 44, 45] {
            for b in [0usize, 2, 27, 59, 60] {
                assert_relative_eq!(
                    block.sq(a, b),
                    overlap_1d_sq(a, b, 1.37),
                    max_relative = 1e-8,
                    epsilon = 1e-280
                );
            }
        }
    }

    #[test]
    fn block_rows_are_normalized() {
        // Unitarity: each bra row sums to one once the ket range is wide
        // enough to hold the spread.
        let block = OverlapBlock::build(20, 90, 2.0);
        for a in 0..=20 {
            let s: f64 = block.row(a).iter().sum();
            assert_relative_eq!(s, 1.0, max_relative = 1e-10);
        }
    }

    #[test]
    fn symmetry_in_bra_and_ket() {
        let block = OverlapBlock::build(30, 30, 0.9);
        for a in 0..=30 {
            for b in 0..=30 {
                let m = block.sq(a, b).max(block.sq(b, a));
                if m < 1e-60 {
                    continue; // both numerically zero
                }
                let d = (block.sq(a, b) - block.sq(b, a)).abs();
                assert!(d <= 1e-8 * m, "asymmetry at ({a},{b}): {d:e} vs {m:e}");
            }
        }
    }
}
