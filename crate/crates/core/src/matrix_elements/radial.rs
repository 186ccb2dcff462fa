//! Radial eigenfunctions of the isotropic 3D oscillator.
//!
//! R_nl(r) = N_nl r^l L_n^{(l+1/2)}(r^2) e^{-r^2/2} with
//! N_nl = sqrt(2 n! / Gamma(n + l + 3/2)), normalized so that
//! int R_nl^2 r^2 dr = 1. The prefactor is assembled in log space and the
//! Laguerre part by upward recurrence; their product stays representable for
//! every (n, l) a 128-shell trap can ask for.

use super::fac::{ln_factorial, ln_gamma_half};

/// R_nl at radius r > 0.
pub fn radial_eval(n: usize, l: usize, r: f64) -> f64 {
    debug_assert!(r > 0.0);
    let x = r * r;
    let lag = laguerre_half(n, l, x);
    let ln_pre = 0.5 * (std::f64::consts::LN_2 + ln_factorial(n) - ln_gamma_half(2 * n + 2 * l + 3))
        + l as f64 * r.ln()
        - 0.5 * x;
    ln_pre.exp() * lag
}

/// L_n^{(l + 1/2)}(x) by the three-term recurrence.
fn laguerre_half(n: usize, l: usize, x: f64) -> f64 {
    let alpha = l as f64 + 0.5;
    if n == 0 {
        return 1.0;
    }
    let mut lm1 = 1.0f64;
    let mut lcur = 1.0 + alpha - x;
    for k in 1..n {
        let kf = k as f64;
        let next = ((2.0 * kf + 1.0 + alpha - x) * lcur - (kf + alpha) * lm1) / (kf + 1.0);
        lm1 = lcur;
        lcur = next;
    }
    lcur
}

/// Values of every R_nl with 2n + l <= e_max on a fixed radial grid.
///
/// Indexed by (level index, node index); `level_index` maps (n, l) into the
/// dense level list ordered by shell then l.
#[derive(Debug)]
pub struct RadialTable {
    e_max: usize,
    n_nodes: usize,
    /// (n, l) pairs in order: shell 0..=e_max, l = e, e-2, ... within a shell
    levels: Vec<(u8, u8)>,
    level_at: Vec<u32>,
    vals: Vec<f64>,
}

impl RadialTable {
    pub fn build(e_max: usize, nodes: &[f64]) -> Self {
        let mut levels = Vec::new();
        let mut level_at = vec![u32::MAX; (e_max + 1) * (e_max + 1)];
        for e in 0..=e_max {
            let mut l = e;
            loop {
                let n = (e - l) / 2;
                level_at[n * (e_max + 1) + l] = levels.len() as u32;
                levels.push((n as u8, l as u8));
                if l < 2 {
                    break;
                }
                l -= 2;
            }
        }
        let n_nodes = nodes.len();
        let mut vals = vec![0.0f64; levels.len() * n_nodes];
        for (li, &(n, l)) in levels.iter().enumerate() {
            for (i, &r) in nodes.iter().enumerate() {
                vals[li * n_nodes + i] = radial_eval(n as usize, l as usize, r);
            }
        }
        Self { e_max, n_nodes, levels, level_at, vals }
    }

    #[inline]
    pub fn level_index(&self, n: usize, l: usize) -> usize {
        self.level_at[n * (self.e_max + 1) + l] as usize
    }

    #[inline]
    pub fn levels(&self) -> &[(u8, u8)] {
        &self.levels
    }

    /// Values of level `li` across all nodes.
    #[inline]
    pub fn row(&self, li: usize) -> &[f64] {
        &self.vals[li * self.n_nodes..(li + 1) * self.n_nodes]
    }
}
