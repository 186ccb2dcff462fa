//! Shell-averaged contact interaction for the collision kernel.
//!
//! Collisions between the two spin components enter the master equation only
//! through the shell average
//!
//!   Usq(e1,e2,e3,e4) = (1/ g1 g2 g3 g4) sum |<n3 n4| delta^3(x - x') |n1 n2>|^2,
//!
//! the sum running over all states of the four shells. Summing a shell over
//! its members turns each wavefunction pair into the shell projector kernel
//!
//!   K_e(r, rho, u) = sum_{2n+l=e} (2l+1)/(4 pi) R_nl(r) R_nl(rho) P_l(u),
//!
//! which depends only on the two radii and the angle between them, so the
//! whole average collapses to
//!
//!   Usq = 8 pi^2 / (g1 g2 g3 g4) *
//!         int r^2 rho^2 K_e1 K_e2 K_e3 K_e4 dr drho du.
//!
//! The integrand is a polynomial times e^{-2 r^2 - 2 rho^2}, so sized
//! Gauss-Hermite and Gauss-Legendre rules evaluate it exactly; everything a
//! trap needs is built per energy diagonal and cached to disk. Values carry
//! units of the squared contact strength, i.e. the table is pure geometry
//! with no overall calibration factor.

use std::path::Path;

use super::cache;
use super::quadrature::{gauss_hermite_lifted, gauss_legendre};
use super::quartic::QuarticTable;
use super::radial::RadialTable;
use crate::error::Result;
use crate::statespace::shell_degeneracy;

const FRAC_1_4PI: f64 = 1.0 / (4.0 * std::f64::consts::PI);

/// All (nx, ny, nz) of one shell.
fn shell_states(e: usize) -> Vec<[usize; 3]> {
    let mut v = Vec::with_capacity(shell_degeneracy(e));
    for nx in 0..=e {
        for ny in 0..=(e - nx) {
            v.push([nx, ny, e - nx - ny]);
        }
    }
    v
}

/// Shell average by explicit summation over all member states.
///
/// The quartic table must cover the largest shell involved. Exponential in
/// nothing but brutally quartic in degeneracy, so this is an oracle for
/// small shells, not a production path.
pub fn shell_average_brute(e: [usize; 4], q: &QuarticTable) -> f64 {
    let s1 = shell_states(e[0]);
    let s2 = shell_states(e[1]);
    let s3 = shell_states(e[2]);
    let s4 = shell_states(e[3]);
    let mut acc = 0.0;
    for a in &s1 {
        for b in &s2 {
            for c in &s3 {
                for d in &s4 {
                    let m = q.get(a[0], b[0], c[0], d[0])
                        * q.get(a[1], b[1], c[1], d[1])
                        * q.get(a[2], b[2], c[2], d[2]);
                    acc += m * m;
                }
            }
        }
    }
    acc / (s1.len() * s2.len() * s3.len() * s4.len()) as f64
}

/// Asymptotic shell average for well-separated shells: g_min / (4 pi^4) in
/// plain-sum units, so the average divides by all four degeneracies. Good to
/// a few percent once the shells differ by two or more; a cross-check, not a
/// table-building path.
pub fn shell_average_far(e: [usize; 4]) -> f64 {
    let e_min = *e.iter().min().unwrap();
    let g: f64 = e.iter().map(|&s| shell_degeneracy(s) as f64).product();
    shell_degeneracy(e_min) as f64 / (4.0 * std::f64::consts::PI.powi(4) * g)
}

/// Gram matrix 8 pi^2 * int r^2 rho^2 (K_a K_b)(K_c K_d) over pair kernels,
/// not yet divided by degeneracies. Exact for every entry.
fn pair_gram(pairs: &[(usize, usize)]) -> Vec<f64> {
    let n_pairs = pairs.len();
    let e_top = pairs.iter().map(|&(a, b)| a.max(b)).max().unwrap();
    let s_max = pairs.iter().map(|&(a, b)| a + b).max().unwrap();

    // Radial rule: polynomial degree in y = sqrt(2) r is at most 2 s_max + 2
    // including the r^2 measure; an even node count avoids y = 0.
    let n_r = ((s_max + 2).max(2) + 1) & !1;
    let gh = gauss_hermite_lifted(n_r);
    let mut r_nodes = Vec::with_capacity(n_r / 2);
    let mut r_weights = Vec::with_capacity(n_r / 2);
    for (&y, &w) in gh.nodes.iter().zip(&gh.weights) {
        if y > 0.0 {
            r_nodes.push(y * std::f64::consts::FRAC_1_SQRT_2);
            r_weights.push(w * std::f64::consts::FRAC_1_SQRT_2);
        }
    }
    // Angular rule: total Legendre degree is at most 2 s_max.
    let n_u = s_max + 1;
    let gl = gauss_legendre(n_u);

    let radial = RadialTable::build(e_top, &r_nodes);
    let n_levels = radial.levels().len();

    // P_l(u_k) for every l up to the largest shell.
    let mut pleg = vec![0.0f64; (e_top + 1) * n_u];
    for (k, &u) in gl.nodes.iter().enumerate() {
        let mut pm1 = 1.0f64;
        let mut p = u;
        pleg[k] = 1.0;
        if e_top >= 1 {
            pleg[n_u + k] = u;
        }
        for l in 1..e_top {
            let lf = l as f64;
            let next = ((2.0 * lf + 1.0) * u * p - lf * pm1) / (lf + 1.0);
            pm1 = p;
            p = next;
            pleg[(l + 1) * n_u + k] = p;
        }
    }

    // Levels grouped by shell, each with its angular weight folded in later.
    let mut shell_levels: Vec<Vec<(usize, usize)>> = vec![Vec::new(); e_top + 1];
    for (li, &(n, l)) in radial.levels().iter().enumerate() {
        shell_levels[2 * n as usize + l as usize].push((li, l as usize));
    }

    let m = r_nodes.len();
    let mut gram = vec![0.0f64; n_pairs * n_pairs];
    let mut b = vec![0.0f64; n_levels];
    let mut kval = vec![0.0f64; e_top + 1];
    let mut v = vec![0.0f64; n_pairs];
    for i in 0..m {
        for j in i..m {
            let sym = if i == j { 1.0 } else { 2.0 };
            let wij = sym
                * r_weights[i]
                * r_weights[j]
                * (r_nodes[i] * r_nodes[i])
                * (r_nodes[j] * r_nodes[j]);
            for li in 0..n_levels {
                let l = radial.levels()[li].1 as f64;
                b[li] =
                    (2.0 * l + 1.0) * FRAC_1_4PI * radial.row(li)[i] * radial.row(li)[j];
            }
            for k in 0..n_u {
                for (e, levels) in shell_levels.iter().enumerate() {
                    let mut acc = 0.0;
                    for &(li, l) in levels {
                        acc += b[li] * pleg[l * n_u + k];
                    }
                    kval[e] = acc;
                }
                for (p, &(a, bb)) in pairs.iter().enumerate() {
                    v[p] = kval[a] * kval[bb];
                }
                let w = wij * gl.weights[k];
                for p in 0..n_pairs {
                    let vp = w * v[p];
                    let row = p * n_pairs;
                    for q in p..n_pairs {
                        gram[row + q] += vp * v[q];
                    }
                }
            }
        }
    }
    for p in 0..n_pairs {
        for q in (p + 1)..n_pairs {
            gram[q * n_pairs + p] = gram[p * n_pairs + q];
        }
    }
    let scale = 8.0 * std::f64::consts::PI * std::f64::consts::PI;
    for g in gram.iter_mut() {
        *g *= scale;
    }
    gram
}

/// One-off exact shell average for an arbitrary quadruple, conserving or
/// not. Vanishes identically when the shell indices sum odd.
pub fn shell_average_quadrature(e: [usize; 4]) -> f64 {
    if (e[0] + e[1] + e[2] + e[3]) % 2 == 1 {
        return 0.0;
    }
    let pairs = [(e[0], e[1]), (e[2], e[3])];
    let gram = pair_gram(&pairs);
    let g: f64 = e.iter().map(|&s| shell_degeneracy(s) as f64).product();
    gram[1] / g
}

/// Precomputed shell averages for every energy-conserving channel of a
/// truncated trap, grouped by the conserved pair energy s = e1 + e2.
#[derive(Debug)]
pub struct ShellKernelTable {
    e_max: usize,
    /// block s holds a dense n_pairs(s) x n_pairs(s) matrix over unordered
    /// pairs (a, s - a), a from a_min(s) to s/2
    blocks: Vec<Vec<f64>>,
}

impl ShellKernelTable {
    fn a_min(&self, s: usize) -> usize {
        s.saturating_sub(self.e_max)
    }

    fn n_pairs(e_max: usize, s: usize) -> usize {
        s / 2 + 1 - s.saturating_sub(e_max)
    }

    pub fn build(e_max: usize) -> Self {
        let mut blocks = Vec::with_capacity(2 * e_max + 1);
        for s in 0..=(2 * e_max) {
            let a_min = s.saturating_sub(e_max);
            let pairs: Vec<(usize, usize)> = (a_min..=s / 2).map(|a| (a, s - a)).collect();
            let mut gram = pair_gram(&pairs);
            for (pi, &(a, b)) in pairs.iter().enumerate() {
                for (qi, &(c, d)) in pairs.iter().enumerate() {
                    let g = (shell_degeneracy(a)
                        * shell_degeneracy(b)
                        * shell_degeneracy(c)
                        * shell_degeneracy(d)) as f64;
                    gram[pi * pairs.len() + qi] /= g;
                }
            }
            blocks.push(gram);
        }
        Self { e_max, blocks }
    }

    #[inline]
    pub fn e_max(&self) -> usize {
        self.e_max
    }

    /// Shell average for the conserving channel (e1, e2) -> (e3, e4);
    /// zero when the channel does not conserve energy or leaves the trap.
    #[inline]
    pub fn get(&self, e1: usize, e2: usize, e3: usize, e4: usize) -> f64 {
        let s = e1 + e2;
        if s != e3 + e4 || e1.max(e2).max(e3).max(e4) > self.e_max {
            return 0.0;
        }
        let a_min = self.a_min(s);
        let n = Self::n_pairs(self.e_max, s);
        let p = e1.min(e2) - a_min;
        let q = e3.min(e4) - a_min;
        self.blocks[s][p * n + q]
    }

    fn flat(&self) -> Vec<f64> {
        self.blocks.iter().flatten().copied().collect()
    }

    fn from_flat(e_max: usize, flat: Vec<f64>) -> Option<Self> {
        let mut blocks = Vec::with_capacity(2 * e_max + 1);
        let mut at = 0usize;
        for s in 0..=(2 * e_max) {
            let n = Self::n_pairs(e_max, s);
            let end = at + n * n;
            if end > flat.len() {
                return None;
            }
            blocks.push(flat[at..end].to_vec());
            at = end;
        }
        if at != flat.len() {
            return None;
        }
        Some(Self { e_max, blocks })
    }

    /// Load from `dir` if a matching table exists there, else build and
    /// persist. A failed write is not fatal; the built table is returned
    /// anyway.
    pub fn cached(e_max: usize, dir: &Path) -> Result<Self> {
        let path = dir.join(format!("collision-kernel-{e_max}.tbl"));
        if let Ok(flat) = cache::read_table(&path, *b"FCK1", &[e_max as u64]) {
            if let Some(t) = Self::from_flat(e_max, flat) {
                return Ok(t);
            }
        }
        let t = Self::build(e_max);
        let _ = cache::write_table(&path, *b"FCK1", &[e_max as u64], &t.flat());
        Ok(t)
    }
}

/// How a collision table entry was produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KernelMethod {
    /// exact projector-kernel quadrature
    Closed,
    /// separated-shell asymptote g_min / (4 pi^4)
    FarShell,
}

impl KernelMethod {
    pub fn tag(self) -> &'static str {
        match self {
            KernelMethod::Closed => "closed",
            KernelMethod::FarShell => "far-shell",
        }
    }
}

/// Squared collision elements in physical trap units: the shell-summed
/// |U~|^2 in (hbar omega)^2 for every conserving channel, built from the
/// geometry table and the contact strength u0. An optional shell-spread
/// threshold switches wide channels to the asymptotic form; by default every
/// entry is exact, matching how the tables are meant to be used, and the
/// method tag records the choice per entry.
#[derive(Debug)]
pub struct UTildeTable {
    kernel: ShellKernelTable,
    u0_sq: f64,
    far_threshold: Option<usize>,
}

impl UTildeTable {
    pub fn new(kernel: ShellKernelTable, u0: f64, far_threshold: Option<usize>) -> Self {
        Self { kernel, u0_sq: u0 * u0, far_threshold }
    }

    #[inline]
    pub fn e_max(&self) -> usize {
        self.kernel.e_max()
    }

    #[inline]
    pub fn method(&self, e: [usize; 4]) -> KernelMethod {
        let spread = e.iter().max().unwrap() - e.iter().min().unwrap();
        match self.far_threshold {
            Some(t) if spread >= t => KernelMethod::FarShell,
            _ => KernelMethod::Closed,
        }
    }

    /// Shell average |U~|^2 / (g1 g2 g3 g4) in (hbar omega)^2, the factor
    /// the collision rates consume. Zero for non-conserving channels.
    #[inline]
    pub fn average(&self, e: [usize; 4]) -> f64 {
        let avg = match self.method(e) {
            KernelMethod::Closed => self.kernel.get(e[0], e[1], e[2], e[3]),
            KernelMethod::FarShell => {
                if e[0] + e[1] != e[2] + e[3] || e.iter().max().unwrap() > &self.e_max() {
                    0.0
                } else {
                    shell_average_far(e)
                }
            }
        };
        self.u0_sq * avg
    }

    /// Shell-summed |U~|^2 in (hbar omega)^2. Errors on channels that do not
    /// conserve energy or leave the trap.
    pub fn u_tilde_sq(&self, e: [usize; 4]) -> Result<f64> {
        if e[0] + e[1] != e[2] + e[3] {
            return Err(crate::error::Error::Conservation {
                e1: e[0] as u16,
                e2: e[1] as u16,
                e3: e[2] as u16,
                e4: e[3] as u16,
            });
        }
        if *e.iter().max().unwrap() > self.e_max() {
            return Err(crate::error::Error::Config(format!(
                "shell quadruple {e:?} exceeds table cap {}",
                self.e_max()
            )));
        }
        let g: f64 = e.iter().map(|&s| shell_degeneracy(s) as f64).product();
        Ok(self.average(e) * g)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix_elements::radial::radial_eval;
    use approx::assert_relative_eq;

    #[test]
    fn ground_channel_brute_value() {
        // 1 / (8 pi^3): all four atoms in the lowest shell.
        let q = QuarticTable::build(0);
        let want = 1.0 / (8.0 * std::f64::consts::PI.powi(3));
        assert_relative_eq!(
            shell_average_brute([0, 0, 0, 0], &q),
            want,
            max_relative = 1e-12
        );
    }

    #[test]
    fn quadrature_matches_brute_summation() {
        let q = QuarticTable::build(6);
        for &e in &[
            [0usize, 0, 0, 0],
            [1, 1, 2, 0],
            [2, 2, 1, 3],
            [0, 4, 2, 2],
            [3, 3, 3, 3],
            [1, 2, 3, 0],
            [2, 6, 4, 4],
        ] {
            let brute = shell_average_brute(e, &q);
            let quad = shell_average_quadrature(e);
            assert_relative_eq!(quad, brute, max_relative = 1e-10);
        }
    }

    #[test]
    fn odd_quadruples_vanish() {
        assert_eq!(shell_average_quadrature([0, 1, 0, 0]), 0.0);
        let q = QuarticTable::build(3);
        assert_eq!(shell_average_brute([0, 1, 0, 0], &q), 0.0);
    }

    #[test]
    fn kernel_trace_reproduces_degeneracy()  {
        // 4 pi int r^2 K_e(r, r, 1) dr must count the shell's states.
        let rule = gauss_hermite_lifted(80);
        for e in [0usize, 3, 8, 15] {
            let mut acc = 0.0;
            for (&y, &w) in rule.nodes.iter().zip(&rule.weights) {
                if y <= 0.0 {
                    continue;
                }
                let r = y * std::f64::consts::FRAC_1_SQRT_2;
                let mut k = 0.0;
                let mut l = e;
                loop {
                    let n = (e - l) / 2;
                    let v = radial_eval(n, l, r);
                    k += (2 * l + 1) as f64 * FRAC_1_4PI * v * v;
                    if l < 2 {
                        break;
                    }
                    l -= 2;
                }
                acc += w * r * r * k * std::f64::consts::FRAC_1_SQRT_2;
            }
            acc *= 4.0 * std::f64::consts::PI;
            assert_relative_eq!(acc, shell_degeneracy(e) as f64, max_relative = 1e-10);
        }
    }

    #[test]
    fn table_matches_one_off_quadrature() {
        let table = ShellKernelTable::build(6);
        for &e in &[[0usize, 0, 0, 0], [1, 3, 2, 2], [6, 6, 6, 6], [0, 5, 4, 1], [2, 4, 6, 0]] {
            assert_relative_eq!(
                table.get(e[0], e[1], e[2], e[3]),
                shell_average_quadrature(e),
                max_relative = 1e-11
            );
        }
    }

    #[test]
    fn table_respects_channel_symmetries() {
        let t = ShellKernelTable::build(5);
        let base = t.get(1, 3, 2, 2);
        assert!(base > 0.0);
        assert_eq!(t.get(3, 1, 2, 2), base);
        assert_eq!(t.get(2, 2, 1, 3), base);
        assert_eq!(t.get(2, 2, 3, 1), base);
    }

    #[test]
    fn table_rejects_nonconserving_and_capped_channels() {
        let t = ShellKernelTable::build(4);
        assert_eq!(t.get(1, 1, 2, 2), 0.0);
        assert_eq!(t.get(4, 4, 3, 5), 0.0);
    }

    #[test]
    fn far_shell_sits_near_the_exact_value() {
        // Separated shells approach g_min / (4 pi^4); already within 20%
        // at moderate spreads.
        for &e in &[[0usize, 6, 3, 3], [1, 7, 4, 4], [0, 8, 4, 4]] {
            let exact = shell_average_quadrature(e);
            let far = shell_average_far(e);
            let ratio = far / exact;
            assert!(
                (0.8..=1.25).contains(&ratio),
                "far/exact = {ratio} at {e:?}"
            );
        }
    }

    #[test]
    fn cache_round_trip_is_lossless() {
        let dir = tempfile::tempdir().unwrap();
        let built = ShellKernelTable::cached(4, dir.path()).unwrap();
        let loaded = ShellKernelTable::cached(4, dir.path()).unwrap();
        for s in 0..=8usize {
            assert_eq!(built.blocks[s], loaded.blocks[s]);
        }
    }

    #[test]
    fn utilde_scales_and_tags() {
        let u0 = 0.3216;
        let exact = UTildeTable::new(ShellKernelTable::build(6), u0, None);
        // Plain-sum value carries the degeneracy product back in.
        let g: f64 = [2usize, 4, 3, 3]
            .iter()
            .map(|&s| shell_degeneracy(s) as f64)
            .product();
        assert_relative_eq!(
            exact.u_tilde_sq([2, 4, 3, 3]).unwrap(),
            u0 * u0 * g * shell_average_quadrature([2, 4, 3, 3]),
            max_relative = 1e-12
        );
        assert_eq!(exact.method([0, 6, 3, 3]), KernelMethod::Closed);
        assert!(exact.u_tilde_sq([1, 1, 2, 1]).is_err());
        assert!(exact.u_tilde_sq([7, 1, 4, 4]).is_err());

        let far = UTildeTable::new(ShellKernelTable::build(6), u0, Some(4));
        assert_eq!(far.method([0, 6, 3, 3]), KernelMethod::FarShell);
        assert_eq!(far.method([2, 4, 3, 3]), KernelMethod::Closed);
        assert_relative_eq!(
            far.average([0, 6, 3, 3]),
            u0 * u0 * shell_average_far([0, 6, 3, 3]),
            max_relative = 1e-12
        );
        // Non-conserving stays zero through the asymptotic branch too.
        assert_eq!(far.average([0, 6, 3, 2]), 0.0);
    }
}
