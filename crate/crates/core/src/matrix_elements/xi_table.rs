//! Per-state emission branching tables xi_lm over the whole trap.
//!
//! Decay rates and the saturation sums R_l touch xi rows constantly, so the
//! table is precomputed for every state. Symmetry keeps it affordable: an
//! isotropic pattern is invariant under relabeling the axes of l and m
//! together, so only rows with sorted quanta are stored and a permutation
//! index maps every other state onto its representative. Rows keep shells
//! within a fixed distance of shell(l), drop entries below a floor, and fold
//! the tiny missing weight into the carrier entry so each row still sums to
//! one; that keeps R_l correctly normalized no matter how hard the row was
//! truncated, and leaves xi exactly symmetric in its two states.

use std::path::Path;

use super::cache;
use super::displacement::OverlapBlock;
use super::emission::{direction_rule, EmissionPattern};
use crate::error::Result;
use crate::statespace::{Axis, Trap};

/// Shell window kept on each side of shell(l).
pub const SHELL_WINDOW: usize = 12;
/// Entries below this are dropped before folding.
pub const PRUNE_FLOOR: f64 = 1e-14;

/// All axis permutations; entry k maps axis a to source axis PERMS[k][a].
const PERMS: [[usize; 3]; 6] = [
    [0, 1, 2],
    [0, 2, 1],
    [1, 0, 2],
    [1, 2, 0],
    [2, 0, 1],
    [2, 1, 0],
];

/// Index of the inverse of PERMS[k] within PERMS.
const INV: [usize; 6] = [0, 1, 2, 4, 3, 5];

fn apply(p: [usize; 3], t: [u8; 3]) -> [u8; 3] {
    [t[p[0]], t[p[1]], t[p[2]]]
}

/// Permutation index putting `t` into canonical order for the pattern:
/// descending overall when isotropic, descending in the transverse pair with
/// the pattern axis pinned when dipole.
fn canonical_perm(t: [u8; 3], pattern: EmissionPattern) -> u8 {
    match pattern {
        EmissionPattern::Isotropic => {
            for (k, &p) in PERMS.iter().enumerate() {
                let c = apply(p, t);
                if c[0] >= c[1] && c[1] >= c[2] {
                    return k as u8;
                }
            }
            unreachable!("some ordering sorts three numbers")
        }
        EmissionPattern::Dipole(axis) => {
            let (f1, f2) = axis.others();
            if t[f1] >= t[f2] {
                0
            } else {
                // The transposition swapping f1 and f2 is self-inverse.
                match axis {
                    Axis::X => 1,
                    Axis::Y => 5,
                    Axis::Z => 2,
                }
            }
        }
    }
}

/// Emission branching weights for every state of a trap.
#[derive(Debug)]
pub struct XiTable {
    n_shells: usize,
    eta: f64,
    pattern: EmissionPattern,
    /// state -> stored row
    row_of: Vec<u32>,
    /// state -> permutation index onto its canonical representative
    perm_of: Vec<u8>,
    /// id_map[k][canonical id] = lab id under the inverse of PERMS[k]
    id_map: [Vec<u32>; 6],
    row_start: Vec<u32>,
    /// canonical-frame target ids, ascending within each row
    entry_id: Vec<u32>,
    entry_xi: Vec<f32>,
    /// retained weight per row before folding, a truncation diagnostic
    prefold: Vec<f32>,
}

impl XiTable {
    pub fn build(trap: &Trap, eta: f64, pattern: EmissionPattern) -> Self {
        let n_states = trap.n_states();
        let mut row_of = vec![u32::MAX; n_states];
        let mut perm_of = vec![0u8; n_states];
        let mut canonical: Vec<u32> = Vec::new();
        for id in 0..n_states as u32 {
            let k = canonical_perm(trap.triple(id), pattern);
            perm_of[id as usize] = k;
            if k == 0 {
                row_of[id as usize] = canonical.len() as u32;
                canonical.push(id);
            }
        }
        for id in 0..n_states as u32 {
            let k = perm_of[id as usize];
            if k != 0 {
                let rep = trap.permuted_id(PERMS[k as usize], trap.triple(id));
                row_of[id as usize] = row_of[rep as usize];
            }
        }
        let id_map = std::array::from_fn(|k| {
            (0..n_states as u32)
                .map(|id| trap.permuted_id(PERMS[INV[k]], trap.triple(id)))
                .collect()
        });

        let mut row_start = Vec::with_capacity(canonical.len() + 1);
        let mut entry_id = Vec::new();
        let mut entry_xi = Vec::new();
        let mut prefold = Vec::with_capacity(canonical.len());
        row_start.push(0u32);

        // Rows batched by shell: one direction rule and, per direction, one
        // overlap block per axis serve every row of the shell.
        const CHUNK: usize = 128;
        for e in 0..trap.n_shells() {
            let lo = e.saturating_sub(SHELL_WINDOW);
            let hi = (e + SHELL_WINDOW).min(trap.e_max());
            let id_base = trap.shell_range(lo).start;
            let window = (trap.shell_range(hi).end - id_base) as usize;
            let rule = direction_rule(pattern, 2 * (e + hi));
            let rows: Vec<u32> = trap
                .shell_range(e)
                .filter(|&id| perm_of[id as usize] == 0)
                .collect();
            for chunk in rows.chunks(CHUNK) {
                let mut acc = vec![0.0f64; chunk.len() * window];
                for (d, &w) in rule.dirs.iter().zip(&rule.weights) {
                    let blocks: [OverlapBlock; 3] = std::array::from_fn(|a| {
                        OverlapBlock::build(e, hi, eta * d[a])
                    });
                    for (ri, &l) in chunk.iter().enumerate() {
                        let lt = trap.triple(l);
                        let rx = blocks[0].row(lt[0] as usize);
                        let ry = blocks[1].row(lt[1] as usize);
                        let rz = blocks[2].row(lt[2] as usize);
                        let out = &mut acc[ri * window..(ri + 1) * window];
                        for m in 0..window as u32 {
                            let mt = trap.triple(id_base + m);
                            out[m as usize] += w
                                * rx[mt[0] as usize]
                                * ry[mt[1] as usize]
                                * rz[mt[2] as usize];
                        }
                    }
                }
                for (ri, &l) in chunk.iter().enumerate() {
                    let row = &mut acc[ri * window..(ri + 1) * window];
                    // Retained weight before any editing: the truncation
                    // diagnostic the completeness checks read.
                    let raw: f64 = row.iter().sum();
                    prefold.push(raw as f32);
                    for v in row.iter_mut() {
                        if *v < PRUNE_FLOOR {
                            *v = 0.0;
                        }
                    }
                    fold_deficit(id_base, l, row);
                    for (m, &v) in row.iter().enumerate() {
                        if v > 0.0 {
                            entry_id.push(id_base + m as u32);
                            entry_xi.push(v as f32);
                        }
                    }
                    row_start.push(entry_id.len() as u32);
                }
            }
        }
        Self {
            n_shells: trap.n_shells(),
            eta,
            pattern,
            row_of,
            perm_of,
            id_map,
            row_start,
            entry_id,
            entry_xi,
            prefold,
        }
    }

    #[inline]
    pub fn n_shells(&self) -> usize {
        self.n_shells
    }

    #[inline]
    pub fn eta(&self) -> f64 {
        self.eta
    }

    #[inline]
    pub fn pattern(&self) -> EmissionPattern {
        self.pattern
    }

    #[inline]
    pub fn n_rows(&self) -> usize {
        self.prefold.len()
    }

    #[inline]
    pub fn n_entries(&self) -> usize {
        self.entry_id.len()
    }

    /// Retained weight of l's row before folding: how complete the window
    /// was on its own.
    #[inline]
    pub fn prefold_sum(&self, l: u32) -> f64 {
        self.prefold[self.row_of[l as usize] as usize] as f64
    }

    /// Iterate (m, xi_lm) over every retained decay target of l, in
    /// canonical-frame order. Ids are lab-frame.
    pub fn row(&self, l: u32) -> impl Iterator<Item = (u32, f64)> + '_ {
        let r = self.row_of[l as usize] as usize;
        let map = &self.id_map[self.perm_of[l as usize] as usize];
        let lo = self.row_start[r] as usize;
        let hi = self.row_start[r + 1] as usize;
        self.entry_id[lo..hi]
            .iter()
            .zip(&self.entry_xi[lo..hi])
            .map(move |(&c, &v)| (map[c as usize], v as f64))
    }

    /// xi_lm, zero when m fell outside the retained row.
    pub fn value(&self, trap: &Trap, l: u32, m: u32) -> f64 {
        let r = self.row_of[l as usize] as usize;
        let k = self.perm_of[l as usize] as usize;
        let mc = trap.permuted_id(PERMS[k], trap.triple(m));
        let lo = self.row_start[r] as usize;
        let hi = self.row_start[r + 1] as usize;
        match self.entry_id[lo..hi].binary_search(&mc) {
            Ok(i) => self.entry_xi[lo + i] as f64,
            Err(_) => 0.0,
        }
    }

    /// Row sum, one by construction after folding.
    pub fn row_sum(&self, l: u32) -> f64 {
        let r = self.row_of[l as usize] as usize;
        let lo = self.row_start[r] as usize;
        let hi = self.row_start[r + 1] as usize;
        self.entry_xi[lo..hi].iter().map(|&v| v as f64).sum()
    }

    fn pattern_code(pattern: EmissionPattern) -> u64 {
        match pattern {
            EmissionPattern::Isotropic => 0,
            EmissionPattern::Dipole(a) => 1 + a.index() as u64,
        }
    }

    fn meta(trap: &Trap, eta: f64, pattern: EmissionPattern) -> [u64; 5] {
        [
            trap.n_shells() as u64,
            eta.to_bits(),
            Self::pattern_code(pattern),
            SHELL_WINDOW as u64,
            PRUNE_FLOOR.to_bits(),
        ]
    }

    fn to_bytes(&self) -> Vec<u8> {
        let mut b = Vec::with_capacity(
            16 + 4 * self.row_start.len() + 8 * self.entry_id.len() + 4 * self.prefold.len(),
        );
        b.extend_from_slice(&(self.row_start.len() as u64).to_le_bytes());
        b.extend_from_slice(&(self.entry_id.len() as u64).to_le_bytes());
        for &v in &self.row_start {
            b.extend_from_slice(&v.to_le_bytes());
        }
        for &v in &self.entry_id {
            b.extend_from_slice(&v.to_le_bytes());
        }
        for &v in &self.entry_xi {
            b.extend_from_slice(&v.to_le_bytes());
        }
        for &v in &self.prefold {
            b.extend_from_slice(&v.to_le_bytes());
        }
        b
    }

    fn from_bytes(trap: &Trap, eta: f64, pattern: EmissionPattern, b: &[u8]) -> Option<Self> {
        let u32_at = |at: usize| -> u32 {
            u32::from_le_bytes(b[at..at + 4].try_into().unwrap())
        };
        if b.len() < 16 {
            return None;
        }
        let n_starts = u64::from_le_bytes(b[0..8].try_into().unwrap()) as usize;
        let n_entries = u64::from_le_bytes(b[8..16].try_into().unwrap()) as usize;
        let n_rows = n_starts.checked_sub(1)?;
        let want = 16 + 4 * n_starts + 8 * n_entries + 4 * n_rows;
        if b.len() != want {
            return None;
        }
        let mut at = 16;
        let mut row_start = Vec::with_capacity(n_starts);
        for _ in 0..n_starts {
            row_start.push(u32_at(at));
            at += 4;
        }
        let mut entry_id = Vec::with_capacity(n_entries);
        for _ in 0..n_entries {
            entry_id.push(u32_at(at));
            at += 4;
        }
        let mut entry_xi = Vec::with_capacity(n_entries);
        for _ in 0..n_entries {
            entry_xi.push(f32::from_bits(u32_at(at)));
            at += 4;
        }
        let mut prefold = Vec::with_capacity(n_rows);
        for _ in 0..n_rows {
            prefold.push(f32::from_bits(u32_at(at)));
            at += 4;
        }

        // Recreate the index side; only the quadrature results were stored.
        let n_states = trap.n_states();
        let mut row_of = vec![u32::MAX; n_states];
        let mut perm_of = vec![0u8; n_states];
        let mut n_canonical = 0u32;
        for id in 0..n_states as u32 {
            let k = canonical_perm(trap.triple(id), pattern);
            perm_of[id as usize] = k;
            if k == 0 {
                row_of[id as usize] = n_canonical;
                n_canonical += 1;
            }
        }
        if n_canonical as usize != n_rows {
            return None;
        }
        for id in 0..n_states as u32 {
            let k = perm_of[id as usize];
            if k != 0 {
                let rep = trap.permuted_id(PERMS[k as usize], trap.triple(id));
                row_of[id as usize] = row_of[rep as usize];
            }
        }
        let id_map = std::array::from_fn(|k| {
            (0..n_states as u32)
                .map(|id| trap.permuted_id(PERMS[INV[k]], trap.triple(id)))
                .collect()
        });
        Some(Self {
            n_shells: trap.n_shells(),
            eta,
            pattern,
            row_of,
            perm_of,
            id_map,
            row_start,
            entry_id,
            entry_xi,
            prefold,
        })
    }

    /// Load from `dir` when a matching table exists there, else build and
    /// persist. A failed write is not fatal.
    pub fn cached(trap: &Trap, eta: f64, pattern: EmissionPattern, dir: &Path) -> Result<Self> {
        let meta = Self::meta(trap, eta, pattern);
        let path = dir.join(format!(
            "xi-{}-{}-p{}.tbl",
            trap.n_shells(),
            eta,
            Self::pattern_code(pattern)
        ));
        if let Ok(bytes) = cache::read_bytes(&path, *b"FXI2", &meta) {
            if let Some(t) = Self::from_bytes(trap, eta, pattern, &bytes) {
                return Ok(t);
            }
        }
        let t = Self::build(trap, eta, pattern);
        let _ = cache::write_bytes(&path, *b"FXI2", &meta, &t.to_bytes());
        Ok(t)
    }
}

/// Return a row's missing weight to its carrier entry so it sums to one.
/// Window truncation and the trap-top cap both shed weight; folding it
/// into the diagonal keeps every row normalized without disturbing the
/// entry-level symmetry xi_lm = xi_ml that incremental emission-factor
/// bookkeeping depends on. The carrier dominates every row, so the edit
/// is always a small relative change.
fn fold_deficit(id_base: u32, l: u32, row: &mut [f64]) {
    let total: f64 = row.iter().sum();
    if total <= 0.0 {
        return;
    }
    row[(l - id_base) as usize] += 1.0 - total;
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix_elements::emission::xi;
    use approx::assert_relative_eq;

    #[test]
    fn perms_inverse_table_is_correct() {
        for (k, &p) in PERMS.iter().enumerate() {
            let q = PERMS[INV[k]];
            let t = [7u8, 11, 13];
            assert_eq!(apply(q, apply(p, t)), t, "perm {k}");
        }
    }

    #[test]
    fn every_state_lands_on_a_sorted_representative() {
        let trap = Trap::new(8);
        for id in 0..trap.n_states() as u32 {
            let t = trap.triple(id);
            let k = canonical_perm(t, EmissionPattern::Isotropic) as usize;
            let c = apply(PERMS[k], t);
            assert!(c[0] >= c[1] && c[1] >= c[2], "{t:?} -> {c:?}");
            let kd = canonical_perm(t, EmissionPattern::Dipole(Axis::Z)) as usize;
            let cd = apply(PERMS[kd], t);
            assert!(cd[0] >= cd[1]);
            assert_eq!(cd[2], t[2], "dipole canonicalization moved the axis");
        }
    }

    #[test]
    fn rows_sum_to_one_after_folding() {
        let trap = Trap::new(14);
        let table = XiTable::build(&trap, 2.0, EmissionPattern::Isotropic);
        for id in (0..trap.n_states() as u32).step_by(17) {
            assert_relative_eq!(table.row_sum(id), 1.0, max_relative = 1e-5);
            let walked: f64 = table.row(id).map(|(_, v)| v).sum();
            assert_relative_eq!(walked, 1.0, max_relative = 1e-5);
        }
    }

    #[test]
    fn table_matches_oneoff_quadrature() {
        let trap = Trap::new(20);
        let table = XiTable::build(&trap, 2.0, EmissionPattern::Isotropic);
        // Interior pairs: both shells sit far enough from the window edges
        // that neither state is touched by the completeness fold, so stored
        // values must equal the direct integral at f32 resolution.
        let cases = [
            ((2u8, 1, 0), (1u8, 1, 1)),
            ((3, 0, 2), (2, 2, 2)),
            ((5, 4, 0), (4, 4, 1)),
            ((4, 2, 1), (3, 3, 3)),
        ];
        for ((a, b, c), (d, e, f)) in cases {
            let l = trap.state_id(a as usize, b as usize, c as usize);
            let m = trap.state_id(d as usize, e as usize, f as usize);
            let direct = xi([a, b, c], [d, e, f], EmissionPattern::Isotropic, 2.0);
            let stored = table.value(&trap, l, m);
            assert_relative_eq!(stored, direct, max_relative = 1e-5);
            // Symmetric access through the other state's row.
            assert_relative_eq!(table.value(&trap, m, l), direct, max_relative = 1e-5);
        }
    }

    #[test]
    fn permuted_states_share_row_content() {
        let trap = Trap::new(9);
        let table = XiTable::build(&trap, 2.0, EmissionPattern::Isotropic);
        let l = trap.state_id(1, 3, 0);
        let lp = trap.state_id(0, 1, 3);
        let m = trap.state_id(2, 2, 1);
        let mp = trap.state_id(1, 2, 2);
        assert_relative_eq!(
            table.value(&trap, l, m),
            table.value(&trap, lp, mp),
            max_relative = 1e-12
        );
        // Row iteration over the permuted state covers the same values.
        let mut a: Vec<f64> = table.row(l).map(|(_, v)| v).collect();
        let mut b: Vec<f64> = table.row(lp).map(|(_, v)| v).collect();
        a.sort_by(f64::total_cmp);
        b.sort_by(f64::total_cmp);
        assert_eq!(a, b);
    }

    #[test]
    fn row_targets_stay_inside_the_window() {
        let trap = Trap::new(20);
        let table = XiTable::build(&trap, 2.0, EmissionPattern::Isotropic);
        let l = trap.state_id(3, 2, 1);
        let e = trap.shell(l);
        for (m, v) in table.row(l) {
            let em = trap.shell(m);
            assert!(em + SHELL_WINDOW >= e && em <= e + SHELL_WINDOW);
            assert!(v > 0.0);
        }
    }

    #[test]
    fn prefold_weight_is_nearly_complete_low_in_the_trap() {
        // The raw window captures all but a few parts per thousand of the
        // decay weight from low shells; the fold recovers the remainder.
        let trap = Trap::new(16);
        let table = XiTable::build(&trap, 2.0, EmissionPattern::Isotropic);
        let ground = trap.state_id(0, 0, 0);
        assert!(table.prefold_sum(ground) > 0.999, "{}", table.prefold_sum(ground));
        let l = trap.state_id(1, 1, 0);
        assert!(table.prefold_sum(l) > 0.997, "{}", table.prefold_sum(l));
        assert!(table.row_sum(l) > 0.999, "{}", table.row_sum(l));
    }

    #[test]
    fn cache_round_trips_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let trap = Trap::new(7);
        let built = XiTable::cached(&trap, 2.0, EmissionPattern::Isotropic, dir.path()).unwrap();
        let loaded = XiTable::cached(&trap, 2.0, EmissionPattern::Isotropic, dir.path()).unwrap();
        assert_eq!(built.row_start, loaded.row_start);
        assert_eq!(built.entry_id, loaded.entry_id);
        assert!(built
            .entry_xi
            .iter()
            .zip(&loaded.entry_xi)
            .all(|(a, b)| a.to_bits() == b.to_bits()));
        // A different eta is a different table.
        let other = XiTable::cached(&trap, 1.5, EmissionPattern::Isotropic, dir.path()).unwrap();
        assert_ne!(built.entry_xi, other.entry_xi);
    }
}
