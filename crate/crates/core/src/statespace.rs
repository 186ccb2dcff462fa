//! Single-particle states of the isotropic 3D harmonic trap.
//!
//! States are labeled by quantum numbers (nx, ny, nz); everything with the
//! same total e = nx + ny + nz shares one energy shell. The trap is truncated
//! at a fixed shell count, states get dense ids lexicographic in (shell, nx,
//! ny), and secondary indexes group them into laser lines: sets of states
//! differing only along one beam axis, which is how the pulse rates address
//! them. One such line table exists per axis because the beam direction
//! cycles from pulse to pulse.

use rand::Rng;

use crate::error::{Error, Result};

/// Number of states in shell e.
#[inline]
pub fn shell_degeneracy(e: usize) -> usize {
    (e + 1) * (e + 2) / 2
}

/// Number of states in shells 0..=e.
#[inline]
pub fn states_through_shell(e: usize) -> usize {
    (e + 1) * (e + 2) * (e + 3) / 6
}

/// Lowest shell index such that shells 0..=e hold at least `n_atoms` states.
pub fn fermi_shell(n_atoms: usize) -> usize {
    let mut e = 0;
    while states_through_shell(e) < n_atoms {
        e += 1;
    }
    e
}

/// Fermi energy in trap units for `n_atoms` in the continuum limit,
/// E_F = (6 N)^(1/3), zero-point excluded. The temperature scale T_F equals
/// the same number.
#[inline]
pub fn fermi_energy(n_atoms: f64) -> f64 {
    (6.0 * n_atoms).cbrt()
}

pub const NO_STATE: u32 = u32::MAX;

/// Beam / coordinate axis. Pulses cycle through all three in order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    X,
    Y,
    Z,
}

impl Axis {
    pub const ALL: [Axis; 3] = [Axis::X, Axis::Y, Axis::Z];

    #[inline]
    pub fn index(self) -> usize {
        self as usize
    }

    /// The other two axes, in coordinate order.
    #[inline]
    pub fn others(self) -> (usize, usize) {
        match self {
            Axis::X => (1, 2),
            Axis::Y => (0, 2),
            Axis::Z => (0, 1),
        }
    }

    /// Beam axis of pulse number `k`, cycling x, y, z.
    #[inline]
    pub fn of_pulse(k: u64) -> Axis {
        Axis::ALL[(k % 3) as usize]
    }
}

/// Truncated trap geometry: state enumeration plus per-axis line indexes.
#[derive(Debug)]
pub struct Trap {
    n_shells: usize,
    triples: Vec<[u8; 3]>,
    shell_of: Vec<u16>,
    shell_start: Vec<u32>,
    /// line id -> quanta of the two fixed axes, in coordinate order
    lines: Vec<(u8, u8)>,
    /// per axis: state id -> line id
    line_of: [Vec<u32>; 3],
    /// per axis: line id * n_shells + n_axis -> state id, NO_STATE past cap
    line_state: [Vec<u32>; 3],
}

impl Trap {
    /// Trap holding shells 0..n_shells (highest shell index n_shells - 1).
    pub fn new(n_shells: usize) -> Self {
        assert!(n_shells >= 1 && n_shells <= 128, "shell count out of range");
        let e_max = n_shells - 1;
        let n_states = states_through_shell(e_max);
        let mut triples = Vec::with_capacity(n_states);
        let mut shell_of = Vec::with_capacity(n_states);
        let mut shell_start = Vec::with_capacity(n_shells + 1);
        for e in 0..=e_max {
            shell_start.push(triples.len() as u32);
            for nx in 0..=e {
                for ny in 0..=(e - nx) {
                    let nz = e - nx - ny;
                    triples.push([nx as u8, ny as u8, nz as u8]);
                    shell_of.push(e as u16);
                }
            }
        }
        shell_start.push(triples.len() as u32);

        // Shared enumeration of fixed-quanta pairs (q1, q2), q1 + q2 <= e_max.
        let mut lines = Vec::new();
        let mut line_index = vec![u32::MAX; n_shells * n_shells];
        for s in 0..=e_max {
            for q1 in 0..=s {
                let q2 = s - q1;
                line_index[q1 * n_shells + q2] = lines.len() as u32;
                lines.push((q1 as u8, q2 as u8));
            }
        }
        let line_of = [(); 3].map(|_| vec![0u32; n_states]);
        let line_state = [(); 3].map(|_| vec![NO_STATE; lines.len() * n_shells]);
        let mut trap = Self { n_shells, triples, shell_of, shell_start, lines, line_of, line_state };
        for axis in Axis::ALL {
            let (f1, f2) = axis.others();
            let a = axis.index();
            for id in 0..n_states {
                let t = trap.triples[id];
                let line = line_index[t[f1] as usize * n_shells + t[f2] as usize];
                trap.line_of[a][id] = line;
                trap.line_state[a][line as usize * n_shells + t[a] as usize] = id as u32;
            }
        }
        trap
    }

    #[inline]
    pub fn n_shells(&self) -> usize {
        self.n_shells
    }

    #[inline]
    pub fn e_max(&self) -> usize {
        self.n_shells - 1
    }

    #[inline]
    pub fn n_states(&self) -> usize {
        self.triples.len()
    }

    #[inline]
    pub fn n_lines(&self) -> usize {
        self.lines.len()
    }

    #[inline]
    pub fn triple(&self, id: u32) -> [u8; 3] {
        self.triples[id as usize]
    }

    #[inline]
    pub fn shell(&self, id: u32) -> usize {
        self.shell_of[id as usize] as usize
    }

    #[inline]
    pub fn shell_range(&self, e: usize) -> std::ops::Range<u32> {
        self.shell_start[e]..self.shell_start[e + 1]
    }

    #[inline]
    pub fn line(&self, axis: Axis, id: u32) -> u32 {
        self.line_of[axis.index()][id as usize]
    }

    /// Quanta of the two axes a line holds fixed, in coordinate order.
    #[inline]
    pub fn line_quanta(&self, line: u32) -> (u8, u8) {
        self.lines[line as usize]
    }

    /// State id at coordinate `n` along `axis` on `line`, or NO_STATE when
    /// that pushes past the shell cap.
    #[inline]
    pub fn state_on_line(&self, axis: Axis, line: u32, n: usize) -> u32 {
        if n >= self.n_shells {
            return NO_STATE;
        }
        self.line_state[axis.index()][line as usize * self.n_shells + n]
    }

    /// Dense id of (nx, ny, nz): the shell offset follows in closed form
    /// from the lexicographic enumeration.
    #[inline]
    pub fn state_id(&self, nx: usize, ny: usize, nz: usize) -> u32 {
        let e = nx + ny + nz;
        debug_assert!(e <= self.e_max(), "state above shell cap");
        let within = nx * (2 * e + 3 - nx) / 2 + ny;
        self.shell_start[e] + within as u32
    }

    /// Id of the state whose quanta are `t` permuted by `perm`: axis a of the
    /// result carries t[perm[a]].
    #[inline]
    pub fn permuted_id(&self, perm: [usize; 3], t: [u8; 3]) -> u32 {
        self.state_id(t[perm[0]] as usize, t[perm[1]] as usize, t[perm[2]] as usize)
    }
}

/// Physical trap and species parameters, SI where dimensional. Everything
/// downstream works in trap units (energies in hbar omega, times in 1/omega);
/// this is the one place the conversions live.
#[derive(Debug, Clone)]
pub struct TrapSpec {
    /// trap angular frequency, rad/s
    pub omega: f64,
    /// shells kept in the truncated trap
    pub n_shells: usize,
    /// recoil phase per unit (a + a^dagger), i.e. k_L sqrt(hbar / 2 m omega)
    pub lamb_dicke: f64,
    /// s-wave scattering length between the two components, m
    pub a_scatter: f64,
    /// atomic mass, kg
    pub mass: f64,
    /// cooling transition wavelength, m
    pub wavelength: f64,
    /// one-body background loss rate, 1/s
    pub gamma_bg: f64,
}

impl TrapSpec {
    pub fn validate(&self) -> Result<()> {
        let pos = [
            ("omega", self.omega),
            ("lamb_dicke", self.lamb_dicke),
            ("a_scatter", self.a_scatter),
            ("mass", self.mass),
            ("wavelength", self.wavelength),
        ];
        for (name, v) in pos {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.gamma_bg >= 0.0 && self.gamma_bg.is_finite()) {
            return Err(Error::Config(format!("gamma_bg must be >= 0, got {}", self.gamma_bg)));
        }
        if !(1..=128).contains(&self.n_shells) {
            return Err(Error::Config(format!("n_shells must be in 1..=128, got {}", self.n_shells)));
        }
        Ok(())
    }

    /// Interaction length scale xi = sqrt(hbar / m omega), m.
    pub fn xi(&self) -> f64 {
        (crate::HBAR / (self.mass * self.omega)).sqrt()
    }

    /// Oscillator length a = xi / sqrt(2), m.
    pub fn oscillator_length(&self) -> f64 {
        self.xi() * std::f64::consts::FRAC_1_SQRT_2
    }

    /// Lamb-Dicke parameter implied by the wavelength and trap alone. The
    /// `lamb_dicke` field is authoritative for the rates; this exists to
    /// check the two against each other.
    pub fn lamb_dicke_geometric(&self) -> f64 {
        2.0 * std::f64::consts::PI / self.wavelength * self.oscillator_length()
    }

    /// Contact interaction strength u0 = 4 pi a_scatter / xi, in hbar omega.
    pub fn u0(&self) -> f64 {
        4.0 * std::f64::consts::PI * self.a_scatter / self.xi()
    }

    /// Background loss rate in trap units (per 1/omega).
    pub fn gamma_bg_trap(&self) -> f64 {
        self.gamma_bg / self.omega
    }

    /// Trap-unit time of `s` seconds.
    pub fn trap_time(&self, s: f64) -> f64 {
        s * self.omega
    }

    /// Seconds per trap-unit time `t`.
    pub fn seconds(&self, t: f64) -> f64 {
        t / self.omega
    }

    pub fn trap(&self) -> Trap {
        Trap::new(self.n_shells)
    }
}

/// Occupation numbers of the laser-addressed component, with the running
/// tallies every rate update needs: per-shell counts, per-axis line bit
/// masks, total quanta.
#[derive(Debug, Clone)]
pub struct Occupancy {
    occ: Vec<bool>,
    shell_count: Vec<u32>,
    line_mask: [Vec<u128>; 3],
    n_atoms: u32,
    quanta: u64,
}

impl Occupancy {
    pub fn empty(trap: &Trap) -> Self {
        Self {
            occ: vec![false; trap.n_states()],
            shell_count: vec![0; trap.n_shells()],
            line_mask: [(); 3].map(|_| vec![0; trap.n_lines()]),
            n_atoms: 0,
            quanta: 0,
        }
    }

    #[inline]
    pub fn is_occupied(&self, id: u32) -> bool {
        self.occ[id as usize]
    }

    #[inline]
    pub fn n_atoms(&self) -> u32 {
        self.n_atoms
    }

    /// Motional quanta summed over atoms, excluding zero-point energy.
    #[inline]
    pub fn quanta(&self) -> u64 {
        self.quanta
    }

    /// Total energy in trap units, zero-point included.
    #[inline]
    pub fn energy(&self) -> f64 {
        self.quanta as f64 + 1.5 * self.n_atoms as f64
    }

    #[inline]
    pub fn shell_count(&self, e: usize) -> u32 {
        self.shell_count[e]
    }

    #[inline]
    pub fn shell_counts(&self) -> &[u32] {
        &self.shell_count
    }

    /// Bit n set when the state at coordinate n along `axis` of `line` is
    /// occupied.
    #[inline]
    pub fn line_mask(&self, axis: Axis, line: u32) -> u128 {
        self.line_mask[axis.index()][line as usize]
    }

    pub fn occupy(&mut self, trap: &Trap, id: u32) {
        debug_assert!(!self.occ[id as usize], "state already occupied");
        self.occ[id as usize] = true;
        let e = trap.shell(id);
        self.shell_count[e] += 1;
        let t = trap.triple(id);
        for axis in Axis::ALL {
            let a = axis.index();
            self.line_mask[a][trap.line(axis, id) as usize] |= 1u128 << t[a];
        }
        self.n_atoms += 1;
        self.quanta += e as u64;
    }

    pub fn vacate(&mut self, trap: &Trap, id: u32) {
        debug_assert!(self.occ[id as usize], "state already empty");
        self.occ[id as usize] = false;
        let e = trap.shell(id);
        self.shell_count[e] -= 1;
        let t = trap.triple(id);
        for axis in Axis::ALL {
            let a = axis.index();
            self.line_mask[a][trap.line(axis, id) as usize] &= !(1u128 << t[a]);
        }
        self.n_atoms -= 1;
        self.quanta -= e as u64;
    }

    /// Ids of all occupied states, ascending.
    pub fn occupied_ids(&self) -> Vec<u32> {
        (0..self.occ.len() as u32).filter(|&id| self.occ[id as usize]).collect()
    }
}

/// Per-shell occupation numbers of the sympathetically cooled component,
/// which the kinetics treats ergodically: only shell totals matter.
#[derive(Debug, Clone)]
pub struct ShellPopulation {
    count: Vec<u32>,
    n_atoms: u32,
    quanta: u64,
}

impl ShellPopulation {
    pub fn empty(n_shells: usize) -> Self {
        Self { count: vec![0; n_shells], n_atoms: 0, quanta: 0 }
    }

    #[inline]
    pub fn n_shells(&self) -> usize {
        self.count.len()
    }

    #[inline]
    pub fn n_atoms(&self) -> u32 {
        self.n_atoms
    }

    #[inline]
    pub fn quanta(&self) -> u64 {
        self.quanta
    }

    #[inline]
    pub fn energy(&self) -> f64 {
        self.quanta as f64 + 1.5 * self.n_atoms as f64
    }

    #[inline]
    pub fn shell_count(&self, e: usize) -> u32 {
        self.count[e]
    }

    #[inline]
    pub fn shell_counts(&self) -> &[u32] {
        &self.count
    }

    /// Open slots left in shell e.
    #[inline]
    pub fn holes(&self, e: usize) -> u32 {
        shell_degeneracy(e) as u32 - self.count[e]
    }

    pub fn add(&mut self, e: usize) {
        debug_assert!(self.count[e] < shell_degeneracy(e) as u32, "shell full");
        self.count[e] += 1;
        self.n_atoms += 1;
        self.quanta += e as u64;
    }

    pub fn remove(&mut self, e: usize) {
        debug_assert!(self.count[e] > 0, "shell empty");
        self.count[e] -= 1;
        self.n_atoms -= 1;
        self.quanta -= e as u64;
    }
}

/// Mean occupation per shell for a Fermi-Dirac distribution at temperature
/// `t` (trap units) and chemical potential `mu` (measured from the trap
/// bottom, zero-point excluded, like the shell index itself).
pub fn fermi_dirac(e: f64, t: f64, mu: f64) -> f64 {
    if t <= 0.0 {
        return if e < mu { 1.0 } else if e > mu { 0.0 } else { 0.5 };
    }
    let x = (e - mu) / t;
    if x > 0.0 {
        let ex = (-x).exp();
        ex / (1.0 + ex)
    } else {
        1.0 / (1.0 + x.exp())
    }
}

/// Chemical potential such that the truncated trap at temperature `t` holds
/// `n_atoms` on average.
pub fn chemical_potential(n_shells: usize, t: f64, n_atoms: f64) -> Result<f64> {
    let cap = states_through_shell(n_shells - 1) as f64;
    if !(n_atoms > 0.0 && n_atoms < cap) {
        return Err(Error::Bracket(format!(
            "atom number {n_atoms} not inside (0, {cap})"
        )));
    }
    let expect = |mu: f64| -> f64 {
        (0..n_shells)
            .map(|e| shell_degeneracy(e) as f64 * fermi_dirac(e as f64, t, mu))
            .sum()
    };
    let mut lo = -50.0 * t.max(1.0);
    let mut hi = n_shells as f64 + 50.0 * t.max(1.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if expect(mid) < n_atoms {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Draw a thermal configuration with exactly `n_atoms` occupied states.
///
/// States are filled independently with their Fermi-Dirac probabilities and
/// the whole draw is repeated until the total comes out exact, which
/// conditions the grand-canonical ensemble on the particle number. A capped
/// retry count keeps pathological parameters from spinning forever; the
/// final attempt is repaired by random insertions or deletions weighted by
/// the same distribution.
pub fn thermal_populate<R: Rng>(
    trap: &Trap,
    n_atoms: usize,
    t: f64,
    rng: &mut R,
) -> Result<Occupancy> {
    if n_atoms > trap.n_states() {
        return Err(Error::Capacity { n_atoms, capacity: trap.n_states() });
    }
    let mu = chemical_potential(trap.n_shells(), t, n_atoms as f64)?;
    let prob: Vec<f64> = (0..trap.n_states() as u32)
        .map(|id| fermi_dirac(trap.shell(id) as f64, t, mu))
        .collect();

    let mut occ = Occupancy::empty(trap);
    for _attempt in 0..2000 {
        for id in 0..trap.n_states() as u32 {
            let want = rng.gen_bool(prob[id as usize]);
            if want != occ.is_occupied(id) {
                if want {
                    occ.occupy(trap, id);
                } else {
                    occ.vacate(trap, id);
                }
            }
        }
        if occ.n_atoms() as usize == n_atoms {
            return Ok(occ);
        }
    }
    // Repair pass: nudge the last draw to the exact number.
    while (occ.n_atoms() as usize) != n_atoms {
        let id = rng.gen_range(0..trap.n_states() as u32);
        let p = prob[id as usize];
        if (occ.n_atoms() as usize) < n_atoms {
            if !occ.is_occupied(id) && rng.gen_bool(p) {
                occ.occupy(trap, id);
            }
        } else if occ.is_occupied(id) && rng.gen_bool(1.0 - p) {
            occ.vacate(trap, id);
        }
    }
    Ok(occ)
}

/// Shell-resolved counterpart of `thermal_populate` for the ergodic
/// component: exact atom number, per-shell counts never above degeneracy.
pub fn thermal_populate_shells<R: Rng>(
    n_shells: usize,
    n_atoms: usize,
    t: f64,
    rng: &mut R,
) -> Result<ShellPopulation> {
    let capacity = states_through_shell(n_shells - 1);
    if n_atoms > capacity {
        return Err(Error::Capacity { n_atoms, capacity });
    }
    let mu = chemical_potential(n_shells, t, n_atoms as f64)?;
    let prob: Vec<f64> =
        (0..n_shells).map(|e| fermi_dirac(e as f64, t, mu)).collect();

    let mut pop = ShellPopulation::empty(n_shells);
    for _attempt in 0..2000 {
        for e in 0..n_shells {
            let g = shell_degeneracy(e) as u32;
            let mut k = 0u32;
            for _ in 0..g {
                if rng.gen_bool(prob[e]) {
                    k += 1;
                }
            }
            let had = pop.shell_count(e);
            for _ in had..k {
                pop.add(e);
            }
            for _ in k..had {
                pop.remove(e);
            }
        }
        if pop.n_atoms() as usize == n_atoms {
            return Ok(pop);
        }
    }
    while (pop.n_atoms() as usize) != n_atoms {
        let e = rng.gen_range(0..n_shells);
        if (pop.n_atoms() as usize) < n_atoms {
            if pop.holes(e) > 0 && rng.gen_bool(prob[e]) {
                pop.add(e);
            }
        } else if pop.shell_count(e) > 0 && rng.gen_bool(1.0 - prob[e]) {
            pop.remove(e);
        }
    }
    Ok(pop)
}
