//! Thermal statistics: running shell moments, Fermi-Dirac fits and the
//! grand-canonical reference curves measured fluctuations are compared
//! against.
//!
//! Energies follow the shell convention used everywhere else: trap units
//! with the zero-point offset dropped, so shell `e` sits at energy `e` and
//! the chemical potential lives on the same axis.

use crate::error::{Error, Result};
use crate::statespace::{chemical_potential, fermi_dirac, fermi_energy, shell_degeneracy};

/// Fractions closer than this to 0 or 1 count as saturated when deciding
/// whether a distribution is a resolvable thermal profile or a sharp step.
const INTERIOR: f64 = 1e-6;

/// Result of fitting a Fermi-Dirac profile to mean shell occupations.
#[derive(Debug, Clone, Copy)]
pub struct FermiFit {
    /// Temperature in units of the shell spacing.
    pub temperature: f64,
    /// Chemical potential in units of the shell spacing.
    pub mu: f64,
    /// Degeneracy-weighted sum of squared residuals at the optimum.
    pub residual: f64,
    /// Temperature over the Fermi temperature of the fitted atom number.
    pub t_over_tf: f64,
    /// Set when the data is a sharp step: the temperature is below the fit
    /// resolution, `temperature` is reported as 0 and `mu` sits mid-gap.
    pub degenerate: bool,
}

/// Least-squares Fermi-Dirac fit to per-shell occupation fractions.
///
/// `fractions[e]` is the mean occupation per state in shell `e`, in [0, 1].
/// The fit minimizes the degeneracy-weighted squared residual over the
/// temperature while the chemical potential is pinned, at every trial
/// temperature, by a bisection on the particle-number constraint
/// `sum_e g_e f(e) = n_atoms`. Degeneracy weighting reflects that each
/// shell mean averages `g_e` independent state occupancies.
pub fn fit_fermi_dirac(fractions: &[f64], n_atoms: f64) -> Result<FermiFit> {
    let n_shells = fractions.len();
    if n_shells < 3 {
        return Err(Error::Fit(format!("need at least 3 shells, got {n_shells}")));
    }
    if !(n_atoms > 0.0) {
        return Err(Error::Fit(format!("atom number {n_atoms} not positive")));
    }
    if let Some(f) = fractions.iter().find(|f| !(-1e-9..=1.0 + 1e-9).contains(*f)) {
        return Err(Error::Fit(format!("fraction {f} outside [0, 1]")));
    }

    let interior = fractions
        .iter()
        .filter(|f| (INTERIOR..=1.0 - INTERIOR).contains(*f))
        .count();
    if interior < 3 {
        return Ok(step_fit(fractions));
    }

    let weighted_ssr = |t: f64| -> Result<(f64, f64)> {
        let mu = chemical_potential(n_shells, t, n_atoms)?;
        let ssr = fractions
            .iter()
            .enumerate()
            .map(|(e, &fbar)| {
                let f = fermi_dirac(e as f64, t, mu);
                shell_degeneracy(e) as f64 * (fbar - f) * (fbar - f)
            })
            .sum();
        Ok((ssr, mu))
    };

    // Coarse log-spaced scan brackets the optimum, golden-section refines.
    let ef = fermi_energy(n_atoms);
    let (lo, hi) = ((1e-5 * ef).ln(), (10.0 * ef).ln());
    const SCAN: usize = 64;
    let mut best = (f64::INFINITY, 0usize);
    for i in 0..SCAN {
        let t = (lo + (hi - lo) * i as f64 / (SCAN - 1) as f64).exp();
        let (ssr, _) = weighted_ssr(t)?;
        if ssr < best.0 {
            best = (ssr, i);
        }
    }
    if best.1 + 1 == SCAN {
        return Err(Error::Fit(format!(
            "no optimum below 10 Fermi energies (residual {:.3e})",
            best.0
        )));
    }
    let step = (hi - lo) / (SCAN - 1) as f64;
    let mut a = lo + step * best.1.saturating_sub(1) as f64;
    let mut b = lo + step * (best.1 + 1) as f64;
    const GOLD: f64 = 0.618_033_988_749_894_9;
    let mut x1 = b - GOLD * (b - a);
    let mut x2 = a + GOLD * (b - a);
    let mut f1 = weighted_ssr(x1.exp())?.0;
    let mut f2 = weighted_ssr(x2.exp())?.0;
    for _ in 0..120 {
        if f1 < f2 {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - GOLD * (b - a);
            f1 = weighted_ssr(x1.exp())?.0;
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + GOLD * (b - a);
            f2 = weighted_ssr(x2.exp())?.0;
        }
    }
    let temperature = (0.5 * (a + b)).exp();
    let (residual, mu) = weighted_ssr(temperature)?;
    Ok(FermiFit {
        temperature,
        mu,
        residual,
        t_over_tf: temperature / ef,
        degenerate: false,
    })
}

/// Zero-temperature fit for step-like data: the chemical potential sits
/// halfway between the last at-least-half-full shell and the next one.
fn step_fit(fractions: &[f64]) -> FermiFit {
    let top = fractions.iter().rposition(|&f| f >= 0.5);
    let mu = match top {
        Some(e) => e as f64 + 0.5,
        None => 0.0,
    };
    let residual = fractions
        .iter()
        .enumerate()
        .map(|(e, &fbar)| {
            let f = if (e as f64) < mu { 1.0 } else { 0.0 };
            shell_degeneracy(e) as f64 * (fbar - f) * (fbar - f)
        })
        .sum();
    FermiFit { temperature: 0.0, mu, residual, t_over_tf: 0.0, degenerate: true }
}

/// Mean shell occupation `g_e f(e)` predicted by a fit.
pub fn thermal_mean_curve(fit: &FermiFit, n_shells: usize) -> Vec<f64> {
    (0..n_shells)
        .map(|e| shell_degeneracy(e) as f64 * fermi_dirac(e as f64, fit.temperature, fit.mu))
        .collect()
}

/// Grand-canonical variance of the shell total, `g_e f(e)(1 - f(e))`:
/// independent Bernoulli occupation of each state in the shell.
pub fn thermal_variance_curve(fit: &FermiFit, n_shells: usize) -> Vec<f64> {
    (0..n_shells)
        .map(|e| {
            let f = fermi_dirac(e as f64, fit.temperature, fit.mu);
            shell_degeneracy(e) as f64 * f * (1.0 - f)
        })
        .collect()
}

/// Reduced chi-squared of measured mean fractions against a fit, with the
/// grand-canonical sampling variance `f(1-f)/(g_e n)` of a mean over `n`
/// independent configurations. Shells whose model variance underflows are
/// excluded; two fitted parameters are subtracted from the dof.
pub fn reduced_chi_squared(fractions: &[f64], n_samples: f64, fit: &FermiFit) -> f64 {
    let mut chi = 0.0;
    let mut dof = 0usize;
    for (e, &fbar) in fractions.iter().enumerate() {
        let f = fermi_dirac(e as f64, fit.temperature, fit.mu);
        let var = f * (1.0 - f) / (shell_degeneracy(e) as f64 * n_samples);
        if var > 1e-300 {
            chi += (fbar - f) * (fbar - f) / var;
            dof += 1;
        }
    }
    if dof > 2 {
        chi / (dof - 2) as f64
    } else {
        f64::INFINITY
    }
}

/// Single-pass running mean and variance of per-shell occupation totals
/// over a sampling window.
#[derive(Debug, Clone)]
pub struct ShellStats {
    t_start: f64,
    t_end: f64,
    samples: u64,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl ShellStats {
    pub fn new(n_shells: usize, t_start: f64) -> Self {
        Self {
            t_start,
            t_end: t_start,
            samples: 0,
            mean: vec![0.0; n_shells],
            m2: vec![0.0; n_shells],
        }
    }

    /// Welford update with the current shell totals.
    pub fn record(&mut self, counts: &[u32], t: f64) {
        debug_assert_eq!(counts.len(), self.mean.len());
        self.samples += 1;
        self.t_end = self.t_end.max(t);
        let inv = 1.0 / self.samples as f64;
        for (e, &c) in counts.iter().enumerate() {
            let x = c as f64;
            let d = x - self.mean[e];
            self.mean[e] += d * inv;
            self.m2[e] += d * (x - self.mean[e]);
        }
    }

    pub fn n_shells(&self) -> usize {
        self.mean.len()
    }

    pub fn samples(&self) -> u64 {
        self.samples
    }

    pub fn window(&self) -> (f64, f64) {
        (self.t_start, self.t_end)
    }

    /// Mean number of atoms in shell `e`.
    pub fn mean(&self, e: usize) -> f64 {
        self.mean[e]
    }

    /// Population variance of the shell-`e` total over the window.
    pub fn variance(&self, e: usize) -> f64 {
        if self.samples == 0 {
            0.0
        } else {
            self.m2[e] / self.samples as f64
        }
    }

    /// Mean occupation per state, `mean(e) / g_e`, as fit input.
    pub fn fractions(&self) -> Vec<f64> {
        self.mean
            .iter()
            .enumerate()
            .map(|(e, &m)| (m / shell_degeneracy(e) as f64).clamp(0.0, 1.0))
            .collect()
    }

    /// Mean total atom number over the window.
    pub fn mean_atoms(&self) -> f64 {
        self.mean.iter().sum()
    }
}

/// P-value of a one-sample Kolmogorov-Smirnov test of `samples` against the
/// unit exponential. Sorts in place.
pub fn ks_exponential_p(samples: &mut [f64]) -> f64 {
    let n = samples.len();
    if n == 0 {
        return 1.0;
    }
    samples.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut d: f64 = 0.0;
    for (i, &x) in samples.iter().enumerate() {
        let cdf = 1.0 - (-x).exp();
        d = d.max(cdf - i as f64 / n as f64);
        d = d.max((i + 1) as f64 / n as f64 - cdf);
    }
    ks_p(d, n)
}

/// Asymptotic KS p-value for statistic `d` at sample size `n`.
pub fn ks_p(d: f64, n: usize) -> f64 {
    let sn = (n as f64).sqrt();
    let lambda = (sn + 0.12 + 0.11 / sn) * d;
    let mut p = 0.0;
    let mut sign = 1.0;
    for k in 1..=100 {
        let term = sign * (-2.0 * (k as f64 * lambda).powi(2)).exp();
        p += term;
        if term.abs() < 1e-12 {
            break;
        }
        sign = -sign;
    }
    (2.0 * p).clamp(0.0, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::statespace::{states_through_shell, thermal_populate_shells};
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn step_function_is_flagged_degenerate() {
        let fractions: Vec<f64> = (0..60).map(|e| if e <= 38 { 1.0 } else { 0.0 }).collect();
        let n = states_through_shell(38) as f64;
        let fit = fit_fermi_dirac(&fractions, n).unwrap();
        assert!(fit.degenerate);
        assert_eq!(fit.temperature, 0.0);
        assert!(fit.mu > 38.0 && fit.mu < 39.0);
        assert_eq!(fit.residual, 0.0);
    }

    #[test]
    fn synthetic_profile_round_trips() {
        let n_shells = 70;
        let n = 2000.0;
        let t = 0.3 * fermi_energy(n);
        let mu = chemical_potential(n_shells, t, n).unwrap();
        let fractions: Vec<f64> =
            (0..n_shells).map(|e| fermi_dirac(e as f64, t, mu)).collect();
        let fit = fit_fermi_dirac(&fractions, n).unwrap();
        assert!(!fit.degenerate);
        assert_relative_eq!(fit.temperature, t, max_relative = 1e-3);
        assert_relative_eq!(fit.mu, mu, max_relative = 1e-2);
        assert_relative_eq!(fit.t_over_tf, 0.3, max_relative = 1e-3);
        // Particle-number sum rule from the constrained chemical potential.
        let total: f64 = thermal_mean_curve(&fit, n_shells).iter().sum();
        assert_relative_eq!(total, n, max_relative = 5e-3);
    }

    #[test]
    fn variance_curve_is_bernoulli() {
        let fit = FermiFit {
            temperature: 2.0,
            mu: 7.0,
            residual: 0.0,
            t_over_tf: 0.1,
            degenerate: false,
        };
        let curve = thermal_variance_curve(&fit, 12);
        // f = 1/2 exactly at the chemical potential.
        assert_relative_eq!(curve[7], shell_degeneracy(7) as f64 / 4.0, epsilon = 1e-12);
        let frozen = FermiFit { temperature: 0.0, mu: 5.5, degenerate: true, ..fit };
        assert!(thermal_variance_curve(&frozen, 12).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn welford_matches_two_pass() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n_shells = 5;
        let mut stats = ShellStats::new(n_shells, 0.0);
        let mut series: Vec<Vec<u32>> = Vec::new();
        for i in 0..200 {
            let counts: Vec<u32> = (0..n_shells).map(|_| rng.gen_range(0..30)).collect();
            stats.record(&counts, i as f64);
            series.push(counts);
        }
        for e in 0..n_shells {
            let xs: Vec<f64> = series.iter().map(|c| c[e] as f64).collect();
            let mean = xs.iter().sum::<f64>() / xs.len() as f64;
            let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / xs.len() as f64;
            assert_relative_eq!(stats.mean(e), mean, max_relative = 1e-10);
            assert_relative_eq!(stats.variance(e), var, max_relative = 1e-10);
        }
        assert_eq!(stats.window(), (0.0, 199.0));
    }

    #[test]
    fn alternating_stream_has_quarter_variance() {
        let mut stats = ShellStats::new(1, 0.0);
        for i in 0..100 {
            stats.record(&[(i % 2) as u32], i as f64);
        }
        assert_relative_eq!(stats.mean(0), 0.5, epsilon = 1e-12);
        assert_relative_eq!(stats.variance(0), 0.25, epsilon = 1e-12);
        let mut constant = ShellStats::new(1, 0.0);
        for i in 0..50 {
            constant.record(&[3], i as f64);
        }
        assert_eq!(constant.variance(0), 0.0);
    }

    #[test]
    fn sampled_ensemble_fit_recovers_temperature() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let n_shells = 30;
        let n_atoms = 600;
        let t = 0.25 * fermi_energy(n_atoms as f64);
        let mut stats = ShellStats::new(n_shells, 0.0);
        for i in 0..300 {
            let pop = thermal_populate_shells(n_shells, n_atoms, t, &mut rng).unwrap();
            stats.record(pop.shell_counts(), i as f64);
        }
        let fit = fit_fermi_dirac(&stats.fractions(), stats.mean_atoms()).unwrap();
        assert_relative_eq!(fit.temperature, t, max_relative = 0.05);
    }

    #[test]
    fn chi_squared_is_consistent_for_bernoulli_sampling() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n_shells = 40;
        let n = 2000.0;
        let t = 0.3 * fermi_energy(n);
        let mu = chemical_potential(n_shells, t, n).unwrap();
        let n_samples = 1500usize;
        let mut mean = vec![0.0; n_shells];
        for _ in 0..n_samples {
            for (e, m) in mean.iter_mut().enumerate() {
                let g = shell_degeneracy(e);
                let f = fermi_dirac(e as f64, t, mu);
                let hits = (0..g).filter(|_| rng.gen_bool(f)).count();
                *m += hits as f64 / g as f64;
            }
        }
        for m in &mut mean {
            *m /= n_samples as f64;
        }
        let fit = FermiFit { temperature: t, mu, residual: 0.0, t_over_tf: 0.3, degenerate: false };
        let chi = reduced_chi_squared(&mean, n_samples as f64, &fit);
        assert!((0.5..2.0).contains(&chi), "reduced chi-squared {chi}");
    }

    #[test]
    fn ks_separates_exponential_from_uniform() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let mut exp: Vec<f64> =
            (0..2000).map(|_| -(1.0 - rng.gen::<f64>()).ln()).collect();
        assert!(ks_exponential_p(&mut exp) > 0.01);
        let mut uni: Vec<f64> = (0..2000).map(|_| rng.gen::<f64>()).collect();
        assert!(ks_exponential_p(&mut uni) < 1e-3);
    }
}
