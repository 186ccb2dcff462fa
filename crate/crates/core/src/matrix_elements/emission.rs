//! Angular average of recoil overlaps over the spontaneous emission
//! direction.
//!
//! An emitted photon along k_hat displaces each axis by kappa_a =
//! eta |k_hat_a|, so the branching weight from excited state l to final
//! state m is the direction average
//!
//!   xi_lm = int dOmega W(k_hat) prod_a |<m_a| e^{i eta k_hat_a x} |l_a>|^2.
//!
//! Every 1D factor is a polynomial in k_hat_a^2 times e^{-eta^2 k_hat_a^2},
//! and the exponentials merge into the constant e^{-eta^2} on the unit
//! sphere, so a product Gauss-Legendre x uniform-azimuth rule of matched
//! degree integrates xi exactly. The integrand is even in every component;
//! the rule folds onto one octant.

use super::displacement::overlap_1d_sq;
use crate::statespace::Axis;

/// Angular distribution of spontaneous emission.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EmissionPattern {
    /// W = 1 / 4 pi
    Isotropic,
    /// linear-dipole doughnut about the given axis, W = (3/8 pi)(1 - (k.d)^2)
    Dipole(Axis),
}

/// Directions and weights on one octant of the unit sphere; the pattern
/// weight W and the surface measure are folded into the weights, so sums
/// over the rule approximate int dOmega W f for integrands even in every
/// component.
#[derive(Debug, Clone)]
pub struct DirectionRule {
    pub dirs: Vec<[f64; 3]>,
    pub weights: Vec<f64>,
}

/// Octant product rule exact for even integrands of polynomial degree
/// `degree` in the direction components (times W).
pub fn direction_rule(pattern: EmissionPattern, degree: usize) -> DirectionRule {
    // Polar: Legendre degree along u = cos(theta) is `degree` plus 2 from a
    // dipole W; node count covers it, rounded even so u = 0 never appears.
    let n_polar = ((degree + 2) / 2 + 2) & !1;
    let gl = super::quadrature::gauss_legendre(n_polar);
    // Azimuth: uniform M-point rules integrate trig degree M - 1 exactly;
    // the half-step offset keeps nodes off the coordinate planes and makes
    // the quarter-circle fold exact.
    let m4 = degree / 4 + 2;
    let step = std::f64::consts::FRAC_PI_2 / m4 as f64;
    let w_phi = 2.0 * std::f64::consts::PI / (4 * m4) as f64;

    let w_pattern = |d: &[f64; 3]| -> f64 {
        match pattern {
            EmissionPattern::Isotropic => 0.25 * std::f64::consts::FRAC_1_PI,
            EmissionPattern::Dipole(axis) => {
                let c = d[axis.index()];
                0.375 * std::f64::consts::FRAC_1_PI * (1.0 - c * c)
            }
        }
    };

    let mut dirs = Vec::with_capacity(n_polar / 2 * m4);
    let mut weights = Vec::with_capacity(n_polar / 2 * m4);
    for (&u, &wu) in gl.nodes.iter().zip(&gl.weights) {
        if u <= 0.0 {
            continue;
        }
        let s = (1.0 - u * u).sqrt();
        for j in 0..m4 {
            let phi = (j as f64 + 0.5) * step;
            let d = [s * phi.cos(), s * phi.sin(), u];
            // 2 polar mirror copies x 4 azimuthal quadrants.
            let w = 8.0 * wu * w_phi * w_pattern(&d);
            dirs.push(d);
            weights.push(w);
        }
    }
    DirectionRule { dirs, weights }
}

/// Squared recoil overlap between 3D states for a photon along `khat`:
/// the product of the three displaced-axis factors.
pub fn franck_condon_sq(l: [u8; 3], m: [u8; 3], khat: [f64; 3], eta: f64) -> f64 {
    let mut v = 1.0;
    for a in 0..3 {
        v *= overlap_1d_sq(l[a] as usize, m[a] as usize, eta * khat[a].abs());
        if v == 0.0 {
            return 0.0;
        }
    }
    v
}

/// Emission branching weight xi_lm by exact-degree angular quadrature.
/// Symmetric in (l, m); rows over all m sum to one.
pub fn xi(l: [u8; 3], m: [u8; 3], pattern: EmissionPattern, eta: f64) -> f64 {
    let sum = |t: [u8; 3]| t.iter().map(|&q| q as usize).sum::<usize>();
    let rule = direction_rule(pattern, 2 * (sum(l) + sum(m)));
    xi_with_rule(l, m, &rule, eta)
}

/// xi_lm under a caller-supplied direction rule, for batched builds that
/// share one rule across many rows.
pub fn xi_with_rule(l: [u8; 3], m: [u8; 3], rule: &DirectionRule, eta: f64) -> f64 {
    let mut acc = 0.0;
    for (d, &w) in rule.dirs.iter().zip(&rule.weights) {
        acc += w * franck_condon_sq(l, m, *d, eta);
    }
    acc
}
