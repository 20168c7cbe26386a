//! Model parameters, the classical Hamiltonian per particle, and the
//! geometry of constant-energy surfaces.
//!
//! Conventions: energies are quoted per particle in units of the atomic
//! splitting (omega0 = 1 by default), the bosonic quadratures (q, p) are
//! dimensionless, and the collective spin is parameterized by the
//! normalized projection jz = J_z/j together with the azimuth phi.

use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid parameter {name}: {value} ({reason})")]
    InvalidParameter { name: &'static str, value: f64, reason: &'static str },
}

/// Physical couplings and system size of the atom-field Hamiltonian.
///
/// `delta` interpolates between the Tavis-Cummings limit (0, rotating-wave,
/// integrable) and the full Dicke model (1, with counter-rotating terms).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    /// Field frequency.
    pub omega: f64,
    /// Atomic level splitting.
    pub omega0: f64,
    /// Atom-field coupling.
    pub gamma: f64,
    /// Weight of the counter-rotating interaction, in [0, 1].
    pub delta: f64,
    /// Pseudo-spin length; 2j is the number of atoms.
    pub j: f64,
}

impl ModelParams {
    pub fn new(omega: f64, omega0: f64, gamma: f64, delta: f64, j: f64) -> Result<Self, ModelError> {
        if !(omega > 0.0) || !omega.is_finite() {
            return Err(ModelError::InvalidParameter {
                name: "omega",
                value: omega,
                reason: "field frequency must be positive",
            });
        }
        if !(omega0 >= 0.0) || !omega0.is_finite() {
            return Err(ModelError::InvalidParameter {
                name: "omega0",
                value: omega0,
                reason: "atomic splitting must be non-negative",
            });
        }
        if !(gamma >= 0.0) || !gamma.is_finite() {
            return Err(ModelError::InvalidParameter {
                name: "gamma",
                value: gamma,
                reason: "coupling must be non-negative",
            });
        }
        if !(0.0..=1.0).contains(&delta) {
            return Err(ModelError::InvalidParameter {
                name: "delta",
                value: delta,
                reason: "counter-rotating weight must lie in [0, 1]",
            });
        }
        let two_j = 2.0 * j;
        if !(j > 0.0) || (two_j - two_j.round()).abs() > 1e-9 || two_j.round() < 1.0 {
            return Err(ModelError::InvalidParameter {
                name: "j",
                value: j,
                reason: "2j must be a positive integer",
            });
        }
        Ok(ModelParams { omega, omega0, gamma, delta, j })
    }

    /// Resonant Dicke model (omega = omega0 = 1, delta = 1).
    pub fn resonant(j: f64, gamma: f64) -> Result<Self, ModelError> {
        Self::new(1.0, 1.0, gamma, 1.0, j)
    }

    /// Resonant Dicke model with the coupling given in units of the
    /// critical coupling.
    pub fn resonant_rel(j: f64, gamma_rel: f64) -> Result<Self, ModelError> {
        // gamma_c = 1/2 on resonance with delta = 1.
        Self::new(1.0, 1.0, 0.5 * gamma_rel, 1.0, j)
    }

    /// Number of atoms, 2j.
    pub fn n_atoms(&self) -> f64 {
        2.0 * self.j
    }

    /// 2j as an integer.
    pub fn two_j(&self) -> usize {
        (2.0 * self.j).round() as usize
    }
}

/// A point of the classical phase space R^2 x S^2.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhasePoint {
    /// Bosonic position quadrature.
    pub q: f64,
    /// Bosonic momentum quadrature.
    pub p: f64,
    /// Normalized pseudo-spin projection J_z/j, in [-1, 1].
    pub jz: f64,
    /// Azimuth, wrapped to [-pi, pi).
    pub phi: f64,
}

/// Wrap an angle to the principal interval [-pi, pi).
pub fn wrap_angle(phi: f64) -> f64 {
    let mut x = (phi + PI).rem_euclid(2.0 * PI) - PI;
    if x >= PI {
        x = -PI;
    }
    x
}

impl PhasePoint {
    pub fn new(q: f64, p: f64, jz: f64, phi: f64) -> Result<Self, ModelError> {
        if !(jz.abs() <= 1.0) {
            return Err(ModelError::InvalidParameter {
                name: "jz",
                value: jz,
                reason: "normalized projection must satisfy |jz| <= 1",
            });
        }
        if !q.is_finite() || !p.is_finite() || !phi.is_finite() {
            return Err(ModelError::InvalidParameter {
                name: "q/p/phi",
                value: f64::NAN,
                reason: "coordinates must be finite",
            });
        }
        Ok(PhasePoint { q, p, jz, phi: wrap_angle(phi) })
    }
}

/// Which root of the quadratic energy condition, Eq.-wise q_plus >= q_minus.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum QBranch {
    Plus,
    Minus,
}

impl QBranch {
    pub fn label(self) -> &'static str {
        match self {
            QBranch::Plus => "plus",
            QBranch::Minus => "minus",
        }
    }
}

impl std::str::FromStr for QBranch {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "plus" | "+" | "q+" => Ok(QBranch::Plus),
            "minus" | "-" | "q-" => Ok(QBranch::Minus),
            other => Err(format!("unknown branch '{other}' (expected plus|minus)")),
        }
    }
}

/// A constant-energy section at p = 0, restricted to one q sheet.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnergySurfaceSpec {
    /// Energy per particle, in units of omega0.
    pub epsilon: f64,
    pub branch: QBranch,
}

/// Topology classes of the accessible region on the Bloch sphere.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum EnergyRegion {
    BelowGround,
    TwoLobes,
    SingleLobe,
    FullSphere,
}

impl EnergyRegion {
    pub fn label(self) -> &'static str {
        match self {
            EnergyRegion::BelowGround => "below_ground",
            EnergyRegion::TwoLobes => "two_lobes",
            EnergyRegion::SingleLobe => "single_lobe",
            EnergyRegion::FullSphere => "full_sphere",
        }
    }
}

/// Critical coupling where the ground state turns superradiant,
/// sqrt(omega * omega0) / (1 + delta).
pub fn critical_coupling(params: &ModelParams) -> Result<f64, ModelError> {
    if params.omega0 <= 0.0 {
        return Err(ModelError::InvalidParameter {
            name: "omega0",
            value: params.omega0,
            reason: "critical coupling requires positive frequencies",
        });
    }
    Ok((params.omega * params.omega0).sqrt() / (1.0 + params.delta))
}

/// Classical energy per particle at a phase-space point.
///
/// For delta = 1 this is
/// omega0 jz + omega (q^2 + p^2)/2 + 2 gamma sqrt(1 - jz^2) q cos(phi);
/// general delta weights the interaction as
/// gamma sqrt(1 - jz^2) [(1 + delta) q cos(phi) + (1 - delta) p sin(phi)],
/// the coherent-state expectation of the full Hamiltonian per particle.
pub fn classical_energy(params: &ModelParams, point: &PhasePoint) -> f64 {
    let s = (1.0 - point.jz * point.jz).max(0.0).sqrt();
    params.omega0 * point.jz
        + 0.5 * params.omega * (point.q * point.q + point.p * point.p)
        + params.gamma
            * s
            * ((1.0 + params.delta) * point.q * point.phi.cos()
                + (1.0 - params.delta) * point.p * point.phi.sin())
}

/// Global energy minimum of the classical Hamiltonian and its location.
///
/// Below the critical coupling the minimum sits at the south pole with
/// energy -omega0; above it the field displaces and the spin tilts to
/// jz = -(gamma_c/gamma)^2, with energy
/// -(omega0/2) (gamma_c^2/gamma^2 + gamma^2/gamma_c^2).
pub fn ground_state_config(params: &ModelParams) -> Result<(PhasePoint, f64), ModelError> {
    let gc = critical_coupling(params)?;
    if params.gamma <= gc {
        let point = PhasePoint::new(0.0, 0.0, -1.0, 0.0)?;
        Ok((point, -params.omega0))
    } else {
        let ratio = gc / params.gamma;
        let r2 = ratio * ratio;
        let q = -(1.0 + params.delta) * params.gamma / params.omega * (1.0 - r2 * r2).sqrt();
        let point = PhasePoint::new(q, 0.0, -r2, 0.0)?;
        let energy = -0.5 * params.omega0 * (r2 + 1.0 / r2);
        Ok((point, energy))
    }
}

/// Tolerance below which the quadratic discriminant counts as degenerate.
const DEGENERATE_DISCRIMINANT: f64 = 1e-12;

/// Real q solving h_cl(q, p=0, jz, phi) = epsilon, ordered q_plus, q_minus.
///
/// Returns an empty vector when the point lies outside the accessible
/// region, and a single root when the discriminant vanishes within 1e-12.
pub fn q_branches(params: &ModelParams, epsilon: f64, jz: f64, phi: f64) -> Vec<f64> {
    debug_assert!(jz.abs() <= 1.0);
    let s = (1.0 - jz * jz).max(0.0).sqrt();
    // h = omega q^2 / 2 + g q + omega0 jz with g the interaction slope.
    let g = params.gamma * (1.0 + params.delta) * s * phi.cos();
    let shift = -g / params.omega;
    let disc = shift * shift + 2.0 * (epsilon - params.omega0 * jz) / params.omega;
    if disc < -DEGENERATE_DISCRIMINANT {
        return Vec::new();
    }
    if disc.abs() <= DEGENERATE_DISCRIMINANT {
        return vec![shift];
    }
    let root = disc.sqrt();
    vec![shift + root, shift - root]
}

/// The q value for one branch, when the surface reaches (jz, phi).
pub fn q_for_branch(
    params: &ModelParams,
    epsilon: f64,
    jz: f64,
    phi: f64,
    branch: QBranch,
) -> Option<f64> {
    let roots = q_branches(params, epsilon, jz, phi);
    match (roots.len(), branch) {
        (0, _) => None,
        (1, _) => Some(roots[0]),
        (_, QBranch::Plus) => Some(roots[0]),
        (_, QBranch::Minus) => Some(roots[1]),
    }
}

/// Classify the topology of the energy surface at energy `epsilon`.
pub fn classify_energy_region(
    params: &ModelParams,
    epsilon: f64,
) -> Result<EnergyRegion, ModelError> {
    let (_, e0) = ground_state_config(params)?;
    let w0 = params.omega0;
    Ok(if epsilon < e0 {
        EnergyRegion::BelowGround
    } else if epsilon < -w0 {
        EnergyRegion::TwoLobes
    } else if epsilon < w0 {
        EnergyRegion::SingleLobe
    } else {
        EnergyRegion::FullSphere
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn params(omega: f64, omega0: f64, gamma: f64, delta: f64) -> ModelParams {
        ModelParams::new(omega, omega0, gamma, delta, 30.0).unwrap()
    }

    #[test]
    fn critical_coupling_examples() {
        assert_abs_diff_eq!(critical_coupling(&params(1.0, 1.0, 0.3, 1.0)).unwrap(), 0.5);
        assert_abs_diff_eq!(critical_coupling(&params(1.0, 1.0, 0.3, 0.0)).unwrap(), 1.0);
        assert_abs_diff_eq!(critical_coupling(&params(2.0, 0.5, 0.3, 1.0)).unwrap(), 0.5);
    }

    #[test]
    fn critical_coupling_rejects_zero_splitting() {
        let p = ModelParams::new(1.0, 0.0, 0.5, 1.0, 5.0).unwrap();
        assert!(critical_coupling(&p).is_err());
    }

    #[test]
    fn classical_energy_south_pole() {
        let p = params(1.3, 0.7, 0.9, 1.0);
        let pt = PhasePoint::new(0.0, 0.0, -1.0, 0.0).unwrap();
        assert_abs_diff_eq!(classical_energy(&p, &pt), -0.7, epsilon = 1e-15);
    }

    #[test]
    fn classical_energy_superradiant_minimizer() {
        // gamma = 2 gamma_c on resonance; the displaced minimum has
        // energy -(1/2)(1/4 + 4) = -2.125.
        let p = params(1.0, 1.0, 1.0, 1.0);
        let q = -2.0 * (1.0f64 - 0.0625).sqrt();
        assert_abs_diff_eq!(q, -1.9364916731037085, epsilon = 1e-12);
        let pt = PhasePoint::new(q, 0.0, -0.25, 0.0).unwrap();
        assert_abs_diff_eq!(classical_energy(&p, &pt), -2.125, epsilon = 1e-12);
    }

    #[test]
    fn classical_energy_interaction_dies_at_phi_half_pi() {
        let p = params(1.0, 1.0, 0.8, 1.0);
        let pt = PhasePoint::new(0.7, -0.3, 0.4, std::f64::consts::FRAC_PI_2).unwrap();
        let expect = p.omega0 * 0.4 + 0.5 * p.omega * (0.49 + 0.09);
        assert_abs_diff_eq!(classical_energy(&p, &pt), expect, epsilon = 1e-12);
    }

    #[test]
    fn ground_state_normal_phase() {
        let p = params(1.0, 1.0, 0.2, 1.0); // 0.4 gamma_c
        let (pt, e0) = ground_state_config(&p).unwrap();
        assert_eq!((pt.q, pt.p, pt.jz, pt.phi), (0.0, 0.0, -1.0, 0.0));
        assert_abs_diff_eq!(e0, -1.0);
    }

    #[test]
    fn ground_state_superradiant_energy() {
        let p = params(1.0, 1.0, 1.0, 1.0);
        let (_, e0) = ground_state_config(&p).unwrap();
        assert_abs_diff_eq!(e0, -2.125, epsilon = 1e-14);
    }

    #[test]
    fn ground_state_branches_match_at_critical_coupling() {
        let p = params(1.0, 1.0, 0.5, 1.0);
        let (_, e0) = ground_state_config(&p).unwrap();
        assert_abs_diff_eq!(e0, -1.0, epsilon = 1e-14);
        let just_above = params(1.0, 1.0, 0.5 + 1e-9, 1.0);
        let (_, e1) = ground_state_config(&just_above).unwrap();
        assert_abs_diff_eq!(e1, -1.0, epsilon = 1e-8);
    }

    #[test]
    fn ground_state_is_stationary() {
        // Finite-difference gradient of the classical energy vanishes at
        // the minimum, both below and above the transition.
        for gamma in [0.3, 0.5, 0.8, 1.0, 1.7] {
            let p = params(1.0, 1.0, gamma, 1.0);
            let (pt, e0) = ground_state_config(&p).unwrap();
            assert_abs_diff_eq!(classical_energy(&p, &pt), e0, epsilon = 1e-12);
            let h = 1e-6;
            let grad_q = (classical_energy(&p, &PhasePoint { q: pt.q + h, ..pt })
                - classical_energy(&p, &PhasePoint { q: pt.q - h, ..pt }))
                / (2.0 * h);
            let grad_p = (classical_energy(&p, &PhasePoint { p: pt.p + h, ..pt })
                - classical_energy(&p, &PhasePoint { p: pt.p - h, ..pt }))
                / (2.0 * h);
            let grad_phi = (classical_energy(&p, &PhasePoint { phi: pt.phi + h, ..pt })
                - classical_energy(&p, &PhasePoint { phi: pt.phi - h, ..pt }))
                / (2.0 * h);
            assert!(grad_q.abs() < 1e-9, "dq at gamma={gamma}: {grad_q}");
            assert!(grad_p.abs() < 1e-9, "dp at gamma={gamma}: {grad_p}");
            assert!(grad_phi.abs() < 1e-9, "dphi at gamma={gamma}: {grad_phi}");
            // jz is an interior minimum only in the superradiant phase.
            if pt.jz > -1.0 + h {
                let grad_jz = (classical_energy(&p, &PhasePoint { jz: pt.jz + h, ..pt })
                    - classical_energy(&p, &PhasePoint { jz: pt.jz - h, ..pt }))
                    / (2.0 * h);
                assert!(grad_jz.abs() < 1e-9, "djz at gamma={gamma}: {grad_jz}");
            }
        }
    }

    #[test]
    fn ground_state_energy_kink_at_transition() {
        // epsilon_0(gamma) is continuous at gamma_c but its second
        // derivative jumps: the second-order transition signature.
        let gc = 0.5;
        let step = 1e-3 * gc;
        let e = |g: f64| ground_state_config(&params(1.0, 1.0, g, 1.0)).unwrap().1;
        let second = |g: f64| (e(g + step) - 2.0 * e(g) + e(g - step)) / (step * step);
        let below = second(gc - 10.0 * step);
        let above = second(gc + 10.0 * step);
        assert_abs_diff_eq!(below, 0.0, epsilon = 1e-6);
        assert!(above.abs() > 1.0, "second derivative above gamma_c: {above}");
    }

    #[test]
    fn q_branches_empty_outside_surface() {
        let p = params(1.0, 1.0, 1.0, 1.0);
        assert!(q_branches(&p, -1.4, -1.0, 0.3).is_empty());
    }

    #[test]
    fn q_branches_table_point() {
        let p = params(1.0, 1.0, 1.0, 1.0);
        let roots = q_branches(&p, -1.4, -0.75, 0.0);
        assert_eq!(roots.len(), 2);
        assert_abs_diff_eq!(roots[0], -0.65205, epsilon = 1e-4);
        assert_abs_diff_eq!(roots[1], -1.99370, epsilon = 1e-4);
        for q in roots {
            let pt = PhasePoint::new(q, 0.0, -0.75, 0.0).unwrap();
            assert_abs_diff_eq!(classical_energy(&p, &pt), -1.4, epsilon = 1e-10);
        }
    }

    #[test]
    fn q_branches_symmetric_at_phi_half_pi() {
        let p = params(1.0, 1.0, 1.0, 1.0);
        let eps = 0.8;
        let jz = 0.1;
        let roots = q_branches(&p, eps, jz, std::f64::consts::FRAC_PI_2);
        let expect = (2.0 * (eps - p.omega0 * jz) / p.omega).sqrt();
        assert_eq!(roots.len(), 2);
        assert_abs_diff_eq!(roots[0], expect, epsilon = 1e-12);
        assert_abs_diff_eq!(roots[1], -expect, epsilon = 1e-12);
    }

    #[test]
    fn classify_regions_superradiant() {
        let p = params(1.0, 1.0, 1.0, 1.0);
        assert_eq!(classify_energy_region(&p, -3.0).unwrap(), EnergyRegion::BelowGround);
        assert_eq!(classify_energy_region(&p, -1.4).unwrap(), EnergyRegion::TwoLobes);
        assert_eq!(classify_energy_region(&p, 0.0).unwrap(), EnergyRegion::SingleLobe);
        assert_eq!(classify_energy_region(&p, 2.0).unwrap(), EnergyRegion::FullSphere);
    }

    #[test]
    fn classify_regions_normal_phase_has_no_lobes() {
        let p = params(1.0, 1.0, 0.3, 1.0);
        assert_eq!(classify_energy_region(&p, -1.1).unwrap(), EnergyRegion::BelowGround);
        assert_eq!(classify_energy_region(&p, -0.9).unwrap(), EnergyRegion::SingleLobe);
        assert_eq!(classify_energy_region(&p, 1.5).unwrap(), EnergyRegion::FullSphere);
    }

    /// Count connected components of the accessible set on a coarse grid,
    /// treating phi as periodic.
    fn accessible_components(p: &ModelParams, eps: f64) -> (usize, bool) {
        let n_phi = 72;
        let n_jz = 61;
        let mut mask = vec![false; n_phi * n_jz];
        for iv in 0..n_jz {
            let jz = -1.0 + 2.0 * iv as f64 / (n_jz - 1) as f64;
            for iu in 0..n_phi {
                let phi = -PI + 2.0 * PI * iu as f64 / n_phi as f64;
                mask[iv * n_phi + iu] = !q_branches(p, eps, jz, phi).is_empty();
            }
        }
        let mut seen = vec![false; mask.len()];
        let mut comps = 0;
        for start in 0..mask.len() {
            if !mask[start] || seen[start] {
                continue;
            }
            comps += 1;
            let mut stack = vec![start];
            seen[start] = true;
            while let Some(i) = stack.pop() {
                let (iv, iu) = (i / n_phi, i % n_phi);
                let mut push = |v: usize, u: usize| {
                    let idx = v * n_phi + u;
                    if mask[idx] && !seen[idx] {
                        seen[idx] = true;
                        stack.push(idx);
                    }
                };
                if iv > 0 {
                    push(iv - 1, iu);
                }
                if iv + 1 < n_jz {
                    push(iv + 1, iu);
                }
                push(iv, (iu + 1) % n_phi);
                push(iv, (iu + n_phi - 1) % n_phi);
            }
        }
        let north_pole_accessible = !q_branches(p, eps, 1.0, 0.0).is_empty();
        (comps, north_pole_accessible)
    }

    #[test]
    fn region_boundaries_match_surface_topology() {
        let p = params(1.0, 1.0, 1.0, 1.0);
        let (c_lobes, _) = accessible_components(&p, -1.4);
        assert_eq!(c_lobes, 2);
        let (c_single, north_single) = accessible_components(&p, 0.0);
        assert_eq!(c_single, 1);
        assert!(!north_single);
        let (c_full, north_full) = accessible_components(&p, 1.5);
        assert_eq!(c_full, 1);
        assert!(north_full);
    }

    #[test]
    fn wrap_angle_principal_interval() {
        assert_abs_diff_eq!(wrap_angle(3.0 * PI), -PI, epsilon = 1e-12);
        assert_abs_diff_eq!(wrap_angle(-PI), -PI);
        assert!(wrap_angle(PI) < PI);
    }

    proptest! {
        #[test]
        fn q_roots_reproduce_energy(
            eps in -2.0..2.0f64,
            jz in -0.999..0.999f64,
            phi in -PI..PI,
            gamma in 0.0..1.5f64,
        ) {
            let p = params(1.0, 1.0, gamma, 1.0);
            for q in q_branches(&p, eps, jz, phi) {
                let pt = PhasePoint::new(q, 0.0, jz, phi).unwrap();
                prop_assert!((classical_energy(&p, &pt) - eps).abs() <= 1e-10);
            }
        }

        #[test]
        fn tavis_cummings_energy_matches_general_form(
            q in -2.0..2.0f64,
            pp in -2.0..2.0f64,
            jz in -1.0..1.0f64,
            phi in -PI..PI,
        ) {
            // At delta = 0 the interaction reduces to
            // gamma sqrt(1-jz^2) (q cos phi + p sin phi).
            let p = params(1.0, 1.0, 0.7, 0.0);
            let pt = PhasePoint::new(q, pp, jz, phi).unwrap();
            let s = (1.0 - jz * jz).max(0.0).sqrt();
            let expect = jz + 0.5 * (q * q + pp * pp)
                + 0.7 * s * (q * phi.cos() + pp * phi.sin());
            prop_assert!((classical_energy(&p, &pt) - expect).abs() < 1e-12);
        }
    }
}
