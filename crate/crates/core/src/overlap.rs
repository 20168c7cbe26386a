//! Coherent states on phase space, their amplitudes over the eigenbasis,
//! and Husimi functions.
//!
//! A phase-space point (q, p, jz, phi) maps to a product of a Glauber
//! state |alpha> and a Bloch state |z>; its amplitudes over the
//! eigenstates of both parity sectors give the Husimi function and feed
//! the participation-ratio diagnostics.
//!
//! The spin overlap is evaluated in the J_x eigenbasis through the
//! rotated coherent parameter w = (1 + z)/(1 - z); the phase convention
//! of the |j, m_x> states implied by that map is the one the Hamiltonian
//! assembly in [`crate::spectrum`] uses, and the cross-route oracle tests
//! below pin the pair down. Every overlap factor (factorials, binomials,
//! displaced powers, Gaussians) is accumulated as a complex logarithm:
//! at cutoffs of 100-150 the factors overflow f64 long before their
//! bounded product does.

use crate::grid::{CellFlag, PhaseGrid, ScalarMap};
use crate::model::{q_for_branch, ModelError, ModelParams, PhasePoint, QBranch};
use crate::special::ln_factorials;
use crate::spectrum::{ecb_alpha_mx, ecb_states, Parity, SpecError, SpectrumPair};
use num_complex::Complex64;
use rayon::prelude::*;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum OverlapError {
    #[error("jz = {jz} lies at the north pole: the Bloch parameter diverges")]
    PoleAtZ { jz: f64 },
    #[error("z = 1 (jz = 0, phi = 0): the x-frame parameter w diverges")]
    WPole,
    #[error("coherent state not representable in the truncated basis (norm {norm})")]
    NotRepresentable { norm: f64 },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Spec(#[from] SpecError),
}

/// Coherent-state parameters of a phase-space point.
#[derive(Clone, Copy, Debug)]
pub struct CoherentPoint {
    /// Glauber parameter sqrt(j/2) (q + i p).
    pub alpha: Complex64,
    /// Bloch parameter tan(theta/2) e^{i phi} with jz = -cos(theta).
    pub z: Complex64,
    /// x-frame parameter (1 + z)/(1 - z).
    pub w: Complex64,
    pub point: PhasePoint,
}

/// Map canonical coordinates to coherent parameters.
///
/// jz = -1 is allowed (z = 0); jz at the north pole and the w-map
/// singularity z = 1 (jz = 0, phi = 0) are errors. Map sweeps that need
/// the singular point go through [`eigenstate_amplitudes_at`], which
/// evaluates the z = 1 limit explicitly.
pub fn canonical_to_coherent(
    params: &ModelParams,
    point: &PhasePoint,
) -> Result<CoherentPoint, OverlapError> {
    if point.jz >= 1.0 - 1e-12 {
        return Err(OverlapError::PoleAtZ { jz: point.jz });
    }
    let alpha = Complex64::new(point.q, point.p) * (params.j / 2.0).sqrt();
    // tan(theta/2) = sqrt((1 + jz)/(1 - jz)) with jz = -cos(theta).
    let t = ((1.0 + point.jz).max(0.0) / (1.0 - point.jz)).sqrt();
    let z = Complex64::from_polar(t, point.phi);
    let one = Complex64::new(1.0, 0.0);
    let denom = one - z;
    if denom.norm() < 1e-12 {
        return Err(OverlapError::WPole);
    }
    let w = (one + z) / denom;
    Ok(CoherentPoint { alpha, z, w, point: *point })
}

/// Amplitudes of a coherent state over the eigenstates of both parity
/// sectors, with their energies and convergence flags.
#[derive(Clone, Debug)]
pub struct OverlapVector {
    /// C^{k,p}; the plus sector first, then the minus sector.
    pub amplitudes: Vec<Complex64>,
    pub energies: Vec<f64>,
    pub parities: Vec<Parity>,
    /// Convergence flags copied from the spectra, when assessed there.
    pub converged: Option<Vec<bool>>,
    /// Total weight over all eigenstates (1 when representable).
    pub norm_all: f64,
    /// Weight over converged eigenstates only.
    pub norm_converged: Option<f64>,
    /// Number of states in the plus sector (offset of the minus block).
    pub n_plus: usize,
}

impl OverlapVector {
    pub fn len(&self) -> usize {
        self.amplitudes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.amplitudes.is_empty()
    }

    /// Index of eigenstate `k` (0-based, ascending) of one parity sector.
    pub fn sector_index(&self, k: usize, parity: Parity) -> usize {
        match parity {
            Parity::Plus => k,
            Parity::Minus => self.n_plus + k,
        }
    }
}

/// How the x-frame parameter enters: finite value or the z = 1 limit.
#[derive(Clone, Copy, Debug)]
enum WEval {
    Finite(Complex64),
    Infinite,
}

/// ln(1 + |w|^2), stable for huge |w|.
fn ln_one_plus_abs2(w: Complex64) -> f64 {
    let a = w.norm();
    if a > 1.0 {
        2.0 * a.ln() + (1.0 / (a * a)).ln_1p()
    } else {
        (a * a).ln_1p()
    }
}

/// Overlaps <N; j, m_x; p | alpha, z> for every basis state of one parity
/// sector, evaluated in log space. Each returned entry is an overlap of
/// unit vectors, so the final exponentials cannot overflow.
fn basis_overlaps_sector(
    params: &ModelParams,
    n_max: usize,
    parity: Parity,
    alpha: Complex64,
    w: WEval,
) -> Vec<Complex64> {
    let states = ecb_states(params, n_max, parity);
    let two_j = params.two_j() as u64;
    let j = params.j;
    let lnf = ln_factorials((n_max).max(two_j as usize));
    let p_sign = parity.sign();
    let abs_alpha2 = alpha.norm_sqr();

    // w-dependent pieces shared across states.
    let (ln_w, ln_1w2) = match w {
        WEval::Finite(w) => (w.ln(), ln_one_plus_abs2(w)),
        WEval::Infinite => (Complex64::new(0.0, 0.0), 0.0),
    };

    states
        .iter()
        .map(|s| {
            let m = s.two_mx as f64 / 2.0;
            let alpha_m = ecb_alpha_mx(params, s.two_mx);
            let ln_norm = if s.two_mx == 0 { -0.5 * (4.0f64).ln() } else { -0.5 * (2.0f64).ln() };
            let ln_binom = 0.5
                * (lnf[two_j as usize]
                    - lnf[(j + m) as usize]
                    - lnf[(j - m).round() as usize]);
            let ln_common = Complex64::new(
                ln_norm + ln_binom - 0.5 * (abs_alpha2 + alpha_m * alpha_m) - 0.5 * lnf[s.n],
                0.0,
            );

            // Power of the displaced argument, with the 0^0 = 1 edge.
            let ln_pow = |base: Complex64, n: usize| -> Option<Complex64> {
                if n == 0 {
                    Some(Complex64::new(0.0, 0.0))
                } else if base.norm() == 0.0 {
                    None
                } else {
                    Some(base.ln() * n as f64)
                }
            };

            let sgn_n = if s.n % 2 == 0 { 1.0 } else { -1.0 };

            let term = |displaced: Complex64, exp_arg: Complex64, w_exp: f64| -> Complex64 {
                match w {
                    WEval::Finite(_) => match ln_pow(displaced, s.n) {
                        Some(lp) => {
                            let ln_term = ln_common
                                + lp
                                + exp_arg
                                + ln_w * (j + w_exp)
                                + Complex64::new(-j * ln_1w2, 0.0);
                            ln_term.exp()
                        }
                        None => Complex64::new(0.0, 0.0),
                    },
                    WEval::Infinite => {
                        // Only the m_x = j column survives in the first
                        // term; the parity image carries w^{j - m_x} -> 0.
                        if (w_exp - j).abs() < 0.25 {
                            match ln_pow(displaced, s.n) {
                                Some(lp) => (ln_common + lp + exp_arg).exp(),
                                None => Complex64::new(0.0, 0.0),
                            }
                        } else {
                            Complex64::new(0.0, 0.0)
                        }
                    }
                }
            };

            let t1 = term(
                alpha - alpha_m,
                alpha * alpha_m, // alpha_m real: alpha_m^* alpha
                m,
            );
            let t2 = term(alpha + alpha_m, -alpha * alpha_m, -m);
            t1 + t2 * (p_sign * sgn_n)
        })
        .collect()
}

/// Amplitudes C^{k,p} of the coherent state over both parity sectors.
///
/// The norm over all states is reported rather than enforced; callers
/// that need representability (participation ratios) gate on it.
pub fn eigenstate_amplitudes(
    pair: &SpectrumPair,
    coherent: &CoherentPoint,
) -> Result<OverlapVector, OverlapError> {
    amplitudes_impl(pair, coherent.alpha, WEval::Finite(coherent.w))
}

/// Amplitudes for an arbitrary phase-space point, including the w-map
/// singularity at z = 1, where the weight concentrates on m_x = j.
pub fn eigenstate_amplitudes_at(
    pair: &SpectrumPair,
    point: &PhasePoint,
) -> Result<OverlapVector, OverlapError> {
    let params = pair.plus.params;
    match canonical_to_coherent(&params, point) {
        Ok(coherent) => eigenstate_amplitudes(pair, &coherent),
        Err(OverlapError::WPole) => {
            let alpha = Complex64::new(point.q, point.p) * (params.j / 2.0).sqrt();
            amplitudes_impl(pair, alpha, WEval::Infinite)
        }
        Err(e) => Err(e),
    }
}

/// Sector basis overlaps for an arbitrary point (z = 1 limit included);
/// the bulk route used by the map sweeps in [`crate::chaos`].
pub(crate) fn basis_overlaps_for(
    params: &ModelParams,
    n_max: usize,
    parity: Parity,
    point: &PhasePoint,
) -> Vec<Complex64> {
    let alpha = Complex64::new(point.q, point.p) * (params.j / 2.0).sqrt();
    match canonical_to_coherent(params, point) {
        Ok(c) => basis_overlaps_sector(params, n_max, parity, alpha, WEval::Finite(c.w)),
        Err(_) => basis_overlaps_sector(params, n_max, parity, alpha, WEval::Infinite),
    }
}

/// Amplitudes of the coherent state at `point` over the eigenstates of a
/// single parity sector. Lets survey-size sectors be processed one at a
/// time instead of holding both eigenvector matrices in memory.
pub fn sector_amplitudes(
    sector: &crate::spectrum::SpectrumResult,
    point: &PhasePoint,
) -> Result<Vec<Complex64>, OverlapError> {
    let parity = match sector.basis.parity {
        crate::spectrum::ParitySel::Minus => Parity::Minus,
        _ => Parity::Plus,
    };
    if point.jz >= 1.0 - 1e-12 {
        return Err(OverlapError::PoleAtZ { jz: point.jz });
    }
    let g = basis_overlaps_for(&sector.params, sector.basis.n_max, parity, point);
    Ok((0..sector.dimension())
        .map(|k| {
            let col = sector.eigenvectors.column(k);
            let mut acc = Complex64::new(0.0, 0.0);
            for (v, gi) in col.iter().zip(&g) {
                acc += gi * *v;
            }
            acc
        })
        .collect())
}

fn amplitudes_impl(
    pair: &SpectrumPair,
    alpha: Complex64,
    w: WEval,
) -> Result<OverlapVector, OverlapError> {
    let params = pair.plus.params;
    let n_max = pair.plus.basis.n_max;
    let mut amplitudes = Vec::with_capacity(pair.total_states());
    let mut energies = Vec::with_capacity(pair.total_states());
    let mut parities = Vec::with_capacity(pair.total_states());

    for parity in [Parity::Plus, Parity::Minus] {
        let sector = pair.sector(parity);
        let g = basis_overlaps_sector(&params, n_max, parity, alpha, w);
        for k in 0..sector.dimension() {
            let col = sector.eigenvectors.column(k);
            let mut acc = Complex64::new(0.0, 0.0);
            for (v, gi) in col.iter().zip(&g) {
                acc += gi * *v;
            }
            amplitudes.push(acc);
            energies.push(sector.eigenvalues[k]);
            parities.push(parity);
        }
    }

    let norm_all: f64 = amplitudes.iter().map(|c| c.norm_sqr()).sum();
    let converged = match (&pair.plus.converged, &pair.minus.converged) {
        (Some(a), Some(b)) => {
            let mut f = a.clone();
            f.extend_from_slice(b);
            Some(f)
        }
        _ => None,
    };
    let norm_converged = converged.as_ref().map(|flags| {
        amplitudes
            .iter()
            .zip(flags)
            .filter(|(_, &c)| c)
            .map(|(a, _)| a.norm_sqr())
            .sum()
    });
    Ok(OverlapVector {
        amplitudes,
        energies,
        parities,
        converged,
        norm_all,
        norm_converged,
        n_plus: pair.plus.dimension(),
    })
}

/// Husimi function Q_{k,p} = |C^{k,p}|^2 for eigenstate `k` (0-based,
/// ascending within its parity sector).
pub fn husimi(overlaps: &OverlapVector, k: usize, parity: Parity) -> f64 {
    overlaps.amplitudes[overlaps.sector_index(k, parity)].norm_sqr()
}

/// Husimi function of one eigenstate over a (phi, jz) grid on a fixed
/// energy surface; cells the surface does not reach are flagged.
pub fn husimi_map(
    pair: &SpectrumPair,
    k: usize,
    parity: Parity,
    epsilon: f64,
    branch: QBranch,
    grid: PhaseGrid,
) -> ScalarMap {
    let params = pair.plus.params;
    let n_max = pair.plus.basis.n_max;
    let sector = pair.sector(parity);
    let eigvec = sector.eigenvectors.column(k);
    let mut map = ScalarMap::new(grid);
    let cells: Vec<(usize, usize, f64, f64)> = map.cells().collect();
    let results: Vec<(usize, usize, f64, CellFlag)> = cells
        .par_iter()
        .map(|&(iv, iu, jz, phi)| {
            let Some(q) = q_for_branch(&params, epsilon, jz, phi, branch) else {
                return (iv, iu, 0.0, CellFlag::Unreachable);
            };
            if jz >= 1.0 - 1e-12 {
                return (iv, iu, 0.0, CellFlag::Unreachable);
            }
            let point = PhasePoint { q, p: 0.0, jz, phi };
            let alpha = Complex64::new(point.q, point.p) * (params.j / 2.0).sqrt();
            let w = match canonical_to_coherent(&params, &point) {
                Ok(c) => WEval::Finite(c.w),
                Err(OverlapError::WPole) => WEval::Infinite,
                Err(_) => return (iv, iu, 0.0, CellFlag::Failed),
            };
            let g = basis_overlaps_sector(&params, n_max, parity, alpha, w);
            let mut acc = Complex64::new(0.0, 0.0);
            for (v, gi) in eigvec.iter().zip(&g) {
                acc += gi * *v;
            }
            (iv, iu, acc.norm_sqr(), CellFlag::Ok)
        })
        .collect();
    for (iv, iu, value, flag) in results {
        map.values[[iv, iu]] = value;
        map.flags[[iv, iu]] = flag;
    }
    map
}
