//! Classical dynamics on the energy surface: Hamilton's equations derived
//! from the classical Hamiltonian, Poincaré sections on the p = 0 plane,
//! and maximal Lyapunov exponents via tangent-space renormalization.

use crate::grid::{CellFlag, PhaseGrid, ScalarMap};
use crate::model::{
    classical_energy, q_branches, q_for_branch, wrap_angle, ModelError, ModelParams, PhasePoint,
    QBranch,
};
use crate::ode::Rkf78;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DynError {
    #[error("pole proximity: |jz| = {jz:.12} too close to 1")]
    PoleProximity { jz: f64 },
    #[error("energy drift {drift:e} exceeded bound {bound:e} at t = {t}")]
    EnergyDrift { drift: f64, bound: f64, t: f64 },
    #[error("step size underflow at t = {t}")]
    StepUnderflow { t: f64 },
    #[error("step budget exhausted after {steps} steps at t = {t}")]
    MaxStepsExceeded { steps: u64, t: f64 },
    #[error("start energy {actual} does not match requested surface {expected} (|diff| > 1e-10)")]
    EnergyMismatch { expected: f64, actual: f64 },
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Tolerances and guards for the adaptive integrator.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct IntegratorControls {
    /// Per-step relative tolerance.
    pub rel_tol: f64,
    /// Per-step absolute tolerance floor.
    pub abs_tol: f64,
    /// Maximum allowed |h_cl - epsilon| along a trajectory.
    pub drift_bound: f64,
    /// Trajectories are rejected once |jz| > 1 - pole_margin.
    pub pole_margin: f64,
    pub max_steps: u64,
    pub initial_step: f64,
}

impl Default for IntegratorControls {
    fn default() -> Self {
        IntegratorControls {
            rel_tol: 1e-10,
            abs_tol: 1e-12,
            drift_bound: 1e-6,
            pole_margin: 1e-6,
            max_steps: 200_000_000,
            initial_step: 1e-3,
        }
    }
}

/// Controls for the Benettin maximal-exponent estimate.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct LyapunovControls {
    pub integrator: IntegratorControls,
    /// Total integration time (units of 1/omega0).
    pub total_time: f64,
    /// Time between tangent renormalizations.
    pub renorm_interval: f64,
    /// Estimates below this count as "converged to zero" when judging the
    /// relative settling of the running estimate.
    pub zero_floor: f64,
}

impl Default for LyapunovControls {
    fn default() -> Self {
        LyapunovControls {
            integrator: IntegratorControls::default(),
            total_time: 2e4,
            renorm_interval: 1.0,
            zero_floor: ZERO_LAMBDA_THRESHOLD,
        }
    }
}

/// Lyapunov exponents below this value count as regular dynamics.
pub const ZERO_LAMBDA_THRESHOLD: f64 = 0.005;

/// An integrated orbit with its conservation diagnostics.
#[derive(Clone, Debug)]
pub struct Trajectory {
    /// Accepted integration steps as (time, point).
    pub samples: Vec<(f64, PhasePoint)>,
    /// Energy per particle at the start.
    pub energy: f64,
    /// Maximum |h_cl - energy| observed along the samples.
    pub drift: f64,
}

/// One transversal crossing of the p = 0 plane.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct SectionPoint {
    pub jz: f64,
    pub phi: f64,
    /// Which sheet of the energy surface the crossing lies on.
    pub branch: QBranch,
    pub crossing_time: f64,
}

/// Poincaré section output; `truncated` carries the reason when the orbit
/// left the integrator quality bounds before collecting every crossing.
#[derive(Clone, Debug)]
pub struct PoincareSection {
    pub points: Vec<SectionPoint>,
    pub truncated: Option<String>,
}

/// Maximal Lyapunov exponent with its running history.
#[derive(Clone, Debug)]
pub struct LyapunovResult {
    pub lambda: f64,
    pub converged: bool,
    /// Running estimate as (time, lambda(t)), one entry per renormalization.
    pub history: Vec<(f64, f64)>,
}

/// Hamilton's equations (dq/dt, dp/dt, djz/dt, dphi/dt) at a point.
///
/// The canonical pairs are (q, p) and (phi, jz); the field is the exact
/// gradient of the classical energy per particle.
pub fn vector_field(params: &ModelParams, point: &PhasePoint) -> Result<[f64; 4], DynError> {
    if point.jz.abs() >= 1.0 - 1e-12 {
        return Err(DynError::PoleProximity { jz: point.jz });
    }
    Ok(raw_field(params, &[point.q, point.p, point.jz, point.phi]))
}

#[inline]
fn raw_field(params: &ModelParams, y: &[f64; 4]) -> [f64; 4] {
    let (q, p, jz, phi) = (y[0], y[1], y[2], y[3]);
    let g = params.gamma;
    let (dp1, dm1) = (1.0 + params.delta, 1.0 - params.delta);
    let s = (1.0 - jz * jz).max(0.0).sqrt();
    let (sin_phi, cos_phi) = phi.sin_cos();
    [
        params.omega * p + g * dm1 * s * sin_phi,
        -params.omega * q - g * dp1 * s * cos_phi,
        g * s * (dp1 * q * sin_phi - dm1 * p * cos_phi),
        params.omega0 - g * (jz / s) * (dp1 * q * cos_phi + dm1 * p * sin_phi),
    ]
}

/// Analytic Jacobian of [`vector_field`] in the (q, p, jz, phi) ordering.
pub fn jacobian(params: &ModelParams, y: &[f64; 4]) -> [[f64; 4]; 4] {
    let (q, p, jz, phi) = (y[0], y[1], y[2], y[3]);
    let g = params.gamma;
    let (dp1, dm1) = (1.0 + params.delta, 1.0 - params.delta);
    let s = (1.0 - jz * jz).max(f64::MIN_POSITIVE).sqrt();
    let (sin_phi, cos_phi) = phi.sin_cos();
    let ds = -jz / s; // d s / d jz
    let b = dp1 * q * cos_phi + dm1 * p * sin_phi;
    let db_dphi = -dp1 * q * sin_phi + dm1 * p * cos_phi;
    [
        // d f_q / d(q, p, jz, phi)
        [0.0, params.omega, g * dm1 * sin_phi * ds, g * dm1 * s * cos_phi],
        // d f_p
        [-params.omega, 0.0, -g * dp1 * cos_phi * ds, g * dp1 * s * sin_phi],
        // d f_jz
        [
            g * s * dp1 * sin_phi,
            -g * s * dm1 * cos_phi,
            g * ds * (dp1 * q * sin_phi - dm1 * p * cos_phi),
            g * s * (dp1 * q * cos_phi + dm1 * p * sin_phi),
        ],
        // d f_phi: d(jz/s)/djz = 1/s^3
        [
            -g * (jz / s) * dp1 * cos_phi,
            -g * (jz / s) * dm1 * sin_phi,
            -g * b / (s * s * s),
            -g * (jz / s) * db_dphi,
        ],
    ]
}

fn state_energy(params: &ModelParams, y: &[f64; 4]) -> f64 {
    let s = (1.0 - y[2] * y[2]).max(0.0).sqrt();
    params.omega0 * y[2]
        + 0.5 * params.omega * (y[0] * y[0] + y[1] * y[1])
        + params.gamma
            * s
            * ((1.0 + params.delta) * y[0] * y[3].cos()
                + (1.0 - params.delta) * y[1] * y[3].sin())
}

fn check_start(point: &PhasePoint, controls: &IntegratorControls) -> Result<(), DynError> {
    if point.jz.abs() > 1.0 - controls.pole_margin {
        return Err(DynError::PoleProximity { jz: point.jz });
    }
    Ok(())
}

/// Drive one adaptive step, retrying with smaller h until acceptance.
/// Returns the accepted step size; `h` is updated to the next suggestion.
fn advance_one_step<const N: usize, F>(
    stepper: &mut Rkf78<N>,
    f: &mut F,
    t: &mut f64,
    y: &mut [f64; N],
    h: &mut f64,
    t_remaining: f64,
    steps: &mut u64,
    max_steps: u64,
) -> Result<f64, DynError>
where
    F: FnMut(f64, &[f64; N], &mut [f64; N]),
{
    loop {
        *steps += 1;
        if *steps > max_steps {
            return Err(DynError::MaxStepsExceeded { steps: *steps, t: *t });
        }
        let dir = t_remaining.signum();
        let h_try = h.abs().min(t_remaining.abs()).max(f64::MIN_POSITIVE) * dir;
        let out = stepper.try_step(f, t, y, h_try);
        if out.accepted {
            *h = out.h_next;
            return Ok(h_try);
        }
        if out.h_next < 1e-14 * t.abs().max(1.0) {
            return Err(DynError::StepUnderflow { t: *t });
        }
        *h = out.h_next;
    }
}

/// Integrate Hamilton's equations for time `t_final` (sign selects the
/// direction), recording every accepted step.
pub fn integrate_trajectory(
    params: &ModelParams,
    start: &PhasePoint,
    t_final: f64,
    controls: &IntegratorControls,
) -> Result<Trajectory, DynError> {
    check_start(start, controls)?;
    let energy = classical_energy(params, start);
    let mut y = [start.q, start.p, start.jz, start.phi];
    let mut t = 0.0f64;
    let mut h = controls.initial_step;
    let mut stepper = Rkf78::<4>::new(controls.rel_tol, controls.abs_tol);
    let mut f = |_t: f64, s: &[f64; 4], d: &mut [f64; 4]| *d = raw_field(params, s);
    let mut samples = vec![(0.0, *start)];
    let mut drift = 0.0f64;
    let mut steps = 0u64;

    while (t_final - t).abs() > 1e-13 * t_final.abs().max(1.0) {
        let remaining = t_final - t;
        advance_one_step(
            &mut stepper,
            &mut f,
            &mut t,
            &mut y,
            &mut h,
            remaining,
            &mut steps,
            controls.max_steps,
        )?;
        if y[2].abs() > 1.0 - controls.pole_margin {
            return Err(DynError::PoleProximity { jz: y[2] });
        }
        let d = (state_energy(params, &y) - energy).abs();
        drift = drift.max(d);
        if drift > controls.drift_bound {
            return Err(DynError::EnergyDrift { drift, bound: controls.drift_bound, t });
        }
        samples.push((t, PhasePoint { q: y[0], p: y[1], jz: y[2], phi: wrap_angle(y[3]) }));
    }
    Ok(Trajectory { samples, energy, drift })
}

/// Advance a state by exactly `dt` (no sampling); used by the bisection
/// refinement of section crossings.
fn advance_by(
    params: &ModelParams,
    y0: &[f64; 4],
    dt: f64,
    controls: &IntegratorControls,
) -> Result<[f64; 4], DynError> {
    if dt == 0.0 {
        return Ok(*y0);
    }
    let mut y = *y0;
    let mut t = 0.0;
    let mut h = dt.abs().min(controls.initial_step);
    let mut stepper = Rkf78::<4>::new(controls.rel_tol, controls.abs_tol);
    let mut f = |_t: f64, s: &[f64; 4], d: &mut [f64; 4]| *d = raw_field(params, s);
    let mut steps = 0u64;
    while (dt - t).abs() > 1e-15 * dt.abs().max(1.0) {
        let remaining = dt - t;
        advance_one_step(
            &mut stepper,
            &mut f,
            &mut t,
            &mut y,
            &mut h,
            remaining,
            &mut steps,
            controls.max_steps,
        )?;
    }
    Ok(y)
}

/// Crossings are refined until |p| falls below this.
const CROSSING_P_TOL: f64 = 1e-10;

/// Collect the first `n_crossings` transversal crossings of p = 0.
///
/// The start must lie on the requested energy surface to 1e-10. Quality
/// failures along the way yield a partial section with `truncated` set
/// rather than an error.
pub fn poincare_section(
    params: &ModelParams,
    start: &PhasePoint,
    epsilon: f64,
    n_crossings: usize,
    controls: &IntegratorControls,
) -> Result<PoincareSection, DynError> {
    check_start(start, controls)?;
    let actual = classical_energy(params, start);
    if (actual - epsilon).abs() > 1e-10 {
        return Err(DynError::EnergyMismatch { expected: epsilon, actual });
    }

    let mut y = [start.q, start.p, start.jz, start.phi];
    let mut t = 0.0f64;
    let mut h = controls.initial_step;
    let mut stepper = Rkf78::<4>::new(controls.rel_tol, controls.abs_tol);
    let mut f = |_t: f64, s: &[f64; 4], d: &mut [f64; 4]| *d = raw_field(params, s);
    let mut steps = 0u64;
    let mut points = Vec::with_capacity(n_crossings);

    while points.len() < n_crossings {
        let t_prev = t;
        let y_prev = y;
        let step_result = advance_one_step(
            &mut stepper,
            &mut f,
            &mut t,
            &mut y,
            &mut h,
            f64::INFINITY,
            &mut steps,
            controls.max_steps,
        );
        let h_taken = match step_result {
            Ok(h_taken) => h_taken,
            Err(e) => {
                return Ok(PoincareSection { points, truncated: Some(e.to_string()) });
            }
        };
        if y[2].abs() > 1.0 - controls.pole_margin {
            return Ok(PoincareSection {
                points,
                truncated: Some(DynError::PoleProximity { jz: y[2] }.to_string()),
            });
        }
        let d = (state_energy(params, &y) - actual).abs();
        if d > controls.drift_bound {
            return Ok(PoincareSection {
                points,
                truncated: Some(
                    DynError::EnergyDrift { drift: d, bound: controls.drift_bound, t }.to_string(),
                ),
            });
        }
        // Transversal crossing of p = 0 inside the step?
        if y_prev[1] != 0.0 && y_prev[1] * y[1] < 0.0 {
            match refine_crossing(params, &y_prev, h_taken, controls) {
                Ok((tau, yc)) => {
                    let crossing_q = yc[0];
                    let roots = q_branches(params, epsilon, yc[2], wrap_angle(yc[3]));
                    let branch = match roots.len() {
                        0 | 1 => QBranch::Plus,
                        _ => {
                            if (crossing_q - roots[0]).abs() <= (crossing_q - roots[1]).abs() {
                                QBranch::Plus
                            } else {
                                QBranch::Minus
                            }
                        }
                    };
                    points.push(SectionPoint {
                        jz: yc[2],
                        phi: wrap_angle(yc[3]),
                        branch,
                        crossing_time: t_prev + tau,
                    });
                }
                Err(e) => {
                    return Ok(PoincareSection { points, truncated: Some(e.to_string()) });
                }
            }
        }
    }
    Ok(PoincareSection { points, truncated: None })
}

/// Bisection on p(tau) over the bracketing step, to |p| <= 1e-10.
fn refine_crossing(
    params: &ModelParams,
    y_prev: &[f64; 4],
    h: f64,
    controls: &IntegratorControls,
) -> Result<(f64, [f64; 4]), DynError> {
    let mut lo = 0.0f64;
    let mut hi = h;
    let p_lo_sign = y_prev[1].signum();
    let mut y_mid = *y_prev;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        y_mid = advance_by(params, y_prev, mid, controls)?;
        if y_mid[1].abs() <= CROSSING_P_TOL {
            return Ok((mid, y_mid));
        }
        if y_mid[1].signum() == p_lo_sign {
            lo = mid;
        } else {
            hi = mid;
        }
        if (hi - lo).abs() < 1e-16 * h.abs().max(1e-300) {
            break;
        }
    }
    if y_mid[1].abs() <= CROSSING_P_TOL {
        Ok((0.5 * (lo + hi), y_mid))
    } else {
        Err(DynError::StepUnderflow { t: 0.5 * (lo + hi) })
    }
}

/// Maximal Lyapunov exponent by integrating the exact tangent flow
/// alongside the orbit and renormalizing the tangent vector periodically.
pub fn lyapunov_exponent(
    params: &ModelParams,
    start: &PhasePoint,
    controls: &LyapunovControls,
) -> Result<LyapunovResult, DynError> {
    let ic = &controls.integrator;
    check_start(start, ic)?;
    let energy = classical_energy(params, start);
    // State plus tangent; the tangent starts as a fixed unit vector.
    let mut y = [start.q, start.p, start.jz, start.phi, 0.5, 0.5, 0.5, 0.5];
    let mut t = 0.0f64;
    let mut h = ic.initial_step;
    let mut stepper = Rkf78::<8>::new(ic.rel_tol, ic.abs_tol);
    let mut f = |_t: f64, s: &[f64; 8], d: &mut [f64; 8]| {
        let base = [s[0], s[1], s[2], s[3]];
        let field = raw_field(params, &base);
        let jac = jacobian(params, &base);
        d[0] = field[0];
        d[1] = field[1];
        d[2] = field[2];
        d[3] = field[3];
        for i in 0..4 {
            d[4 + i] = (0..4).map(|k| jac[i][k] * s[4 + k]).sum();
        }
    };
    let mut steps = 0u64;
    let n_intervals = (controls.total_time / controls.renorm_interval).ceil() as usize;
    let mut log_sum = 0.0f64;
    let mut history = Vec::with_capacity(n_intervals);

    for interval in 1..=n_intervals {
        let t_target = (interval as f64 * controls.renorm_interval).min(controls.total_time);
        while (t_target - t).abs() > 1e-12 {
            let remaining = t_target - t;
            advance_one_step(
                &mut stepper,
                &mut f,
                &mut t,
                &mut y,
                &mut h,
                remaining,
                &mut steps,
                ic.max_steps,
            )?;
            if y[2].abs() > 1.0 - ic.pole_margin {
                return Err(DynError::PoleProximity { jz: y[2] });
            }
        }
        let base = [y[0], y[1], y[2], y[3]];
        let drift = (state_energy(params, &base) - energy).abs();
        if drift > ic.drift_bound {
            return Err(DynError::EnergyDrift { drift, bound: ic.drift_bound, t });
        }
        let norm = (y[4] * y[4] + y[5] * y[5] + y[6] * y[6] + y[7] * y[7]).sqrt();
        if norm > 0.0 {
            log_sum += norm.ln();
            for v in &mut y[4..8] {
                *v /= norm;
            }
        }
        history.push((t, log_sum / t));
    }

    let estimate = history.last().map(|&(_, l)| l).unwrap_or(0.0);
    let converged = history_converged(&history, controls.zero_floor);
    let lambda = if converged { estimate.max(0.0) } else { estimate };
    Ok(LyapunovResult { lambda, converged, history })
}

/// The running estimate counts as settled when its final 20% varies by
/// less than 10%, measured relative to max(|final|, zero_floor) so that
/// estimates decaying to zero can converge too.
fn history_converged(history: &[(f64, f64)], zero_floor: f64) -> bool {
    if history.len() < 10 {
        return false;
    }
    let tail_start = history.len() - history.len() / 5;
    let tail = &history[tail_start..];
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &(_, l) in tail {
        lo = lo.min(l);
        hi = hi.max(l);
    }
    let last = history.last().unwrap().1;
    (hi - lo) < 0.10 * last.abs().max(zero_floor)
}

/// Lyapunov exponent per grid cell on one sheet of the energy surface.
///
/// Unreachable cells keep [`CellFlag::Unreachable`]; per-cell integration
/// failures or non-convergence become flags without aborting the sweep.
pub fn lyapunov_map(
    params: &ModelParams,
    epsilon: f64,
    branch: QBranch,
    grid: PhaseGrid,
    controls: &LyapunovControls,
) -> ScalarMap {
    let mut map = ScalarMap::new(grid);
    let cells: Vec<(usize, usize, f64, f64)> = map.cells().collect();
    let results: Vec<(usize, usize, f64, CellFlag)> = cells
        .par_iter()
        .map(|&(iv, iu, jz, phi)| {
            if jz.abs() > 1.0 - controls.integrator.pole_margin {
                return (iv, iu, f64::NAN, CellFlag::Unreachable);
            }
            let Some(q) = q_for_branch(params, epsilon, jz, phi, branch) else {
                return (iv, iu, f64::NAN, CellFlag::Unreachable);
            };
            let start = PhasePoint { q, p: 0.0, jz, phi };
            match lyapunov_exponent(params, &start, controls) {
                Ok(res) => {
                    let flag = if res.converged { CellFlag::Ok } else { CellFlag::NotConverged };
                    (iv, iu, res.lambda, flag)
                }
                Err(_) => (iv, iu, f64::NAN, CellFlag::Failed),
            }
        })
        .collect();
    for (iv, iu, value, flag) in results {
        map.values[[iv, iu]] = value;
        map.flags[[iv, iu]] = flag;
    }
    map
}
