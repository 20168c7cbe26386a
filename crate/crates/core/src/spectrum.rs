//! Exact diagonalization of the atom-field Hamiltonian.
//!
//! Two basis routes are implemented. The Fock route (number states times
//! J_z eigenstates) is simple and serves as the oracle. The efficient
//! coherent basis (ECB) rewrites the delta = 1 Hamiltonian as
//!
//!   H = omega A†A + omega0 J_z - (4 gamma^2 / (omega N)) J_x^2,
//!
//! with A = a + (2 gamma / (omega sqrt(N))) J_x, and uses the eigenstates
//! of A†A and J_x as basis states. The first and third terms are diagonal
//! there; J_z couples neighbouring J_x eigenvalues with displaced-Fock
//! overlap factors. Convergence in the superradiant regime is then fast
//! enough to reach thousands of reliable eigenstates at moderate cutoffs.
//!
//! Parity (the conserved excitation-number sign) halves the matrices: the
//! ECB is combined into states |N; m_x; p> with m_x >= 0, and every
//! spectrum is computed per parity sector.

use crate::linalg::{eigh_into, eigvalsh_into, EighError};
use crate::model::{ModelError, ModelParams};
use crate::special::{displaced_fock_overlaps, ln_factorials};
use ndarray::Array2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SpecError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Eigh(#[from] EighError),
    #[error("dimension {dim} exceeds the configured limit {limit}")]
    DimensionLimit { dim: usize, limit: usize },
    #[error("unsupported basis: {0}")]
    UnsupportedBasis(String),
}

/// Guard against accidentally gigantic matrices.
pub const DEFAULT_DIM_LIMIT: usize = 40_000;

fn guard_dimension(dim: usize) -> Result<(), SpecError> {
    let limit = std::env::var("DICKE_DIM_LIMIT")
        .ok()
        .and_then(|v| v.parse().ok())
        .unwrap_or(DEFAULT_DIM_LIMIT);
    if dim > limit {
        return Err(SpecError::DimensionLimit { dim, limit });
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BasisKind {
    Fock,
    Ecb,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Parity {
    Plus,
    Minus,
}

impl Parity {
    pub fn sign(self) -> f64 {
        match self {
            Parity::Plus => 1.0,
            Parity::Minus => -1.0,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Parity::Plus => "plus",
            Parity::Minus => "minus",
        }
    }
}

impl std::str::FromStr for Parity {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "plus" | "+" => Ok(Parity::Plus),
            "minus" | "-" => Ok(Parity::Minus),
            other => Err(format!("unknown parity '{other}' (expected plus|minus)")),
        }
    }
}

/// Parity selection for a basis: one sector or the full space.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ParitySel {
    Plus,
    Minus,
    Both,
}

impl ParitySel {
    pub fn label(self) -> &'static str {
        match self {
            ParitySel::Plus => "plus",
            ParitySel::Minus => "minus",
            ParitySel::Both => "both",
        }
    }
}

/// Which basis a matrix or spectrum lives in.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BasisSpec {
    pub kind: BasisKind,
    /// Photon (Fock) or displaced-excitation (ECB) cutoff N_max.
    pub n_max: usize,
    pub parity: ParitySel,
}

/// Operators we build matrices for.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum OperatorTag {
    Hamiltonian,
    Jz,
    ExcitationNumber,
}

/// A symmetric operator matrix in a declared basis.
#[derive(Clone, Debug)]
pub struct OperatorMatrix {
    pub matrix: Array2<f64>,
    pub basis: BasisSpec,
    pub op: OperatorTag,
}

/// One basis state of the Fock route: |n> (x) |j, m>, with m stored as 2m.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FockState {
    pub n: usize,
    pub two_m: i64,
}

/// One basis state of the parity-adapted ECB: |N; j, m_x; p>, m_x >= 0.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EcbState {
    pub n: usize,
    pub two_mx: u64,
}

/// ECB parity-sector basis enumeration.
///
/// For integer j the m_x = 0 column only contains N of one photon parity
/// (p (-1)^N = +1); for half-integer j there is no m_x = 0 column.
pub fn ecb_states(params: &ModelParams, n_max: usize, parity: Parity) -> Vec<EcbState> {
    let two_j = params.two_j() as u64;
    let mut states = Vec::new();
    let start = if two_j % 2 == 0 { 0 } else { 1 };
    let mut two_mx = start;
    while two_mx <= two_j {
        if two_mx == 0 {
            let want_even = parity == Parity::Plus;
            for n in 0..=n_max {
                if (n % 2 == 0) == want_even {
                    states.push(EcbState { n, two_mx });
                }
            }
        } else {
            for n in 0..=n_max {
                states.push(EcbState { n, two_mx });
            }
        }
        two_mx += 2;
    }
    states
}

/// Fock-route basis enumeration: n outer, m inner.
pub fn fock_states(params: &ModelParams, n_max: usize) -> Vec<FockState> {
    let two_j = params.two_j() as i64;
    let mut states = Vec::with_capacity((n_max + 1) * (two_j as usize + 1));
    for n in 0..=n_max {
        let mut two_m = -two_j;
        while two_m <= two_j {
            states.push(FockState { n, two_m });
            two_m += 2;
        }
    }
    states
}

/// Ladder amplitude sqrt(j(j+1) - m(m+1)) with m given as 2m.
fn c_plus(j: f64, two_m: i64) -> f64 {
    let m = two_m as f64 / 2.0;
    (j * (j + 1.0) - m * (m + 1.0)).max(0.0).sqrt()
}

/// Hamiltonian in the Fock basis |n> (x) |j, m>.
pub fn build_fock_hamiltonian(
    params: &ModelParams,
    n_max: usize,
) -> Result<OperatorMatrix, SpecError> {
    let states = fock_states(params, n_max);
    let dim = states.len();
    guard_dimension(dim)?;
    let two_j = params.two_j() as i64;
    let n_m = (two_j + 1) as usize;
    let idx = |n: usize, two_m: i64| n * n_m + ((two_m + two_j) / 2) as usize;

    let coupling = params.gamma / params.n_atoms().sqrt();
    let mut h = Array2::<f64>::zeros((dim, dim));
    for s in &states {
        let i = idx(s.n, s.two_m);
        let m = s.two_m as f64 / 2.0;
        h[[i, i]] = params.omega * s.n as f64 + params.omega0 * m;
        // a J+ (+ h.c. filled symmetrically): (n, m) -> (n - 1, m + 1)
        if s.n >= 1 && s.two_m < two_j {
            let v = coupling * (s.n as f64).sqrt() * c_plus(params.j, s.two_m);
            let k = idx(s.n - 1, s.two_m + 2);
            h[[k, i]] += v;
            h[[i, k]] += v;
        }
        // delta a^dag J+ (+ h.c.): (n, m) -> (n + 1, m + 1)
        if params.delta != 0.0 && s.n + 1 <= n_max && s.two_m < two_j {
            let v =
                params.delta * coupling * ((s.n + 1) as f64).sqrt() * c_plus(params.j, s.two_m);
            let k = idx(s.n + 1, s.two_m + 2);
            h[[k, i]] += v;
            h[[i, k]] += v;
        }
    }
    Ok(OperatorMatrix {
        matrix: h,
        basis: BasisSpec { kind: BasisKind::Fock, n_max, parity: ParitySel::Both },
        op: OperatorTag::Hamiltonian,
    })
}

/// Excitation numbers lambda = n + m + j of the Fock basis states, in
/// basis order (the excitation operator is diagonal there).
pub fn fock_excitation_numbers(params: &ModelParams, n_max: usize) -> Vec<f64> {
    fock_states(params, n_max)
        .iter()
        .map(|s| s.n as f64 + s.two_m as f64 / 2.0 + params.j)
        .collect()
}

/// Displacement step between neighbouring m_x columns of the ECB:
/// alpha_{m_x} = -2 gamma m_x / (omega sqrt(2j)) shifts by -G per unit m_x.
fn ecb_displacement_step(params: &ModelParams) -> f64 {
    2.0 * params.gamma / (params.omega * params.n_atoms().sqrt())
}

/// Sparse symmetric triplet form; each unordered pair stored once.
struct SymTriplets {
    entries: Vec<(u32, u32, f64)>,
}

impl SymTriplets {
    fn quadratic_form(&self, v: ndarray::ArrayView1<f64>) -> f64 {
        let mut acc = 0.0;
        for &(i, k, t) in &self.entries {
            let (i, k) = (i as usize, k as usize);
            if i == k {
                acc += t * v[i] * v[i];
            } else {
                acc += 2.0 * t * v[i] * v[k];
            }
        }
        acc
    }
}

/// J_z couplings of the parity-adapted ECB as symmetric triplets
/// (omega0 factored out). Includes the parity-reflected m_x = 1/2 block
/// that appears for half-integer j.
///
/// The phase convention of the |j, m_x> states is the one fixed by the
/// w = (1 + z)/(1 - z) coherent-parameter map used in [`crate::overlap`]:
/// in it, <m_x + 1|J_z|m_x> = -(1/2) sqrt(j(j+1) - m_x(m_x+1)).
fn ecb_jz_triplets(params: &ModelParams, n_max: usize, parity: Parity) -> SymTriplets {
    let states = ecb_states(params, n_max, parity);
    let dim = states.len();
    let two_j = params.two_j() as u64;
    let j = params.j;
    let g_step = ecb_displacement_step(params);
    let d = displaced_fock_overlaps(n_max, g_step);
    let p_sign = parity.sign();

    let mut index = std::collections::HashMap::with_capacity(dim);
    for (i, s) in states.iter().enumerate() {
        index.insert((s.n, s.two_mx), i as u32);
    }

    let mut entries = Vec::new();
    for (i, s) in states.iter().enumerate() {
        // Coupling to the m_x + 1 column: -(1/2) c_+(m_x) <N'|D(G)|N>,
        // with a sqrt(2) enhancement out of the m_x = 0 column.
        if s.two_mx + 2 <= two_j {
            let mut base = -0.5 * c_plus(j, s.two_mx as i64);
            if s.two_mx == 0 {
                base *= std::f64::consts::SQRT_2;
            }
            for np in 0..=n_max {
                if let Some(&k) = index.get(&(np, s.two_mx + 2)) {
                    entries.push((i as u32, k, base * d[[np, s.n]]));
                }
            }
        }
        // Half-integer j: the m_x = 1/2 column couples to its own parity
        // reflection, -(1/2)(j + 1/2) p (-1)^N <N'|D(G)|N>.
        if s.two_mx == 1 && two_j % 2 == 1 {
            let base = -0.5 * (j + 0.5) * p_sign;
            let sign = if s.n % 2 == 0 { 1.0 } else { -1.0 };
            for np in s.n..=n_max {
                let k = index[&(np, 1)];
                entries.push((i as u32, k, base * sign * d[[np, s.n]]));
            }
        }
    }
    SymTriplets { entries }
}

/// Hamiltonian in the parity-adapted efficient coherent basis.
///
/// Requires the full counter-rotating interaction (delta = 1); the basis
/// is built on the displaced mode A = a + (2 gamma / (omega sqrt(N))) J_x,
/// which only diagonalizes that case.
pub fn build_ecb_hamiltonian(
    params: &ModelParams,
    n_max: usize,
    parity: Parity,
) -> Result<OperatorMatrix, SpecError> {
    if (params.delta - 1.0).abs() > 1e-12 {
        return Err(SpecError::UnsupportedBasis(format!(
            "the efficient coherent basis requires delta = 1 (got {})",
            params.delta
        )));
    }
    let states = ecb_states(params, n_max, parity);
    let dim = states.len();
    guard_dimension(dim)?;

    let mut h = Array2::<f64>::zeros((dim, dim));
    // Diagonal: omega N - (4 gamma^2 / (omega N_atoms)) m_x^2.
    let quad = 4.0 * params.gamma * params.gamma / (params.omega * params.n_atoms());
    for (i, s) in states.iter().enumerate() {
        let mx = s.two_mx as f64 / 2.0;
        h[[i, i]] = params.omega * s.n as f64 - quad * mx * mx;
    }
    // Off-diagonal: omega0 times the J_z couplings.
    let jz = ecb_jz_triplets(params, n_max, parity);
    for &(i, k, t) in &jz.entries {
        let (i, k) = (i as usize, k as usize);
        let v = params.omega0 * t;
        h[[i, k]] += v;
        if i != k {
            h[[k, i]] += v;
        }
    }
    Ok(OperatorMatrix {
        matrix: h,
        basis: BasisSpec {
            kind: BasisKind::Ecb,
            n_max,
            parity: match parity {
                Parity::Plus => ParitySel::Plus,
                Parity::Minus => ParitySel::Minus,
            },
        },
        op: OperatorTag::Hamiltonian,
    })
}

/// Eigenvalues and eigenvectors of an operator in a declared basis.
#[derive(Clone, Debug)]
pub struct SpectrumResult {
    pub params: ModelParams,
    pub basis: BasisSpec,
    /// Ascending eigenvalues (units of omega0 when omega0 = 1).
    pub eigenvalues: Vec<f64>,
    /// Column k holds the basis coefficients of eigenstate k.
    pub eigenvectors: Array2<f64>,
    /// Parity label per eigenstate.
    pub parities: Vec<Parity>,
    /// Per-state convergence flags, once assessed.
    pub converged: Option<Vec<bool>>,
}

impl SpectrumResult {
    pub fn dimension(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn n_converged(&self) -> Option<usize> {
        self.converged.as_ref().map(|f| f.iter().filter(|&&c| c).count())
    }

    /// Energy per particle E_k / (j omega0).
    pub fn energy_per_particle(&self, k: usize) -> f64 {
        self.eigenvalues[k] / (self.params.j * self.params.omega0.max(f64::MIN_POSITIVE))
    }
}

/// Spectra of both parity sectors in a shared basis.
#[derive(Clone, Debug)]
pub struct SpectrumPair {
    pub plus: SpectrumResult,
    pub minus: SpectrumResult,
}

impl SpectrumPair {
    pub fn new(plus: SpectrumResult, minus: SpectrumResult) -> Result<Self, SpecError> {
        if plus.params != minus.params || plus.basis.n_max != minus.basis.n_max {
            return Err(SpecError::UnsupportedBasis(
                "parity sectors must share parameters and cutoff".into(),
            ));
        }
        Ok(SpectrumPair { plus, minus })
    }

    pub fn sector(&self, parity: Parity) -> &SpectrumResult {
        match parity {
            Parity::Plus => &self.plus,
            Parity::Minus => &self.minus,
        }
    }

    pub fn total_states(&self) -> usize {
        self.plus.dimension() + self.minus.dimension()
    }
}

/// Full eigendecomposition of a symmetric operator matrix.
pub fn diagonalize(params: &ModelParams, op: &OperatorMatrix) -> Result<SpectrumResult, SpecError> {
    let eig = eigh_into(op.matrix.clone())?;
    let parities = assign_parities(params, &op.basis, &eig.vectors);
    Ok(SpectrumResult {
        params: *params,
        basis: op.basis,
        eigenvalues: eig.values.to_vec(),
        eigenvectors: eig.vectors,
        parities,
        converged: None,
    })
}

/// Like [`diagonalize`], but consumes the matrix (the buffer doubles as
/// LAPACK scratch; at dimension ~13k the saved copy is > 1 GB).
pub fn diagonalize_into(
    params: &ModelParams,
    op: OperatorMatrix,
) -> Result<SpectrumResult, SpecError> {
    let basis = op.basis;
    let eig = eigh_into(op.matrix)?;
    let parities = assign_parities(params, &basis, &eig.vectors);
    Ok(SpectrumResult {
        params: *params,
        basis,
        eigenvalues: eig.values.to_vec(),
        eigenvectors: eig.vectors,
        parities,
        converged: None,
    })
}

fn assign_parities(params: &ModelParams, basis: &BasisSpec, vectors: &Array2<f64>) -> Vec<Parity> {
    match (basis.kind, basis.parity) {
        (_, ParitySel::Plus) => vec![Parity::Plus; vectors.ncols()],
        (_, ParitySel::Minus) => vec![Parity::Minus; vectors.ncols()],
        (BasisKind::Fock, ParitySel::Both) => {
            // Sign of <Pi> = sum_i (-1)^lambda_i v_i^2 per eigenstate.
            let lambdas = fock_excitation_numbers(params, basis.n_max);
            let signs: Vec<f64> = lambdas
                .iter()
                .map(|l| if (l.round() as i64) % 2 == 0 { 1.0 } else { -1.0 })
                .collect();
            (0..vectors.ncols())
                .map(|k| {
                    let col = vectors.column(k);
                    let expect: f64 = col.iter().zip(&signs).map(|(v, s)| s * v * v).sum();
                    if expect >= 0.0 {
                        Parity::Plus
                    } else {
                        Parity::Minus
                    }
                })
                .collect()
        }
        (BasisKind::Ecb, ParitySel::Both) => vec![Parity::Plus; vectors.ncols()],
    }
}

/// Build and diagonalize one ECB parity sector.
pub fn diagonalize_ecb_sector(
    params: &ModelParams,
    n_max: usize,
    parity: Parity,
) -> Result<SpectrumResult, SpecError> {
    let h = build_ecb_hamiltonian(params, n_max, parity)?;
    diagonalize_into(params, h)
}

/// Build and diagonalize both ECB parity sectors.
pub fn diagonalize_ecb_pair(params: &ModelParams, n_max: usize) -> Result<SpectrumPair, SpecError> {
    let plus = diagonalize_ecb_sector(params, n_max, Parity::Plus)?;
    let minus = diagonalize_ecb_sector(params, n_max, Parity::Minus)?;
    SpectrumPair::new(plus, minus)
}

/// The concrete realization of "reliably described" eigenstates: both a
/// small eigenvector weight near the cutoff and a stable eigenvalue under
/// a cutoff reduction are required.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct ConvergenceCriterion {
    /// Fraction of the top N shells counted as tail.
    pub tail_fraction: f64,
    /// Maximum tolerated eigenvector weight in the tail shells.
    pub tail_weight_max: f64,
    /// How much N_max is reduced for the stability recomputation.
    pub cutoff_reduction: usize,
    /// Maximum tolerated eigenvalue shift (units of omega0).
    pub eigenvalue_shift_max: f64,
}

impl Default for ConvergenceCriterion {
    fn default() -> Self {
        ConvergenceCriterion {
            tail_fraction: 0.1,
            tail_weight_max: 1e-3,
            cutoff_reduction: 10,
            eigenvalue_shift_max: 1e-6,
        }
    }
}

/// Eigenvector weight in the top photon-number shells, per eigenstate.
pub fn tail_weights(result: &SpectrumResult, criterion: &ConvergenceCriterion) -> Vec<f64> {
    let n_max = result.basis.n_max;
    let n_tail = ((criterion.tail_fraction * (n_max + 1) as f64).round() as usize).max(1);
    let threshold = n_max + 1 - n_tail; // tail: n >= threshold
    let in_tail: Vec<bool> = match result.basis.kind {
        BasisKind::Fock => fock_states(&result.params, n_max)
            .iter()
            .map(|s| s.n >= threshold)
            .collect(),
        BasisKind::Ecb => {
            let parity = match result.basis.parity {
                ParitySel::Minus => Parity::Minus,
                _ => Parity::Plus,
            };
            ecb_states(&result.params, n_max, parity)
                .iter()
                .map(|s| s.n >= threshold)
                .collect()
        }
    };
    (0..result.dimension())
        .map(|k| {
            result
                .eigenvectors
                .column(k)
                .iter()
                .zip(&in_tail)
                .filter(|(_, &t)| t)
                .map(|(v, _)| v * v)
                .sum()
        })
        .collect()
}

/// Eigenvalues of the same basis rebuilt at the reduced cutoff.
pub fn reduced_cutoff_eigenvalues(
    result: &SpectrumResult,
    criterion: &ConvergenceCriterion,
) -> Result<Vec<f64>, SpecError> {
    let reduced = result.basis.n_max.saturating_sub(criterion.cutoff_reduction);
    let matrix = match result.basis.kind {
        BasisKind::Fock => build_fock_hamiltonian(&result.params, reduced)?,
        BasisKind::Ecb => {
            let parity = match result.basis.parity {
                ParitySel::Plus => Parity::Plus,
                ParitySel::Minus => Parity::Minus,
                ParitySel::Both => {
                    return Err(SpecError::UnsupportedBasis(
                        "ECB convergence check needs a single parity sector".into(),
                    ))
                }
            };
            build_ecb_hamiltonian(&result.params, reduced, parity)?
        }
    };
    Ok(eigvalsh_into(matrix.matrix)?.to_vec())
}

/// Convergence flags given precomputed reduced-cutoff eigenvalues.
pub fn converged_flags_with_reduced(
    result: &SpectrumResult,
    criterion: &ConvergenceCriterion,
    reduced_eigenvalues: &[f64],
) -> Vec<bool> {
    let tails = tail_weights(result, criterion);
    (0..result.dimension())
        .map(|k| {
            if tails[k] >= criterion.tail_weight_max {
                return false;
            }
            match reduced_eigenvalues.get(k) {
                Some(&e_red) => {
                    (result.eigenvalues[k] - e_red).abs()
                        < criterion.eigenvalue_shift_max * result.params.omega0.max(1e-300)
                }
                None => false,
            }
        })
        .collect()
}

/// Count converged eigenstates and return the per-state flags.
///
/// A state is converged when its eigenvector weight in the top photon
/// shells stays below the criterion bound and its eigenvalue moves by
/// less than the allowed shift when the cutoff is reduced.
pub fn converged_count(
    result: &SpectrumResult,
    criterion: &ConvergenceCriterion,
) -> Result<(usize, Vec<bool>), SpecError> {
    let reduced = reduced_cutoff_eigenvalues(result, criterion)?;
    let flags = converged_flags_with_reduced(result, criterion, &reduced);
    let count = flags.iter().filter(|&&c| c).count();
    Ok((count, flags))
}

/// Per-eigenstate <J_z>_k / j.
pub fn peres_jz(result: &SpectrumResult) -> Result<Vec<f64>, SpecError> {
    let j = result.params.j;
    match result.basis.kind {
        BasisKind::Fock => {
            let ms: Vec<f64> = fock_states(&result.params, result.basis.n_max)
                .iter()
                .map(|s| s.two_m as f64 / 2.0)
                .collect();
            Ok((0..result.dimension())
                .map(|k| {
                    let col = result.eigenvectors.column(k);
                    col.iter().zip(&ms).map(|(v, m)| m * v * v).sum::<f64>() / j
                })
                .collect())
        }
        BasisKind::Ecb => {
            let parity = match result.basis.parity {
                ParitySel::Plus => Parity::Plus,
                ParitySel::Minus => Parity::Minus,
                ParitySel::Both => {
                    return Err(SpecError::UnsupportedBasis(
                        "ECB J_z expectation needs a single parity sector".into(),
                    ))
                }
            };
            let triplets = ecb_jz_triplets(&result.params, result.basis.n_max, parity);
            Ok((0..result.dimension())
                .map(|k| triplets.quadratic_form(result.eigenvectors.column(k)) / j)
                .collect())
        }
    }
}

/// First two moments of the excitation number per eigenstate.
///
/// Only available for Fock-basis spectra, where the operator is diagonal.
pub fn lambda_moments(result: &SpectrumResult) -> Result<Vec<(f64, f64)>, SpecError> {
    if result.basis.kind != BasisKind::Fock {
        return Err(SpecError::UnsupportedBasis(
            "excitation moments need a Fock-basis spectrum (diagonal operator)".into(),
        ));
    }
    let lambdas = fock_excitation_numbers(&result.params, result.basis.n_max);
    Ok((0..result.dimension())
        .map(|k| {
            let col = result.eigenvectors.column(k);
            let mean: f64 = col.iter().zip(&lambdas).map(|(v, l)| l * v * v).sum();
            let second: f64 = col.iter().zip(&lambdas).map(|(v, l)| l * l * v * v).sum();
            (mean, (second - mean * mean).max(0.0))
        })
        .collect())
}

/// Glauber parameter of the displaced column m_x:
/// alpha_{m_x} = -2 gamma m_x / (omega sqrt(2j)).
pub fn ecb_alpha_mx(params: &ModelParams, two_mx: u64) -> f64 {
    -ecb_displacement_step(params) * two_mx as f64 / 2.0
}

/// ln(n!) table sized for a cutoff (shared helper for overlap work).
pub(crate) fn ln_factorial_table(n_max: usize) -> Vec<f64> {
    ln_factorials(n_max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn resonant(j: f64, gamma: f64, delta: f64) -> ModelParams {
        ModelParams::new(1.0, 1.0, gamma, delta, j).unwrap()
    }

    #[test]
    fn fock_hamiltonian_diagonal_at_zero_coupling() {
        let p = resonant(1.0, 0.0, 1.0);
        let h = build_fock_hamiltonian(&p, 3).unwrap();
        let spec = diagonalize(&p, &h).unwrap();
        let mut expect: Vec<f64> = (0..=3)
            .flat_map(|n| (-1..=1).map(move |m| n as f64 + m as f64))
            .collect();
        expect.sort_by(f64::total_cmp);
        for (a, b) in spec.eigenvalues.iter().zip(&expect) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn fock_blocks_by_excitation_number_at_delta_zero() {
        // With no counter-rotating terms the Hamiltonian conserves the
        // excitation number: elements across lambda blocks vanish.
        let p = resonant(1.5, 0.6, 0.0);
        let h = build_fock_hamiltonian(&p, 6).unwrap();
        let lambdas = fock_excitation_numbers(&p, 6);
        let dim = lambdas.len();
        for i in 0..dim {
            for k in 0..dim {
                if (lambdas[i] - lambdas[k]).abs() > 1e-9 {
                    assert_abs_diff_eq!(h.matrix[[i, k]], 0.0, epsilon = 1e-14);
                }
            }
        }
    }

    #[test]
    fn lambda_variance_vanishes_at_delta_zero() {
        let p = resonant(1.5, 0.6, 0.0);
        let h = build_fock_hamiltonian(&p, 8).unwrap();
        let spec = diagonalize(&p, &h).unwrap();
        for (_, var) in lambda_moments(&spec).unwrap() {
            assert!(var <= 1e-10, "var lambda = {var}");
        }
    }

    #[test]
    fn lambda_has_spread_at_delta_one() {
        let p = resonant(1.5, 1.0, 1.0);
        let h = build_fock_hamiltonian(&p, 12).unwrap();
        let spec = diagonalize(&p, &h).unwrap();
        let moments = lambda_moments(&spec).unwrap();
        let spread = moments.iter().filter(|(_, v)| *v > 1e-3).count();
        assert!(spread > moments.len() / 2);
    }

    #[test]
    fn fock_parity_blocks_are_exact() {
        let p = resonant(1.0, 0.7, 1.0);
        let h = build_fock_hamiltonian(&p, 5).unwrap();
        let lambdas = fock_excitation_numbers(&p, 5);
        let dim = lambdas.len();
        let scale = h.matrix.iter().fold(0.0f64, |a, &v| a.max(v.abs()));
        for i in 0..dim {
            for k in 0..dim {
                let li = lambdas[i].round() as i64;
                let lk = lambdas[k].round() as i64;
                if (li - lk).rem_euclid(2) == 1 {
                    assert!(
                        h.matrix[[i, k]].abs() <= 1e-12 * scale,
                        "parity leak at ({i},{k})"
                    );
                }
            }
        }
    }

    /// Independent 6x6 oracle: j = 1/2, N_max = 2 via explicit kron.
    #[test]
    fn fock_matches_small_kron_oracle() {
        let p = ModelParams::new(1.0, 1.0, 0.1, 1.0, 0.5).unwrap();
        let sq2 = 2.0f64.sqrt();
        // a[i][k] = <i|a|k> on photons {0,1,2}; spin in (m=-1/2, m=+1/2) order.
        let a = [[0.0, 1.0, 0.0], [0.0, 0.0, sq2], [0.0, 0.0, 0.0]];
        let jp = [[0.0, 0.0], [1.0, 0.0]];
        let jm = [[0.0, 1.0], [0.0, 0.0]];
        let jz = [[-0.5, 0.0], [0.0, 0.5]];
        let idx = |n: usize, s: usize| n * 2 + s;
        let mut oracle = Array2::<f64>::zeros((6, 6));
        let g = 0.1; // gamma / sqrt(N_atoms) with one atom
        for n in 0..3 {
            for s in 0..2 {
                for np in 0..3 {
                    for sp in 0..2 {
                        let mut v = 0.0;
                        if n == np && s == sp {
                            v += n as f64;
                        }
                        if n == np {
                            v += jz[sp][s];
                        }
                        v += g
                            * (a[np][n] * jp[sp][s]
                                + a[n][np] * jm[sp][s]
                                + a[n][np] * jp[sp][s]
                                + a[np][n] * jm[sp][s]);
                        oracle[[idx(np, sp), idx(n, s)]] += v;
                    }
                }
            }
        }
        let oracle_vals = eigvalsh_into(oracle).unwrap();
        let built = build_fock_hamiltonian(&p, 2).unwrap();
        let spec = diagonalize(&p, &built).unwrap();
        for k in 0..6 {
            assert_abs_diff_eq!(spec.eigenvalues[k], oracle_vals[k], epsilon = 1e-12);
        }
    }

    #[test]
    fn ecb_diagonal_at_zero_splitting() {
        // omega0 = 0 makes the ECB exact: H = omega N - (4 g^2/(w N)) m_x^2.
        let p = ModelParams::new(1.0, 0.0, 0.7, 1.0, 2.0).unwrap();
        let h = build_ecb_hamiltonian(&p, 5, Parity::Plus).unwrap();
        let states = ecb_states(&p, 5, Parity::Plus);
        for (i, s) in states.iter().enumerate() {
            let mx = s.two_mx as f64 / 2.0;
            let expect = s.n as f64 - 4.0 * 0.49 / 4.0 * mx * mx;
            assert_abs_diff_eq!(h.matrix[[i, i]], expect, epsilon = 1e-12);
            for k in 0..states.len() {
                if k != i {
                    assert_abs_diff_eq!(h.matrix[[i, k]], 0.0, epsilon = 1e-14);
                }
            }
        }
    }

    #[test]
    fn ecb_sector_dimensions_match_full_space() {
        // j = 60, N_max = 100: the full dimension is (2j+1)(N_max+1) = 12221.
        let p = ModelParams::resonant(60.0, 1.0).unwrap();
        let plus = ecb_states(&p, 100, Parity::Plus).len();
        let minus = ecb_states(&p, 100, Parity::Minus).len();
        assert_eq!(plus + minus, 12221);
        assert_eq!(plus, 6111);
        assert_eq!(minus, 6110);
    }

    #[test]
    fn ecb_sector_dimensions_half_integer() {
        let p = ModelParams::new(1.0, 1.0, 0.8, 1.0, 1.5).unwrap();
        let plus = ecb_states(&p, 4, Parity::Plus).len();
        let minus = ecb_states(&p, 4, Parity::Minus).len();
        assert_eq!(plus + minus, 4 * 5);
        assert_eq!(plus, minus);
    }

    #[test]
    fn ecb_matches_fock_oracle_small() {
        // Same physics through both routes: the low end of the ECB
        // spectrum must match a high-cutoff Fock computation per parity.
        let p = ModelParams::resonant(2.0, 1.0).unwrap(); // 2 gamma_c
        let fock = diagonalize(&p, &build_fock_hamiltonian(&p, 120).unwrap()).unwrap();
        let mut by_parity: [Vec<f64>; 2] = [Vec::new(), Vec::new()];
        for (k, &e) in fock.eigenvalues.iter().enumerate() {
            match fock.parities[k] {
                Parity::Plus => by_parity[0].push(e),
                Parity::Minus => by_parity[1].push(e),
            }
        }
        for (parity, fock_vals) in
            [(Parity::Plus, &by_parity[0]), (Parity::Minus, &by_parity[1])]
        {
            let ecb = diagonalize_ecb_sector(&p, 45, parity).unwrap();
            for k in 0..10 {
                assert_abs_diff_eq!(ecb.eigenvalues[k], fock_vals[k], epsilon = 1e-8);
            }
        }
    }

    #[test]
    fn ecb_matches_fock_oracle_half_integer() {
        let p = ModelParams::new(1.0, 1.0, 0.9, 1.0, 1.5).unwrap();
        let fock = diagonalize(&p, &build_fock_hamiltonian(&p, 100).unwrap()).unwrap();
        let plus_vals: Vec<f64> = fock
            .eigenvalues
            .iter()
            .zip(&fock.parities)
            .filter(|(_, &pr)| pr == Parity::Plus)
            .map(|(&e, _)| e)
            .collect();
        let ecb = diagonalize_ecb_sector(&p, 40, Parity::Plus).unwrap();
        for k in 0..8 {
            assert_abs_diff_eq!(ecb.eigenvalues[k], plus_vals[k], epsilon = 1e-8);
        }
    }

    #[test]
    fn ecb_rejects_rotating_wave_model() {
        let p = resonant(2.0, 0.5, 0.0);
        assert!(matches!(
            build_ecb_hamiltonian(&p, 10, Parity::Plus),
            Err(SpecError::UnsupportedBasis(_))
        ));
    }

    #[test]
    fn ground_energy_monotone_in_cutoff() {
        let p = ModelParams::resonant(4.0, 1.0).unwrap();
        let mut last = f64::INFINITY;
        for n_max in [10, 20, 30, 40] {
            let spec = diagonalize_ecb_sector(&p, n_max, Parity::Plus).unwrap();
            assert!(spec.eigenvalues[0] <= last + 1e-12);
            last = spec.eigenvalues[0];
        }
    }

    #[test]
    fn ground_energy_per_particle_approaches_mean_field() {
        // E_0/(j omega0) tends to -2.125 at 2 gamma_c; the finite-size
        // correction is negative and shrinks with j.
        let mut prev_dist = f64::INFINITY;
        for j in [2.0, 4.0, 8.0] {
            let p = ModelParams::resonant(j, 1.0).unwrap();
            let spec = diagonalize_ecb_sector(&p, 60, Parity::Plus).unwrap();
            let e0 = spec.energy_per_particle(0);
            let dist = (e0 - (-2.125)).abs();
            assert!(dist < prev_dist, "distance to the limit must shrink: j={j}, e0={e0}");
            prev_dist = dist;
        }
        assert!(prev_dist < 0.01);
    }

    #[test]
    fn converged_flags_exact_basis() {
        let p = resonant(2.0, 0.0, 1.0);
        let spec = diagonalize(&p, &build_fock_hamiltonian(&p, 40).unwrap()).unwrap();
        let (count, flags) = converged_count(&spec, &ConvergenceCriterion::default()).unwrap();
        assert!(count > 0);
        // Low-energy states below the first cutoff-only level are converged.
        let safe = (40 - 10) as f64 - p.j - 1.0;
        for (k, &e) in spec.eigenvalues.iter().enumerate() {
            if e < safe {
                assert!(flags[k], "state {k} at E = {e} should be converged");
            }
        }
        // Anything with visible tail weight is not.
        let tails = tail_weights(&spec, &ConvergenceCriterion::default());
        for k in 0..spec.dimension() {
            if tails[k] > 1e-3 {
                assert!(!flags[k]);
            }
        }
    }

    #[test]
    fn peres_lattice_zero_coupling() {
        let p = resonant(1.0, 0.0, 1.0);
        let spec = diagonalize(&p, &build_fock_hamiltonian(&p, 4).unwrap()).unwrap();
        let jz = peres_jz(&spec).unwrap();
        let ms: Vec<f64> =
            fock_states(&p, 4).iter().map(|s| s.two_m as f64 / 2.0).collect();
        for k in 0..spec.dimension() {
            let col = spec.eigenvectors.column(k);
            let (imax, _) = col
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
                .unwrap();
            assert_abs_diff_eq!(jz[k], ms[imax] / p.j, epsilon = 1e-9);
            assert!(jz[k].abs() <= 1.0 + 1e-12);
        }
    }

    #[test]
    fn peres_ecb_superradiant_ground_state() {
        // <J_z>_0 / j approaches -(gamma_c/gamma)^2 = -0.25 at 2 gamma_c.
        let p = ModelParams::resonant(8.0, 1.0).unwrap();
        let spec = diagonalize_ecb_sector(&p, 60, Parity::Plus).unwrap();
        let jz = peres_jz(&spec).unwrap();
        assert!((jz[0] + 0.25).abs() < 0.08, "<Jz>/j = {}", jz[0]);
        for v in &jz {
            assert!(v.abs() <= 1.0 + 1e-9);
        }
    }

    #[test]
    fn eigenvectors_orthonormal() {
        let p = ModelParams::resonant(2.0, 1.0).unwrap();
        let spec = diagonalize_ecb_sector(&p, 20, Parity::Plus).unwrap();
        let n = spec.dimension();
        for a in (0..n).step_by(7) {
            for b in (0..n).step_by(7) {
                let dot: f64 = spec
                    .eigenvectors
                    .column(a)
                    .iter()
                    .zip(spec.eigenvectors.column(b))
                    .map(|(x, y)| x * y)
                    .sum();
                let expect = if a == b { 1.0 } else { 0.0 };
                assert_abs_diff_eq!(dot, expect, epsilon = 1e-10);
            }
        }
    }
}
