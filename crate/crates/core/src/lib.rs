//! Classical and quantum chaos diagnostics for the Dicke model.
//!
//! The crate covers both sides of the classical-quantum correspondence at
//! a fixed energy surface:
//!
//! - [`model`]: couplings, the classical Hamiltonian per particle, and the
//!   geometry of constant-energy surfaces on R^2 x S^2.
//! - [`dynamics`]: Hamilton's equations, Poincaré sections on the p = 0
//!   plane, and maximal Lyapunov exponents (tangent-space Benettin).
//! - [`spectrum`]: exact diagonalization in the Fock basis and in the
//!   parity-adapted displaced coherent basis, with convergence accounting.
//! - [`overlap`]: coherent-state amplitudes over the eigenbasis and Husimi
//!   functions, evaluated stably in log space.
//! - [`chaos`]: participation ratios of coherent states, the binary chaos
//!   criterion, phase-space maps and the atom-number scaling law.
//! - [`io`]: spectrum cache, CSV/heatmap emission and run manifests.

pub mod chaos;
pub mod dynamics;
pub mod grid;
pub mod io;
pub mod linalg;
pub mod model;
mod ode;
pub mod overlap;
mod special;
pub mod spectrum;

pub use model::{EnergyRegion, EnergySurfaceSpec, ModelParams, PhasePoint, QBranch};
pub use spectrum::{BasisKind, Parity, SpectrumPair, SpectrumResult};
