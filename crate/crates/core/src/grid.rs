//! Phase-space grids over (phi, jz) and the scalar fields computed on them.

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// Rectangular grid on the cylinder [-pi, pi) x [-1, 1].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhaseGrid {
    pub phi: Vec<f64>,
    pub jz: Vec<f64>,
}

impl PhaseGrid {
    /// Uniform grid: phi sampled half-open over [-pi, pi), jz closed over
    /// [-1, 1].
    pub fn uniform(n_phi: usize, n_jz: usize) -> Self {
        assert!(n_phi >= 2 && n_jz >= 2, "grid dimensions must be >= 2");
        let phi = (0..n_phi)
            .map(|i| -PI + 2.0 * PI * i as f64 / n_phi as f64)
            .collect();
        let jz = (0..n_jz)
            .map(|i| -1.0 + 2.0 * i as f64 / (n_jz - 1) as f64)
            .collect();
        PhaseGrid { phi, jz }
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.jz.len(), self.phi.len())
    }
}

/// Per-cell status of a map sweep.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum CellFlag {
    Ok,
    /// The energy surface does not reach this (phi, jz).
    Unreachable,
    /// Computed, but the per-cell convergence criterion failed.
    NotConverged,
    /// Coherent state not representable in the truncated basis.
    NotRepresentable,
    /// The per-cell computation errored out.
    Failed,
}

impl CellFlag {
    pub fn label(self) -> &'static str {
        match self {
            CellFlag::Ok => "ok",
            CellFlag::Unreachable => "unreachable",
            CellFlag::NotConverged => "not_converged",
            CellFlag::NotRepresentable => "not_representable",
            CellFlag::Failed => "failed",
        }
    }
}

/// A scalar field over a [`PhaseGrid`]; indexed [jz_index, phi_index].
#[derive(Clone, Debug)]
pub struct ScalarMap {
    pub grid: PhaseGrid,
    pub values: Array2<f64>,
    pub flags: Array2<CellFlag>,
}

impl ScalarMap {
    pub fn new(grid: PhaseGrid) -> Self {
        let shape = grid.shape();
        ScalarMap {
            grid,
            values: Array2::zeros(shape),
            flags: Array2::from_elem(shape, CellFlag::Unreachable),
        }
    }

    /// Iterate (jz_index, phi_index, jz, phi).
    pub fn cells(&self) -> impl Iterator<Item = (usize, usize, f64, f64)> + '_ {
        let n_phi = self.grid.phi.len();
        (0..self.grid.jz.len()).flat_map(move |iv| {
            (0..n_phi).map(move |iu| (iv, iu, self.grid.jz[iv], self.grid.phi[iu]))
        })
    }
}
