//! Python bindings: the model, classical dynamics, spectra and the
//! participation-ratio diagnostics, with plain lists/tuples as the
//! exchange format.

use dicke_chaos::chaos;
use dicke_chaos::dynamics;
use dicke_chaos::model;
use dicke_chaos::overlap;
use dicke_chaos::spectrum;
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn runtime_err(e: impl std::fmt::Display) -> PyErr {
    PyRuntimeError::new_err(e.to_string())
}

fn parse_branch(s: &str) -> PyResult<model::QBranch> {
    s.parse().map_err(PyValueError::new_err)
}

fn parse_parity(s: &str) -> PyResult<spectrum::Parity> {
    s.parse().map_err(PyValueError::new_err)
}

/// Physical couplings and system size.
#[pyclass(name = "ModelParams", frozen)]
#[derive(Clone)]
struct PyModelParams {
    inner: model::ModelParams,
}

#[pymethods]
impl PyModelParams {
    #[new]
    #[pyo3(signature = (omega, omega0, gamma, delta, j))]
    fn new(omega: f64, omega0: f64, gamma: f64, delta: f64, j: f64) -> PyResult<Self> {
        Ok(PyModelParams {
            inner: model::ModelParams::new(omega, omega0, gamma, delta, j).map_err(value_err)?,
        })
    }

    /// Resonant model (omega = omega0 = 1, delta = 1) with the coupling
    /// given in units of the critical coupling.
    #[staticmethod]
    fn resonant(j: f64, gamma_rel: f64) -> PyResult<Self> {
        Ok(PyModelParams {
            inner: model::ModelParams::resonant_rel(j, gamma_rel).map_err(value_err)?,
        })
    }

    #[getter]
    fn omega(&self) -> f64 {
        self.inner.omega
    }

    #[getter]
    fn omega0(&self) -> f64 {
        self.inner.omega0
    }

    #[getter]
    fn gamma(&self) -> f64 {
        self.inner.gamma
    }

    #[getter]
    fn delta(&self) -> f64 {
        self.inner.delta
    }

    #[getter]
    fn j(&self) -> f64 {
        self.inner.j
    }

    #[getter]
    fn n_atoms(&self) -> f64 {
        self.inner.n_atoms()
    }

    /// Critical coupling sqrt(omega omega0)/(1 + delta).
    fn critical_coupling(&self) -> PyResult<f64> {
        model::critical_coupling(&self.inner).map_err(value_err)
    }

    /// Classical energy per particle at (q, p, jz, phi).
    fn classical_energy(&self, q: f64, p: f64, jz: f64, phi: f64) -> PyResult<f64> {
        let pt = model::PhasePoint::new(q, p, jz, phi).map_err(value_err)?;
        Ok(model::classical_energy(&self.inner, &pt))
    }

    /// Ground-state configuration: ((q, p, jz, phi), energy).
    fn ground_state(&self) -> PyResult<((f64, f64, f64, f64), f64)> {
        let (pt, e0) = model::ground_state_config(&self.inner).map_err(value_err)?;
        Ok(((pt.q, pt.p, pt.jz, pt.phi), e0))
    }

    /// Real q solving h_cl(q, 0, jz, phi) = epsilon (descending order).
    fn q_branches(&self, epsilon: f64, jz: f64, phi: f64) -> Vec<f64> {
        model::q_branches(&self.inner, epsilon, jz, phi)
    }

    /// Energy-surface topology at `epsilon`.
    fn classify_energy_region(&self, epsilon: f64) -> PyResult<String> {
        Ok(model::classify_energy_region(&self.inner, epsilon)
            .map_err(value_err)?
            .label()
            .to_string())
    }

    /// Maximal Lyapunov exponent from a surface point; returns
    /// (lambda, converged).
    #[pyo3(signature = (epsilon, jz, phi=0.0, branch="plus", total_time=2e4))]
    fn lyapunov(
        &self,
        epsilon: f64,
        jz: f64,
        phi: f64,
        branch: &str,
        total_time: f64,
    ) -> PyResult<(f64, bool)> {
        let q = model::q_for_branch(&self.inner, epsilon, jz, phi, parse_branch(branch)?)
            .ok_or_else(|| PyValueError::new_err("surface does not reach this point"))?;
        let start = model::PhasePoint::new(q, 0.0, jz, phi).map_err(value_err)?;
        let controls =
            dynamics::LyapunovControls { total_time, ..Default::default() };
        let res = dynamics::lyapunov_exponent(&self.inner, &start, &controls)
            .map_err(runtime_err)?;
        Ok((res.lambda, res.converged))
    }

    /// Poincaré crossings (jz, phi, branch, time) of the p = 0 plane.
    #[pyo3(signature = (epsilon, jz, phi=0.0, branch="plus", n_crossings=100))]
    fn poincare_section(
        &self,
        epsilon: f64,
        jz: f64,
        phi: f64,
        branch: &str,
        n_crossings: usize,
    ) -> PyResult<Vec<(f64, f64, String, f64)>> {
        let q = model::q_for_branch(&self.inner, epsilon, jz, phi, parse_branch(branch)?)
            .ok_or_else(|| PyValueError::new_err("surface does not reach this point"))?;
        let start = model::PhasePoint::new(q, 0.0, jz, phi).map_err(value_err)?;
        let section = dynamics::poincare_section(
            &self.inner,
            &start,
            epsilon,
            n_crossings,
            &dynamics::IntegratorControls::default(),
        )
        .map_err(runtime_err)?;
        Ok(section
            .points
            .iter()
            .map(|p| (p.jz, p.phi, p.branch.label().to_string(), p.crossing_time))
            .collect())
    }

    /// Diagonalize one parity sector in the displaced coherent basis.
    fn diagonalize(&self, n_max: usize, parity: &str) -> PyResult<PySpectrum> {
        let spec = spectrum::diagonalize_ecb_sector(&self.inner, n_max, parse_parity(parity)?)
            .map_err(runtime_err)?;
        Ok(PySpectrum { inner: spec })
    }

    /// Diagonalize both parity sectors.
    fn diagonalize_pair(&self, n_max: usize) -> PyResult<PySpectrumPair> {
        let pair = spectrum::diagonalize_ecb_pair(&self.inner, n_max).map_err(runtime_err)?;
        Ok(PySpectrumPair { inner: pair })
    }

    fn __repr__(&self) -> String {
        format!(
            "ModelParams(omega={}, omega0={}, gamma={}, delta={}, j={})",
            self.inner.omega, self.inner.omega0, self.inner.gamma, self.inner.delta, self.inner.j
        )
    }
}

/// Eigenvalues and eigenvectors of one parity sector.
#[pyclass(name = "Spectrum", frozen)]
struct PySpectrum {
    inner: spectrum::SpectrumResult,
}

#[pymethods]
impl PySpectrum {
    #[getter]
    fn dimension(&self) -> usize {
        self.inner.dimension()
    }

    fn eigenvalues(&self) -> Vec<f64> {
        self.inner.eigenvalues.clone()
    }

    /// E_k / (j omega0).
    fn energies_per_particle(&self) -> Vec<f64> {
        (0..self.inner.dimension()).map(|k| self.inner.energy_per_particle(k)).collect()
    }

    /// <J_z>_k / j per eigenstate.
    fn peres_jz(&self) -> PyResult<Vec<f64>> {
        spectrum::peres_jz(&self.inner).map_err(runtime_err)
    }
}

/// Spectra of both parity sectors sharing one basis.
#[pyclass(name = "SpectrumPair", frozen)]
struct PySpectrumPair {
    inner: spectrum::SpectrumPair,
}

#[pymethods]
impl PySpectrumPair {
    #[getter]
    fn dimensions(&self) -> (usize, usize) {
        (self.inner.plus.dimension(), self.inner.minus.dimension())
    }

    fn eigenvalues(&self, parity: &str) -> PyResult<Vec<f64>> {
        Ok(self.inner.sector(parse_parity(parity)?).eigenvalues.clone())
    }

    /// Husimi weights |C_k|^2 of the coherent state at (q, p, jz, phi),
    /// returned as (energies, parities, weights).
    fn amplitudes(
        &self,
        q: f64,
        p: f64,
        jz: f64,
        phi: f64,
    ) -> PyResult<(Vec<f64>, Vec<String>, Vec<f64>)> {
        let pt = model::PhasePoint::new(q, p, jz, phi).map_err(value_err)?;
        let over = overlap::eigenstate_amplitudes_at(&self.inner, &pt).map_err(runtime_err)?;
        Ok((
            over.energies.clone(),
            over.parities.iter().map(|p| p.label().to_string()).collect(),
            over.amplitudes.iter().map(|c| c.norm_sqr()).collect(),
        ))
    }

    /// Participation ratio of the coherent state at (q, p, jz, phi);
    /// returns (PR, PR/N, binary flag, total norm).
    fn participation_ratio(
        &self,
        q: f64,
        p: f64,
        jz: f64,
        phi: f64,
    ) -> PyResult<(f64, f64, u8, f64)> {
        let pt = model::PhasePoint::new(q, p, jz, phi).map_err(value_err)?;
        let prp = chaos::pr_at_point(&self.inner, &pt, model::QBranch::Plus, false)
            .map_err(runtime_err)?;
        Ok((prp.pr, prp.p_r, prp.pr_bin, prp.norm_all))
    }
}

/// Binary pointwise chaos flag: 1 iff PR/N > 1.
#[pyfunction]
fn binary_classifier(pr: f64, n_atoms: f64) -> u8 {
    chaos::binary_classifier(pr, n_atoms)
}

#[pymodule]
fn dicke_chaos_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyModelParams>()?;
    m.add_class::<PySpectrum>()?;
    m.add_class::<PySpectrumPair>()?;
    m.add_function(wrap_pyfunction!(binary_classifier, m)?)?;
    Ok(())
}
