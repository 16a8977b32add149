//! Python bindings for the toric-lab core crate.

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use toric_lab::convergence::{ConvergenceLab, TestSection};
use toric_lab::kahler::polarization_decay_curve;
use toric_lab::prequantum::{flow_section, log_section_norm_sq};
use toric_lab::{DelzantPolytope, Error, Facet, LatticePoint, QuadratureSpec, ToricModel, WeightSection};

fn to_py(e: Error) -> PyErr {
    match e {
        Error::NewtonFailed { .. }
        | Error::IllConditioned { .. }
        | Error::QuadratureStagnation { .. }
        | Error::QuadratureDepth { .. } => PyRuntimeError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

#[pyclass(name = "Polytope", frozen, skip_from_py_object)]
#[derive(Clone)]
pub struct PyPolytope {
    inner: DelzantPolytope,
}

#[pymethods]
impl PyPolytope {
    /// Polytope `{x : <n_i, x> + c_i >= 0}` from integer normals and offsets.
    #[new]
    #[pyo3(signature = (normals, offsets, name = "custom"))]
    fn new(normals: Vec<Vec<i64>>, offsets: Vec<f64>, name: &str) -> PyResult<Self> {
        if normals.len() != offsets.len() {
            return Err(PyValueError::new_err("normals and offsets differ in length"));
        }
        let dim = normals.first().map_or(0, Vec::len);
        let facets = normals
            .into_iter()
            .zip(offsets)
            .map(|(n, c)| Facet::new(n, c))
            .collect::<Result<Vec<_>, _>>()
            .map_err(to_py)?;
        let inner = DelzantPolytope::new(dim, facets, name).map_err(to_py)?;
        Ok(PyPolytope { inner })
    }

    #[staticmethod]
    fn segment(length: i64) -> Self {
        PyPolytope {
            inner: DelzantPolytope::segment(length),
        }
    }

    #[staticmethod]
    fn simplex(dim: usize, size: i64) -> Self {
        PyPolytope {
            inner: DelzantPolytope::simplex(dim, size),
        }
    }

    #[staticmethod]
    fn cube(sides: Vec<i64>) -> Self {
        PyPolytope {
            inner: DelzantPolytope::cube(&sides),
        }
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    #[getter]
    fn name(&self) -> String {
        self.inner.name().to_string()
    }

    fn vertices(&self) -> Vec<Vec<f64>> {
        self.inner.vertices()
    }

    fn lattice_points(&self) -> Vec<Vec<i64>> {
        self.inner.lattice_points().into_iter().map(|l| l.0).collect()
    }

    fn interior_lattice_points(&self) -> Vec<Vec<i64>> {
        self.inner.interior_lattice_points().into_iter().map(|l| l.0).collect()
    }

    fn is_interior(&self, x: Vec<f64>) -> bool {
        self.inner.is_interior(&x)
    }

    /// Raises ValueError unless the polytope is Delzant.
    fn validate(&self) -> PyResult<()> {
        self.inner.validate_delzant().map(|_| ()).map_err(to_py)
    }

    fn __repr__(&self) -> String {
        format!("Polytope(name={:?}, dim={})", self.inner.name(), self.inner.dim())
    }
}

/// Guillemin potential on a polytope with the Hamiltonian `½|x|²`.
#[pyclass(name = "Model", frozen)]
pub struct PyModel {
    inner: ToricModel,
}

#[pymethods]
impl PyModel {
    #[new]
    fn new(polytope: &PyPolytope) -> Self {
        PyModel {
            inner: ToricModel::standard(polytope.inner.clone()),
        }
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    /// `g_t(x)`.
    fn flowed_potential(&self, x: Vec<f64>, t: f64) -> PyResult<f64> {
        let state = self.inner.at(t).map_err(to_py)?;
        Ok(state.flowed_potential(&x).map_err(to_py)?.value)
    }

    /// `(formula, legendre, residual)` for the Kähler potential `ρ_t(x)`.
    fn kahler_potential(&self, x: Vec<f64>, t: f64) -> PyResult<(f64, f64, f64)> {
        let state = self.inner.at(t).map_err(to_py)?;
        let d = state.kahler_potential_duality(&x).map_err(to_py)?;
        Ok((d.formula, d.legendre, d.residual))
    }

    /// `(samples, slope)` for the angle between `P_t` and the mixed
    /// polarization at `x`.
    fn polarization_decay(&self, x: Vec<f64>, t_grid: Vec<f64>) -> PyResult<(Vec<(f64, f64)>, f64)> {
        let c = polarization_decay_curve(&self.inner, &x, &t_grid).map_err(to_py)?;
        Ok((c.samples, c.slope))
    }

    /// `A_{λ,t}(x)`, so that `|s_t| = e^{-A}`.
    fn amplitude_log(&self, weight: Vec<i64>, t: f64, x: Vec<f64>) -> PyResult<f64> {
        let s0 = WeightSection::new(&self.inner, LatticePoint(weight), 0.0).map_err(to_py)?;
        let st = flow_section(&s0, t).map_err(to_py)?;
        st.amplitude_log(&self.inner, &x).map_err(to_py)
    }

    /// `log ||s_t||²` for the flowed weight section.
    #[pyo3(signature = (weight, t, resolution = 64))]
    fn log_norm_sq(&self, weight: Vec<i64>, t: f64, resolution: usize) -> PyResult<f64> {
        let s0 = WeightSection::new(&self.inner, LatticePoint(weight), 0.0).map_err(to_py)?;
        let st = flow_section(&s0, t).map_err(to_py)?;
        let spec = QuadratureSpec::default().with_resolution(resolution);
        log_section_norm_sq(&self.inner, &st, &spec).map_err(to_py)
    }

    /// Normalised pairing of the flowed weight section against the bump
    /// `height (1 - |x - center|²/radius²)³`.
    #[pyo3(signature = (weight, t, center, radius, height, resolution = 64))]
    fn pairing(
        &self,
        weight: Vec<i64>,
        t: f64,
        center: Vec<f64>,
        radius: f64,
        height: f64,
        resolution: usize,
    ) -> PyResult<f64> {
        let poly = self.inner.polytope();
        let bump = TestSection::new(poly, center, radius, height).map_err(to_py)?;
        let lab = ConvergenceLab::new(&self.inner, QuadratureSpec::default().with_resolution(resolution));
        let s = flow_section(
            &WeightSection::new(&self.inner, LatticePoint(weight), 0.0).map_err(to_py)?,
            t,
        )
        .map_err(to_py)?;
        let lambda = s.lambda();
        let c = lab.normalization_ct(&lambda, t).map_err(to_py)?;
        lab.pairing_iota(&s, &bump, &c).map_err(to_py)
    }
}

/// Runs the command-line driver with `args` (no program name); returns the
/// exit code.
#[pyfunction]
fn run_cli(args: Vec<String>) -> i32 {
    let argv = std::iter::once("toric-lab".to_string()).chain(args);
    toric_lab::cli::run_from(argv)
}

#[pymodule]
#[pyo3(name = "toric_lab")]
fn toric_lab_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyPolytope>()?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(run_cli, m)?)?;
    m.add("CIRCLE_LENGTH", toric_lab::CIRCLE_LENGTH)?;
    Ok(())
}
