//! Python module `csegeo`: meshes, spectral bases, geodesic soft labels,
//! ZoomOut matching, embedding fitting and evaluation. Matrices cross the
//! boundary as nested lists of rows.

use std::path::PathBuf;
use std::sync::Arc;

use csegeo_core as core;
use core::embed::{self, EmbeddingSet};
use core::fitter::{self, FitConfig, Init, LossKind, Supervision, SyntheticConfig};
use core::fmap::{self, ZoomOutConfig};
use core::geodesics::{self, Kernel, SoftLabelCache};
use faer::Mat;
use pyo3::create_exception;
use pyo3::exceptions::PyException;
use pyo3::prelude::*;

create_exception!(csegeo, CseError, PyException);

fn err(e: core::CseError) -> PyErr {
    CseError::new_err(e.to_string())
}

fn rows(m: &Mat<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}

fn matrix(rows: &[Vec<f64>]) -> PyResult<Mat<f64>> {
    let ncols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(CseError::new_err("ragged matrix rows"));
    }
    Ok(Mat::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
}

fn kernel(name: &str) -> PyResult<Kernel> {
    match name {
        "linear" => Ok(Kernel::Linear),
        "squared" => Ok(Kernel::Squared),
        other => Err(CseError::new_err(format!("unknown kernel {other:?}"))),
    }
}

fn from_json<'py>(py: Python<'py>, value: &impl serde::Serialize) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| CseError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

#[pyclass(name = "Mesh", frozen, module = "csegeo")]
struct PyMesh {
    inner: Arc<core::Mesh>,
}

impl PyMesh {
    fn wrap(mesh: core::Mesh) -> Self {
        Self {
            inner: Arc::new(mesh),
        }
    }
}

#[pymethods]
impl PyMesh {
    #[new]
    fn new(vertices: Vec<[f64; 3]>, faces: Vec<[usize; 3]>) -> PyResult<Self> {
        core::Mesh::new(vertices, faces).map(Self::wrap).map_err(err)
    }

    /// Read an OBJ or ASCII PLY file.
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        core::io::load_mesh(path).map(Self::wrap).map_err(err)
    }

    #[getter]
    fn vertices(&self) -> Vec<[f64; 3]> {
        self.inner.vertices().to_vec()
    }

    #[getter]
    fn faces(&self) -> Vec<[usize; 3]> {
        self.inner.faces().to_vec()
    }

    #[getter]
    fn id(&self) -> String {
        self.inner.id().to_string()
    }

    #[getter]
    fn num_vertices(&self) -> usize {
        self.inner.num_vertices()
    }

    fn total_area(&self) -> f64 {
        self.inner.total_area()
    }

    fn scaled(&self, s: f64) -> PyResult<Self> {
        self.inner.scaled(s).map(Self::wrap).map_err(err)
    }

    /// Vertex `i` of the result is vertex `order[i]` of this mesh.
    fn permuted(&self, order: Vec<usize>) -> PyResult<Self> {
        self.inner.permuted(&order).map(Self::wrap).map_err(err)
    }

    /// Rescale to geodesic diameter `target`; returns `(mesh, scale)`.
    #[pyo3(signature = (target = geodesics::NORMALIZED_DIAMETER))]
    fn normalized(&self, target: f64) -> PyResult<(Self, f64)> {
        let (mesh, s) = geodesics::normalize_mesh(&self.inner, target).map_err(err)?;
        Ok((Self::wrap(mesh), s))
    }

    fn to_obj(&self) -> String {
        String::from_utf8(core::io::write_obj(&self.inner)).expect("OBJ text is UTF-8")
    }

    fn __len__(&self) -> usize {
        self.inner.num_vertices()
    }

    fn __repr__(&self) -> String {
        format!(
            "Mesh({} vertices, {} faces, id={})",
            self.inner.num_vertices(),
            self.inner.num_faces(),
            self.inner.id()
        )
    }
}

#[pyclass(name = "SpectralBasis", frozen, module = "csegeo")]
struct PyBasis {
    inner: Arc<core::SpectralBasis>,
}

#[pymethods]
impl PyBasis {
    /// The `m` smallest Laplace-Beltrami eigenpairs of `mesh`.
    #[new]
    fn new(py: Python<'_>, mesh: &PyMesh, m: usize) -> PyResult<Self> {
        let mesh = mesh.inner.clone();
        let basis = py
            .detach(move || core::eigenbasis(&core::build_operators(&mesh)?, m))
            .map_err(err)?;
        Ok(Self {
            inner: Arc::new(basis),
        })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        let basis = core::cseb::load_basis(&path).map_err(err)?;
        Ok(Self {
            inner: Arc::new(basis),
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        core::cseb::save_basis(&path, &self.inner).map_err(err)
    }

    #[getter]
    fn eigenvalues(&self) -> Vec<f64> {
        self.inner.eigenvalues.clone()
    }

    /// K×M, one row per vertex.
    #[getter]
    fn eigenvectors(&self) -> Vec<Vec<f64>> {
        rows(&self.inner.eigenvectors)
    }

    #[getter]
    fn mass(&self) -> Vec<f64> {
        self.inner.mass.clone()
    }

    #[getter]
    fn order(&self) -> usize {
        self.inner.order()
    }

    #[getter]
    fn mesh_id(&self) -> String {
        self.inner.mesh.to_string()
    }

    fn orthonormality_error(&self) -> f64 {
        self.inner.orthonormality_error()
    }

    /// Spectral coefficients `UᵀA r` of a per-vertex function.
    fn analyze(&self, r: Vec<f64>) -> PyResult<Vec<f64>> {
        self.inner.analyze(&r).map_err(err)
    }

    fn synthesize(&self, coeffs: Vec<f64>) -> PyResult<Vec<f64>> {
        self.inner.synthesize(&coeffs).map_err(err)
    }
}

#[pyclass(name = "FunctionalMap", frozen, module = "csegeo")]
struct PyFunctionalMap {
    inner: Arc<fmap::FunctionalMap>,
}

#[pymethods]
impl PyFunctionalMap {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        let map = fmap::FunctionalMap::load(&path).map_err(err)?;
        Ok(Self {
            inner: Arc::new(map),
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.save(&path).map_err(err)
    }

    #[getter]
    fn matrix(&self) -> Vec<Vec<f64>> {
        rows(&self.inner.c)
    }

    /// `(dst order, src order)`.
    #[getter]
    fn shape(&self) -> (usize, usize) {
        self.inner.shape()
    }
}

#[pyclass(name = "Embedding", frozen, module = "csegeo")]
struct PyEmbedding {
    inner: Arc<EmbeddingSet>,
}

impl PyEmbedding {
    fn wrap(e: EmbeddingSet) -> Self {
        Self { inner: Arc::new(e) }
    }
}

#[pymethods]
impl PyEmbedding {
    /// Spectral coefficients `Ê` (M×D) bound to `basis`.
    #[new]
    fn new(basis: &PyBasis, e_hat: Vec<Vec<f64>>) -> PyResult<Self> {
        let emb = EmbeddingSet {
            e_hat: matrix(&e_hat)?,
            basis: basis.inner.mesh.clone(),
        };
        emb.check_basis(&basis.inner).map_err(err)?;
        Ok(Self::wrap(emb))
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        EmbeddingSet::load(&path).map(Self::wrap).map_err(err)
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.save(&path).map_err(err)
    }

    #[getter]
    fn e_hat(&self) -> Vec<Vec<f64>> {
        rows(&self.inner.e_hat)
    }

    #[getter]
    fn order(&self) -> usize {
        self.inner.order()
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    /// Per-vertex embedding `E = UÊ`.
    fn expand(&self, basis: &PyBasis) -> PyResult<Vec<Vec<f64>>> {
        embed::expand(&self.inner, &basis.inner)
            .map(|e| rows(&e))
            .map_err(err)
    }

    /// `Ê′ = CÊ`.
    fn transfer(&self, map: &PyFunctionalMap) -> PyResult<Self> {
        embed::transfer(&self.inner, &map.inner)
            .map(Self::wrap)
            .map_err(err)
    }

    /// Posterior argmax vertex for each feature row.
    fn predict(&self, basis: &PyBasis, features: Vec<Vec<f64>>) -> PyResult<Vec<usize>> {
        let e = embed::expand(&self.inner, &basis.inner).map_err(err)?;
        let f = matrix(&features)?;
        if f.ncols() != e.ncols() {
            return Err(CseError::new_err("feature dimension does not match the embedding"));
        }
        Ok(embed::predict(e.as_ref(), f.as_ref()))
    }

    /// Posterior over vertices for one feature vector.
    fn posterior(&self, basis: &PyBasis, phi: Vec<f64>) -> PyResult<Vec<f64>> {
        let e = embed::expand(&self.inner, &basis.inner).map_err(err)?;
        embed::posterior(e.as_ref(), &phi).map_err(err)
    }
}

#[pyfunction]
#[pyo3(signature = (level, radius = 1.0))]
fn icosphere(level: usize, radius: f64) -> PyMesh {
    PyMesh::wrap(core::shapes::icosphere(level, radius))
}

#[pyfunction]
#[pyo3(signature = (nu, nv, seed = 0))]
fn bumpy_torus(nu: usize, nv: usize, seed: u64) -> PyMesh {
    PyMesh::wrap(core::shapes::bumpy_torus(nu, nv, seed))
}

#[pyfunction]
fn grid(nx: usize, ny: usize) -> PyMesh {
    PyMesh::wrap(core::shapes::grid(nx, ny))
}

#[pyfunction]
fn random_permutation(n: usize, seed: u64) -> Vec<usize> {
    core::shapes::random_permutation(n, seed)
}

/// Edge-graph geodesic distances from `source`; unreached vertices are
/// `inf`.
#[pyfunction]
#[pyo3(signature = (mesh, source, radius = None))]
fn geodesic_distances(mesh: &PyMesh, source: usize, radius: Option<f64>) -> PyResult<Vec<f64>> {
    geodesics::dijkstra(&mesh.inner, source, radius)
        .map(|f| f.distances)
        .map_err(err)
}

#[pyfunction]
#[pyo3(signature = (mesh, center, sigma, kernel = "linear"))]
fn soft_labels(mesh: &PyMesh, center: usize, sigma: f64, kernel: &str) -> PyResult<Vec<f64>> {
    let graph = geodesics::EdgeGraph::new(&mesh.inner);
    geodesics::soft_labels_with(&graph, mesh.inner.id(), center, sigma, self::kernel(kernel)?)
        .map(|f| f.weights)
        .map_err(err)
}

/// ZoomOut from seed pairs `(src vertex, dst vertex)`. Returns
/// `(map, assignment, levels)` where `assignment[k′]` is the source vertex
/// of destination vertex `k′`.
#[pyfunction]
#[pyo3(signature = (src, dst, seeds, *, start = 12, stop = 256, step = 4, alpha = 1.0, beta = 1e-2, gamma = 1.0, projection_steps = 10, truth = None))]
#[allow(clippy::too_many_arguments)]
fn match_meshes<'py>(
    py: Python<'py>,
    src: &PyMesh,
    dst: &PyMesh,
    seeds: Vec<[usize; 2]>,
    start: usize,
    stop: usize,
    step: usize,
    alpha: f64,
    beta: f64,
    gamma: f64,
    projection_steps: usize,
    truth: Option<Vec<usize>>,
) -> PyResult<(PyFunctionalMap, Vec<usize>, Bound<'py, PyAny>)> {
    let seeds = core::CorrespondenceSet::new(&src.inner, &dst.inner, seeds).map_err(err)?;
    let config = ZoomOutConfig {
        start,
        stop,
        step,
        alpha,
        beta,
        gamma,
        projection_steps,
    };
    let (s, d) = (src.inner.clone(), dst.inner.clone());
    let matched = py
        .detach(move || fmap::match_meshes(&s, &d, &seeds, &config, None, truth.as_deref()))
        .map_err(err)?;
    let result = matched.result;
    let levels = from_json(py, &result.levels)?;
    Ok((
        PyFunctionalMap {
            inner: Arc::new(result.map),
        },
        result.pointmap.assignment,
        levels,
    ))
}

/// Fit an embedding to synthetic samples of a random smooth teacher.
/// Returns `(embedding, teacher, loss_history)`.
#[pyfunction]
#[pyo3(signature = (mesh, basis, *, dim = 16, bandwidth = 32, amplitude = 1.0, noise_std = 0.0, label_fraction = 1.0,
    loss = "hard", sigma = 0.125, kernel = "linear", step_size = 1.0, iterations = 500, zero_init = false, order = None, seed = 0))]
#[allow(clippy::too_many_arguments)]
fn fit_synthetic(
    py: Python<'_>,
    mesh: &PyMesh,
    basis: &PyBasis,
    dim: usize,
    bandwidth: usize,
    amplitude: f64,
    noise_std: f64,
    label_fraction: f64,
    loss: &str,
    sigma: f64,
    kernel: &str,
    step_size: f64,
    iterations: usize,
    zero_init: bool,
    order: Option<usize>,
    seed: u64,
) -> PyResult<(PyEmbedding, PyEmbedding, Vec<f64>)> {
    let loss = match loss {
        "hard" => LossKind::Hard,
        "soft" => LossKind::Soft {
            sigma,
            kernel: self::kernel(kernel)?,
        },
        other => return Err(CseError::new_err(format!("unknown loss {other:?}"))),
    };
    let config = FitConfig {
        loss,
        step_size,
        iterations,
        init: if zero_init { Init::Zero } else { Init::Random { scale: None } },
        update_features: false,
        order,
        seed: seed.wrapping_add(2),
    };
    let (mesh, basis) = (mesh.inner.clone(), basis.inner.clone());
    let run = move || -> core::Result<_> {
        if basis.mesh != *mesh.id() {
            return Err(core::CseError::Mismatch("basis does not belong to the mesh".into()));
        }
        let teacher = fitter::make_teacher(&basis, dim, bandwidth, amplitude, seed)?;
        let synthetic = SyntheticConfig {
            mesh_id: basis.mesh.clone(),
            samples_per_vertex: 1,
            noise_std,
            label_fraction,
            seed: seed.wrapping_add(1),
        };
        let batch = fitter::make_synthetic(&synthetic, &teacher, &basis)?;
        let cache = SoftLabelCache::new(&mesh);
        let sup = Supervision::for_loss(batch, config.loss, Some(&cache))?;
        let result = fitter::fit(&basis, &sup, &config)?;
        Ok((result.embedding, teacher, result.history))
    };
    let (emb, teacher, history) = py.detach(run).map_err(err)?;
    Ok((PyEmbedding::wrap(emb), PyEmbedding::wrap(teacher), history))
}

/// Geodesic error report of predicted against true vertices, as a dict.
#[pyfunction]
#[pyo3(signature = (mesh, predicted, truth, thresholds = vec![0.1, 0.2, 0.3]))]
fn evaluate<'py>(
    py: Python<'py>,
    mesh: &PyMesh,
    predicted: Vec<usize>,
    truth: Vec<usize>,
    thresholds: Vec<f64>,
) -> PyResult<Bound<'py, PyAny>> {
    let k = mesh.inner.num_vertices();
    if let Some(&bad) = predicted.iter().chain(&truth).find(|&&v| v >= k) {
        return Err(CseError::new_err(format!("vertex {bad} out of range ({k} vertices)")));
    }
    let m = mesh.inner.clone();
    let report = py
        .detach(move || core::eval::evaluate_with(&m, &predicted, &truth, &thresholds))
        .map_err(err)?;
    from_json(py, &report)
}

#[pymodule]
fn csegeo(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("CseError", m.py().get_type::<CseError>())?;
    m.add("NORMALIZED_DIAMETER", geodesics::NORMALIZED_DIAMETER)?;
    m.add_class::<PyMesh>()?;
    m.add_class::<PyBasis>()?;
    m.add_class::<PyFunctionalMap>()?;
    m.add_class::<PyEmbedding>()?;
    m.add_function(wrap_pyfunction!(icosphere, m)?)?;
    m.add_function(wrap_pyfunction!(bumpy_torus, m)?)?;
    m.add_function(wrap_pyfunction!(grid, m)?)?;
    m.add_function(wrap_pyfunction!(random_permutation, m)?)?;
    m.add_function(wrap_pyfunction!(geodesic_distances, m)?)?;
    m.add_function(wrap_pyfunction!(soft_labels, m)?)?;
    m.add_function(wrap_pyfunction!(match_meshes, m)?)?;
    m.add_function(wrap_pyfunction!(fit_synthetic, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    Ok(())
}
