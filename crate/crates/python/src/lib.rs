//! Python bindings. Matrices cross the boundary as lists of rows; feature
//! blocks are `d × n` with one column per example.

use std::path::PathBuf;

use kda_core::data::{generate_blobs as core_blobs, BlobParams};
use kda_core::experiment::{run_experiment as core_run, ExperimentSpec, ResultRow as CoreRow};
use kda_core::gram::{self, FeatureBlock};
use kda_core::landmarks::{self, LandmarkSet};
use kda_core::losses;
use kda_core::matrix::{self, Matrix, DEFAULT_PINV_TOL};
use kda_core::verify::{self, BoundReport as CoreReport, ChainLink};
use kda_core::KdaError;
use pyo3::create_exception;
use pyo3::exceptions::PyException;
use pyo3::prelude::*;

create_exception!(kda, KdaException, PyException);

type Rows = Vec<Vec<f64>>;

fn err(e: KdaError) -> PyErr {
    KdaException::new_err(e.to_string())
}

fn mat(rows: &Rows) -> PyResult<Matrix> {
    Matrix::from_rows(rows).map_err(err)
}

fn block(rows: &Rows) -> PyResult<FeatureBlock> {
    FeatureBlock::new(mat(rows)?, "py").map_err(err)
}

#[pyclass(name = "LandmarkSet", frozen)]
struct PyLandmarks {
    inner: LandmarkSet,
}

#[pymethods]
impl PyLandmarks {
    /// Landmarks given explicitly as a `d × m` matrix.
    #[new]
    fn new(points: Rows) -> PyResult<Self> {
        Ok(Self {
            inner: LandmarkSet::from_points(mat(&points)?),
        })
    }

    #[getter]
    fn points(&self) -> Rows {
        self.inner.points.to_rows()
    }

    #[getter]
    fn strategy(&self) -> String {
        format!("{:?}", self.inner.strategy)
    }

    #[getter]
    fn class_of(&self) -> Option<Vec<usize>> {
        self.inner.class_of.clone()
    }

    #[getter]
    fn source_columns(&self) -> Option<Vec<usize>> {
        self.inner.source_columns.clone()
    }

    fn gram(&self) -> Rows {
        self.inner.gram().to_rows()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn __repr__(&self) -> String {
        format!(
            "LandmarkSet(strategy={:?}, dim={}, m={})",
            self.inner.strategy,
            self.inner.dim(),
            self.inner.len()
        )
    }
}

#[pyclass(name = "Nystrom", frozen)]
struct PyNystrom {
    inner: gram::NystromApprox,
}

#[pymethods]
impl PyNystrom {
    #[new]
    fn new(x: Rows, landmarks: &PyLandmarks, k: usize) -> PyResult<Self> {
        let inner = gram::build_nystrom(&block(&x)?, &landmarks.inner, k).map_err(err)?;
        Ok(Self { inner })
    }

    #[getter]
    fn c(&self) -> Rows {
        self.inner.c.to_rows()
    }

    #[getter]
    fn w(&self) -> Rows {
        self.inner.w.to_rows()
    }

    #[getter]
    fn k(&self) -> usize {
        self.inner.k
    }

    fn reconstruct(&self) -> Rows {
        self.inner.reconstruct().to_rows()
    }
}

#[pyclass(name = "BoundReport", frozen, get_all)]
struct PyReport {
    context: String,
    lhs: f64,
    rhs: f64,
    slack: f64,
    satisfied: bool,
}

#[pymethods]
impl PyReport {
    fn __repr__(&self) -> String {
        ChainLink::Checked(CoreReport {
            context: self.context.clone(),
            lhs: self.lhs,
            rhs: self.rhs,
            slack: self.slack,
            satisfied: self.satisfied,
        })
        .to_string()
    }
}

impl From<CoreReport> for PyReport {
    fn from(r: CoreReport) -> Self {
        Self {
            context: r.context,
            lhs: r.lhs,
            rhs: r.rhs,
            slack: r.slack,
            satisfied: r.satisfied,
        }
    }
}

#[pyclass(name = "ResultRow", frozen, get_all)]
struct PyRow {
    arm: String,
    seed: u64,
    acc: Option<f64>,
    transfer_before: Option<f64>,
    transfer_after: Option<f64>,
    partial_loss: Option<f64>,
    min_eig_ws: Option<f64>,
    min_eig_wt: Option<f64>,
    runtime_s: f64,
    status: String,
}

#[pymethods]
impl PyRow {
    fn __repr__(&self) -> String {
        format!("ResultRow(arm={:?}, seed={}, acc={:?}, status={:?})", self.arm, self.seed, self.acc, self.status)
    }
}

impl From<CoreRow> for PyRow {
    fn from(r: CoreRow) -> Self {
        Self {
            arm: r.arm,
            seed: r.seed,
            acc: r.acc,
            transfer_before: r.transfer_before,
            transfer_after: r.transfer_after,
            partial_loss: r.partial_loss,
            min_eig_ws: r.min_eig_ws,
            min_eig_wt: r.min_eig_wt,
            runtime_s: r.runtime_s,
            status: r.status,
        }
    }
}

/// `XᵀX` for a `d × n` feature matrix.
#[pyfunction]
fn gram_matrix(x: Rows) -> PyResult<Rows> {
    Ok(gram::gram(&block(&x)?).to_rows())
}

#[pyfunction]
fn partial_gram(x: Rows, landmarks: &PyLandmarks) -> PyResult<Rows> {
    Ok(gram::partial_gram(&block(&x)?, &landmarks.inner).map_err(err)?.to_rows())
}

#[pyfunction]
#[pyo3(signature = (a, tol = DEFAULT_PINV_TOL))]
fn pseudo_inverse(a: Rows, tol: f64) -> PyResult<Rows> {
    Ok(matrix::pseudo_inverse(&mat(&a)?, tol).map_err(err)?.to_rows())
}

/// Eigenvalues (descending) and eigenvectors (as columns) of a symmetric matrix.
#[pyfunction]
fn sym_eig(a: Rows) -> PyResult<(Vec<f64>, Rows)> {
    let e = matrix::sym_eig(&mat(&a)?).map_err(err)?;
    Ok((e.eigenvalues, e.eigenvectors.to_rows()))
}

#[pyfunction]
fn rank_k_truncate(a: Rows, k: usize) -> PyResult<Rows> {
    Ok(matrix::rank_k_truncate(&mat(&a)?, k).map_err(err)?.to_rows())
}

#[pyfunction]
fn min_eigenvalue(a: Rows) -> PyResult<f64> {
    matrix::min_eigenvalue(&mat(&a)?).map_err(err)
}

#[pyfunction]
fn class_centers(x: Rows, labels: Vec<usize>) -> PyResult<PyLandmarks> {
    let inner = landmarks::class_centers(&block(&x)?, &labels).map_err(err)?;
    Ok(PyLandmarks { inner })
}

#[pyfunction]
fn kmeans_per_class(x: Rows, labels: Vec<usize>, centers_per_class: usize, seed: u64) -> PyResult<PyLandmarks> {
    let inner = landmarks::kmeans_per_class(&block(&x)?, &labels, centers_per_class, seed).map_err(err)?;
    Ok(PyLandmarks { inner })
}

#[pyfunction]
fn random_landmarks(x: Rows, m: usize, seed: u64) -> PyResult<PyLandmarks> {
    let inner = landmarks::random_landmarks(&block(&x)?, m, seed).map_err(err)?;
    Ok(PyLandmarks { inner })
}

#[pyfunction]
fn landmarks_from_columns(x: Rows, columns: Vec<usize>) -> PyResult<PyLandmarks> {
    let inner = landmarks::landmarks_from_columns(&block(&x)?, &columns).map_err(err)?;
    Ok(PyLandmarks { inner })
}

#[pyfunction]
fn onehot_landmarks(n_classes: usize) -> PyResult<PyLandmarks> {
    let inner = landmarks::onehot_landmarks(n_classes).map_err(err)?;
    Ok(PyLandmarks { inner })
}

/// Returns `(value, gradient with respect to x_s)`.
#[pyfunction]
#[pyo3(signature = (x_s, x_t, d_s, d_t, weighting = None))]
fn kda_loss(
    x_s: Rows,
    x_t: Rows,
    d_s: &PyLandmarks,
    d_t: &PyLandmarks,
    weighting: Option<Rows>,
) -> PyResult<(f64, Rows)> {
    let (xs, xt) = (block(&x_s)?, block(&x_t)?);
    let out = match weighting {
        Some(w) => losses::kda_loss_weighted(&xs, &xt, &d_s.inner, &d_t.inner, &mat(&w)?),
        None => losses::kda_loss(&xs, &xt, &d_s.inner, &d_t.inner),
    }
    .map_err(err)?;
    Ok((out.value, out.grad.to_rows()))
}

#[pyfunction]
fn kd_loss(logits_s: Rows, logits_t: Rows, temperature: f64) -> PyResult<(f64, Rows)> {
    let out = losses::kd_loss(&mat(&logits_s)?, &mat(&logits_t)?, temperature).map_err(err)?;
    Ok((out.value, out.grad.to_rows()))
}

#[pyfunction]
fn kd_squared_logit_loss(logits_s: Rows, logits_t: Rows) -> PyResult<(f64, Rows)> {
    let out = losses::kd_squared_logit_loss(&mat(&logits_s)?, &mat(&logits_t)?).map_err(err)?;
    Ok((out.value, out.grad.to_rows()))
}

#[pyfunction]
fn rkd_batch_loss(x_s: Rows, x_t: Rows) -> PyResult<(f64, Rows)> {
    let out = losses::rkd_batch_loss(&block(&x_s)?, &block(&x_t)?).map_err(err)?;
    Ok((out.value, out.grad.to_rows()))
}

#[pyfunction]
fn cross_entropy_loss(logits: Rows, labels: Vec<usize>) -> PyResult<(f64, Rows)> {
    let out = losses::cross_entropy_loss(&mat(&logits)?, &labels).map_err(err)?;
    Ok((out.value, out.grad.to_rows()))
}

/// Returns `(train_x, train_labels, test_x, test_labels)`.
#[pyfunction]
#[pyo3(signature = (classes, dim, per_class, separation, sigma, seed))]
fn generate_blobs(
    classes: usize,
    dim: usize,
    per_class: usize,
    separation: f64,
    sigma: f64,
    seed: u64,
) -> PyResult<(Rows, Vec<usize>, Rows, Vec<usize>)> {
    let p = BlobParams {
        classes,
        dim,
        per_class,
        separation,
        sigma,
        seed,
    };
    let d = core_blobs(&p).map_err(err)?;
    Ok((d.train.x.to_rows(), d.train.labels, d.test.x.to_rows(), d.test.labels))
}

#[pyfunction]
fn check_pinv_contraction(w_s: Rows, w_t: Rows) -> PyResult<PyReport> {
    Ok(verify::check_pinv_contraction(&mat(&w_s)?, &mat(&w_t)?).map_err(err)?.into())
}

#[pyfunction]
fn check_doubly_stochastic_m(w_s: Rows, w_t: Rows, k: usize) -> PyResult<PyReport> {
    Ok(verify::check_doubly_stochastic_M(&mat(&w_s)?, &mat(&w_t)?, k).map_err(err)?.into())
}

#[pyfunction]
fn check_thm5_decomposition(
    x_s: Rows,
    x_t: Rows,
    d_s: &PyLandmarks,
    d_t: &PyLandmarks,
    assignment: Vec<usize>,
) -> PyResult<PyReport> {
    let r = verify::check_thm5_decomposition(&block(&x_s)?, &block(&x_t)?, &d_s.inner, &d_t.inner, &assignment)
        .map_err(err)?;
    Ok(r.into())
}

#[pyfunction]
fn triangle_check(k_s: Rows, k_t: Rows, approx_s: Rows, approx_t: Rows) -> PyResult<PyReport> {
    let r = verify::triangle_check(&mat(&k_s)?, &mat(&k_t)?, &mat(&approx_s)?, &mat(&approx_t)?).map_err(err)?;
    Ok(r.into())
}

/// Checked links come back as `BoundReport`, skipped ones as `(context, reason)`.
#[pyfunction]
fn check_thm3_chain(
    py: Python<'_>,
    x_s: Rows,
    x_t: Rows,
    d_s: &PyLandmarks,
    d_t: &PyLandmarks,
) -> PyResult<Vec<Py<PyAny>>> {
    let links = verify::check_thm3_chain(&block(&x_s)?, &block(&x_t)?, &d_s.inner, &d_t.inner).map_err(err)?;
    links
        .into_iter()
        .map(|l| match l {
            ChainLink::Checked(r) => Ok(Py::new(py, PyReport::from(r))?.into_any()),
            ChainLink::Skipped { context, reason } => Ok((context, reason).into_pyobject(py)?.into_any().unbind()),
        })
        .collect()
}

#[pyfunction]
fn pearson(a: Vec<f64>, b: Vec<f64>) -> PyResult<f64> {
    verify::pearson(&a, &b).map_err(err)
}

/// Runs every arm of a TOML config; writes the usual files under `out`.
#[pyfunction]
#[pyo3(signature = (config, out, seed = None))]
fn run_experiment(py: Python<'_>, config: PathBuf, out: PathBuf, seed: Option<u64>) -> PyResult<Vec<PyRow>> {
    let mut spec = ExperimentSpec::from_file(&config).map_err(err)?;
    if let Some(s) = seed {
        spec.seeds = vec![s];
    }
    let outcome = py
        .detach(|| std::fs::create_dir_all(&out).map_err(KdaError::from).and_then(|_| core_run(&spec, &out)))
        .map_err(err)?;
    Ok(outcome.rows.into_iter().map(PyRow::from).collect())
}

#[pymodule]
fn kda(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("KdaError", m.py().get_type::<KdaException>())?;
    m.add_class::<PyLandmarks>()?;
    m.add_class::<PyNystrom>()?;
    m.add_class::<PyReport>()?;
    m.add_class::<PyRow>()?;
    m.add_function(wrap_pyfunction!(gram_matrix, m)?)?;
    m.add_function(wrap_pyfunction!(partial_gram, m)?)?;
    m.add_function(wrap_pyfunction!(pseudo_inverse, m)?)?;
    m.add_function(wrap_pyfunction!(sym_eig, m)?)?;
    m.add_function(wrap_pyfunction!(rank_k_truncate, m)?)?;
    m.add_function(wrap_pyfunction!(min_eigenvalue, m)?)?;
    m.add_function(wrap_pyfunction!(class_centers, m)?)?;
    m.add_function(wrap_pyfunction!(kmeans_per_class, m)?)?;
    m.add_function(wrap_pyfunction!(random_landmarks, m)?)?;
    m.add_function(wrap_pyfunction!(landmarks_from_columns, m)?)?;
    m.add_function(wrap_pyfunction!(onehot_landmarks, m)?)?;
    m.add_function(wrap_pyfunction!(kda_loss, m)?)?;
    m.add_function(wrap_pyfunction!(kd_loss, m)?)?;
    m.add_function(wrap_pyfunction!(kd_squared_logit_loss, m)?)?;
    m.add_function(wrap_pyfunction!(rkd_batch_loss, m)?)?;
    m.add_function(wrap_pyfunction!(cross_entropy_loss, m)?)?;
    m.add_function(wrap_pyfunction!(generate_blobs, m)?)?;
    m.add_function(wrap_pyfunction!(check_pinv_contraction, m)?)?;
    m.add_function(wrap_pyfunction!(check_doubly_stochastic_m, m)?)?;
    m.add_function(wrap_pyfunction!(check_thm5_decomposition, m)?)?;
    m.add_function(wrap_pyfunction!(triangle_check, m)?)?;
    m.add_function(wrap_pyfunction!(check_thm3_chain, m)?)?;
    m.add_function(wrap_pyfunction!(pearson, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    Ok(())
}
