//! Python bindings for the QSF stack: dense matrix kernels, the closed-form
//! propagator machinery, spectral mode analysis, and a `Model` class wrapping
//! training, generation, and checkpoint I/O.
//!
//! Matrices cross the boundary as row-major lists of lists of floats; complex
//! values as `(re, im)` tuples.

use num_complex::Complex64;
use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyBytes;
use qsf_core::data::checkpoint::Checkpoint;
use qsf_core::data::Corpus;
use qsf_core::linalg::{ComplexMatrix, ComplexVector, Mat, RealMatrix};
use qsf_core::spectral::layer_spectrum;
use qsf_core::train::{train_stage, RunConfig};
use std::path::PathBuf;

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn io_err(e: impl std::fmt::Display) -> PyErr {
    PyIOError::new_err(e.to_string())
}

fn to_real(rows: Vec<Vec<f64>>, what: &str) -> PyResult<RealMatrix> {
    let r = rows.len();
    let c = rows.first().map(|x| x.len()).unwrap_or(0);
    if r == 0 || c == 0 {
        return Err(value_err(format!("{what}: empty matrix")));
    }
    if rows.iter().any(|x| x.len() != c) {
        return Err(value_err(format!("{what}: ragged rows")));
    }
    RealMatrix::from_vec(r, c, rows.into_iter().flatten().collect()).map_err(value_err)
}

fn to_complex(rows: Vec<Vec<f64>>, what: &str) -> PyResult<ComplexMatrix> {
    Ok(to_real(rows, what)?.to_complex())
}

fn from_real(m: &RealMatrix) -> Vec<Vec<f64>> {
    (0..m.rows()).map(|i| m.row(i).to_vec()).collect()
}

fn from_complex(m: &ComplexMatrix) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let re = (0..m.rows())
        .map(|i| (0..m.cols()).map(|j| m.get(i, j).re).collect())
        .collect();
    let im = (0..m.rows())
        .map(|i| (0..m.cols()).map(|j| m.get(i, j).im).collect())
        .collect();
    (re, im)
}

fn to_cvec(v: Vec<f64>) -> ComplexVector {
    v.into_iter().map(|x| Complex64::new(x, 0.0)).collect()
}

fn cvec_pairs(v: &[Complex64]) -> Vec<(f64, f64)> {
    v.iter().map(|z| (z.re, z.im)).collect()
}

/// e^{At} for a real square matrix.
#[pyfunction]
fn mat_exp(a: Vec<Vec<f64>>, t: f64) -> PyResult<Vec<Vec<f64>>> {
    let m = to_real(a, "mat_exp")?;
    Ok(from_real(
        &qsf_core::linalg::mat_exp(&m, t).map_err(value_err)?,
    ))
}

/// Eigenvalues of a real square matrix as (re, im) pairs.
#[pyfunction]
fn eigenvalues(a: Vec<Vec<f64>>) -> PyResult<Vec<(f64, f64)>> {
    let m = to_real(a, "eigenvalues")?;
    let eigs = qsf_core::linalg::eig::eigenvalues_real(&m).map_err(value_err)?;
    Ok(cvec_pairs(&eigs))
}

/// Σ(T) of dΣ/dt = GΣ + ΣGᵀ + σ²I for real G.
#[pyfunction]
fn lyapunov_covariance(g: Vec<Vec<f64>>, sigma_noise: f64, t: f64) -> PyResult<Vec<Vec<f64>>> {
    let m = to_complex(g, "lyapunov_covariance")?;
    let sigma = qsf_core::linalg::lyapunov_covariance(&m, sigma_noise, t).map_err(value_err)?;
    Ok(from_real(&sigma.re()))
}

/// ψ(T) = e^{GT}ψ₀ + G⁻¹(e^{GT} − I)β for real inputs.
#[pyfunction]
fn affine_evolve(g: Vec<Vec<f64>>, beta: Vec<f64>, psi0: Vec<f64>, t: f64) -> PyResult<Vec<f64>> {
    let gm = to_complex(g, "affine_evolve")?;
    let out = qsf_core::propagator::affine_evolve(&gm, &to_cvec(beta), &to_cvec(psi0), t)
        .map_err(value_err)?;
    Ok(out.iter().map(|z| z.re).collect())
}

/// G = −iH + Γ split; returns (H_re, H_im, Γ_re, Γ_im, ω, γ) with eigenvalue
/// lists as (re, im) pairs sorted by real part.
#[pyfunction]
#[allow(clippy::type_complexity)]
fn decompose_generator(
    g_re: Vec<Vec<f64>>,
    g_im: Vec<Vec<f64>>,
) -> PyResult<(
    Vec<Vec<f64>>,
    Vec<Vec<f64>>,
    Vec<Vec<f64>>,
    Vec<Vec<f64>>,
    Vec<(f64, f64)>,
    Vec<(f64, f64)>,
)> {
    let re = to_real(g_re, "decompose_generator re")?;
    let im = to_real(g_im, "decompose_generator im")?;
    if (re.rows(), re.cols()) != (im.rows(), im.cols()) {
        return Err(value_err("re and im parts must share a shape"));
    }
    let g = Mat::from_fn(re.rows(), re.cols(), |i, j| {
        Complex64::new(re.get(i, j), im.get(i, j))
    });
    let dec = qsf_core::propagator::decompose_generator(&g).map_err(value_err)?;
    let (h_re, h_im) = from_complex(&dec.hamiltonian);
    let (g_re, g_im) = from_complex(&dec.dissipative);
    Ok((
        h_re,
        h_im,
        g_re,
        g_im,
        cvec_pairs(&dec.omega),
        cvec_pairs(&dec.gamma),
    ))
}

/// ‖U(W_Qψ₀ − W_Kψ₁)‖².
#[pyfunction]
fn attention_energy(
    psi0: Vec<f64>,
    psi1: Vec<f64>,
    wq: Vec<Vec<f64>>,
    wk: Vec<Vec<f64>>,
    u_feat: Vec<Vec<f64>>,
) -> PyResult<f64> {
    qsf_core::propagator::attention_energy(
        &to_cvec(psi0),
        &to_cvec(psi1),
        &to_real(wq, "wq")?,
        &to_real(wk, "wk")?,
        &to_real(u_feat, "u_feat")?,
    )
    .map_err(value_err)
}

/// Guided endpoint law; returns a dict with mu_k, sigma_t, nu, lambda.
#[pyfunction]
#[allow(clippy::too_many_arguments)]
fn guided_propagate(
    py: Python<'_>,
    g: Vec<Vec<f64>>,
    beta: Vec<f64>,
    psi0: Vec<f64>,
    t: f64,
    wq: Vec<Vec<f64>>,
    wk: Vec<Vec<f64>>,
    u_feat: Vec<Vec<f64>>,
    sigma: f64,
    sigma_noise: f64,
) -> PyResult<PyObject> {
    let gp = qsf_core::propagator::guided_propagate(
        &to_complex(g, "g")?,
        &to_cvec(beta),
        &to_cvec(psi0),
        t,
        &to_real(wq, "wq")?,
        &to_real(wk, "wk")?,
        &to_real(u_feat, "u_feat")?,
        sigma,
        sigma_noise,
    )
    .map_err(value_err)?;
    let dict = pyo3::types::PyDict::new_bound(py);
    dict.set_item("mu_k", gp.mu_k.iter().map(|z| z.re).collect::<Vec<_>>())?;
    dict.set_item("nu", gp.nu.iter().map(|z| z.re).collect::<Vec<_>>())?;
    dict.set_item("sigma_t", from_real(&gp.sigma_t.re()))?;
    dict.set_item("lambda", from_real(&gp.lambda.re()))?;
    Ok(dict.into())
}

/// Chain steps (g, beta, t) through ψ_{k+1} = U_{k+1}ψ_k + b_{k+1}.
#[pyfunction]
fn chain_propagators(
    steps: Vec<(Vec<Vec<f64>>, Vec<f64>, f64)>,
    psi0: Vec<f64>,
) -> PyResult<Vec<f64>> {
    let built: Vec<_> = steps
        .into_iter()
        .map(|(g, beta, t)| {
            qsf_core::propagator::TokenStepParams::from_generator(
                to_complex(g, "step generator")?,
                to_cvec(beta),
                t,
            )
            .map_err(value_err)
        })
        .collect::<PyResult<_>>()?;
    let out = qsf_core::propagator::chain_propagators(&built, &to_cvec(psi0)).map_err(value_err)?;
    Ok(out.iter().map(|z| z.re).collect())
}

/// Discretized action of a sampled real path under dψ/dt = Gψ + β.
#[pyfunction]
fn evaluate_action(
    path: Vec<Vec<f64>>,
    g: Vec<Vec<f64>>,
    beta: Vec<f64>,
    t0: f64,
    t1: f64,
) -> PyResult<f64> {
    let cpath: Vec<ComplexVector> = path.into_iter().map(to_cvec).collect();
    qsf_core::propagator::evaluate_action(&cpath, &to_complex(g, "g")?, &to_cvec(beta), t0, t1)
        .map_err(value_err)
}

/// Classify (re, im) eigenvalues into "decay" / "neutral" / "growth".
#[pyfunction]
fn classify_modes(lambdas: Vec<(f64, f64)>, tol: f64) -> PyResult<Vec<String>> {
    let eigs: Vec<Complex64> = lambdas
        .into_iter()
        .map(|(re, im)| Complex64::new(re, im))
        .collect();
    let modes = qsf_core::spectral::classify_modes(&eigs, tol).map_err(value_err)?;
    Ok(modes.iter().map(|m| m.class.as_str().to_string()).collect())
}

/// Real part of the last bin of the length-i DFT over the first i vectors.
#[pyfunction]
fn prefix_dft_last_bin(x: Vec<Vec<f64>>, i: usize) -> PyResult<Vec<f64>> {
    qsf_core::linalg::prefix_dft_last_bin(&x, i).map_err(value_err)
}

/// U = exp(W − Wᵀ), a real orthogonal matrix.
#[pyfunction]
fn hamiltonian_unitary(w: Vec<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
    let m = to_real(w, "hamiltonian_unitary")?;
    Ok(from_real(
        &qsf_core::model::hamiltonian_unitary(&m).map_err(value_err)?,
    ))
}

/// Deterministic synthetic story corpus.
#[pyfunction]
fn generate_corpus(py: Python<'_>, target_bytes: usize, seed: u64) -> PyObject {
    let bytes = qsf_core::data::synthetic::generate_corpus(target_bytes, seed);
    PyBytes::new_bound(py, &bytes).into()
}

/// Finite-difference check of every registered autodiff op; returns
/// (op name, max relative error) pairs.
#[pyfunction]
fn grad_check_all(seed: u64, h: f64) -> Vec<(String, f64)> {
    qsf_core::autodiff::gradcheck::grad_check_all(seed, h)
        .into_iter()
        .map(|(k, e)| (k.name().to_string(), e))
        .collect()
}

/// A trained (or freshly loaded) model checkpoint.
#[pyclass]
struct Model {
    ckpt: Checkpoint,
}

#[pymethods]
impl Model {
    /// Train a stage from a JSON run-config string. `corpus` overrides the
    /// config's corpus path; `init_from` transfers from a checkpoint file.
    #[staticmethod]
    #[pyo3(signature = (config_json, corpus=None, init_from=None))]
    fn train(config_json: &str, corpus: Option<PathBuf>, init_from: Option<PathBuf>) -> PyResult<Self> {
        let mut run: RunConfig = serde_json::from_str(config_json).map_err(value_err)?;
        if let Some(c) = corpus {
            run.corpus = Some(c);
        }
        run.validate().map_err(value_err)?;
        let corpus_path = run
            .corpus
            .clone()
            .ok_or_else(|| value_err("config needs a corpus path"))?;
        let corpus = Corpus::from_file(&corpus_path).map_err(io_err)?;
        let init = match init_from {
            None => None,
            Some(p) => Some(Checkpoint::load(&p).map_err(io_err)?),
        };
        let outcome = train_stage(&run, &corpus, init.as_ref()).map_err(value_err)?;
        Ok(Model {
            ckpt: outcome.checkpoint,
        })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Model {
            ckpt: Checkpoint::load(&path).map_err(io_err)?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.ckpt.save(&path).map_err(io_err)
    }

    #[getter]
    fn stage(&self) -> usize {
        self.ckpt.config.stage.index()
    }

    #[getter]
    fn step(&self) -> u64 {
        self.ckpt.meta.step
    }

    #[getter]
    fn val_loss(&self) -> Option<f64> {
        self.ckpt.meta.val_loss
    }

    fn param_count(&self) -> usize {
        self.ckpt.params.param_count()
    }

    #[pyo3(signature = (prompt, max_tokens=200, temperature=0.8, seed=42))]
    fn generate(
        &self,
        prompt: &str,
        max_tokens: usize,
        temperature: f64,
        seed: u64,
    ) -> PyResult<String> {
        let bytes = qsf_core::train::generate(&self.ckpt, prompt, max_tokens, temperature, seed)
            .map_err(value_err)?;
        Ok(String::from_utf8_lossy(&bytes).into_owned())
    }

    /// Pooled spectrum summary: (decay, neutral, growth) counts and, for
    /// stage 4, the worst | |λ| − 1 |.
    #[pyo3(signature = (tol=0.02))]
    fn spectrum_counts(&self, tol: f64) -> PyResult<(usize, usize, usize, Option<f64>)> {
        let report = layer_spectrum(&self.ckpt, tol).map_err(value_err)?;
        Ok((
            report.counts.decay,
            report.counts.neutral,
            report.counts.growth,
            report.unitarity_defect,
        ))
    }

    /// ζ trace rows as (step, [per-layer ζ]) tuples.
    fn zeta_trace(&self) -> Vec<(u64, Vec<f64>)> {
        self.ckpt
            .meta
            .zeta
            .rows
            .iter()
            .map(|r| (r.step, r.zetas.clone()))
            .collect()
    }
}

#[pymodule]
fn qsf_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(mat_exp, m)?)?;
    m.add_function(wrap_pyfunction!(eigenvalues, m)?)?;
    m.add_function(wrap_pyfunction!(lyapunov_covariance, m)?)?;
    m.add_function(wrap_pyfunction!(affine_evolve, m)?)?;
    m.add_function(wrap_pyfunction!(decompose_generator, m)?)?;
    m.add_function(wrap_pyfunction!(attention_energy, m)?)?;
    m.add_function(wrap_pyfunction!(guided_propagate, m)?)?;
    m.add_function(wrap_pyfunction!(chain_propagators, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate_action, m)?)?;
    m.add_function(wrap_pyfunction!(classify_modes, m)?)?;
    m.add_function(wrap_pyfunction!(prefix_dft_last_bin, m)?)?;
    m.add_function(wrap_pyfunction!(hamiltonian_unitary, m)?)?;
    m.add_function(wrap_pyfunction!(generate_corpus, m)?)?;
    m.add_function(wrap_pyfunction!(grad_check_all, m)?)?;
    m.add_class::<Model>()?;
    Ok(())
}
