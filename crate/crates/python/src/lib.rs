//! Python bindings: vocabulary, simulation, dataset generation and the model.

use std::path::PathBuf;

use num_complex::Complex64;
use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;
use qovae_core::datagen::{self, GenSpec};
use qovae_core::entanglement::{self, EntanglementSummary};
use qovae_core::model::{self, DecodeMode, Qovae, QovaeConfig};
use qovae_core::optics::{run_setup, SimError};
use qovae_core::repr::{self, VocabConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn model_err(e: model::ModelError) -> PyErr {
    match e {
        model::ModelError::Io(e) => PyIOError::new_err(e.to_string()),
        model::ModelError::Diverged { .. } => PyRuntimeError::new_err(e.to_string()),
        other => value_err(other),
    }
}

fn summary_dict<'py>(py: Python<'py>, s: &EntanglementSummary) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("entropies", s.entropies.to_vec())?;
    d.set_item("ranks", s.ranks.to_vec())?;
    d.set_item("total", s.total)?;
    Ok(d)
}

#[pyclass(name = "Vocabulary", module = "qovae", frozen)]
struct PyVocabulary {
    inner: repr::Vocabulary,
}

#[pymethods]
impl PyVocabulary {
    #[new]
    #[pyo3(signature = (hologram_shifts=None, max_len=12, dc_order=1))]
    fn new(hologram_shifts: Option<Vec<i32>>, max_len: usize, dc_order: u32) -> PyResult<Self> {
        let mut cfg = VocabConfig {
            max_len,
            dc_order,
            ..VocabConfig::default()
        };
        if let Some(h) = hologram_shifts {
            cfg.hologram_shifts = h;
        }
        Ok(PyVocabulary {
            inner: repr::Vocabulary::new(cfg).map_err(value_err)?,
        })
    }

    #[getter]
    fn size(&self) -> usize {
        self.inner.size()
    }

    #[getter]
    fn max_len(&self) -> usize {
        self.inner.max_len()
    }

    fn tokens(&self) -> Vec<String> {
        self.inner.tokens()
    }

    fn hash(&self) -> String {
        self.inner.hash()
    }

    /// Canonical token string of a setup.
    fn canonical(&self, setup: &str) -> PyResult<String> {
        Ok(self.inner.parse_setup(setup).map_err(value_err)?.to_string())
    }

    /// Column indices of the padded one-hot encoding.
    fn encode(&self, setup: &str) -> PyResult<Vec<usize>> {
        let s = self.inner.parse_setup(setup).map_err(value_err)?;
        Ok(self.inner.encode_onehot(&s).map_err(value_err)?.indices().to_vec())
    }

    fn decode(&self, indices: Vec<usize>) -> String {
        self.inner.decode_indices(&indices).to_string()
    }

    /// Final state and entanglement of a setup as a dict.
    fn simulate<'py>(&self, py: Python<'py>, setup: &str) -> PyResult<Bound<'py, PyDict>> {
        let s = self.inner.parse_setup(setup).map_err(value_err)?;
        let sim = self.inner.sim_config();
        let d = PyDict::new(py);
        d.set_item("setup", s.to_string())?;
        let (terms, summary) = match run_setup(&s, &sim) {
            Ok(state) => {
                let terms: Vec<(Vec<i32>, Complex64)> = state
                    .complex_terms()
                    .into_iter()
                    .map(|(k, a)| (k.detector_oams().map_or_else(Vec::new, |o| o.to_vec()), a))
                    .collect();
                let summary = entanglement::summarize(&state).map_err(value_err)?;
                (terms, summary)
            }
            Err(SimError::EmptyState) => (Vec::new(), EntanglementSummary::unentangled()),
            Err(e) => return Err(PyRuntimeError::new_err(e.to_string())),
        };
        d.set_item("kets", terms)?;
        d.set_item("summary", summary_dict(py, &summary)?)?;
        Ok(d)
    }

    fn __repr__(&self) -> String {
        format!("Vocabulary(size={}, max_len={})", self.inner.size(), self.inner.max_len())
    }
}

/// Entanglement of a four-photon state given as `[((a, b, c, d), amplitude)]`;
/// the amplitudes are normalized first.
#[pyfunction]
fn summarize<'py>(
    py: Python<'py>,
    terms: Vec<((i32, i32, i32, i32), Complex64)>,
) -> PyResult<Bound<'py, PyDict>> {
    let norm: f64 = terms.iter().map(|(_, a)| a.norm_sqr()).sum();
    if norm <= 0.0 {
        return Err(value_err("state has zero norm"));
    }
    let flat: Vec<(Vec<i32>, Complex64)> = terms
        .into_iter()
        .map(|((a, b, c, d), amp)| (vec![a, b, c, d], amp / norm.sqrt()))
        .collect();
    let summary = entanglement::summarize_terms(&flat).map_err(value_err)?;
    summary_dict(py, &summary)
}

/// Labeled random dataset as `[(setup, S)]`.
#[pyfunction]
#[pyo3(signature = (count, min_len=3, max_len=12, s_min=None, s_max=None, ntp_min=0, mix=None, seed=0, workers=1, vocab=None))]
#[allow(clippy::too_many_arguments)]
fn generate_dataset(
    py: Python<'_>,
    count: usize,
    min_len: usize,
    max_len: usize,
    s_min: Option<f64>,
    s_max: Option<f64>,
    ntp_min: usize,
    mix: Option<f64>,
    seed: u64,
    workers: usize,
    vocab: Option<PyRef<'_, PyVocabulary>>,
) -> PyResult<Vec<(String, f64)>> {
    let v = vocab.map_or_else(repr::Vocabulary::default, |v| v.inner.clone());
    let spec = GenSpec {
        count,
        min_len,
        max_len,
        s_min,
        s_max,
        ntp_min,
        mix,
        seed,
        workers,
        ..GenSpec::default()
    };
    let (records, _) = py
        .detach(|| datagen::generate_dataset(&v, &spec))
        .map_err(value_err)?;
    Ok(records.iter().map(|r| (r.setup.to_string(), r.total())).collect())
}

fn parse_mode(mode: &str) -> PyResult<DecodeMode> {
    match mode {
        "sample" => Ok(DecodeMode::Sample),
        "argmax" => Ok(DecodeMode::Argmax),
        _ => Err(value_err(format!("mode must be 'sample' or 'argmax', got '{mode}'"))),
    }
}

#[pyclass(name = "Model", module = "qovae")]
struct PyModel {
    inner: Qovae,
}

#[pymethods]
impl PyModel {
    /// Untrained model; `latent_dim` 6 and 2 give the high and low variants.
    #[new]
    #[pyo3(signature = (latent_dim=6, seed=0, vocab=None))]
    fn new(latent_dim: usize, seed: u64, vocab: Option<PyRef<'_, PyVocabulary>>) -> PyResult<Self> {
        let v = vocab.map_or_else(repr::Vocabulary::default, |v| v.inner.clone());
        let cfg = QovaeConfig {
            latent_dim,
            seed,
            ..QovaeConfig::default()
        };
        Ok(PyModel {
            inner: Qovae::new(cfg, v).map_err(model_err)?,
        })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(PyModel {
            inner: Qovae::load(&path).map_err(model_err)?,
        })
    }

    /// Trains on token strings and returns `[(epoch, recon, kl, val_recon, val_kl)]`.
    #[staticmethod]
    #[pyo3(signature = (setups, latent_dim=6, epochs=200, lr=1e-3, batch_size=64, seed=0, out=None))]
    #[allow(clippy::too_many_arguments)]
    fn train(
        py: Python<'_>,
        setups: Vec<String>,
        latent_dim: usize,
        epochs: usize,
        lr: f64,
        batch_size: usize,
        seed: u64,
        out: Option<PathBuf>,
    ) -> PyResult<(Self, Vec<(usize, f64, f64, f64, f64)>)> {
        let v = repr::Vocabulary::default();
        let parsed = setups
            .iter()
            .map(|s| v.parse_setup(s))
            .collect::<Result<Vec<_>, _>>()
            .map_err(value_err)?;
        let cfg = QovaeConfig {
            latent_dim,
            epochs,
            lr,
            batch_size,
            seed,
            ..QovaeConfig::default()
        };
        let outcome = py
            .detach(|| model::train(&parsed, &v, &cfg, out.as_deref(), |_| {}))
            .map_err(model_err)?;
        let log = outcome
            .log
            .iter()
            .map(|e| (e.epoch, e.recon, e.kl, e.val_recon, e.val_kl))
            .collect();
        Ok((PyModel { inner: outcome.model }, log))
    }

    #[getter]
    fn latent_dim(&self) -> usize {
        self.inner.latent_dim()
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.save(&path).map_err(model_err)
    }

    /// Posterior mean of a setup.
    fn encode(&self, setup: &str) -> PyResult<Vec<f64>> {
        let s = self.inner.vocab().parse_setup(setup).map_err(value_err)?;
        Ok(self.inner.encode_setup(&s).map_err(model_err)?.mu)
    }

    #[pyo3(signature = (z, mode="argmax", seed=0))]
    fn decode(&self, z: Vec<f64>, mode: &str, seed: u64) -> PyResult<String> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = self
            .inner
            .decode_setup(&z, parse_mode(mode)?, &mut rng)
            .map_err(model_err)?;
        Ok(s.to_string())
    }

    #[pyo3(signature = (n, seed=0, mode="sample"))]
    fn sample(&self, n: usize, seed: u64, mode: &str) -> PyResult<Vec<String>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (_, setups) = self
            .inner
            .sample_prior(n, parse_mode(mode)?, &mut rng)
            .map_err(model_err)?;
        Ok(setups.iter().map(ToString::to_string).collect())
    }
}

#[pymodule]
fn qovae(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyVocabulary>()?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(summarize, m)?)?;
    m.add_function(wrap_pyfunction!(generate_dataset, m)?)?;
    Ok(())
}
