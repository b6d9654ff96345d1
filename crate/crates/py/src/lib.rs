//! Python bindings: `import ebisg`.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use pyo3::exceptions::{PyKeyError, PyOSError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use ebisg_core::embedding::{self as emb, EmbeddingProvider, NgramConfig};
use ebisg_core::posterior::{self, Method, PriorModels, ReferenceTables};
use ebisg_core::prior_model::{self as pm};
use ebisg_core::tables::{self, NameKind, VoterRecord, DEFAULT_MIN_COUNT};
use ebisg_core::{Error, Race, RaceDistribution, NUM_RACES};

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Io { .. } => PyOSError::new_err(e.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

fn dist(values: Vec<f64>, what: &str) -> PyResult<RaceDistribution> {
    let arr: [f64; NUM_RACES] = values
        .try_into()
        .map_err(|v: Vec<f64>| PyValueError::new_err(format!("{what}: expected {NUM_RACES} values, got {}", v.len())))?;
    RaceDistribution::new(arr).map_err(|e| PyValueError::new_err(format!("{what}: {e}")))
}

fn opt_dist(values: Option<Vec<f64>>, what: &str) -> PyResult<Option<RaceDistribution>> {
    values.map(|v| dist(v, what)).transpose()
}

fn to_vec(d: &RaceDistribution) -> Vec<f64> {
    d.as_array().to_vec()
}

fn name_kind(kind: &str) -> PyResult<NameKind> {
    match kind {
        "surname" => Ok(NameKind::Surname),
        "firstname" => Ok(NameKind::Firstname),
        other => Err(PyValueError::new_err(format!("kind must be 'surname' or 'firstname', got {other:?}"))),
    }
}

/// Normalizes a name the way table lookups do.
#[pyfunction]
fn normalize_name(name: &str) -> String {
    ebisg_core::normalize::normalize_name(name)
}

/// BISG posterior from a geographic distribution, an optional surname
/// prior and the population marginal.
#[pyfunction]
#[pyo3(signature = (geo, surname_prior, marginal))]
fn bisg_posterior(geo: Vec<f64>, surname_prior: Option<Vec<f64>>, marginal: Vec<f64>) -> PyResult<Vec<f64>> {
    let s = opt_dist(surname_prior, "surname_prior")?;
    posterior::bisg_posterior(&dist(geo, "geo")?, s.as_ref(), &dist(marginal, "marginal")?)
        .map(|d| to_vec(&d))
        .map_err(py_err)
}

/// BIFSG posterior; either name prior may be `None`.
#[pyfunction]
#[pyo3(signature = (geo, surname_prior, firstname_prior, marginal))]
fn bifsg_posterior(
    geo: Vec<f64>,
    surname_prior: Option<Vec<f64>>,
    firstname_prior: Option<Vec<f64>>,
    marginal: Vec<f64>,
) -> PyResult<Vec<f64>> {
    let s = opt_dist(surname_prior, "surname_prior")?;
    let f = opt_dist(firstname_prior, "firstname_prior")?;
    posterior::bifsg_posterior(&dist(geo, "geo")?, s.as_ref(), f.as_ref(), &dist(marginal, "marginal")?)
        .map(|d| to_vec(&d))
        .map_err(py_err)
}

/// Unit-norm character n-gram embedding of a name.
#[pyfunction]
#[pyo3(signature = (name, dim = 512, seed = 0))]
fn embed_name(name: &str, dim: usize, seed: u64) -> PyResult<Vec<f64>> {
    let cfg = NgramConfig::new(dim, seed).map_err(py_err)?;
    Ok(cfg.embed(name).into_inner())
}

/// Runs the command-line tool with `args` (without the program name) and
/// returns its exit status.
#[pyfunction]
fn run_cli(args: Vec<String>) -> i32 {
    ebisg_core::cli::run(std::iter::once("ebisg".to_string()).chain(args))
}

/// A Census-style name table.
#[pyclass(frozen)]
struct NameTable {
    inner: tables::NameTable,
}

#[pymethods]
impl NameTable {
    #[staticmethod]
    #[pyo3(signature = (path, kind = "surname", min_count = DEFAULT_MIN_COUNT))]
    fn load(path: PathBuf, kind: &str, min_count: u64) -> PyResult<Self> {
        let inner = tables::load_name_table_with(&path, name_kind(kind)?, min_count).map_err(py_err)?;
        Ok(NameTable { inner })
    }

    /// Race distribution for `name`, or `None` when it is not listed.
    fn lookup(&self, name: &str) -> Option<Vec<f64>> {
        self.inner.lookup(name).map(|e| to_vec(&e.dist))
    }

    fn count(&self, name: &str) -> Option<u64> {
        self.inner.lookup(name).map(|e| e.count)
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn __contains__(&self, name: &str) -> bool {
        self.inner.contains(name)
    }
}

/// Race composition by geographic unit.
#[pyclass(frozen)]
struct GeoTable {
    inner: tables::GeoTable,
}

#[pymethods]
impl GeoTable {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(GeoTable {
            inner: tables::load_geo_table(&path).map_err(py_err)?,
        })
    }

    fn dist(&self, geo: &str) -> PyResult<Vec<f64>> {
        self.inner
            .dist(geo)
            .map(to_vec)
            .ok_or_else(|| PyKeyError::new_err(geo.to_string()))
    }

    fn marginal(&self) -> Vec<f64> {
        to_vec(self.inner.marginal())
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }
}

/// Named embedding vectors stored as `f32`.
#[pyclass]
struct EmbeddingStore {
    inner: emb::EmbeddingStore,
}

#[pymethods]
impl EmbeddingStore {
    #[new]
    fn new(dim: usize, provenance: &str) -> PyResult<Self> {
        Ok(EmbeddingStore {
            inner: emb::EmbeddingStore::new(dim, provenance).map_err(py_err)?,
        })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(EmbeddingStore {
            inner: emb::load_embedding_store(&path).map_err(py_err)?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        emb::write_embedding_store(&self.inner, &path).map_err(py_err)
    }

    /// Stores `values` under the normalized form of `name`.
    fn insert(&mut self, name: &str, values: Vec<f32>) -> PyResult<()> {
        self.inner.insert(&ebisg_core::normalize::normalize_name(name), values).map_err(py_err)
    }

    fn get(&self, name: &str) -> Option<Vec<f32>> {
        self.inner.get_raw(&ebisg_core::normalize::normalize_name(name)).map(|v| v.to_vec())
    }

    fn names(&self) -> Vec<String> {
        self.inner.names().map(str::to_string).collect()
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    #[getter]
    fn provenance(&self) -> String {
        self.inner.provenance().to_string()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }
}

fn store_provider(path: &Path) -> PyResult<EmbeddingProvider> {
    let store = emb::load_embedding_store(path).map_err(py_err)?;
    let fallback = NgramConfig::from_provenance(store.provenance());
    Ok(EmbeddingProvider::Store {
        store: Arc::new(store),
        fallback,
    })
}

fn load_model(weights: &Path, store: Option<&EmbeddingProvider>) -> PyResult<pm::PriorModel> {
    let w = pm::load_weights(weights).map_err(py_err)?;
    let provider = match store {
        Some(s) if s.provenance() == w.meta.provenance => s.clone(),
        _ => NgramConfig::from_provenance(&w.meta.provenance)
            .map(EmbeddingProvider::Ngram)
            .ok_or_else(|| {
                PyValueError::new_err(format!(
                    "{}: embeddings {:?} are not available; pass the matching store",
                    weights.display(),
                    w.meta.provenance
                ))
            })?,
    };
    pm::PriorModel::new(w, provider).map_err(py_err)
}

/// A trained name-prior network bound to its embedding provider.
#[pyclass(frozen)]
struct PriorModel {
    inner: pm::PriorModel,
}

#[pymethods]
impl PriorModel {
    #[staticmethod]
    #[pyo3(signature = (weights, embeddings = None))]
    fn load(weights: PathBuf, embeddings: Option<PathBuf>) -> PyResult<Self> {
        let store = embeddings.as_deref().map(store_provider).transpose()?;
        Ok(PriorModel {
            inner: load_model(&weights, store.as_ref())?,
        })
    }

    /// Predicted race distribution for a (possibly unlisted) name.
    fn predict(&self, name: &str) -> PyResult<Vec<f64>> {
        self.inner.predict(name).map(|d| to_vec(&d)).map_err(py_err)
    }

    #[getter]
    fn provenance(&self) -> String {
        self.inner.weights().meta.provenance.clone()
    }
}

/// Reference tables plus optional models, ready to compute posteriors.
#[pyclass(frozen)]
struct Predictor {
    tables: ReferenceTables,
    models: PriorModels,
}

fn posterior_dict<'py>(py: Python<'py>, p: &posterior::Posterior) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("posterior", to_vec(&p.dist))?;
    d.set_item("surname_matched", p.status.surname)?;
    d.set_item("firstname_matched", p.status.firstname)?;
    Ok(d)
}

#[pymethods]
impl Predictor {
    #[new]
    #[pyo3(signature = (
        surnames, geo, firstnames = None, surname_weights = None, firstname_weights = None,
        fullname_weights = None, embeddings = None, min_count = DEFAULT_MIN_COUNT
    ))]
    #[allow(clippy::too_many_arguments)]
    fn new(
        surnames: PathBuf,
        geo: PathBuf,
        firstnames: Option<PathBuf>,
        surname_weights: Option<PathBuf>,
        firstname_weights: Option<PathBuf>,
        fullname_weights: Option<PathBuf>,
        embeddings: Option<PathBuf>,
        min_count: u64,
    ) -> PyResult<Self> {
        let tables = ReferenceTables {
            surnames: tables::load_name_table_with(&surnames, NameKind::Surname, min_count).map_err(py_err)?,
            firstnames: firstnames
                .map(|p| tables::load_name_table_with(&p, NameKind::Firstname, min_count))
                .transpose()
                .map_err(py_err)?,
            geo: tables::load_geo_table(&geo).map_err(py_err)?,
        };
        let store = embeddings.as_deref().map(store_provider).transpose()?;
        let load = |p: Option<PathBuf>| p.map(|p| load_model(&p, store.as_ref())).transpose();
        let models = PriorModels {
            surname: load(surname_weights)?,
            firstname: load(firstname_weights)?,
            fullname: load(fullname_weights)?,
        };
        Ok(Predictor { tables, models })
    }

    /// Posterior for one voter. `method` is one of `bisg`, `bifsg`,
    /// `surname-embed`, `surname-first-embed`, `fullname-embed`,
    /// `fullname-embed-all`.
    #[pyo3(signature = (first, last, geo, middle = "", method = "bisg"))]
    fn predict<'py>(
        &self,
        py: Python<'py>,
        first: &str,
        last: &str,
        geo: &str,
        middle: &str,
        method: &str,
    ) -> PyResult<Bound<'py, PyDict>> {
        let method: Method = method.parse().map_err(py_err)?;
        let voter = VoterRecord {
            id: String::new(),
            first: first.into(),
            middle: middle.into(),
            last: last.into(),
            geo: geo.into(),
            race: None,
        };
        let p = posterior::ebisg_posterior(&voter, method, &self.tables, &self.models).map_err(py_err)?;
        posterior_dict(py, &p)
    }

    /// Posteriors for every voter in a CSV file, as a list of dicts with
    /// `id`, `posterior` and match flags; failed records carry `error`.
    #[pyo3(signature = (voters, method = "bisg"))]
    fn predict_file<'py>(&self, py: Python<'py>, voters: PathBuf, method: &str) -> PyResult<Vec<Bound<'py, PyDict>>> {
        let method: Method = method.parse().map_err(py_err)?;
        let records = tables::load_voters(&voters).map_err(py_err)?;
        self.models.check_for(method, &self.tables).map_err(py_err)?;
        records
            .iter()
            .map(|v| {
                let d = match posterior::ebisg_posterior(v, method, &self.tables, &self.models) {
                    Ok(p) => posterior_dict(py, &p)?,
                    Err(e) => {
                        let d = PyDict::new(py);
                        d.set_item("error", e.to_string())?;
                        d
                    }
                };
                d.set_item("id", &v.id)?;
                Ok(d)
            })
            .collect()
    }
}

#[pymodule]
fn ebisg(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("RACES", Race::ALL.iter().map(|r| r.label()).collect::<Vec<_>>())?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add_function(wrap_pyfunction!(normalize_name, m)?)?;
    m.add_function(wrap_pyfunction!(bisg_posterior, m)?)?;
    m.add_function(wrap_pyfunction!(bifsg_posterior, m)?)?;
    m.add_function(wrap_pyfunction!(embed_name, m)?)?;
    m.add_function(wrap_pyfunction!(run_cli, m)?)?;
    m.add_class::<NameTable>()?;
    m.add_class::<GeoTable>()?;
    m.add_class::<EmbeddingStore>()?;
    m.add_class::<PriorModel>()?;
    m.add_class::<Predictor>()?;
    Ok(())
}
