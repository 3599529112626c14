use std::path::PathBuf;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use tsgnn_core::cli::checks::{self, SymcheckModels};
use tsgnn_core::graphdata::{self, gen_sbm, load_dataset, save_dataset, PreprocessConfig, SbmParams};
use tsgnn_core::symmetry::{apply_to_graph, equivariant_basis, sample_perm_triple, SymmetryGroup};
use tsgnn_core::trainer::{self, TrainConfig};
use tsgnn_core::tsgnn::{Aggregator, Arch, Checkpoint, Pooling, TsGnnModel};

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn runtime_err(e: impl std::fmt::Display) -> PyErr {
    PyRuntimeError::new_err(e.to_string())
}

fn parse_enum<T: serde::de::DeserializeOwned>(s: &str) -> PyResult<T> {
    serde_json::from_value(serde_json::Value::String(s.to_owned())).map_err(value_err)
}

/// Converts a JSON value into plain Python objects through `json.loads`.
fn to_py<'py>(py: Python<'py>, v: &serde_json::Value) -> PyResult<Bound<'py, PyAny>> {
    py.import("json")?.call_method1("loads", (v.to_string(),))
}

#[pyclass(name = "Graph", module = "tsgnn", frozen, from_py_object)]
#[derive(Clone)]
struct PyGraph {
    inner: graphdata::Graph,
}

#[pymethods]
impl PyGraph {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: load_dataset(&path).map_err(value_err)?,
        })
    }

    #[staticmethod]
    #[pyo3(signature = (classes, nodes_per_class, p_in, p_out, feature_dim, noise, seed=0))]
    fn sbm(
        classes: usize,
        nodes_per_class: usize,
        p_in: f64,
        p_out: f64,
        feature_dim: usize,
        noise: f64,
        seed: u64,
    ) -> PyResult<Self> {
        let inner = gen_sbm(&SbmParams {
            classes,
            nodes_per_class,
            p_in,
            p_out,
            feature_dim,
            noise,
            seed,
        })
        .map_err(value_err)?;
        Ok(Self { inner })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        save_dataset(&self.inner, &path).map_err(runtime_err)
    }

    #[pyo3(signature = (l2_normalize=true, pca_dim=None))]
    fn preprocess(&self, l2_normalize: bool, pca_dim: Option<usize>) -> PyResult<Self> {
        let cfg = PreprocessConfig {
            l2_normalize,
            pca_dim,
        };
        Ok(Self {
            inner: cfg.apply(&self.inner).map_err(value_err)?,
        })
    }

    /// Copy relabeled by a random node, feature and label permutation.
    fn permuted(&self, seed: u64) -> PyResult<Self> {
        let g = &self.inner;
        let p = sample_perm_triple(g.num_nodes(), g.feature_dim(), g.num_classes(), seed);
        Ok(Self {
            inner: apply_to_graph(&p, g).map_err(value_err)?,
        })
    }

    #[getter]
    fn num_nodes(&self) -> usize {
        self.inner.num_nodes()
    }

    #[getter]
    fn num_edges(&self) -> usize {
        self.inner.num_edges()
    }

    #[getter]
    fn feature_dim(&self) -> usize {
        self.inner.feature_dim()
    }

    #[getter]
    fn num_classes(&self) -> usize {
        self.inner.num_classes()
    }

    #[getter]
    fn labels(&self) -> Vec<usize> {
        self.inner.labels().to_vec()
    }

    #[getter]
    fn features(&self) -> Vec<Vec<f64>> {
        let x = self.inner.features();
        (0..self.inner.num_nodes()).map(|i| x.row(i).to_vec()).collect()
    }

    #[getter]
    fn edges(&self) -> Vec<(usize, usize)> {
        self.inner.edge_list()
    }

    #[getter]
    fn splits<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let s = self.inner.splits();
        let d = PyDict::new(py);
        d.set_item("train", s.train.clone())?;
        d.set_item("val", s.val.clone())?;
        d.set_item("test", s.test.clone())?;
        Ok(d)
    }

    fn __repr__(&self) -> String {
        format!(
            "Graph(nodes={}, edges={}, features={}, classes={})",
            self.inner.num_nodes(),
            self.inner.num_edges(),
            self.inner.feature_dim(),
            self.inner.num_classes()
        )
    }
}

#[pyclass(name = "Model", module = "tsgnn", frozen, from_py_object)]
#[derive(Clone)]
struct PyModel {
    inner: TsGnnModel,
    preprocess: PreprocessConfig,
}

#[pymethods]
impl PyModel {
    #[staticmethod]
    #[pyo3(signature = (layers=2, hidden=16, aggregator="mean", pooling="mean", mixers=true, seed=0))]
    fn init(
        layers: usize,
        hidden: usize,
        aggregator: &str,
        pooling: &str,
        mixers: bool,
        seed: u64,
    ) -> PyResult<Self> {
        let agg: Aggregator = parse_enum(aggregator)?;
        let pool: Pooling = parse_enum(pooling)?;
        let arch = Arch {
            mixers,
            ..Arch::new(layers, hidden, agg, pool)
        };
        let mut rng = tsgnn_core::rng::SeedStream::new(seed).rng("init");
        Ok(Self {
            inner: TsGnnModel::init(arch, &mut rng).map_err(value_err)?,
            preprocess: PreprocessConfig::default(),
        })
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        let ck = Checkpoint::from_json(text).map_err(value_err)?;
        Ok(Self {
            inner: ck.to_model().map_err(value_err)?,
            preprocess: ck.preprocess,
        })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Self::from_json(&std::fs::read_to_string(&path).map_err(runtime_err)?)
    }

    fn to_json(&self) -> String {
        Checkpoint::from_model(&self.inner, self.preprocess).to_json()
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        std::fs::write(&path, self.to_json()).map_err(runtime_err)
    }

    #[getter]
    fn num_parameters(&self) -> usize {
        use tsgnn_core::tsgnn::NodeModel;
        self.inner.parameters().iter().map(|p| p.len()).sum()
    }

    /// `N×C` logits with the labels of `visible` shown, the train split by
    /// default.
    #[pyo3(signature = (graph, visible=None))]
    fn predict(&self, graph: &PyGraph, visible: Option<Vec<usize>>) -> PyResult<Vec<Vec<f64>>> {
        let g = &graph.inner;
        let vis = visible.unwrap_or_else(|| g.splits().train.clone());
        if let Some(&bad) = vis.iter().find(|&&v| v >= g.num_nodes()) {
            return Err(value_err(format!("visible node {bad} out of range")));
        }
        let logits = trainer::predict(&self.inner, g, &vis).map_err(runtime_err)?;
        Ok((0..g.num_nodes()).map(|i| logits.row(i).to_vec()).collect())
    }

    /// `(correct, total)` on a split with every training label visible.
    #[pyo3(signature = (graph, split="test"))]
    fn correct_count(&self, graph: &PyGraph, split: &str) -> PyResult<(usize, usize)> {
        let s = graph.inner.splits();
        let idx = match split {
            "train" => &s.train,
            "val" => &s.val,
            "test" => &s.test,
            other => return Err(value_err(format!("unknown split {other:?}"))),
        };
        let c = trainer::correct_count(&self.inner, &graph.inner, idx).map_err(runtime_err)?;
        Ok((c, idx.len()))
    }

    #[pyo3(signature = (graph, split="test"))]
    fn evaluate(&self, graph: &PyGraph, split: &str) -> PyResult<f64> {
        let (c, n) = self.correct_count(graph, split)?;
        if n == 0 {
            return Err(value_err(format!("{split} split is empty")));
        }
        Ok(c as f64 / n as f64)
    }
}

/// Trains on already preprocessed graphs. Returns `(final, best, report)`
/// where the report is the JSON-lines text.
#[pyfunction]
#[pyo3(signature = (graphs, config="{}"))]
fn train(graphs: Vec<PyGraph>, config: &str) -> PyResult<(PyModel, PyModel, String)> {
    let cfg: TrainConfig = serde_json::from_str(config).map_err(value_err)?;
    let gs: Vec<_> = graphs.into_iter().map(|g| g.inner).collect();
    let t = trainer::train_on_graphs(&cfg, &gs).map_err(runtime_err)?;
    let wrap = |m| PyModel {
        inner: m,
        preprocess: cfg.preprocess,
    };
    Ok((wrap(t.model), wrap(t.best), t.report.to_json_lines()))
}

/// Dimension of the equivariant linear maps for a group string such as
/// `"triple:3,3,2"`, `"dss:3,2"` or `"deepsets:3"`.
#[pyfunction]
#[pyo3(signature = (group, k1=1, k2=1))]
fn basis_dimension(group: &str, k1: usize, k2: usize) -> PyResult<usize> {
    let g: SymmetryGroup = group.parse().map_err(value_err)?;
    Ok(equivariant_basis(g, k1, k2).map_err(value_err)?.dimension())
}

/// Equivariance check over every aggregator, pooling and mixer setting.
#[pyfunction]
#[pyo3(signature = (trials=100, tol=1e-9, seed=0, layers=2, hidden=4))]
fn symcheck<'py>(
    py: Python<'py>,
    trials: usize,
    tol: f64,
    seed: u64,
    layers: usize,
    hidden: usize,
) -> PyResult<Bound<'py, PyAny>> {
    let models = SymcheckModels::Random(checks::all_archs(layers, hidden));
    let r = checks::symcheck(&models, trials, tol, seed).map_err(runtime_err)?;
    to_py(py, &serde_json::to_value(r).map_err(runtime_err)?)
}

/// Runs the command line with `args` (without the program name) and
/// returns the exit code.
#[pyfunction]
fn run_cli(args: Vec<String>) -> i32 {
    tsgnn_core::cli::run_command(std::iter::once("tsgnn".to_owned()).chain(args))
}

#[pymodule]
fn tsgnn(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyGraph>()?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(basis_dimension, m)?)?;
    m.add_function(wrap_pyfunction!(symcheck, m)?)?;
    m.add_function(wrap_pyfunction!(run_cli, m)?)?;
    Ok(())
}
