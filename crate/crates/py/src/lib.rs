//! Python bindings: key sets, the transform pipeline, the cipher, the toy
//! classifier and the analysis helpers. Images cross the boundary as flat
//! channel-major lists of floats in [0, 1] plus a `(c, h, w)` shape.

use ::blockkey as core;
use core::analysis::{self, Direction};
use core::dataset::generate_synthetic;
use core::learner::{self, evaluate};
use core::{Error, ImageTensor, TrainConfig, TransformSet};
use num_bigint::BigUint;
use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Io(_) | Error::File { .. } => PyIOError::new_err(e.to_string()),
        Error::Divergence { .. } => PyRuntimeError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn parse_set(s: &str) -> PyResult<TransformSet> {
    s.parse().map_err(to_py)
}

fn image(data: Vec<f32>, shape: (usize, usize, usize)) -> PyResult<ImageTensor> {
    ImageTensor::new(shape.0, shape.1, shape.2, data).map_err(to_py)
}

#[pyclass(name = "KeySet", module = "blockkey", from_py_object)]
#[derive(Clone)]
struct PyKeySet(core::KeySet);

#[pymethods]
impl PyKeySet {
    #[staticmethod]
    #[pyo3(signature = (block_size, transforms, seed, channels = 3, password = "password"))]
    fn generate(
        block_size: usize,
        transforms: &str,
        seed: u64,
        channels: usize,
        password: &str,
    ) -> PyResult<Self> {
        let set = parse_set(transforms)?;
        core::KeySet::generate_with_password(block_size, channels, set, seed, password)
            .map(PyKeySet)
            .map_err(to_py)
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        core::KeySet::from_json(text).map(PyKeySet).map_err(to_py)
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        core::KeySet::load(path).map(PyKeySet).map_err(to_py)
    }

    fn to_json(&self) -> PyResult<String> {
        self.0.to_json().map_err(to_py)
    }

    fn save(&self, path: &str) -> PyResult<()> {
        self.0.save(path).map_err(to_py)
    }

    fn random_incorrect(&self, seed: u64) -> Self {
        PyKeySet(self.0.random_incorrect(seed))
    }

    #[getter]
    fn block_size(&self) -> usize {
        self.0.block_size()
    }

    #[getter]
    fn channels(&self) -> usize {
        self.0.channels()
    }

    #[getter]
    fn transforms(&self) -> String {
        self.0.transforms().to_string()
    }

    #[getter]
    fn alpha(&self) -> Option<Vec<usize>> {
        self.0.alpha().map(<[usize]>::to_vec)
    }

    #[getter]
    fn beta(&self) -> Option<Vec<bool>> {
        self.0.beta().map(<[bool]>::to_vec)
    }

    #[getter]
    fn gamma(&self) -> Option<Vec<bool>> {
        self.0.gamma().map(<[bool]>::to_vec)
    }

    fn __eq__(&self, other: &Self) -> bool {
        self.0 == other.0
    }

    fn __repr__(&self) -> String {
        format!(
            "KeySet(M={}, channels={}, transforms='{}')",
            self.0.block_size(),
            self.0.channels(),
            self.0.transforms()
        )
    }
}

#[pyclass(name = "Pipeline", module = "blockkey", from_py_object)]
#[derive(Clone)]
struct PyPipeline(core::TransformPipeline);

#[pymethods]
impl PyPipeline {
    #[new]
    fn new(key: &PyKeySet) -> Self {
        PyPipeline(core::TransformPipeline::new(key.0.clone()))
    }

    /// Transform one image given as a flat channel-major list.
    fn transform(&self, data: Vec<f32>, shape: (usize, usize, usize)) -> PyResult<Vec<f32>> {
        let out = self.0.transform(&image(data, shape)?).map_err(to_py)?;
        Ok(out.into_data())
    }

    /// Undo SHF and NP; raises for pipelines containing FFX.
    fn invert(&self, data: Vec<f32>, shape: (usize, usize, usize)) -> PyResult<Vec<f32>> {
        let out = self.0.invert(&image(data, shape)?).map_err(to_py)?;
        Ok(out.into_data())
    }
}

#[pyclass(name = "FeistelCipher", module = "blockkey")]
struct PyCipher(core::FeistelCipher);

#[pymethods]
impl PyCipher {
    #[new]
    #[pyo3(signature = (password = "password"))]
    fn new(password: &str) -> Self {
        PyCipher(core::FeistelCipher::new(password))
    }

    fn encrypt(&self, n: u16) -> PyResult<u16> {
        self.0.encrypt(n).map_err(to_py)
    }

    fn decrypt(&self, n: u16) -> PyResult<u16> {
        self.0.decrypt(n).map_err(to_py)
    }
}

#[pyclass(name = "Dataset", module = "blockkey")]
struct PyDataset(core::Dataset);

#[pymethods]
impl PyDataset {
    #[staticmethod]
    #[pyo3(signature = (classes, per_class, size = 32, channels = 3, seed = 7))]
    fn synthetic(classes: usize, per_class: usize, size: usize, channels: usize, seed: u64) -> PyResult<Self> {
        generate_synthetic(classes, per_class, (channels, size, size), seed)
            .map(PyDataset)
            .map_err(to_py)
    }

    #[staticmethod]
    fn load(manifest: &str) -> PyResult<Self> {
        core::Dataset::load_manifest(manifest, None).map(PyDataset).map_err(to_py)
    }

    fn split(&self, train_fraction: f64, seed: u64) -> PyResult<(PyDataset, PyDataset)> {
        let (a, b) = self.0.split(train_fraction, seed).map_err(to_py)?;
        Ok((PyDataset(a), PyDataset(b)))
    }

    fn image(&self, index: usize) -> PyResult<Vec<f32>> {
        let item = self
            .0
            .items()
            .get(index)
            .ok_or_else(|| PyValueError::new_err(format!("index {index} out of range")))?;
        Ok(item.image.data().to_vec())
    }

    #[getter]
    fn labels(&self) -> Vec<usize> {
        self.0.labels()
    }

    #[getter]
    fn shape(&self) -> (usize, usize, usize) {
        self.0.dims()
    }

    #[getter]
    fn classes(&self) -> usize {
        self.0.classes()
    }

    fn __len__(&self) -> usize {
        self.0.len()
    }
}

#[pyclass(name = "Classifier", module = "blockkey")]
struct PyClassifier(core::Classifier);

#[pymethods]
impl PyClassifier {
    #[new]
    #[pyo3(signature = (shape, classes, seed = 1))]
    fn new(shape: (usize, usize, usize), classes: usize, seed: u64) -> PyResult<Self> {
        core::Classifier::new(shape, classes, seed).map(PyClassifier).map_err(to_py)
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        core::Classifier::load(path).map(PyClassifier).map_err(to_py)
    }

    fn save(&self, path: &str) -> PyResult<()> {
        self.0.save(path).map_err(to_py)
    }

    fn predict_proba(&self, data: Vec<f32>, shape: (usize, usize, usize)) -> PyResult<Vec<f32>> {
        self.0.predict_proba(&image(data, shape)?).map_err(to_py)
    }

    fn predict(&self, data: Vec<f32>, shape: (usize, usize, usize)) -> PyResult<usize> {
        self.0.predict(&image(data, shape)?).map_err(to_py)
    }

    #[pyo3(signature = (data, key = None))]
    fn evaluate(&self, data: &PyDataset, key: Option<&PyKeySet>) -> PyResult<f64> {
        let pipeline = key.map(|k| core::TransformPipeline::new(k.0.clone()));
        evaluate(&self.0, &data.0, pipeline.as_ref()).map_err(to_py)
    }

    #[getter]
    fn param_count(&self) -> usize {
        self.0.params().len()
    }
}

/// Train a fresh classifier; returns it with the per-epoch mean loss.
#[pyfunction]
#[pyo3(signature = (data, key = None, epochs = 8, learning_rate = 0.01, batch_size = 64, seed = 3, model_seed = 1))]
fn train(
    py: Python<'_>,
    data: &PyDataset,
    key: Option<&PyKeySet>,
    epochs: usize,
    learning_rate: f64,
    batch_size: usize,
    seed: u64,
    model_seed: u64,
) -> PyResult<(PyClassifier, Vec<f64>)> {
    let config = TrainConfig {
        epochs,
        learning_rate,
        batch_size,
        seed,
        ..TrainConfig::default()
    };
    let pipeline = key.map(|k| core::TransformPipeline::new(k.0.clone()));
    let d = &data.0;
    let (model, history) = py
        .detach(|| {
            let fresh = core::Classifier::new(d.dims(), d.classes(), model_seed)?;
            learner::train(fresh, d, pipeline.as_ref(), &config)
        })
        .map_err(to_py)?;
    Ok((PyClassifier(model), history.epoch_loss))
}

#[pyfunction]
#[pyo3(signature = (block_size, transforms, channels = 3))]
fn key_space(block_size: usize, transforms: &str, channels: usize) -> PyResult<BigUint> {
    Ok(core::key_space(block_size, channels, parse_set(transforms)?))
}

#[pyfunction]
#[pyo3(signature = (block_size, channels = 3))]
fn pair_count(block_size: usize, channels: usize) -> PyResult<u64> {
    core::pair_count(block_size, channels).map_err(to_py)
}

#[pyfunction]
#[pyo3(signature = (data, shape, direction = "horizontal", samples = 2048, seed = 0))]
fn pixel_correlation(
    data: Vec<f32>,
    shape: (usize, usize, usize),
    direction: &str,
    samples: usize,
    seed: u64,
) -> PyResult<f64> {
    let d: Direction = direction.parse().map_err(to_py)?;
    analysis::pixel_correlation(&image(data, shape)?, d, samples, seed)
        .map(|r| r.pearson_r)
        .map_err(to_py)
}

#[pymodule]
#[pyo3(name = "blockkey")]
fn blockkey_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyKeySet>()?;
    m.add_class::<PyPipeline>()?;
    m.add_class::<PyCipher>()?;
    m.add_class::<PyDataset>()?;
    m.add_class::<PyClassifier>()?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(key_space, m)?)?;
    m.add_function(wrap_pyfunction!(pair_count, m)?)?;
    m.add_function(wrap_pyfunction!(pixel_correlation, m)?)?;
    Ok(())
}
