//! Python module `biasblend`: model builders, the dense conversions of
//! structured layers, interpolation and a small synthetic training entry.
//!
//! Matrices cross the boundary as `(rows, cols, flat_row_major_list)`.

use biasblend::data::{synthetic, ChannelStats, Split, Variant};
use biasblend::model::{
    build_budget_priors, build_budgeted_mlps, build_imlp, build_mixer, build_scnn, build_smlp_for, extract_prior_fc,
    LayerKind, ModelSpec, PriorKind,
};
use biasblend::ops::conv::{conv2d_forward, ConvSpec};
use biasblend::structured::{build_patchify_matrix, build_transpose_matrix, conv_to_fc, expand_shared_weight, FcEquivalent, PatchGrid};
use biasblend::train::{run_interpolated_training, schedule_alpha, ScheduleSpec, TrainConfig};
use biasblend::{Rng, Tensor};
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

type Matrix = (usize, usize, Vec<f64>);

fn err(e: biasblend::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn tensor<T: biasblend::Scalar>(shape: &[usize], data: Vec<T>) -> PyResult<Tensor<T>> {
    Tensor::new(shape.to_vec(), data).map_err(err)
}

fn matrix<T: biasblend::Scalar>(fc: &FcEquivalent<T>) -> Matrix {
    let data = fc.matrix.data().iter().map(|v| v.to_f64().unwrap_or(f64::NAN)).collect();
    (fc.rows(), fc.cols(), data)
}

fn prior_kind(name: &str) -> PyResult<Option<PriorKind>> {
    match name {
        "cnn" => Ok(Some(PriorKind::Cnn)),
        "mixer" => Ok(Some(PriorKind::Mixer)),
        "none" => Ok(None),
        _ => Err(PyValueError::new_err(format!("unknown prior `{name}`; expected cnn, mixer or none"))),
    }
}

/// Layer stack of one architecture.
#[pyclass(name = "Spec", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PySpec {
    inner: ModelSpec,
}

#[pymethods]
impl PySpec {
    /// `s-mlp`, `s-cnn`, `mixer`, `i-mlp-cnn`, `i-mlp-mixer`, `mlp-1`,
    /// `mlp-2`, `cnn-1` or `cnn-2`.
    #[staticmethod]
    fn build(name: &str) -> PyResult<Self> {
        let inner = match name {
            "s-mlp" => build_smlp_for(PriorKind::Cnn),
            "s-cnn" => build_scnn(),
            "mixer" => build_mixer(),
            "i-mlp-cnn" => build_imlp(PriorKind::Cnn),
            "i-mlp-mixer" => build_imlp(PriorKind::Mixer),
            "mlp-1" => build_budgeted_mlps().map(|p| p.0),
            "mlp-2" => build_budgeted_mlps().map(|p| p.1),
            "cnn-1" => build_budget_priors().map(|p| p.0),
            "cnn-2" => build_budget_priors().map(|p| p.1),
            _ => return Err(PyValueError::new_err(format!("unknown architecture `{name}`"))),
        }
        .map_err(err)?;
        Ok(Self { inner })
    }

    fn param_count(&self) -> usize {
        self.inner.param_count()
    }

    fn interpolable_param_count(&self) -> usize {
        self.inner.interpolable_param_count()
    }

    fn input_dim(&self) -> usize {
        self.inner.input_dim()
    }

    fn classes(&self) -> usize {
        self.inner.classes()
    }

    /// `(kind, in_shape, out_shape, interpolable)` per layer.
    fn layers(&self) -> Vec<(String, Vec<usize>, Vec<usize>, bool)> {
        self.inner
            .layers
            .iter()
            .map(|l| {
                let kind = match l.kind {
                    LayerKind::FullyConnected => "fc",
                    LayerKind::Conv2d(_) => "conv2d",
                    LayerKind::LinearPatchEmbed { .. } => "patch-embed",
                    LayerKind::TokenMix => "token-mix",
                    LayerKind::ChannelMix => "channel-mix",
                    LayerKind::Classifier { .. } => "classifier",
                };
                (kind.to_string(), l.in_shape.clone(), l.out_shape.clone(), l.interpolable)
            })
            .collect()
    }
}

/// A model with 32-bit parameters.
#[pyclass(name = "Model")]
struct PyModel {
    inner: biasblend::model::Model,
}

#[pymethods]
impl PyModel {
    #[new]
    fn new(spec: &PySpec, seed: u64) -> Self {
        Self {
            inner: spec.inner.instantiate(&mut Rng::new(seed)),
        }
    }

    fn param_count(&self) -> usize {
        self.inner.param_count()
    }

    fn num_layers(&self) -> usize {
        self.inner.layers.len()
    }

    /// `(shape, flat)` of layer `i`'s weight.
    fn weight(&self, i: usize) -> PyResult<(Vec<usize>, Vec<f32>)> {
        let l = self.inner.layers.get(i).ok_or_else(|| PyValueError::new_err("layer index out of range"))?;
        Ok((l.weight.shape().to_vec(), l.weight.data().to_vec()))
    }

    fn set_weight(&mut self, i: usize, data: Vec<f32>) -> PyResult<()> {
        let l = self.inner.layers.get_mut(i).ok_or_else(|| PyValueError::new_err("layer index out of range"))?;
        if data.len() != l.weight.len() {
            return Err(PyValueError::new_err(format!("expected {} values, got {}", l.weight.len(), data.len())));
        }
        l.weight.data_mut().copy_from_slice(&data);
        Ok(())
    }

    fn zero_biases(&mut self) {
        self.inner.zero_biases();
    }

    /// Logits for `batch` flattened inputs, row-major.
    fn forward(&self, x: Vec<f32>, batch: usize) -> PyResult<Vec<f32>> {
        let dim = self.inner.spec().input_dim();
        let x = tensor(&[batch, dim], x)?;
        Ok(self.inner.forward(&x).map_err(err)?.into_data())
    }

    /// Dense equivalents of every interpolable layer of a prior.
    fn prior_matrices(&self) -> PyResult<Vec<Matrix>> {
        Ok(extract_prior_fc(&self.inner).map_err(err)?.iter().map(matrix).collect())
    }
}

/// Dense `W_F` of a bias-free convolution on a `(c, h, w)` input, in 64-bit.
#[pyfunction]
fn conv_matrix(
    kernel: Vec<f64>,
    kernel_shape: (usize, usize, usize, usize),
    stride: usize,
    padding: usize,
    in_shape: (usize, usize, usize),
) -> PyResult<Matrix> {
    let (o, c, k, k2) = kernel_shape;
    if k != k2 {
        return Err(PyValueError::new_err("kernels must be square"));
    }
    let spec = ConvSpec::new(c, o, k, stride, padding);
    let kernel = tensor(&[o, c, k, k], kernel)?;
    let fc = conv_to_fc(&kernel, &spec, [in_shape.0, in_shape.1, in_shape.2]).map_err(err)?;
    Ok(matrix(&fc))
}

/// Direct convolution, returning `(out_shape, flat)`.
#[pyfunction]
fn conv2d(
    x: Vec<f64>,
    in_shape: (usize, usize, usize),
    kernel: Vec<f64>,
    kernel_shape: (usize, usize, usize, usize),
    stride: usize,
    padding: usize,
) -> PyResult<(Vec<usize>, Vec<f64>)> {
    let (o, c, k, _) = kernel_shape;
    let spec = ConvSpec::new(c, o, k, stride, padding);
    let x = tensor(&[in_shape.0, in_shape.1, in_shape.2], x)?;
    let kernel = tensor(&[o, c, k, k], kernel)?;
    let y = conv2d_forward(&x, &kernel, &spec).map_err(err)?;
    Ok((y.shape().to_vec(), y.into_data()))
}

#[pyfunction]
#[pyo3(signature = (height, width, patch, channels = 1))]
fn patchify_matrix(height: usize, width: usize, patch: usize, channels: usize) -> PyResult<Matrix> {
    let grid = PatchGrid::with_channels(height, width, patch, channels).map_err(err)?;
    Ok(matrix(&build_patchify_matrix::<f64>(grid)))
}

#[pyfunction]
fn transpose_matrix(height: usize, width: usize) -> PyResult<Matrix> {
    Ok(matrix(&build_transpose_matrix::<f64>(height, width).map_err(err)?))
}

/// `diag(w_r, …, w_r)` for a `[c_out, c_in]` weight.
#[pyfunction]
fn shared_weight_matrix(w_r: Vec<f64>, c_out: usize, c_in: usize, repeats: usize) -> PyResult<Matrix> {
    let w = tensor(&[c_out, c_in], w_r)?;
    Ok(matrix(&expand_shared_weight(&w, repeats).map_err(err)?))
}

#[pyfunction]
fn interpolate_weights(w: Vec<f64>, w_prior: Vec<f64>, alpha: f64) -> PyResult<Vec<f64>> {
    let n = w.len();
    let a = tensor(&[n], w)?;
    let b = tensor(&[w_prior.len()], w_prior)?;
    Ok(biasblend::train::interpolate_weights(&a, &b, alpha).map_err(err)?.into_data())
}

/// α at 0-based epoch `t` of `t_max` for the decay `a·(1 − t/t_max)^k`.
#[pyfunction]
fn decay_alpha(a: f64, k: f64, t: usize, t_max: usize) -> PyResult<f64> {
    schedule_alpha(&ScheduleSpec::decay(a, k), t, t_max).map_err(err)
}

/// `(name, passed, detail)` for each built-in check.
#[pyfunction]
fn selftest() -> Vec<(String, bool, String)> {
    biasblend::selftest::run_selftest(None)
        .into_iter()
        .map(|c| (c.name.to_string(), c.passed, c.detail))
        .collect()
}

/// Trains a pair on generated CIFAR-shaped data and returns the metrics
/// rows as `(epoch, model, train_loss, test_top1, alpha)`.
#[pyfunction]
#[pyo3(signature = (prior = "cnn", alpha = 0.5, epochs = 2, train_size = 100, test_size = 50, seed = 0))]
fn train_synthetic(
    py: Python<'_>,
    prior: &str,
    alpha: f64,
    epochs: usize,
    train_size: usize,
    test_size: usize,
    seed: u64,
) -> PyResult<Vec<(usize, String, f64, f64, f64)>> {
    let cfg = TrainConfig {
        epochs,
        batch_size: 25,
        learning_rate: 1e-3,
        seed,
        schedule: ScheduleSpec::constant(alpha),
        prior: prior_kind(prior)?,
        ..TrainConfig::default()
    };
    let out = py
        .detach(|| {
            let train = synthetic(Variant::Cifar10, Split::Train, train_size, seed);
            let test = synthetic(Variant::Cifar10, Split::Test, test_size, seed);
            let stats = ChannelStats::compute(&train);
            run_interpolated_training(&cfg, &train.normalized(&stats), &test.normalized(&stats))
        })
        .map_err(err)?;
    Ok(out
        .records
        .into_iter()
        .map(|r| (r.epoch, r.model, r.train_loss, r.test_top1, r.alpha))
        .collect())
}

#[pymodule]
#[pyo3(name = "biasblend")]
fn biasblend_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PySpec>()?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(conv_matrix, m)?)?;
    m.add_function(wrap_pyfunction!(conv2d, m)?)?;
    m.add_function(wrap_pyfunction!(patchify_matrix, m)?)?;
    m.add_function(wrap_pyfunction!(transpose_matrix, m)?)?;
    m.add_function(wrap_pyfunction!(shared_weight_matrix, m)?)?;
    m.add_function(wrap_pyfunction!(interpolate_weights, m)?)?;
    m.add_function(wrap_pyfunction!(decay_alpha, m)?)?;
    m.add_function(wrap_pyfunction!(selftest, m)?)?;
    m.add_function(wrap_pyfunction!(train_synthetic, m)?)?;
    Ok(())
}
