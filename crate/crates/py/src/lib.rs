use std::collections::BTreeMap;
use std::path::PathBuf;

use jpgnet_core::cli::{checkpoint_path, exit_code, load_gen, load_pfu, load_uaf};
use jpgnet_core::data::{self, Bucket};
use jpgnet_core::eval::{self, Pipeline};
use jpgnet_core::filter::{self, Reducer};
use jpgnet_core::nn::{PfuNet, ToyGenerator, UafNet};
use jpgnet_core::train::{self, NetKind};
use jpgnet_core::{Error, Tensor};
use pyo3::exceptions::{PyArithmeticError, PyOSError, PyValueError};
use pyo3::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn to_py(e: Error) -> PyErr {
    let msg = e.to_string();
    match exit_code(&e) {
        3 => PyOSError::new_err(msg),
        5 => PyArithmeticError::new_err(msg),
        _ => PyValueError::new_err(msg),
    }
}

/// Dense NCHW array of f64 values.
#[pyclass(name = "Tensor", module = "jpgnet", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyTensor(Tensor);

#[pymethods]
impl PyTensor {
    #[new]
    fn new(data: Vec<f64>, shape: Vec<usize>) -> PyResult<Self> {
        Tensor::new(shape, data).map(PyTensor).map_err(to_py)
    }

    #[staticmethod]
    fn zeros(shape: Vec<usize>) -> Self {
        PyTensor(Tensor::zeros(&shape))
    }

    #[staticmethod]
    fn full(shape: Vec<usize>, value: f64) -> Self {
        PyTensor(Tensor::full(&shape, value))
    }

    #[getter]
    fn shape(&self) -> Vec<usize> {
        self.0.dims().to_vec()
    }

    /// Values in row-major order.
    fn tolist(&self) -> Vec<f64> {
        self.0.data().to_vec()
    }

    fn max_abs_diff(&self, other: &PyTensor) -> f64 {
        self.0.max_abs_diff(&other.0)
    }

    fn __len__(&self) -> usize {
        self.0.len()
    }

    fn __eq__(&self, other: &PyTensor) -> bool {
        self.0 == other.0
    }

    fn __repr__(&self) -> String {
        format!("Tensor(shape={:?})", self.0.dims())
    }
}

fn reducer(name: &str) -> PyResult<Reducer> {
    name.parse().map_err(to_py)
}

fn bucket(name: &str) -> PyResult<Bucket> {
    name.parse().map_err(to_py)
}

#[pyfunction]
fn apply_pixelwise_filter(py: Python<'_>, img: &PyTensor, kernels: &PyTensor, k: usize) -> PyResult<PyTensor> {
    let (img, kernels) = (&img.0, &kernels.0);
    py.detach(|| filter::apply_pixelwise_filter(img, kernels, k)).map(PyTensor).map_err(to_py)
}

#[pyfunction]
fn apply_fusion(py: Python<'_>, i1: &PyTensor, i2: &PyTensor, fusion: &PyTensor, k: usize) -> PyResult<PyTensor> {
    let (i1, i2, fusion) = (&i1.0, &i2.0, &fusion.0);
    py.detach(|| filter::apply_fusion(i1, i2, fusion, k)).map(PyTensor).map_err(to_py)
}

#[pyfunction]
fn identity_kernel_field(h: usize, w: usize, c: usize, k: usize) -> PyResult<PyTensor> {
    filter::identity_kernel_field(h, w, c, k).map(PyTensor).map_err(to_py)
}

#[pyfunction]
#[pyo3(signature = (kernels, reducer = "avg"))]
fn compute_uncertainty_map(kernels: &PyTensor, reducer: &str) -> PyResult<PyTensor> {
    filter::compute_uncertainty_map(&kernels.0, self::reducer(reducer)?).map(PyTensor).map_err(to_py)
}

#[pyfunction]
fn naive_fuse(i1: &PyTensor, i2: &PyTensor, u: &PyTensor) -> PyResult<PyTensor> {
    filter::naive_fuse(&i1.0, &i2.0, &u.0).map(PyTensor).map_err(to_py)
}

#[pyfunction]
fn psnr(x: &PyTensor, y: &PyTensor) -> PyResult<f64> {
    eval::psnr(&x.0, &y.0).map_err(to_py)
}

#[pyfunction]
fn ssim(x: &PyTensor, y: &PyTensor) -> PyResult<f64> {
    train::ssim(&x.0, &y.0).map_err(to_py)
}

#[pyfunction]
#[pyo3(signature = (pred, target, lambda_ssim = 0.2))]
fn loss_l1_ssim(pred: &PyTensor, target: &PyTensor, lambda_ssim: f64) -> PyResult<f64> {
    train::loss_l1_ssim(&pred.0, &target.0, lambda_ssim).map_err(to_py)
}

/// Irregular hole mask (1×1×H×W of 0/1) whose hole ratio falls in `bucket`.
#[pyfunction]
fn generate_irregular_mask(h: usize, w: usize, bucket: &str, seed: u64) -> PyResult<PyTensor> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mask = data::generate_irregular_mask(h, w, self::bucket(bucket)?, &mut rng).map_err(to_py)?;
    Ok(PyTensor(mask.to_tensor()))
}

#[pyfunction]
fn classify_mask_ratio(mask: &PyTensor) -> PyResult<&'static str> {
    let mask = data::Mask::from_tensor(&mask.0).map_err(to_py)?;
    data::classify_mask_ratio(&mask).map(Bucket::name).map_err(to_py)
}

#[pyfunction]
fn toy_dataset(n: usize, size: usize, seed: u64) -> PyResult<Vec<PyTensor>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(data::toy_dataset(n, size, &mut rng).map_err(to_py)?.into_iter().map(PyTensor).collect())
}

#[pyfunction]
fn load_image(path: PathBuf) -> PyResult<PyTensor> {
    data::load_image(path).map(PyTensor).map_err(to_py)
}

#[pyfunction]
fn save_image(path: PathBuf, img: &PyTensor) -> PyResult<()> {
    data::save_image(path, &img.0).map_err(to_py)
}

/// Runs the command-line tool with `args` (without the program name) and returns its exit status.
#[pyfunction]
fn run_cli(py: Python<'_>, args: Vec<String>) -> i32 {
    py.detach(|| jpgnet_core::cli::run(std::iter::once("jpgnet".to_string()).chain(args)))
}

/// Trained inpainting pipeline loaded from a checkpoint directory.
#[pyclass(name = "Model", module = "jpgnet", frozen)]
struct PyModel {
    pfu: PfuNet,
    gen: ToyGenerator,
    uaf: UafNet,
    reducer: Reducer,
}

#[pymethods]
impl PyModel {
    #[new]
    #[pyo3(signature = (ckpt_dir, reducer = "avg"))]
    fn new(ckpt_dir: PathBuf, reducer: &str) -> PyResult<Self> {
        Ok(PyModel {
            pfu: load_pfu(&checkpoint_path(&ckpt_dir, NetKind::Pfu)).map_err(to_py)?,
            gen: load_gen(&checkpoint_path(&ckpt_dir, NetKind::Gen)).map_err(to_py)?,
            uaf: load_uaf(&checkpoint_path(&ckpt_dir, NetKind::Uaf)).map_err(to_py)?,
            reducer: self::reducer(reducer)?,
        })
    }

    #[getter]
    fn kernel_size(&self) -> usize {
        self.pfu.kernel_size()
    }

    /// Filtered, generated, naive and fused images plus the uncertainty map and kernels.
    fn inpaint(&self, py: Python<'_>, img: &PyTensor, mask: &PyTensor) -> PyResult<BTreeMap<&'static str, PyTensor>> {
        let input = data::corrupt_batch(&img.0, &mask.0).map_err(to_py)?;
        let (pfu, gen, uaf, reducer) = (&self.pfu, &self.gen, &self.uaf, self.reducer);
        let out = py
            .detach(|| Pipeline { pfu, uaf, gen, reducer }.run(&input, &mask.0))
            .map_err(to_py)?;
        Ok(BTreeMap::from([
            ("filtered", PyTensor(out.filtered)),
            ("generated", PyTensor(out.generated)),
            ("uncertainty", PyTensor(out.uncertainty)),
            ("kernels", PyTensor(out.kernels)),
            ("naive", PyTensor(out.naive)),
            ("fused", PyTensor(out.fused)),
        ]))
    }
}

#[pymodule]
pub fn jpgnet(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyTensor>()?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(apply_pixelwise_filter, m)?)?;
    m.add_function(wrap_pyfunction!(apply_fusion, m)?)?;
    m.add_function(wrap_pyfunction!(identity_kernel_field, m)?)?;
    m.add_function(wrap_pyfunction!(compute_uncertainty_map, m)?)?;
    m.add_function(wrap_pyfunction!(naive_fuse, m)?)?;
    m.add_function(wrap_pyfunction!(psnr, m)?)?;
    m.add_function(wrap_pyfunction!(ssim, m)?)?;
    m.add_function(wrap_pyfunction!(loss_l1_ssim, m)?)?;
    m.add_function(wrap_pyfunction!(generate_irregular_mask, m)?)?;
    m.add_function(wrap_pyfunction!(classify_mask_ratio, m)?)?;
    m.add_function(wrap_pyfunction!(toy_dataset, m)?)?;
    m.add_function(wrap_pyfunction!(load_image, m)?)?;
    m.add_function(wrap_pyfunction!(save_image, m)?)?;
    m.add_function(wrap_pyfunction!(run_cli, m)?)?;
    Ok(())
}
