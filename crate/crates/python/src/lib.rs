//! Python bindings. Frames are float64 arrays in `[0, 1]`: images are
//! `[C, H, W]`, sequences `[T, C, H, W]`, flows `[2, H, W]` (horizontal
//! displacement first).

use std::path::PathBuf;

use numpy::ndarray::{Array2, Array3, Array4, ArrayView3, ArrayView4};
use numpy::{IntoPyArray, PyArray2, PyArray3, PyArray4, PyReadonlyArray3, PyReadonlyArray4};
use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use uvsr_core::degradation::{degrade_sequence, DegradationSpec};
use uvsr_core::evaluation;
use uvsr_core::networks::{count_parameters as count, Checkpoint, ModelKind, Networks};
use uvsr_core::operators::{self, make_gaussian_kernel, FlowField, ImageTensor, RadiusPolicy, ScaleFactor, Space};
use uvsr_core::tensor::Real;
use uvsr_core::unrolled::{self, SequenceFlows, UnrolledConfig};
use uvsr_core::Error;

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Io { .. } | Error::Image { .. } => PyIOError::new_err(e.to_string()),
        Error::InvalidArgument(_) | Error::Config(_) => PyValueError::new_err(e.to_string()),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

trait OrPy<T> {
    fn py(self) -> PyResult<T>;
}

impl<T> OrPy<T> for uvsr_core::Result<T> {
    fn py(self) -> PyResult<T> {
        self.map_err(py_err)
    }
}

fn image(a: ArrayView3<'_, f64>, space: Space) -> ImageTensor {
    let (c, h, w) = a.dim();
    ImageTensor::from_fn(c, h, w, space, |k, i, j| a[[k, i, j]])
}

fn sequence(a: ArrayView4<'_, f64>, space: Space) -> Vec<ImageTensor> {
    a.outer_iter().map(|f| image(f, space)).collect()
}

fn to_array3(x: &ImageTensor) -> Array3<f64> {
    Array3::from_shape_vec((x.channels(), x.height(), x.width()), x.data().to_vec()).expect("consistent dims")
}

fn to_array4(frames: &[ImageTensor]) -> PyResult<Array4<f64>> {
    let first = frames.first().ok_or_else(|| PyValueError::new_err("empty sequence"))?;
    let data = frames.iter().flat_map(|f| f.data().iter().copied()).collect();
    Ok(Array4::from_shape_vec((frames.len(), first.channels(), first.height(), first.width()), data)
        .expect("consistent dims"))
}

fn scale_of(s: usize) -> PyResult<ScaleFactor> {
    ScaleFactor::new(s).py()
}

fn kind_of(name: &str) -> PyResult<ModelKind> {
    match name {
        "uvsr" => Ok(ModelKind::Uvsr),
        "sisr" => Ok(ModelKind::Sisr),
        other => Err(PyValueError::new_err(format!("unknown model kind `{other}`; use `uvsr` or `sisr`"))),
    }
}

/// Normalized `(2r+1) x (2r+1)` Gaussian taps with `r = ceil(3 sigma)`.
#[pyfunction]
fn gaussian_kernel<'py>(py: Python<'py>, sigma: f64) -> PyResult<Bound<'py, PyArray2<f64>>> {
    let k = make_gaussian_kernel(sigma, RadiusPolicy::ThreeSigma).py()?;
    let n = k.size();
    Ok(Array2::from_shape_vec((n, n), k.taps().to_vec()).expect("square kernel").into_pyarray(py))
}

/// Blur and decimate every frame of an HR sequence.
#[pyfunction]
#[pyo3(signature = (frames, sigma, scale=4))]
fn degrade<'py>(
    py: Python<'py>,
    frames: PyReadonlyArray4<'py, f64>,
    sigma: f64,
    scale: usize,
) -> PyResult<Bound<'py, PyArray4<f64>>> {
    let hr = sequence(frames.as_array(), Space::Hr);
    let spec = DegradationSpec::new(sigma, scale_of(scale)?).py()?;
    Ok(to_array4(&degrade_sequence(&hr, &spec).py()?)?.into_pyarray(py))
}

/// HR estimate `H B U_s y` of one LR image.
#[pyfunction]
#[pyo3(signature = (y, sigma, scale=4))]
fn backproject<'py>(
    py: Python<'py>,
    y: PyReadonlyArray3<'py, f64>,
    sigma: f64,
    scale: usize,
) -> PyResult<Bound<'py, PyArray3<f64>>> {
    let h = make_gaussian_kernel(sigma, RadiusPolicy::ThreeSigma).py()?;
    let x = operators::backproject(&image(y.as_array(), Space::Lr), &h, scale_of(scale)?).py()?;
    Ok(to_array3(&x).into_pyarray(py))
}

/// Bilinear sample of `x` at `p + flow(p)`.
#[pyfunction]
fn warp<'py>(
    py: Python<'py>,
    x: PyReadonlyArray3<'py, f64>,
    flow: PyReadonlyArray3<'py, f64>,
) -> PyResult<Bound<'py, PyArray3<f64>>> {
    let f = flow.as_array();
    let (c, h, w) = f.dim();
    if c != 2 {
        return Err(PyValueError::new_err("flow must have shape [2, H, W]"));
    }
    let u = FlowField::new(h, w, f.iter().copied().collect(), Space::Hr).py()?;
    Ok(to_array3(&operators::warp(&image(x.as_array(), Space::Hr), &u).py()?).into_pyarray(py))
}

/// BT.601 studio-swing luma of a `[3, H, W]` image.
#[pyfunction]
fn rgb_to_y<'py>(py: Python<'py>, x: PyReadonlyArray3<'py, f64>) -> PyResult<Bound<'py, PyArray3<f64>>> {
    Ok(to_array3(&evaluation::rgb_to_y(&image(x.as_array(), Space::Hr)).py()?).into_pyarray(py))
}

/// Luma PSNR over frames `2..T-2` and pixels at least 8 from the edge.
#[pyfunction]
fn psnr_video(pred: PyReadonlyArray4<'_, f64>, gt: PyReadonlyArray4<'_, f64>) -> PyResult<f64> {
    evaluation::psnr_video(&sequence(pred.as_array(), Space::Hr), &sequence(gt.as_array(), Space::Hr)).py()
}

/// Frame-averaged luma SSIM under the same exclusions as `psnr_video`.
#[pyfunction]
fn ssim_video(pred: PyReadonlyArray4<'_, f64>, gt: PyReadonlyArray4<'_, f64>) -> PyResult<f64> {
    evaluation::ssim_video(&sequence(pred.as_array(), Space::Hr), &sequence(gt.as_array(), Space::Hr)).py()
}

/// Trainable parameters of an architecture.
#[pyfunction]
#[pyo3(signature = (blocks=3, depth=7, filters=128, channels=3, kind="uvsr"))]
fn count_parameters(blocks: usize, depth: usize, filters: usize, channels: usize, kind: &str) -> PyResult<usize> {
    let config = UnrolledConfig {
        blocks,
        depth,
        filters,
        channels,
        ..UnrolledConfig::default()
    };
    Ok(count(&Networks::new(kind_of(kind)?, &config).py()?))
}

/// Runs the operator and gradient property suites; returns
/// `(passed, report)`.
#[pyfunction]
#[pyo3(signature = (seed=0, cases=20))]
fn selftest(seed: u64, cases: usize) -> PyResult<(bool, String)> {
    let report = uvsr_core::selftest::run(seed, cases).py()?;
    Ok((report.passed(), report.to_string()))
}

enum Inner {
    Learned(unrolled::Model<f32>),
    Classical(unrolled::Model<f64>),
}

fn run_model<T: Real>(model: &unrolled::Model<T>, frames: &[ImageTensor], sigma: f64) -> uvsr_core::Result<Vec<ImageTensor>> {
    let h = make_gaussian_kernel(sigma, RadiusPolicy::ThreeSigma)?;
    let s = model.config().scale;
    match model.nets().kind() {
        ModelKind::Sisr => frames.iter().map(|y| unrolled::sisr_solve(y, &h, s, model)).collect(),
        ModelKind::Uvsr => {
            let flows = if model.nets().fnet().is_some() {
                SequenceFlows::Network
            } else {
                SequenceFlows::Zero
            };
            Ok(unrolled::uvsr_sequence(frames, &h, s, model, &flows)?
                .into_iter()
                .map(|r| r.x)
                .collect())
        }
    }
}

/// A reconstruction model: loaded from a checkpoint directory or built in
/// classical (identity-prior) mode.
#[pyclass(name = "Model", unsendable)]
struct PyModel {
    inner: Inner,
}

impl PyModel {
    fn config(&self) -> &UnrolledConfig {
        match &self.inner {
            Inner::Learned(m) => m.config(),
            Inner::Classical(m) => m.config(),
        }
    }

    fn nets(&self) -> &Networks {
        match &self.inner {
            Inner::Learned(m) => m.nets(),
            Inner::Classical(m) => m.nets(),
        }
    }
}

#[pymethods]
impl PyModel {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        let ckpt = Checkpoint::load(&path).py()?;
        Ok(PyModel {
            inner: Inner::Learned(unrolled::Model::from_checkpoint(&ckpt).py()?),
        })
    }

    #[staticmethod]
    #[pyo3(signature = (kind="uvsr", blocks=3, scale=4, channels=3))]
    fn classical(kind: &str, blocks: usize, scale: usize, channels: usize) -> PyResult<Self> {
        let config = UnrolledConfig {
            blocks,
            channels,
            scale: scale_of(scale)?,
            classical: true,
            ..UnrolledConfig::default()
        };
        Ok(PyModel {
            inner: Inner::Classical(unrolled::Model::classical(kind_of(kind)?, &config).py()?),
        })
    }

    #[getter]
    fn kind(&self) -> &'static str {
        self.nets().kind().as_str()
    }

    #[getter]
    fn scale(&self) -> usize {
        self.config().scale.get()
    }

    #[getter]
    fn blocks(&self) -> usize {
        self.config().blocks
    }

    #[getter]
    fn parameter_count(&self) -> usize {
        count(self.nets())
    }

    /// `(alpha, beta)` per block.
    fn step_sizes(&self) -> (Vec<f64>, Vec<f64>) {
        let st = match &self.inner {
            Inner::Learned(m) => m.steps(),
            Inner::Classical(m) => m.steps(),
        };
        (st.alpha, st.beta)
    }

    /// Super-resolves an LR sequence `[T, C, h, w]` to `[T, C, s h, s w]`.
    #[pyo3(signature = (frames, sigma=1.6))]
    fn super_resolve<'py>(
        &self,
        py: Python<'py>,
        frames: PyReadonlyArray4<'py, f64>,
        sigma: f64,
    ) -> PyResult<Bound<'py, PyArray4<f64>>> {
        let lr = sequence(frames.as_array(), Space::Lr);
        let out = match &self.inner {
            Inner::Learned(m) => run_model(m, &lr, sigma),
            Inner::Classical(m) => run_model(m, &lr, sigma),
        }
        .py()?;
        Ok(to_array4(&out)?.into_pyarray(py))
    }

    fn __repr__(&self) -> String {
        format!(
            "Model(kind={:?}, blocks={}, scale={}, parameters={})",
            self.kind(),
            self.blocks(),
            self.scale(),
            self.parameter_count()
        )
    }
}

/// Adds the classes and functions to `m`.
pub fn register(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(gaussian_kernel, m)?)?;
    m.add_function(wrap_pyfunction!(degrade, m)?)?;
    m.add_function(wrap_pyfunction!(backproject, m)?)?;
    m.add_function(wrap_pyfunction!(warp, m)?)?;
    m.add_function(wrap_pyfunction!(rgb_to_y, m)?)?;
    m.add_function(wrap_pyfunction!(psnr_video, m)?)?;
    m.add_function(wrap_pyfunction!(ssim_video, m)?)?;
    m.add_function(wrap_pyfunction!(count_parameters, m)?)?;
    m.add_function(wrap_pyfunction!(selftest, m)?)?;
    Ok(())
}

#[pymodule]
fn uvsr(m: &Bound<'_, PyModule>) -> PyResult<()> {
    register(m)
}
