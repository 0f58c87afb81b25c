//! Imaging operators of the observation model `y = D_s H F_u x` and the
//! (approximate) adjoints used to invert it.
//!
//! All functions here are pure, operate in double precision and validate
//! their arguments. The autodiff engine reuses the same [`kernels`].

pub mod kernels;

use serde::{Deserialize, Serialize};

pub use kernels::Padding;

use crate::error::{invalid, Result};
use crate::tensor::{Real, Tensor};

/// Which resolution grid an image or flow lives on.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Space {
    Hr,
    Lr,
}

/// Integer super-resolution factor.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "usize", into = "usize")]
pub struct ScaleFactor(usize);

impl ScaleFactor {
    pub fn new(s: usize) -> Result<Self> {
        if s == 0 {
            return Err(invalid("scale factor must be at least 1"));
        }
        Ok(ScaleFactor(s))
    }

    pub fn get(self) -> usize {
        self.0
    }

    fn check_divides(self, h: usize, w: usize) -> Result<()> {
        if h % self.0 != 0 || w % self.0 != 0 {
            return Err(invalid(format!(
                "dims {h}x{w} are not divisible by scale {}",
                self.0
            )));
        }
        Ok(())
    }
}

impl TryFrom<usize> for ScaleFactor {
    type Error = crate::error::Error;

    fn try_from(s: usize) -> Result<Self> {
        ScaleFactor::new(s)
    }
}

impl From<ScaleFactor> for usize {
    fn from(s: ScaleFactor) -> usize {
        s.0
    }
}

/// Multi-channel raster `[channels, height, width]` with values nominally in
/// `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageTensor {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f64>,
    space: Space,
}

impl ImageTensor {
    pub fn new(
        channels: usize,
        height: usize,
        width: usize,
        data: Vec<f64>,
        space: Space,
    ) -> Result<Self> {
        if channels == 0 || height == 0 || width == 0 {
            return Err(invalid(format!(
                "image dims must be positive, got {channels}x{height}x{width}"
            )));
        }
        if data.len() != channels * height * width {
            return Err(invalid(format!(
                "{channels}x{height}x{width} image needs {} values, got {}",
                channels * height * width,
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(invalid("image values must be finite"));
        }
        Ok(ImageTensor {
            channels,
            height,
            width,
            data,
            space,
        })
    }

    pub fn zeros(channels: usize, height: usize, width: usize, space: Space) -> Self {
        Self::constant(channels, height, width, 0.0, space)
    }

    pub fn constant(channels: usize, height: usize, width: usize, value: f64, space: Space) -> Self {
        ImageTensor {
            channels,
            height,
            width,
            data: vec![value; channels * height * width],
            space,
        }
    }

    pub fn from_fn(
        channels: usize,
        height: usize,
        width: usize,
        space: Space,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Self {
        let mut data = Vec::with_capacity(channels * height * width);
        for c in 0..channels {
            for i in 0..height {
                for j in 0..width {
                    data.push(f(c, i, j));
                }
            }
        }
        ImageTensor {
            channels,
            height,
            width,
            data,
            space,
        }
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn space(&self) -> Space {
        self.space
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, c: usize, i: usize, j: usize) -> f64 {
        self.data[(c * self.height + i) * self.width + j]
    }

    pub fn set(&mut self, c: usize, i: usize, j: usize, v: f64) {
        self.data[(c * self.height + i) * self.width + j] = v;
    }

    pub fn with_space(mut self, space: Space) -> Self {
        self.space = space;
        self
    }

    pub fn same_dims(&self, other: &ImageTensor) -> bool {
        self.channels == other.channels && self.height == other.height && self.width == other.width
    }

    fn check_same_dims(&self, other: &ImageTensor) -> Result<()> {
        if !self.same_dims(other) {
            return Err(invalid(format!(
                "dim mismatch: {}x{}x{} vs {}x{}x{}",
                self.channels, self.height, self.width, other.channels, other.height, other.width
            )));
        }
        Ok(())
    }

    fn check_space(&self, space: Space, what: &str) -> Result<()> {
        if self.space != space {
            return Err(invalid(format!(
                "{what} expects a {space:?} image, got {:?}",
                self.space
            )));
        }
        Ok(())
    }

    fn like(&self, data: Vec<f64>) -> Self {
        ImageTensor {
            channels: self.channels,
            height: self.height,
            width: self.width,
            data,
            space: self.space,
        }
    }

    pub fn inner(&self, other: &ImageTensor) -> Result<f64> {
        self.check_same_dims(other)?;
        Ok(self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum())
    }

    pub fn norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn add(&self, other: &ImageTensor) -> Result<ImageTensor> {
        self.check_same_dims(other)?;
        Ok(self.like(self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect()))
    }

    pub fn sub(&self, other: &ImageTensor) -> Result<ImageTensor> {
        self.check_same_dims(other)?;
        Ok(self.like(self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect()))
    }

    pub fn scale(&self, k: f64) -> ImageTensor {
        self.like(self.data.iter().map(|v| k * v).collect())
    }

    /// Mean squared difference over all values.
    pub fn mse(&self, other: &ImageTensor) -> Result<f64> {
        self.check_same_dims(other)?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            / self.data.len() as f64)
    }

    /// Single channel `c` as its own image.
    pub fn channel(&self, c: usize) -> ImageTensor {
        let plane = self.height * self.width;
        ImageTensor {
            channels: 1,
            height: self.height,
            width: self.width,
            data: self.data[c * plane..(c + 1) * plane].to_vec(),
            space: self.space,
        }
    }

    /// Rectangular window `[top, top+h) x [left, left+w)` of every channel.
    pub fn crop(&self, top: usize, left: usize, h: usize, w: usize) -> Result<ImageTensor> {
        if h == 0 || w == 0 || top + h > self.height || left + w > self.width {
            return Err(invalid(format!(
                "crop {h}x{w}+{top}+{left} exceeds {}x{}",
                self.height, self.width
            )));
        }
        Ok(ImageTensor::from_fn(self.channels, h, w, self.space, |c, i, j| {
            self.get(c, top + i, left + j)
        }))
    }

    /// Batch-of-one engine tensor.
    pub fn to_tensor<T: Real>(&self) -> Tensor<T> {
        Tensor::from_vec(
            [1, self.channels, self.height, self.width],
            self.data.iter().map(|&v| T::from_f64_lossy(v)).collect(),
        )
        .expect("shape matches data")
    }

    /// Batch item `n` of an engine tensor.
    pub fn from_tensor<T: Real>(t: &Tensor<T>, n: usize, space: Space) -> Result<ImageTensor> {
        let [_, c, h, w] = t.shape();
        ImageTensor::new(c, h, w, t.item(n).iter().map(|v| v.to_f64_lossy()).collect(), space)
    }
}

/// Rule for the support of a truncated Gaussian.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub enum RadiusPolicy {
    /// `ceil(3 * sigma)`.
    #[default]
    ThreeSigma,
    Fixed(usize),
}

/// Normalized, separable, symmetric Gaussian blur kernel.
#[derive(Clone, Debug, PartialEq)]
pub struct BlurKernel {
    sigma: f64,
    radius: usize,
    taps_1d: Vec<f64>,
    taps: Vec<f64>,
}

impl BlurKernel {
    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn radius(&self) -> usize {
        self.radius
    }

    /// Side length `2 * radius + 1`.
    pub fn size(&self) -> usize {
        2 * self.radius + 1
    }

    /// Row-major `size x size` taps.
    pub fn taps(&self) -> &[f64] {
        &self.taps
    }

    /// The separable factor; `taps = taps_1d ⊗ taps_1d`.
    pub fn taps_1d(&self) -> &[f64] {
        &self.taps_1d
    }

    pub fn tap(&self, a: usize, b: usize) -> f64 {
        self.taps[a * self.size() + b]
    }

    /// Taps zero-padded (centered) to a `size x size` support.
    pub fn padded_taps(&self, size: usize) -> Result<Vec<f64>> {
        if size < self.size() || size % 2 == 0 {
            return Err(invalid(format!(
                "cannot pad a {k}x{k} kernel to {size}x{size}",
                k = self.size()
            )));
        }
        let off = (size - self.size()) / 2;
        let mut out = vec![0.0; size * size];
        for a in 0..self.size() {
            for b in 0..self.size() {
                out[(a + off) * size + b + off] = self.tap(a, b);
            }
        }
        Ok(out)
    }
}

pub fn make_gaussian_kernel(sigma: f64, radius_policy: RadiusPolicy) -> Result<BlurKernel> {
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(invalid(format!("blur sigma must be positive, got {sigma}")));
    }
    let radius = match radius_policy {
        RadiusPolicy::ThreeSigma => (3.0 * sigma).ceil() as usize,
        RadiusPolicy::Fixed(r) => r,
    };
    let raw: Vec<f64> = (-(radius as isize)..=radius as isize)
        .map(|i| (-((i * i) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = raw.iter().sum();
    let taps_1d: Vec<f64> = raw.iter().map(|v| v / total).collect();
    let taps = taps_1d
        .iter()
        .flat_map(|a| taps_1d.iter().map(move |b| a * b))
        .collect();
    Ok(BlurKernel {
        sigma,
        radius,
        taps_1d,
        taps,
    })
}

/// Per-pixel displacement `(du, dv)` in pixels of its own grid; `du` is
/// horizontal.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowField {
    height: usize,
    width: usize,
    data: Vec<f64>,
    space: Space,
}

impl FlowField {
    pub fn new(height: usize, width: usize, data: Vec<f64>, space: Space) -> Result<Self> {
        if height == 0 || width == 0 || data.len() != 2 * height * width {
            return Err(invalid(format!(
                "flow {height}x{width} needs {} values, got {}",
                2 * height * width,
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(invalid("flow values must be finite"));
        }
        Ok(FlowField {
            height,
            width,
            data,
            space,
        })
    }

    pub fn zeros(height: usize, width: usize, space: Space) -> Self {
        Self::constant(height, width, 0.0, 0.0, space)
    }

    pub fn constant(height: usize, width: usize, du: f64, dv: f64, space: Space) -> Self {
        let mut data = vec![du; height * width];
        data.extend(std::iter::repeat_n(dv, height * width));
        FlowField {
            height,
            width,
            data,
            space,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn space(&self) -> Space {
        self.space
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn du(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.width + j]
    }

    pub fn dv(&self, i: usize, j: usize) -> f64 {
        self.data[(self.height + i) * self.width + j]
    }

    /// The flow as a two-channel image, horizontal component first.
    pub fn as_image(&self) -> ImageTensor {
        ImageTensor {
            channels: 2,
            height: self.height,
            width: self.width,
            data: self.data.clone(),
            space: self.space,
        }
    }

    pub fn from_image(img: &ImageTensor) -> Result<Self> {
        if img.channels != 2 {
            return Err(invalid("a flow image has exactly two channels"));
        }
        FlowField::new(img.height, img.width, img.data.clone(), img.space)
    }

    pub fn to_tensor<T: Real>(&self) -> Tensor<T> {
        self.as_image().to_tensor()
    }
}

fn check_kernel_fits(x: &ImageTensor, h: &BlurKernel) -> Result<()> {
    if h.size() > x.height || h.size() > x.width {
        return Err(invalid(format!(
            "{k}x{k} kernel does not fit a {}x{} image",
            x.height,
            x.width,
            k = h.size()
        )));
    }
    Ok(())
}

/// `H x`: correlation with the (symmetric) kernel.
pub fn blur(x: &ImageTensor, h: &BlurKernel, padding: Padding) -> Result<ImageTensor> {
    check_kernel_fits(x, h)?;
    let mut out = vec![0.0; x.data.len()];
    kernels::blur(&x.data, &mut out, x.channels, x.height, x.width, h.taps_1d(), padding);
    Ok(x.like(out))
}

/// Exact transpose of [`blur`]; equals `blur` under periodic padding.
pub fn blur_adjoint(x: &ImageTensor, h: &BlurKernel, padding: Padding) -> Result<ImageTensor> {
    check_kernel_fits(x, h)?;
    let mut out = vec![0.0; x.data.len()];
    kernels::blur_adjoint(&x.data, &mut out, x.channels, x.height, x.width, h.taps_1d(), padding);
    Ok(x.like(out))
}

/// `D_s x`: decimation keeping pixels `(s*i, s*j)`.
pub fn downsample(x: &ImageTensor, s: ScaleFactor) -> Result<ImageTensor> {
    x.check_space(Space::Hr, "downsample")?;
    s.check_divides(x.height, x.width)?;
    let (h, w) = (x.height / s.get(), x.width / s.get());
    let mut out = vec![0.0; x.channels * h * w];
    kernels::downsample(&x.data, &mut out, x.channels, x.height, x.width, s.get());
    ImageTensor::new(x.channels, h, w, out, Space::Lr)
}

/// `U_s y`: zero insertion, the exact adjoint of [`downsample`].
pub fn upsample_zeros(y: &ImageTensor, s: ScaleFactor) -> Result<ImageTensor> {
    y.check_space(Space::Lr, "upsample_zeros")?;
    let (h, w) = (y.height * s.get(), y.width * s.get());
    let mut out = vec![0.0; y.channels * h * w];
    kernels::upsample_zeros(&y.data, &mut out, y.channels, y.height, y.width, s.get());
    ImageTensor::new(y.channels, h, w, out, Space::Hr)
}

/// `B`: replaces the inserted zeros of a zero-inserted image by bilinear
/// interpolation of the retained lattice `{0, s, 2s, ...}`. Only lattice
/// samples are read.
pub fn bilinear_fill(z: &ImageTensor, s: ScaleFactor) -> Result<ImageTensor> {
    z.check_space(Space::Hr, "bilinear_fill")?;
    let lattice = downsample(z, s)?;
    upsample_bilinear(&lattice, s)
}

/// `B U_s y` in one pass.
pub fn upsample_bilinear(y: &ImageTensor, s: ScaleFactor) -> Result<ImageTensor> {
    y.check_space(Space::Lr, "upsample_bilinear")?;
    let (h, w) = (y.height * s.get(), y.width * s.get());
    let mut out = vec![0.0; y.channels * h * w];
    kernels::upsample_bilinear(&y.data, &mut out, y.channels, y.height, y.width, s.get());
    ImageTensor::new(y.channels, h, w, out, Space::Hr)
}

/// Exact transpose of [`upsample_bilinear`].
pub fn upsample_bilinear_adjoint(x: &ImageTensor, s: ScaleFactor) -> Result<ImageTensor> {
    x.check_space(Space::Hr, "upsample_bilinear_adjoint")?;
    s.check_divides(x.height, x.width)?;
    let (h, w) = (x.height / s.get(), x.width / s.get());
    let mut out = vec![0.0; x.channels * h * w];
    kernels::upsample_bilinear_adjoint(&x.data, &mut out, x.channels, h, w, s.get());
    ImageTensor::new(x.channels, h, w, out, Space::Lr)
}

/// `H B U_s y` with replicate padding.
pub fn backproject(y: &ImageTensor, h: &BlurKernel, s: ScaleFactor) -> Result<ImageTensor> {
    backproject_with(y, h, s, Padding::Replicate)
}

pub fn backproject_with(
    y: &ImageTensor,
    h: &BlurKernel,
    s: ScaleFactor,
    padding: Padding,
) -> Result<ImageTensor> {
    let filled = bilinear_fill(&upsample_zeros(y, s)?, s)?;
    blur(&filled, h, padding)
}

pub fn space_to_depth(x: &ImageTensor, s: ScaleFactor) -> Result<ImageTensor> {
    x.check_space(Space::Hr, "space_to_depth")?;
    s.check_divides(x.height, x.width)?;
    let k = s.get();
    let mut out = vec![0.0; x.data.len()];
    kernels::space_to_depth(&x.data, &mut out, x.channels, x.height, x.width, k);
    ImageTensor::new(x.channels * k * k, x.height / k, x.width / k, out, Space::Lr)
}

pub fn depth_to_space(x: &ImageTensor, s: ScaleFactor) -> Result<ImageTensor> {
    x.check_space(Space::Lr, "depth_to_space")?;
    let k = s.get();
    if x.channels % (k * k) != 0 {
        return Err(invalid(format!(
            "{} channels are not divisible by {}",
            x.channels,
            k * k
        )));
    }
    let c = x.channels / (k * k);
    let mut out = vec![0.0; x.data.len()];
    kernels::depth_to_space(&x.data, &mut out, c, x.height * k, x.width * k, k);
    ImageTensor::new(c, x.height * k, x.width * k, out, Space::Hr)
}

fn check_flow(x: &ImageTensor, u: &FlowField) -> Result<()> {
    if x.height != u.height || x.width != u.width || x.space != u.space {
        return Err(invalid(format!(
            "flow {}x{} ({:?}) does not match image {}x{} ({:?})",
            u.height, u.width, u.space, x.height, x.width, x.space
        )));
    }
    Ok(())
}

/// `F_u x`: bilinear sample of `x` at `p + u(p)`, coordinates clamped to the
/// border.
pub fn warp(x: &ImageTensor, u: &FlowField) -> Result<ImageTensor> {
    check_flow(x, u)?;
    let mut out = vec![0.0; x.data.len()];
    kernels::warp(&x.data, &u.data, &mut out, x.channels, x.height, x.width);
    Ok(x.like(out))
}

/// Exact transpose of [`warp`] for a fixed flow.
pub fn warp_adjoint(x: &ImageTensor, u: &FlowField) -> Result<ImageTensor> {
    check_flow(x, u)?;
    let mut out = vec![0.0; x.data.len()];
    kernels::warp_adjoint(&x.data, &u.data, &mut out, x.channels, x.height, x.width);
    Ok(x.like(out))
}

/// LR flow to HR: bilinear fill of each component, displacements scaled by
/// `s` because the HR grid is `s` times denser.
pub fn upsample_flow(u: &FlowField, s: ScaleFactor) -> Result<FlowField> {
    if u.space != Space::Lr {
        return Err(invalid("upsample_flow expects an LR flow"));
    }
    let up = upsample_bilinear(&u.as_image(), s)?.scale(s.get() as f64);
    FlowField::from_image(&up)
}
