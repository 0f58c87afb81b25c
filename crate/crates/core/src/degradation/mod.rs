//! LR sequence synthesis: Gaussian blur followed by decimation, for a fixed
//! blur width or one drawn per sequence, plus PCA codes for blur kernels.

mod pca;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use pca::{gaussian_family, pca_encode, pca_fit, KernelBasis, KernelCode, KERNEL_CODE_LEN};

use crate::error::{invalid, Result};
use crate::operators::{
    blur, downsample, make_gaussian_kernel, BlurKernel, ImageTensor, Padding, RadiusPolicy,
    ScaleFactor, Space,
};

/// Bounds of the multiple-degradation regime.
pub const UNIFORM_SIGMA_LOW: f64 = 0.375;
pub const UNIFORM_SIGMA_HIGH: f64 = 2.825;
/// Blur width of the single-degradation regime.
pub const FIXED_SIGMA: f64 = 1.6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DegradationSpec {
    pub sigma: f64,
    pub scale: ScaleFactor,
    #[serde(default)]
    pub noise_variance: f64,
}

impl DegradationSpec {
    pub fn new(sigma: f64, scale: ScaleFactor) -> Result<Self> {
        let spec = DegradationSpec {
            sigma,
            scale,
            noise_variance: 0.0,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma > 0.0) || !self.sigma.is_finite() {
            return Err(invalid(format!("sigma must be positive, got {}", self.sigma)));
        }
        if self.noise_variance != 0.0 {
            return Err(invalid("additive noise is not supported; noise_variance must be 0"));
        }
        Ok(())
    }

    pub fn kernel(&self) -> Result<BlurKernel> {
        make_gaussian_kernel(self.sigma, RadiusPolicy::ThreeSigma)
    }
}

/// How the blur width of each training sequence is chosen.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum SigmaSampler {
    Fixed { value: f64 },
    Uniform { low: f64, high: f64 },
}

impl Default for SigmaSampler {
    fn default() -> Self {
        SigmaSampler::Fixed { value: FIXED_SIGMA }
    }
}

impl SigmaSampler {
    pub fn fixed(value: f64) -> Result<Self> {
        let s = SigmaSampler::Fixed { value };
        s.validate()?;
        Ok(s)
    }

    pub fn uniform(low: f64, high: f64) -> Result<Self> {
        let s = SigmaSampler::Uniform { low, high };
        s.validate()?;
        Ok(s)
    }

    /// `[0.375, 2.825]`.
    pub fn multiple_degradation() -> Self {
        SigmaSampler::Uniform {
            low: UNIFORM_SIGMA_LOW,
            high: UNIFORM_SIGMA_HIGH,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            SigmaSampler::Fixed { value } if !(value > 0.0) || !value.is_finite() => {
                Err(invalid(format!("fixed sigma must be positive, got {value}")))
            }
            SigmaSampler::Uniform { low, high }
                if !(low > 0.0) || !(low < high) || !high.is_finite() =>
            {
                Err(invalid(format!("uniform sigma bounds need 0 < low < high, got [{low}, {high}]")))
            }
            _ => Ok(()),
        }
    }

    /// Smallest and largest value this sampler can return.
    pub fn bounds(&self) -> (f64, f64) {
        match *self {
            SigmaSampler::Fixed { value } => (value, value),
            SigmaSampler::Uniform { low, high } => (low, high),
        }
    }
}

/// One draw per sequence.
pub fn sample_sigma(sampler: &SigmaSampler, rng: &mut impl Rng) -> f64 {
    match *sampler {
        SigmaSampler::Fixed { value } => value,
        SigmaSampler::Uniform { low, high } => rng.random_range(low..=high),
    }
}

/// Central crop to the largest dims divisible by `s`.
pub fn center_crop_to_multiple(x: &ImageTensor, s: ScaleFactor) -> Result<ImageTensor> {
    let (h, w) = (x.height() / s.get() * s.get(), x.width() / s.get() * s.get());
    if h == 0 || w == 0 {
        return Err(invalid(format!(
            "{}x{} frame is smaller than the scale factor {}",
            x.height(),
            x.width(),
            s.get()
        )));
    }
    if (h, w) == (x.height(), x.width()) {
        return Ok(x.clone());
    }
    x.crop((x.height() - h) / 2, (x.width() - w) / 2, h, w)
}

/// `y = D_s H x` for one frame, after center-cropping to a multiple of `s`.
pub fn degrade_frame(x: &ImageTensor, spec: &DegradationSpec) -> Result<ImageTensor> {
    degrade_frame_with(x, &spec.kernel()?, spec.scale)
}

fn degrade_frame_with(x: &ImageTensor, h: &BlurKernel, s: ScaleFactor) -> Result<ImageTensor> {
    let x = center_crop_to_multiple(&x.clone().with_space(Space::Hr), s)?;
    downsample(&blur(&x, h, Padding::Replicate)?, s)
}

/// Degrades every frame independently; all frames must share dims.
pub fn degrade_sequence(hr_frames: &[ImageTensor], spec: &DegradationSpec) -> Result<Vec<ImageTensor>> {
    spec.validate()?;
    if let Some(first) = hr_frames.first() {
        if let Some(bad) = hr_frames.iter().position(|f| !f.same_dims(first)) {
            return Err(invalid(format!("frame {bad} differs in shape from frame 0")));
        }
    }
    let h = spec.kernel()?;
    hr_frames
        .iter()
        .map(|x| degrade_frame_with(x, &h, spec.scale))
        .collect()
}
