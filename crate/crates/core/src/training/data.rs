use std::path::{Path, PathBuf};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::degradation::{degrade_sequence, sample_sigma, DegradationSpec, SigmaSampler};
use crate::error::{invalid, Result};
use crate::io::{find_sequences, read_sequence};
use crate::operators::{blur, make_gaussian_kernel, ImageTensor, Padding, RadiusPolicy, ScaleFactor, Space};
use crate::tensor::{Real, Tensor};

/// Source of HR training clips in `[0, 1]`.
pub trait ClipSource {
    fn channels(&self) -> usize;

    fn sample_clip(&self, rng: &mut ChaCha8Rng, frames: usize, height: usize, width: usize) -> Result<Vec<ImageTensor>>;
}

/// Band-limited random textures translating by a constant integer
/// velocity per clip.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticTextures {
    pub channels: usize,
    /// Largest speed per axis, HR pixels per frame.
    pub max_speed: usize,
    /// Range of the blur applied to white noise to make the texture.
    pub texture_sigma: [f64; 2],
}

impl SyntheticTextures {
    pub fn new(channels: usize) -> Self {
        SyntheticTextures {
            channels,
            max_speed: 3,
            texture_sigma: [0.8, 1.6],
        }
    }

    fn texture(&self, rng: &mut ChaCha8Rng, h: usize, w: usize) -> Result<ImageTensor> {
        let sigma = rng.random_range(self.texture_sigma[0]..=self.texture_sigma[1]);
        let kernel = make_gaussian_kernel(sigma, RadiusPolicy::ThreeSigma)?;
        let shared = ImageTensor::from_fn(1, h, w, Space::Hr, |_, _, _| rng.random_range(-1.0..1.0));
        let own = ImageTensor::from_fn(self.channels, h, w, Space::Hr, |_, _, _| rng.random_range(-1.0..1.0));
        let mix = ImageTensor::from_fn(self.channels, h, w, Space::Hr, |c, i, j| {
            0.8 * shared.get(0, i, j) + 0.2 * own.get(c, i, j)
        });
        let smooth = blur(&mix, &kernel, Padding::Replicate)?;
        let n = smooth.data().len() as f64;
        let mean = smooth.data().iter().sum::<f64>() / n;
        let std = (smooth.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
        let offset = rng.random_range(0.4..0.6);
        let contrast = rng.random_range(0.12..0.2);
        Ok(ImageTensor::from_fn(self.channels, h, w, Space::Hr, |c, i, j| {
            (offset + contrast * (smooth.get(c, i, j) - mean) / std.max(1e-12)).clamp(0.0, 1.0)
        }))
    }

    /// A clip together with its velocity `(vx, vy)`: content at `p` in frame
    /// `t − 1` sits at `p + v` in frame `t`.
    pub fn sample_with_velocity(
        &self,
        rng: &mut ChaCha8Rng,
        frames: usize,
        height: usize,
        width: usize,
    ) -> Result<(Vec<ImageTensor>, (isize, isize))> {
        let m = self.max_speed as i64;
        let v = (rng.random_range(-m..=m) as isize, rng.random_range(-m..=m) as isize);
        let margin = self.max_speed * frames.saturating_sub(1);
        let base = self.texture(rng, height + 2 * margin, width + 2 * margin)?;
        let clip = (0..frames as isize)
            .map(|t| {
                let top = (margin as isize - t * v.1) as usize;
                let left = (margin as isize - t * v.0) as usize;
                base.crop(top, left, height, width)
            })
            .collect::<Result<_>>()?;
        Ok((clip, v))
    }
}

impl ClipSource for SyntheticTextures {
    fn channels(&self) -> usize {
        self.channels
    }

    fn sample_clip(&self, rng: &mut ChaCha8Rng, frames: usize, height: usize, width: usize) -> Result<Vec<ImageTensor>> {
        Ok(self.sample_with_velocity(rng, frames, height, width)?.0)
    }
}

/// HR sequences loaded from PNG frame directories.
#[derive(Clone, Debug)]
pub struct FrameDataset {
    sequences: Vec<Vec<ImageTensor>>,
    channels: usize,
}

impl FrameDataset {
    pub fn new(sequences: Vec<Vec<ImageTensor>>) -> Result<Self> {
        let first = sequences
            .iter()
            .find_map(|s| s.first())
            .ok_or_else(|| invalid("dataset contains no frames"))?;
        let channels = first.channels();
        if sequences.iter().flatten().any(|f| f.channels() != channels) {
            return Err(invalid("all training frames must have the same channel count"));
        }
        Ok(FrameDataset {
            sequences: sequences.into_iter().filter(|s| !s.is_empty()).collect(),
            channels,
        })
    }

    /// Every directory of PNG frames under `root`.
    pub fn load(root: &Path) -> Result<Self> {
        let dirs = find_sequences(root)?;
        let sequences = dirs
            .iter()
            .map(|d| read_sequence(d, Space::Hr))
            .collect::<Result<_>>()?;
        FrameDataset::new(sequences)
    }

    pub fn len(&self) -> usize {
        self.sequences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sequences.is_empty()
    }
}

impl ClipSource for FrameDataset {
    fn channels(&self) -> usize {
        self.channels
    }

    fn sample_clip(&self, rng: &mut ChaCha8Rng, frames: usize, height: usize, width: usize) -> Result<Vec<ImageTensor>> {
        let usable: Vec<&Vec<ImageTensor>> = self
            .sequences
            .iter()
            .filter(|s| s.len() >= frames && s[0].height() >= height && s[0].width() >= width)
            .collect();
        if usable.is_empty() {
            return Err(invalid(format!(
                "no sequence has {frames} frames of at least {height}x{width}"
            )));
        }
        let seq = usable[rng.random_range(0..usable.len())];
        let start = rng.random_range(0..=seq.len() - frames);
        let top = rng.random_range(0..=seq[0].height() - height);
        let left = rng.random_range(0..=seq[0].width() - width);
        seq[start..start + frames]
            .iter()
            .map(|f| f.crop(top, left, height, width))
            .collect()
    }
}

/// Where training clips come from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "lowercase", deny_unknown_fields)]
pub enum DataConfig {
    Synthetic {
        #[serde(default = "default_speed")]
        max_speed: usize,
        #[serde(default = "default_texture_sigma")]
        texture_sigma: [f64; 2],
    },
    Frames {
        path: PathBuf,
    },
}

fn default_speed() -> usize {
    3
}

fn default_texture_sigma() -> [f64; 2] {
    [0.8, 1.6]
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig::Synthetic {
            max_speed: default_speed(),
            texture_sigma: default_texture_sigma(),
        }
    }
}

impl DataConfig {
    pub fn open(&self, channels: usize) -> Result<Box<dyn ClipSource>> {
        match self {
            DataConfig::Synthetic {
                max_speed,
                texture_sigma,
            } => Ok(Box::new(SyntheticTextures {
                channels,
                max_speed: *max_speed,
                texture_sigma: *texture_sigma,
            })),
            DataConfig::Frames { path } => {
                let data = FrameDataset::load(path)?;
                if data.channels() != channels {
                    return Err(invalid(format!(
                        "dataset has {} channels, model expects {channels}",
                        data.channels()
                    )));
                }
                Ok(Box::new(data))
            }
        }
    }
}

/// Flips every frame of a clip identically.
pub fn flip_clip(clip: &[ImageTensor], horizontal: bool, vertical: bool) -> Vec<ImageTensor> {
    clip.iter()
        .map(|f| {
            let (h, w) = (f.height(), f.width());
            ImageTensor::from_fn(f.channels(), h, w, f.space(), |c, i, j| {
                let i = if vertical { h - 1 - i } else { i };
                let j = if horizontal { w - 1 - j } else { j };
                f.get(c, i, j)
            })
        })
        .collect()
}

/// HR/LR training pairs, one tensor per frame, batch-major within it.
#[derive(Clone, Debug)]
pub struct ClipBatch<T: Real> {
    pub hr: Vec<Tensor<T>>,
    pub lr: Vec<Tensor<T>>,
    pub sigmas: Vec<f64>,
}

impl<T: Real> ClipBatch<T> {
    pub fn frames(&self) -> usize {
        self.hr.len()
    }

    pub fn batch_size(&self) -> usize {
        self.sigmas.len()
    }

    /// Builds a batch from HR clips and their blur widths.
    pub fn from_clips(hr_clips: &[Vec<ImageTensor>], sigmas: &[f64], scale: ScaleFactor) -> Result<Self> {
        if hr_clips.is_empty() || hr_clips.len() != sigmas.len() {
            return Err(invalid("need one sigma per clip and at least one clip"));
        }
        let frames = hr_clips[0].len();
        if frames == 0 || hr_clips.iter().any(|c| c.len() != frames) {
            return Err(invalid("all clips need the same, nonzero number of frames"));
        }
        let lr_clips: Vec<Vec<ImageTensor>> = hr_clips
            .iter()
            .zip(sigmas)
            .map(|(clip, &sigma)| degrade_sequence(clip, &DegradationSpec::new(sigma, scale)?))
            .collect::<Result<_>>()?;
        let stack = |clips: &[Vec<ImageTensor>], t: usize| {
            let items: Vec<Tensor<T>> = clips.iter().map(|c| c[t].to_tensor()).collect();
            Tensor::stack(&items.iter().collect::<Vec<_>>())
        };
        Ok(ClipBatch {
            hr: (0..frames).map(|t| stack(hr_clips, t)).collect::<Result<_>>()?,
            lr: (0..frames).map(|t| stack(&lr_clips, t)).collect::<Result<_>>()?,
            sigmas: sigmas.to_vec(),
        })
    }
}

/// Samples clips, applies a random flip to each HR clip, draws one blur
/// width per clip and degrades.
#[allow(clippy::too_many_arguments)]
pub fn sample_batch<T: Real>(
    source: &dyn ClipSource,
    rng: &mut ChaCha8Rng,
    batch_size: usize,
    frames: usize,
    lr_crop: usize,
    scale: ScaleFactor,
    sigma: &SigmaSampler,
    flip: bool,
) -> Result<ClipBatch<T>> {
    let side = lr_crop * scale.get();
    let mut clips = Vec::with_capacity(batch_size);
    let mut sigmas = Vec::with_capacity(batch_size);
    for _ in 0..batch_size {
        let mut clip = source.sample_clip(rng, frames, side, side)?;
        if flip {
            let (h, v) = (rng.random_bool(0.5), rng.random_bool(0.5));
            clip = flip_clip(&clip, h, v);
        }
        clips.push(clip);
        sigmas.push(sample_sigma(sigma, rng));
    }
    ClipBatch::from_clips(&clips, &sigmas, scale)
}
