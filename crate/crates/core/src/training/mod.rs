//! End-to-end training: the recurrence is unrolled over whole clips and the
//! summed per-frame losses are backpropagated through FNet, every block and
//! time.

mod adam;
mod data;

use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use adam::{Adam, AdamConfig};
pub use data::{
    flip_clip, sample_batch, ClipBatch, ClipSource, DataConfig, FrameDataset, SyntheticTextures,
};

use crate::autodiff::{Gradients, Var};
use crate::degradation::SigmaSampler;
use crate::error::{invalid, Error, Result};
use crate::networks::{Bindings, Checkpoint, Networks, ParamStore};
use crate::operators::{make_gaussian_kernel, Padding, RadiusPolicy};
use crate::tensor::{Real, Tensor};
use crate::unrolled::{batch_taps, uvsr_frame_graph, FlowSource, Model, UnrolledConfig};

/// Training run settings; every key is optional in the TOML form.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub seed: u64,
    pub steps: u64,
    pub batch_size: usize,
    /// Frames per training clip.
    pub frames: usize,
    /// Side of the LR crop; the HR crop is `scale` times larger.
    pub crop: usize,
    pub learning_rate: f64,
    /// Fractions of `steps` at which the rate is multiplied by `lr_decay`.
    pub lr_milestones: Vec<f64>,
    pub lr_decay: f64,
    pub adam: AdamConfig,
    /// Random horizontal/vertical flips of whole clips.
    pub flip: bool,
    /// Cut the gradient path through `x̂_{t−1}` between frames.
    pub detach_state: bool,
    /// Save a checkpoint every this many steps (0: final only).
    pub checkpoint_every: u64,
    pub sigma: SigmaSampler,
    pub model: UnrolledConfig,
    pub data: DataConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            seed: 0,
            steps: 10_000,
            batch_size: 4,
            frames: 10,
            crop: 64,
            learning_rate: 1e-4,
            lr_milestones: vec![0.6, 0.85],
            lr_decay: 0.5,
            adam: AdamConfig::default(),
            flip: true,
            detach_state: false,
            checkpoint_every: 0,
            sigma: SigmaSampler::default(),
            model: UnrolledConfig::default(),
            data: DataConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let config: TrainConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        TrainConfig::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.batch_size == 0 || self.frames == 0 || self.crop == 0 {
            return bad("batch_size, frames and crop must be positive");
        }
        if !(self.learning_rate > 0.0) || !(self.lr_decay > 0.0) {
            return bad("learning_rate and lr_decay must be positive");
        }
        if self.model.classical {
            return bad("classical models have nothing to train beyond step sizes; set classical = false");
        }
        self.sigma.validate().map_err(|e| Error::Config(e.to_string()))?;
        self.model.validate().map_err(|e| Error::Config(e.to_string()))
    }

    /// Step-decayed learning rate at `step`.
    pub fn learning_rate_at(&self, step: u64) -> f64 {
        let passed = self
            .lr_milestones
            .iter()
            .filter(|&&m| step as f64 >= m * self.steps as f64)
            .count();
        self.learning_rate * self.lr_decay.powi(passed as i32)
    }
}

/// The three loss terms of one frame or a whole clip.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossComponents {
    /// `‖x̂_t − x_t‖²`.
    pub sr: f64,
    /// `‖F_{u_{t−1→t}} y_{t−1} − y_t‖²`.
    pub flow_prev_to_t: f64,
    /// `‖F_{u_{t→t−1}} y_t − y_{t−1}‖²`.
    pub flow_t_to_prev: f64,
}

impl LossComponents {
    pub fn total(&self) -> f64 {
        self.sr + self.flow_prev_to_t + self.flow_t_to_prev
    }

    fn accumulate(&mut self, other: &LossComponents) {
        self.sr += other.sr;
        self.flow_prev_to_t += other.flow_prev_to_t;
        self.flow_t_to_prev += other.flow_t_to_prev;
    }
}

/// Per-frame loss; means over pixels and batch. `flows` are the LR flows
/// `(u_{t−1→t}, u_{t→t−1})`.
pub fn compute_loss<T: Real>(
    x_hat: &Var<T>,
    x: &Var<T>,
    flows: (&Var<T>, &Var<T>),
    y_t: &Var<T>,
    y_prev: &Var<T>,
) -> Result<(Var<T>, LossComponents)> {
    let (prev_to_t, t_to_prev) = flows;
    let sr = x_hat.mse(x)?;
    let fwd = y_prev.warp(prev_to_t)?.mse(y_t)?;
    let bwd = y_t.warp(t_to_prev)?.mse(y_prev)?;
    let parts = LossComponents {
        sr: sr.value().data()[0].to_f64_lossy(),
        flow_prev_to_t: fwd.value().data()[0].to_f64_lossy(),
        flow_t_to_prev: bwd.value().data()[0].to_f64_lossy(),
    };
    Ok((sr.add(&fwd)?.add(&bwd)?, parts))
}

/// Runs the recurrence over a whole batch; one loss per frame. Frame 0
/// starts from the backprojection with zero flows and contributes only its
/// SR term.
pub fn frame_losses<T: Real>(
    nets: &Networks,
    p: &Bindings<T>,
    batch: &ClipBatch<T>,
    detach_state: bool,
) -> Result<Vec<(Var<T>, LossComponents)>> {
    let s = nets.config().scale.get();
    let kernels = batch
        .sigmas
        .iter()
        .map(|&sigma| make_gaussian_kernel(sigma, RadiusPolicy::ThreeSigma))
        .collect::<Result<Vec<_>>>()?;
    let taps = batch_taps::<T>(&kernels.iter().collect::<Vec<_>>());
    let y: Vec<Var<T>> = batch.lr.iter().cloned().map(Var::constant).collect();
    let mut x_prev = y[0].upsample_bilinear(s).blur(&taps, Padding::Replicate)?;
    let mut out_losses = Vec::with_capacity(batch.frames());
    for t in 0..batch.frames() {
        let target = Var::constant(batch.hr[t].clone());
        let (prev, flows) = if t == 0 {
            (&y[0], FlowSource::Zero)
        } else {
            (&y[t - 1], FlowSource::Network)
        };
        let out = uvsr_frame_graph(nets, p, &y[t], prev, &x_prev, &taps, flows)?;
        out_losses.push(if t == 0 {
            let sr = out.x.mse(&target)?;
            let v = sr.value().data()[0].to_f64_lossy();
            (sr, LossComponents { sr: v, ..Default::default() })
        } else {
            compute_loss(&out.x, &target, (&out.flow_prev_to_t, &out.flow_t_to_prev), &y[t], prev)?
        });
        x_prev = if detach_state { out.x.detach() } else { out.x };
    }
    Ok(out_losses)
}

/// Sum of [`frame_losses`].
pub fn clip_loss<T: Real>(
    nets: &Networks,
    p: &Bindings<T>,
    batch: &ClipBatch<T>,
    detach_state: bool,
) -> Result<(Var<T>, LossComponents)> {
    let mut frames = frame_losses(nets, p, batch, detach_state)?.into_iter();
    let (mut total, mut parts) = frames.next().ok_or_else(|| invalid("empty clip"))?;
    for (loss, frame_parts) in frames {
        total = total.add(&loss)?;
        parts.accumulate(&frame_parts);
    }
    Ok((total, parts))
}

/// One optimizer step's worth of bookkeeping.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: u64,
    pub total: f64,
    pub sr: f64,
    pub flow_prev_to_t: f64,
    pub flow_t_to_prev: f64,
    pub lr: f64,
}

/// Loss and per-parameter gradients of `params` on `batch`.
pub fn loss_and_gradients<T: Real>(
    nets: &Networks,
    params: &ParamStore<T>,
    batch: &ClipBatch<T>,
    detach_state: bool,
) -> Result<(LossComponents, Vec<(String, Tensor<T>)>)> {
    let bindings = params.bind_trainable();
    let (loss, parts) = clip_loss(nets, &bindings, batch, detach_state)?;
    let mut grads: Gradients<T> = loss.backward();
    let out = params
        .iter()
        .map(|(name, t)| {
            let var = bindings.get(name)?;
            Ok((
                name.to_string(),
                grads.remove(var).unwrap_or_else(|| Tensor::zeros(t.shape())),
            ))
        })
        .collect::<Result<_>>()?;
    Ok((parts, out))
}

/// Single-precision training loop state.
pub struct Trainer {
    config: TrainConfig,
    nets: Networks,
    params: ParamStore<f32>,
    adam: Adam,
    data_rng: ChaCha8Rng,
    source: Box<dyn ClipSource>,
    step: u64,
}

impl Trainer {
    pub fn new(config: TrainConfig, source: Box<dyn ClipSource>) -> Result<Self> {
        config.validate()?;
        if source.channels() != config.model.channels {
            return Err(invalid(format!(
                "data has {} channels, model expects {}",
                source.channels(),
                config.model.channels
            )));
        }
        let nets = Networks::uvsr(&config.model)?;
        let mut init_rng = ChaCha8Rng::seed_from_u64(config.seed);
        let params = nets.init_params(&mut init_rng);
        let data_rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed_da7a);
        Ok(Trainer {
            adam: Adam::new(config.adam),
            config,
            nets,
            params,
            data_rng,
            source,
            step: 0,
        })
    }

    /// Opens the data source named in the config.
    pub fn from_config(config: TrainConfig) -> Result<Self> {
        let source = config.data.open(config.model.channels)?;
        Trainer::new(config, source)
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn nets(&self) -> &Networks {
        &self.nets
    }

    pub fn params(&self) -> &ParamStore<f32> {
        &self.params
    }

    pub fn steps_done(&self) -> u64 {
        self.step
    }

    pub fn sample_batch(&mut self) -> Result<ClipBatch<f32>> {
        let c = &self.config;
        sample_batch(
            self.source.as_ref(),
            &mut self.data_rng,
            c.batch_size,
            c.frames,
            c.crop,
            c.model.scale,
            &c.sigma,
            c.flip,
        )
    }

    /// One update on `batch`.
    pub fn step_on(&mut self, batch: &ClipBatch<f32>) -> Result<StepRecord> {
        let lr = self.config.learning_rate_at(self.step);
        let (parts, grads) = loss_and_gradients(&self.nets, &self.params, batch, self.config.detach_state)?;
        if !parts.total().is_finite() {
            return Err(Error::InvalidState(format!("non-finite loss at step {}", self.step)));
        }
        self.adam.update(&mut self.params, &grads, lr);
        self.step += 1;
        Ok(StepRecord {
            step: self.step,
            total: parts.total(),
            sr: parts.sr,
            flow_prev_to_t: parts.flow_prev_to_t,
            flow_t_to_prev: parts.flow_t_to_prev,
            lr,
        })
    }

    /// One update on a freshly sampled batch.
    pub fn step(&mut self) -> Result<StepRecord> {
        let batch = self.sample_batch()?;
        self.step_on(&batch)
    }

    pub fn model(&self) -> Model<f32> {
        Model::new(self.nets.clone(), self.params.clone()).expect("trainer parameters are complete")
    }

    pub fn checkpoint(&self) -> Result<Checkpoint> {
        Checkpoint::new(&self.nets, self.params.clone(), self.config.sigma, self.step)
    }
}

/// Trains for `config.steps` steps. With `out_dir`, writes the resolved
/// config, `train_log.csv`, periodic checkpoints under `checkpoints/` and the
/// final checkpoint under `checkpoint/`. `on_step` sees every record.
pub fn train(
    config: &TrainConfig,
    source: Box<dyn ClipSource>,
    out_dir: Option<&Path>,
    mut on_step: impl FnMut(&StepRecord),
) -> Result<Checkpoint> {
    let mut trainer = Trainer::new(config.clone(), source)?;
    let mut log = match out_dir {
        Some(dir) => {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            let resolved = dir.join("config.toml");
            fs::write(&resolved, config.to_toml()?).map_err(|e| Error::io(&resolved, e))?;
            Some(csv::Writer::from_path(dir.join("train_log.csv"))?)
        }
        None => None,
    };
    for _ in 0..config.steps {
        let record = trainer.step()?;
        on_step(&record);
        if let Some(w) = log.as_mut() {
            w.serialize(record)?;
            w.flush().map_err(|e| Error::io("train_log.csv", e))?;
        }
        if let Some(dir) = out_dir {
            if config.checkpoint_every > 0 && record.step % config.checkpoint_every == 0 {
                let path = dir.join("checkpoints").join(format!("step_{:08}", record.step));
                trainer.checkpoint()?.save(&path)?;
            }
        }
    }
    let ckpt = trainer.checkpoint()?;
    if let Some(dir) = out_dir {
        ckpt.save(&dir.join("checkpoint"))?;
    }
    Ok(ckpt)
}

#[cfg(test)]
mod tests;
