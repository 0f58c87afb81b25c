//! Unrolled gradient descent: each of `K` blocks adds a learned prior update
//! `z^k` to `x^k` and takes an explicit step on the data terms
//! `½‖D_s H x − y_t‖²` and `½‖D_s H F x − y_{t−1}‖²`.

mod check;

use std::rc::Rc;

use serde::{Deserialize, Serialize};

pub use check::{data_step_gradient_check, AdjointMode, GradientCheckReport};

use crate::autodiff::Var;
use crate::error::{invalid, Error, Result};
use crate::networks::{alpha_name, beta_name, Bindings, Checkpoint, ModelKind, Networks, ParamStore};
use crate::operators::{
    backproject, blur, downsample, warp, BlurKernel, FlowField, ImageTensor, Padding, ScaleFactor, Space,
};
use crate::tensor::{Real, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UnrolledConfig {
    /// `K`, number of iteration blocks.
    pub blocks: usize,
    /// `d`, convolution layers per prior.
    pub depth: usize,
    /// `f`, prior width.
    pub filters: usize,
    /// Colour channels `C`.
    pub channels: usize,
    pub scale: ScaleFactor,
    /// Replace every prior by `z^k = 0` (plain gradient descent).
    pub classical: bool,
    /// Bound on FNet output, LR pixels.
    pub max_flow: f64,
}

impl Default for UnrolledConfig {
    fn default() -> Self {
        UnrolledConfig {
            blocks: 3,
            depth: 7,
            filters: 128,
            channels: 3,
            scale: ScaleFactor::new(4).unwrap(),
            classical: false,
            max_flow: 8.0,
        }
    }
}

impl UnrolledConfig {
    pub fn validate(&self) -> Result<()> {
        if self.channels == 0 {
            return Err(invalid("channels must be positive"));
        }
        if !self.classical && (self.depth < 2 || self.filters == 0) {
            return Err(invalid(format!(
                "prior needs depth >= 2 and filters > 0 (depth {}, filters {})",
                self.depth, self.filters
            )));
        }
        if !(self.max_flow > 0.0) {
            return Err(invalid("max_flow must be positive"));
        }
        Ok(())
    }
}

/// Per-block step sizes `alpha_k` (current frame) and `beta_k` (previous
/// frame).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepSizes {
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
}

impl StepSizes {
    /// `alpha_k = beta_k = 2^-k`.
    pub fn initial(blocks: usize) -> Self {
        let v: Vec<f64> = (0..blocks).map(|k| 0.5f64.powi(k as i32)).collect();
        StepSizes {
            alpha: v.clone(),
            beta: v,
        }
    }

    pub fn constant(blocks: usize, alpha: f64, beta: f64) -> Self {
        StepSizes {
            alpha: vec![alpha; blocks],
            beta: vec![beta; blocks],
        }
    }

    pub fn blocks(&self) -> usize {
        self.alpha.len()
    }

    pub fn read_from<T: Real>(params: &ParamStore<T>, blocks: usize) -> Self {
        let read = |name: String| {
            params
                .get(&name)
                .map(|t| t.data()[0].to_f64_lossy())
                .unwrap_or(0.0)
        };
        StepSizes {
            alpha: (0..blocks).map(|k| read(alpha_name(k))).collect(),
            beta: (0..blocks).map(|k| read(beta_name(k))).collect(),
        }
    }

    pub fn write_to<T: Real>(&self, params: &mut ParamStore<T>, kind: ModelKind) {
        for (k, &a) in self.alpha.iter().enumerate() {
            params.insert(alpha_name(k), Tensor::scalar(T::from_f64_lossy(a)));
        }
        if kind == ModelKind::Uvsr {
            for (k, &b) in self.beta.iter().enumerate() {
                params.insert(beta_name(k), Tensor::scalar(T::from_f64_lossy(b)));
            }
        }
    }
}

/// Architecture plus a complete parameter set.
#[derive(Clone, Debug)]
pub struct Model<T: Real> {
    nets: Networks,
    params: ParamStore<T>,
}

impl<T: Real> Model<T> {
    /// Fails with an invalid-state error when any parameter is missing, e.g.
    /// a learned model without trained priors.
    pub fn new(nets: Networks, params: ParamStore<T>) -> Result<Self> {
        nets.check_params(&params)?;
        Ok(Model { nets, params })
    }

    pub fn init(nets: Networks, rng: &mut impl rand::Rng) -> Self {
        let params = nets.init_params(rng);
        Model { nets, params }
    }

    /// Classical-mode model with the initial step sizes.
    pub fn classical(kind: ModelKind, config: &UnrolledConfig) -> Result<Self> {
        let config = UnrolledConfig {
            classical: true,
            ..config.clone()
        };
        let nets = Networks::new(kind, &config)?;
        let params = nets.step_params();
        Ok(Model { nets, params })
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        Model::new(ckpt.networks()?, ckpt.params.cast())
    }

    pub fn nets(&self) -> &Networks {
        &self.nets
    }

    pub fn config(&self) -> &UnrolledConfig {
        self.nets.config()
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    pub fn steps(&self) -> StepSizes {
        StepSizes::read_from(&self.params, self.config().blocks)
    }

    pub fn set_steps(&mut self, steps: &StepSizes) -> Result<()> {
        if steps.blocks() != self.config().blocks || steps.beta.len() != steps.blocks() {
            return Err(invalid("step sizes do not match the block count"));
        }
        steps.write_to(&mut self.params, self.nets.kind());
        Ok(())
    }
}

/// Separable blur taps for each batch item.
pub type BatchTaps<T> = Rc<Vec<Vec<T>>>;

pub fn batch_taps<T: Real>(kernels: &[&BlurKernel]) -> BatchTaps<T> {
    Rc::new(
        kernels
            .iter()
            .map(|k| k.taps_1d().iter().map(|&v| T::from_f64_lossy(v)).collect())
            .collect(),
    )
}

/// `D_s H` and its approximate adjoint `H B U_s`, replicate padding.
struct Observation<'a, T: Real> {
    taps: &'a BatchTaps<T>,
    s: usize,
}

impl<T: Real> Observation<'_, T> {
    fn forward(&self, x: &Var<T>) -> Result<Var<T>> {
        x.blur(self.taps, Padding::Replicate)?.downsample(self.s)
    }

    fn back(&self, r: &Var<T>) -> Result<Var<T>> {
        r.upsample_bilinear(self.s).blur(self.taps, Padding::Replicate)
    }
}

/// `B U_s` applied to an LR flow, with displacements rescaled to HR pixels.
pub fn upsample_flow_var<T: Real>(u: &Var<T>, s: usize) -> Var<T> {
    u.upsample_bilinear(s).scale(s as f64)
}

/// Where the two LR flows of a frame come from.
pub enum FlowSource<T: Real> {
    Network,
    Zero,
    /// LR flows `u_{t→t−1}` and `u_{t−1→t}`, `[n, 2, h, w]`.
    Given { t_to_prev: Var<T>, prev_to_t: Var<T> },
}

pub struct FrameOutput<T: Real> {
    pub x: Var<T>,
    /// `u_{t−1→t, LR}`.
    pub flow_prev_to_t: Var<T>,
    /// `u_{t→t−1, LR}`.
    pub flow_t_to_prev: Var<T>,
}

fn check_frame_shapes<T: Real>(y_t: &Var<T>, y_prev: &Var<T>, x_prev: &Var<T>, s: usize) -> Result<()> {
    let [n, c, h, w] = y_t.shape();
    if y_prev.shape() != y_t.shape() {
        return Err(invalid(format!(
            "y_t {:?} and y_prev {:?} differ",
            y_t.shape(),
            y_prev.shape()
        )));
    }
    if x_prev.shape() != [n, c, h * s, w * s] {
        return Err(invalid(format!(
            "previous estimate {:?} is not {s}x the LR frame {:?}",
            x_prev.shape(),
            y_t.shape()
        )));
    }
    Ok(())
}

/// One recurrent step on a batch.
pub fn uvsr_frame_graph<T: Real>(
    nets: &Networks,
    p: &Bindings<T>,
    y_t: &Var<T>,
    y_prev: &Var<T>,
    x_prev: &Var<T>,
    taps: &BatchTaps<T>,
    flows: FlowSource<T>,
) -> Result<FrameOutput<T>> {
    if nets.kind() != ModelKind::Uvsr {
        return Err(invalid("uvsr_frame needs a video model"));
    }
    let config = nets.config();
    let s = config.scale.get();
    check_frame_shapes(y_t, y_prev, x_prev, s)?;
    let obs = Observation { taps, s };
    let [n, _, h, w] = y_t.shape();

    let x0 = obs.back(y_t)?;
    let (t_to_prev, prev_to_t) = match flows {
        FlowSource::Network => {
            let fnet = nets
                .fnet()
                .ok_or_else(|| Error::InvalidState("classical models have no flow network".into()))?;
            (fnet.forward(p, y_prev, y_t)?, fnet.forward(p, y_t, y_prev)?)
        }
        FlowSource::Zero => {
            let z = Var::constant(Tensor::zeros([n, 2, h, w]));
            (z.clone(), z)
        }
        FlowSource::Given { t_to_prev, prev_to_t } => {
            if t_to_prev.shape() != [n, 2, h, w] || prev_to_t.shape() != [n, 2, h, w] {
                return Err(invalid("given flows must be [n, 2, h, w] in LR space"));
            }
            (t_to_prev, prev_to_t)
        }
    };
    let u_fwd = upsample_flow_var(&t_to_prev, s);
    let u_bwd = upsample_flow_var(&prev_to_t, s);
    let warped_prev_lr = x_prev.warp(&u_bwd)?.space_to_depth(s)?;

    let mut x = x0;
    for k in 0..config.blocks {
        let mut next = x.clone();
        if let Some(prior) = nets.priors().get(k) {
            let z = prior
                .forward(p, &[&x.space_to_depth(s)?, &warped_prev_lr])?
                .depth_to_space(s)?;
            next = next.add(&z)?;
        }
        let r_t = obs.back(&obs.forward(&x)?.sub(y_t)?)?;
        let r_prev = obs
            .back(&obs.forward(&x.warp(&u_fwd)?)?.sub(y_prev)?)?
            .warp(&u_bwd)?;
        next = next
            .sub(&r_t.mul_scalar(p.get(&alpha_name(k))?)?)?
            .sub(&r_prev.mul_scalar(p.get(&beta_name(k))?)?)?;
        x = next;
    }
    Ok(FrameOutput {
        x,
        flow_prev_to_t: prev_to_t,
        flow_t_to_prev: t_to_prev,
    })
}

/// Single-image reconstruction on a batch.
pub fn sisr_graph<T: Real>(nets: &Networks, p: &Bindings<T>, y: &Var<T>, taps: &BatchTaps<T>) -> Result<Var<T>> {
    if nets.kind() != ModelKind::Sisr {
        return Err(invalid("sisr_solve needs a single-image model"));
    }
    let config = nets.config();
    let s = config.scale.get();
    let obs = Observation { taps, s };
    let mut x = obs.back(y)?;
    for k in 0..config.blocks {
        let mut next = x.clone();
        if let Some(prior) = nets.priors().get(k) {
            let z = prior.forward(p, &[&x.space_to_depth(s)?])?.depth_to_space(s)?;
            next = next.add(&z)?;
        }
        let r = obs.back(&obs.forward(&x)?.sub(y)?)?;
        x = next.sub(&r.mul_scalar(p.get(&alpha_name(k))?)?)?;
    }
    Ok(x)
}

fn lr_var<T: Real>(y: &ImageTensor, name: &str) -> Result<Var<T>> {
    if y.space() != Space::Lr {
        return Err(invalid(format!("{name} must be an LR image")));
    }
    Ok(Var::constant(y.to_tensor()))
}

fn check_model_scale(config: &UnrolledConfig, s: ScaleFactor) -> Result<()> {
    if config.scale != s {
        return Err(invalid(format!(
            "model scale {} differs from requested scale {}",
            config.scale.get(),
            s.get()
        )));
    }
    Ok(())
}

/// `x^k + z^k − alpha_k H B U_s D_s H x^k + alpha_k x^0`.
pub fn sisr_data_step(
    x_k: &ImageTensor,
    z_k: &ImageTensor,
    x0: &ImageTensor,
    alpha_k: f64,
    h: &BlurKernel,
    s: ScaleFactor,
) -> Result<ImageTensor> {
    if !x_k.same_dims(z_k) || !x_k.same_dims(x0) {
        return Err(invalid("sisr_data_step arguments differ in shape"));
    }
    let grad = backproject(&downsample(&blur(x_k, h, Padding::Replicate)?, s)?, h, s)?;
    x_k.add(z_k)?.sub(&grad.scale(alpha_k))?.add(&x0.scale(alpha_k))
}

/// `D_s H x − y_t` and `D_s H F_{u_{t→t−1}} x − y_{t−1}` with an HR flow.
pub fn data_residuals(
    x: &ImageTensor,
    y_t: &ImageTensor,
    y_prev: &ImageTensor,
    t_to_prev: &FlowField,
    h: &BlurKernel,
    s: ScaleFactor,
) -> Result<(ImageTensor, ImageTensor)> {
    let dh = |v: &ImageTensor| downsample(&blur(v, h, Padding::Replicate)?, s);
    Ok((dh(x)?.sub(y_t)?, dh(&warp(x, t_to_prev)?)?.sub(y_prev)?))
}

/// `x^k + z^k − alpha_k H B U_s (D_s H x^k − y_t)
///  − beta_k F_{u_{t−1→t}} H B U_s (D_s H F_{u_{t→t−1}} x^k − y_{t−1})`
/// with HR flows.
#[allow(clippy::too_many_arguments)]
pub fn uvsr_data_step(
    x_k: &ImageTensor,
    z_k: &ImageTensor,
    y_t: &ImageTensor,
    y_prev: &ImageTensor,
    t_to_prev: &FlowField,
    prev_to_t: &FlowField,
    alpha_k: f64,
    beta_k: f64,
    h: &BlurKernel,
    s: ScaleFactor,
) -> Result<ImageTensor> {
    if !x_k.same_dims(z_k) {
        return Err(invalid("uvsr_data_step arguments differ in shape"));
    }
    let (r_t, r_prev) = data_residuals(x_k, y_t, y_prev, t_to_prev, h, s)?;
    let g_t = backproject(&r_t, h, s)?;
    let g_prev = warp(&backproject(&r_prev, h, s)?, prev_to_t)?;
    x_k.add(z_k)?.sub(&g_t.scale(alpha_k))?.sub(&g_prev.scale(beta_k))
}

/// Runs all blocks of a single-image model on `y`.
pub fn sisr_solve<T: Real>(y: &ImageTensor, h: &BlurKernel, s: ScaleFactor, model: &Model<T>) -> Result<ImageTensor> {
    check_model_scale(model.config(), s)?;
    let taps = batch_taps(&[h]);
    let x = sisr_graph(model.nets(), &model.params.bind_constant(), &lr_var(y, "y")?, &taps)?;
    ImageTensor::from_tensor(x.value(), 0, Space::Hr)
}

/// `x̂_{t−1}` threaded between frames.
#[derive(Clone, Debug, Default)]
pub struct RecurrentState {
    pub prev_hr_estimate: Option<ImageTensor>,
}

impl RecurrentState {
    /// State before frame 0: `x̂_{−1} = H B U_s y_0`.
    pub fn first_frame(y0: &ImageTensor, h: &BlurKernel, s: ScaleFactor) -> Result<Self> {
        Ok(RecurrentState {
            prev_hr_estimate: Some(backproject(y0, h, s)?),
        })
    }
}

/// Per-frame flow choice for the image-level API.
#[derive(Clone, Debug)]
pub enum FrameFlows {
    Network,
    Zero,
    /// LR flows `u_{t→t−1}` and `u_{t−1→t}`.
    Given { t_to_prev: FlowField, prev_to_t: FlowField },
}

#[derive(Clone, Debug)]
pub struct FrameResult {
    pub x: ImageTensor,
    pub flow_prev_to_t: FlowField,
    pub flow_t_to_prev: FlowField,
}

fn flow_var<T: Real>(u: &FlowField) -> Result<Var<T>> {
    if u.space() != Space::Lr {
        return Err(invalid("frame flows must be given in LR space"));
    }
    Ok(Var::constant(u.to_tensor()))
}

fn to_flow<T: Real>(v: &Var<T>) -> Result<FlowField> {
    let [_, _, h, w] = v.shape();
    FlowField::new(
        h,
        w,
        v.value().item(0).iter().map(|x| x.to_f64_lossy()).collect(),
        Space::Lr,
    )
}

/// One step of the recurrence; updates `state` with the new estimate.
pub fn uvsr_frame<T: Real>(
    y_t: &ImageTensor,
    y_prev: &ImageTensor,
    state: &mut RecurrentState,
    h: &BlurKernel,
    s: ScaleFactor,
    model: &Model<T>,
    flows: FrameFlows,
) -> Result<FrameResult> {
    check_model_scale(model.config(), s)?;
    let x_prev = state
        .prev_hr_estimate
        .as_ref()
        .ok_or_else(|| Error::InvalidState("no previous HR estimate".into()))?;
    if x_prev.space() != Space::Hr {
        return Err(invalid("previous estimate must be HR"));
    }
    let source = match &flows {
        FrameFlows::Network => FlowSource::Network,
        FrameFlows::Zero => FlowSource::Zero,
        FrameFlows::Given { t_to_prev, prev_to_t } => FlowSource::Given {
            t_to_prev: flow_var(t_to_prev)?,
            prev_to_t: flow_var(prev_to_t)?,
        },
    };
    let out = uvsr_frame_graph(
        model.nets(),
        &model.params.bind_constant(),
        &lr_var(y_t, "y_t")?,
        &lr_var(y_prev, "y_prev")?,
        &Var::constant(x_prev.to_tensor()),
        &batch_taps(&[h]),
        source,
    )?;
    let x = ImageTensor::from_tensor(out.x.value(), 0, Space::Hr)?;
    state.prev_hr_estimate = Some(x.clone());
    Ok(FrameResult {
        x,
        flow_prev_to_t: to_flow(&out.flow_prev_to_t)?,
        flow_t_to_prev: to_flow(&out.flow_t_to_prev)?,
    })
}

/// Flow choice for a whole sequence. Frame 0 always uses zero flows.
#[derive(Clone, Debug)]
pub enum SequenceFlows {
    Network,
    Zero,
    /// `(u_{t→t−1}, u_{t−1→t})` for frames `1..T`, LR space.
    Given(Vec<(FlowField, FlowField)>),
}

/// Runs the recurrence over `y_frames`; one result per frame.
pub fn uvsr_sequence<T: Real>(
    y_frames: &[ImageTensor],
    h: &BlurKernel,
    s: ScaleFactor,
    model: &Model<T>,
    flows: &SequenceFlows,
) -> Result<Vec<FrameResult>> {
    let first = y_frames.first().ok_or_else(|| invalid("empty sequence"))?;
    if let SequenceFlows::Given(list) = flows {
        if list.len() + 1 != y_frames.len() {
            return Err(invalid(format!(
                "{} flow pairs for {} frames",
                list.len(),
                y_frames.len()
            )));
        }
    }
    let mut state = RecurrentState::first_frame(first, h, s)?;
    let mut out = Vec::with_capacity(y_frames.len());
    for (t, y_t) in y_frames.iter().enumerate() {
        let y_prev = if t == 0 { y_t } else { &y_frames[t - 1] };
        let frame_flows = match flows {
            _ if t == 0 => FrameFlows::Zero,
            SequenceFlows::Network => FrameFlows::Network,
            SequenceFlows::Zero => FrameFlows::Zero,
            SequenceFlows::Given(list) => FrameFlows::Given {
                t_to_prev: list[t - 1].0.clone(),
                prev_to_t: list[t - 1].1.clone(),
            },
        };
        out.push(uvsr_frame(y_t, y_prev, &mut state, h, s, model, frame_flows)?);
    }
    Ok(out)
}
