//! Trainable components: the per-block prior CNNs, the optical-flow network
//! and the parameter bookkeeping shared by training and inference.

mod checkpoint;

use std::collections::HashMap;

use rand::Rng;
use rand_distr::{Distribution, Normal};

pub use checkpoint::{Checkpoint, CheckpointManifest, CHECKPOINT_FORMAT};

use serde::{Deserialize, Serialize};

use crate::autodiff::Var;
use crate::error::{invalid, Error, Result};
use crate::tensor::{Real, Shape, Tensor};
use crate::unrolled::{StepSizes, UnrolledConfig};

/// Named parameter tensors in insertion order.
#[derive(Clone, Debug, Default)]
pub struct ParamStore<T: Real> {
    entries: Vec<(String, Tensor<T>)>,
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore {
            entries: Vec::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor<T>) {
        let name = name.into();
        match self.entries.iter_mut().find(|(n, _)| *n == name) {
            Some(slot) => slot.1 = value,
            None => self.entries.push((name, value)),
        }
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.entries
            .iter_mut()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor<T>)> {
        self.entries.iter_mut().map(|(n, t)| (n.as_str(), t))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total number of scalars.
    pub fn scalar_count(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.len()).sum()
    }

    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        ParamStore {
            entries: self
                .entries
                .iter()
                .map(|(n, t)| (n.clone(), t.cast()))
                .collect(),
        }
    }

    /// Every parameter as a gradient-free graph constant.
    pub fn bind_constant(&self) -> Bindings<T> {
        self.bind(Var::constant)
    }

    /// Every parameter as a leaf collecting gradients.
    pub fn bind_trainable(&self) -> Bindings<T> {
        self.bind(Var::leaf)
    }

    fn bind(&self, make: impl Fn(Tensor<T>) -> Var<T>) -> Bindings<T> {
        Bindings {
            vars: self
                .entries
                .iter()
                .map(|(n, t)| (n.clone(), make(t.clone())))
                .collect(),
        }
    }
}

/// Parameters of one forward pass, as graph variables.
pub struct Bindings<T: Real> {
    vars: HashMap<String, Var<T>>,
}

impl<T: Real> Bindings<T> {
    pub fn get(&self, name: &str) -> Result<&Var<T>> {
        self.vars
            .get(name)
            .ok_or_else(|| invalid(format!("missing parameter `{name}`")))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Var<T>)> {
        self.vars.iter().map(|(n, v)| (n.as_str(), v))
    }

    /// Replaces one binding, e.g. to perturb a single block in tests.
    pub fn set(&mut self, name: &str, var: Var<T>) {
        self.vars.insert(name.to_string(), var);
    }
}

/// Trainable scalars of a 3x3 convolution with bias.
pub fn conv_param_count(cin: usize, cout: usize) -> usize {
    3 * 3 * cin * cout + cout
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum Init {
    /// Variance scaling, `std = sqrt(2 / fan_in)`.
    VarianceScaling,
    /// Variance scaling shrunk by a gain.
    Scaled(f64),
    Zero,
}

#[derive(Clone, Debug, PartialEq, Eq)]
struct ConvLayer {
    name: String,
    cin: usize,
    cout: usize,
}

impl ConvLayer {
    fn weight(&self) -> String {
        format!("{}.weight", self.name)
    }

    fn bias(&self) -> String {
        format!("{}.bias", self.name)
    }

    fn init<T: Real>(&self, store: &mut ParamStore<T>, init: Init, rng: &mut impl Rng) {
        let shape = [self.cout, self.cin, 3, 3];
        let n = shape.iter().product();
        let weights = match init {
            Init::Zero => vec![T::zero(); n],
            Init::VarianceScaling | Init::Scaled(_) => {
                let gain = if let Init::Scaled(g) = init { g } else { 1.0 };
                let std = gain * (2.0 / (9 * self.cin) as f64).sqrt();
                let normal = Normal::new(0.0, std).expect("positive std");
                (0..n)
                    .map(|_| T::from_f64_lossy(normal.sample(rng)))
                    .collect()
            }
        };
        store.insert(self.weight(), Tensor::from_vec(shape, weights).unwrap());
        store.insert(self.bias(), Tensor::zeros([1, self.cout, 1, 1]));
    }

    fn apply<T: Real>(&self, p: &Bindings<T>, x: &Var<T>) -> Result<Var<T>> {
        x.conv2d(p.get(&self.weight())?, p.get(&self.bias())?)
    }

    fn param_count(&self) -> usize {
        conv_param_count(self.cin, self.cout)
    }
}

/// VDSR-style prior `N_θ`: `depth` 3x3 convolutions with rectified-linear
/// activations in between and none after the last. The last layer starts at
/// zero so a fresh block is a pure data-step refinement.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PriorCnn {
    layers: Vec<ConvLayer>,
}

impl PriorCnn {
    pub fn new(prefix: &str, in_channels: usize, out_channels: usize, depth: usize, filters: usize) -> Result<Self> {
        if depth < 2 || filters == 0 || in_channels == 0 || out_channels == 0 {
            return Err(invalid(format!(
                "prior CNN needs depth >= 2 and positive widths (depth {depth}, filters {filters})"
            )));
        }
        let layers = (0..depth)
            .map(|i| ConvLayer {
                name: format!("{prefix}.conv{i}"),
                cin: if i == 0 { in_channels } else { filters },
                cout: if i + 1 == depth { out_channels } else { filters },
            })
            .collect();
        Ok(PriorCnn { layers })
    }

    pub fn in_channels(&self) -> usize {
        self.layers[0].cin
    }

    pub fn out_channels(&self) -> usize {
        self.layers.last().unwrap().cout
    }

    pub fn init<T: Real>(&self, store: &mut ParamStore<T>, rng: &mut impl Rng) {
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let init = if i == last { Init::Zero } else { Init::VarianceScaling };
            layer.init(store, init, rng);
        }
    }

    /// One pass over the channel-concatenation of `inputs`, all in LR space.
    pub fn forward<T: Real>(&self, p: &Bindings<T>, inputs: &[&Var<T>]) -> Result<Var<T>> {
        let x = Var::concat_channels(inputs)?;
        if x.shape()[1] != self.in_channels() {
            return Err(invalid(format!(
                "prior CNN expects {} input channels, got {}",
                self.in_channels(),
                x.shape()[1]
            )));
        }
        let last = self.layers.len() - 1;
        let mut h = x;
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.apply(p, &h)?;
            if i != last {
                h = h.relu();
            }
        }
        Ok(h)
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(ConvLayer::param_count).sum()
    }

    pub fn param_names(&self) -> Vec<String> {
        self.layers
            .iter()
            .flat_map(|l| [l.weight(), l.bias()])
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Resample {
    None,
    Down,
    Up,
}

/// Encoder-decoder flow estimator on two concatenated LR frames. Three 2x
/// max-pool stages mirror three bilinear 2x upsampling stages; the output is
/// `max_flow * tanh(.)` LR pixels.
#[derive(Clone, Debug, PartialEq)]
pub struct FNet {
    stages: Vec<(ConvLayer, ConvLayer, Resample)>,
    max_flow: f64,
}

/// Input dims must be multiples of this; other sizes are padded.
const FNET_ALIGN: usize = 8;

/// Init gain of the flow output layer; fresh flows are near zero.
const FNET_OUTPUT_GAIN: f64 = 1e-2;

impl FNet {
    pub fn new(prefix: &str, frame_channels: usize, max_flow: f64) -> Result<Self> {
        if frame_channels == 0 || !(max_flow > 0.0) {
            return Err(invalid("FNet needs frame channels and a positive max flow"));
        }
        let schedule = [
            (2 * frame_channels, 32, Resample::Down),
            (32, 64, Resample::Down),
            (64, 128, Resample::Down),
            (128, 256, Resample::Up),
            (256, 128, Resample::Up),
            (128, 64, Resample::Up),
        ];
        let mut stages = Vec::new();
        let mut idx = 0;
        let mut layer = |cin, cout| {
            let l = ConvLayer {
                name: format!("{prefix}.conv{idx}"),
                cin,
                cout,
            };
            idx += 1;
            l
        };
        for (cin, cout, resample) in schedule {
            stages.push((layer(cin, cout), layer(cout, cout), resample));
        }
        stages.push((layer(64, 32), layer(32, 2), Resample::None));
        Ok(FNet { stages, max_flow })
    }

    pub fn max_flow(&self) -> f64 {
        self.max_flow
    }

    pub fn init<T: Real>(&self, store: &mut ParamStore<T>, rng: &mut impl Rng) {
        let last = self.stages.len() - 1;
        for (i, (a, b, _)) in self.stages.iter().enumerate() {
            a.init(store, Init::VarianceScaling, rng);
            let init = if i == last { Init::Scaled(FNET_OUTPUT_GAIN) } else { Init::VarianceScaling };
            b.init(store, init, rng);
        }
    }

    /// LR flow `[n, 2, h, w]` from `frame_a` and `frame_b`.
    pub fn forward<T: Real>(&self, p: &Bindings<T>, frame_a: &Var<T>, frame_b: &Var<T>) -> Result<Var<T>> {
        if frame_a.shape() != frame_b.shape() {
            return Err(invalid(format!(
                "FNet frames differ: {:?} vs {:?}",
                frame_a.shape(),
                frame_b.shape()
            )));
        }
        let [_, _, h, w] = frame_a.shape();
        let align = |v: usize| v.div_ceil(FNET_ALIGN) * FNET_ALIGN;
        let mut x = Var::concat_channels(&[frame_a, frame_b])?.pad_replicate(align(h), align(w))?;
        let last = self.stages.len() - 1;
        for (i, (a, b, resample)) in self.stages.iter().enumerate() {
            x = a.apply(p, &x)?.leaky_relu(0.2);
            x = b.apply(p, &x)?;
            if i != last {
                x = x.leaky_relu(0.2);
            }
            x = match resample {
                Resample::Down => x.maxpool2()?,
                Resample::Up => x.upsample_bilinear(2),
                Resample::None => x,
            };
        }
        Ok(x.tanh().scale(self.max_flow).crop(h, w)?)
    }

    pub fn param_count(&self) -> usize {
        self.stages
            .iter()
            .map(|(a, b, _)| a.param_count() + b.param_count())
            .sum()
    }

    pub fn param_names(&self) -> Vec<String> {
        self.stages
            .iter()
            .flat_map(|(a, b, _)| [a.weight(), a.bias(), b.weight(), b.bias()])
            .collect()
    }
}

pub fn alpha_name(k: usize) -> String {
    format!("step.alpha{k}")
}

pub fn beta_name(k: usize) -> String {
    format!("step.beta{k}")
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    /// Recurrent video model: priors on `(x_LR, warped previous)`, FNet, and
    /// both step-size sequences.
    Uvsr,
    /// Single-image model: priors on `x_LR` and `alpha` only.
    Sisr,
}

impl ModelKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Uvsr => "uvsr",
            ModelKind::Sisr => "sisr",
        }
    }
}

/// Architecture of a full model. In classical mode only the step sizes are
/// parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Networks {
    kind: ModelKind,
    config: UnrolledConfig,
    priors: Vec<PriorCnn>,
    fnet: Option<FNet>,
}

impl Networks {
    pub fn new(kind: ModelKind, config: &UnrolledConfig) -> Result<Self> {
        config.validate()?;
        let lr_channels = config.scale.get().pow(2) * config.channels;
        let inputs = match kind {
            ModelKind::Uvsr => 2 * lr_channels,
            ModelKind::Sisr => lr_channels,
        };
        let (priors, fnet) = if config.classical {
            (Vec::new(), None)
        } else {
            let priors = (0..config.blocks)
                .map(|k| PriorCnn::new(&format!("prior{k}"), inputs, lr_channels, config.depth, config.filters))
                .collect::<Result<_>>()?;
            let fnet = match kind {
                ModelKind::Uvsr => Some(FNet::new("fnet", config.channels, config.max_flow)?),
                ModelKind::Sisr => None,
            };
            (priors, fnet)
        };
        Ok(Networks {
            kind,
            config: config.clone(),
            priors,
            fnet,
        })
    }

    pub fn uvsr(config: &UnrolledConfig) -> Result<Self> {
        Networks::new(ModelKind::Uvsr, config)
    }

    pub fn sisr(config: &UnrolledConfig) -> Result<Self> {
        Networks::new(ModelKind::Sisr, config)
    }

    pub fn kind(&self) -> ModelKind {
        self.kind
    }

    pub fn config(&self) -> &UnrolledConfig {
        &self.config
    }

    /// Empty in classical mode.
    pub fn priors(&self) -> &[PriorCnn] {
        &self.priors
    }

    pub fn fnet(&self) -> Option<&FNet> {
        self.fnet.as_ref()
    }

    /// Step sizes at their initial values.
    pub fn step_params<T: Real>(&self) -> ParamStore<T> {
        let steps = StepSizes::initial(self.config.blocks);
        let mut store = ParamStore::new();
        steps.write_to(&mut store, self.kind);
        store
    }

    /// Fresh parameters: variance-scaling weights, zero last prior layers,
    /// initial step sizes.
    pub fn init_params<T: Real>(&self, rng: &mut impl Rng) -> ParamStore<T> {
        let mut store = ParamStore::new();
        for prior in &self.priors {
            prior.init(&mut store, rng);
        }
        if let Some(fnet) = &self.fnet {
            fnet.init(&mut store, rng);
        }
        for (name, value) in self.step_params::<T>().iter() {
            store.insert(name, value.clone());
        }
        store
    }

    /// Every parameter name with its shape.
    pub fn expected_shapes(&self) -> Vec<(String, Shape)> {
        let mut out = Vec::new();
        let conv_shapes = |names: Vec<String>, layers: &[ConvLayer], out: &mut Vec<(String, Shape)>| {
            for (pair, l) in names.chunks(2).zip(layers) {
                out.push((pair[0].clone(), [l.cout, l.cin, 3, 3]));
                out.push((pair[1].clone(), [1, l.cout, 1, 1]));
            }
        };
        for prior in &self.priors {
            conv_shapes(prior.param_names(), &prior.layers, &mut out);
        }
        if let Some(fnet) = &self.fnet {
            let layers: Vec<ConvLayer> = fnet
                .stages
                .iter()
                .flat_map(|(a, b, _)| [a.clone(), b.clone()])
                .collect();
            conv_shapes(fnet.param_names(), &layers, &mut out);
        }
        for k in 0..self.config.blocks {
            out.push((alpha_name(k), [1, 1, 1, 1]));
            if self.kind == ModelKind::Uvsr {
                out.push((beta_name(k), [1, 1, 1, 1]));
            }
        }
        out
    }

    /// Fails unless `params` holds exactly the expected names and shapes.
    pub fn check_params<T: Real>(&self, params: &ParamStore<T>) -> Result<()> {
        let expected = self.expected_shapes();
        for (name, shape) in &expected {
            match params.get(name) {
                None => {
                    return Err(Error::InvalidState(format!("parameter `{name}` is missing")))
                }
                Some(t) if t.shape() != *shape => {
                    return Err(Error::InvalidState(format!(
                        "parameter `{name}` has shape {:?}, expected {shape:?}",
                        t.shape()
                    )))
                }
                _ => {}
            }
        }
        if params.len() != expected.len() {
            return Err(Error::InvalidState(format!(
                "{} parameters present, {} expected",
                params.len(),
                expected.len()
            )));
        }
        Ok(())
    }
}

/// Exact number of trainable scalars, step sizes included.
pub fn count_parameters(nets: &Networks) -> usize {
    nets.expected_shapes()
        .iter()
        .map(|(_, s)| s.iter().product::<usize>())
        .sum()
}
