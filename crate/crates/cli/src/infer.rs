use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use uvsr_core::degradation::{SigmaSampler, FIXED_SIGMA};
use uvsr_core::io::{read_sequence, write_sequence};
use uvsr_core::networks::{Checkpoint, ModelKind};
use uvsr_core::operators::{make_gaussian_kernel, ImageTensor, RadiusPolicy, Space};
use uvsr_core::tensor::Real;
use uvsr_core::unrolled::{sisr_solve, uvsr_sequence, Model, SequenceFlows, UnrolledConfig};

use crate::degrade::{sequences_under, DegradeManifest, MANIFEST_FILE};
use crate::{load_toml, required, scale_arg, write_resolved, write_text, CliError, CliResult, InferArgs};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InferConfig {
    pub input: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    /// Identity priors with the step sizes' initial values.
    pub classical: bool,
    pub single_frame: bool,
    /// Blur width for the data steps; otherwise taken from a degrade
    /// manifest next to the input, then from the checkpoint.
    pub sigma: Option<f64>,
    /// Architecture in classical mode; ignored with a checkpoint.
    pub model: UnrolledConfig,
}

impl Default for InferConfig {
    fn default() -> Self {
        InferConfig {
            input: None,
            out: None,
            checkpoint: None,
            classical: false,
            single_frame: false,
            sigma: None,
            model: UnrolledConfig {
                classical: true,
                ..UnrolledConfig::default()
            },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InferredSequence {
    pub name: String,
    pub sigma: f64,
    pub frames: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InferManifest {
    pub kind: ModelKind,
    pub classical: bool,
    pub checkpoint: Option<PathBuf>,
    pub scale: usize,
    pub sequences: Vec<InferredSequence>,
}

pub fn resolve(args: &InferArgs) -> CliResult<InferConfig> {
    let mut c: InferConfig = match &args.config {
        Some(p) => load_toml(p)?,
        None => InferConfig::default(),
    };
    if args.input.is_some() {
        c.input = args.input.clone();
    }
    if args.out.is_some() {
        c.out = args.out.clone();
    }
    if args.checkpoint.is_some() {
        c.checkpoint = args.checkpoint.clone();
        c.classical = false;
    }
    if args.classical {
        c.classical = true;
        c.checkpoint = None;
    }
    if args.single_frame {
        c.single_frame = true;
    }
    if let Some(k) = args.blocks {
        c.model.blocks = k;
    }
    if let Some(s) = args.scale {
        c.model.scale = scale_arg(s)?;
    }
    if args.sigma.is_some() {
        c.sigma = args.sigma;
    }
    if c.checkpoint.is_none() && !c.classical {
        return Err(CliError::MissingCheckpoint(
            "infer needs --checkpoint unless --classical is given".to_string(),
        ));
    }
    c.model.classical = true;
    c.model.validate()?;
    Ok(c)
}

/// Manifest written by `degrade` in `input` or its parent.
fn find_degrade_manifest(input: &Path) -> CliResult<Option<DegradeManifest>> {
    for dir in [Some(input), input.parent()].into_iter().flatten() {
        let path = dir.join(MANIFEST_FILE);
        if path.is_file() {
            return DegradeManifest::load(&path).map(Some);
        }
    }
    Ok(None)
}

enum Loaded {
    Learned(Model<f32>, SigmaSampler),
    Classical(Model<f64>),
}

fn super_resolve<T: Real>(
    model: &Model<T>,
    frames: &[ImageTensor],
    sigma: f64,
    single_frame: bool,
) -> CliResult<Vec<ImageTensor>> {
    let h = make_gaussian_kernel(sigma, RadiusPolicy::ThreeSigma)?;
    let s = model.config().scale;
    let sisr = single_frame || model.nets().kind() == ModelKind::Sisr;
    if sisr {
        if model.nets().kind() == ModelKind::Uvsr {
            return Err(CliError::Usage("--single-frame needs a single-image model or --classical".into()));
        }
        return Ok(frames
            .iter()
            .map(|y| sisr_solve(y, &h, s, model))
            .collect::<uvsr_core::Result<_>>()?);
    }
    let flows = if model.nets().fnet().is_some() {
        SequenceFlows::Network
    } else {
        SequenceFlows::Zero
    };
    Ok(uvsr_sequence(frames, &h, s, model, &flows)?
        .into_iter()
        .map(|r| r.x)
        .collect())
}

pub fn run(args: &InferArgs) -> CliResult<()> {
    let config = resolve(args)?;
    let input = required(config.input.clone(), "input")?;
    let out = required(config.out.clone(), "out")?;
    let loaded = match &config.checkpoint {
        Some(path) => {
            if !path.join("manifest.json").is_file() {
                return Err(CliError::MissingCheckpoint(path.display().to_string()));
            }
            let ckpt = Checkpoint::load(path)?;
            if args.scale.is_some() && ckpt.manifest.config.scale != config.model.scale {
                return Err(CliError::Usage(format!(
                    "--scale {} disagrees with the checkpoint's scale {}",
                    config.model.scale.get(),
                    ckpt.manifest.config.scale.get()
                )));
            }
            Loaded::Learned(Model::from_checkpoint(&ckpt)?, ckpt.manifest.sigma)
        }
        None => {
            let kind = if config.single_frame { ModelKind::Sisr } else { ModelKind::Uvsr };
            Loaded::Classical(Model::classical(kind, &config.model)?)
        }
    };
    let degrade = find_degrade_manifest(&input)?;
    let fallback = match &loaded {
        Loaded::Learned(_, SigmaSampler::Fixed { value }) => *value,
        _ => FIXED_SIGMA,
    };
    let mut done = Vec::new();
    for (name, dir) in sequences_under(&input)? {
        let sigma = config
            .sigma
            .or_else(|| degrade.as_ref().and_then(|m| m.entry(&name)).map(|e| e.sigma))
            .unwrap_or(fallback);
        let lr = read_sequence(&dir, Space::Lr)?;
        let hr = match &loaded {
            Loaded::Learned(m, _) => super_resolve(m, &lr, sigma, config.single_frame)?,
            Loaded::Classical(m) => super_resolve(m, &lr, sigma, false)?,
        };
        write_sequence(&out.join(&name), &hr)?;
        println!("{name}: {} frames, sigma {sigma:.4}", hr.len());
        done.push(InferredSequence {
            name,
            sigma,
            frames: hr.len(),
        });
    }
    let (kind, scale) = match &loaded {
        Loaded::Learned(m, _) => (m.nets().kind(), m.config().scale.get()),
        Loaded::Classical(m) => (m.nets().kind(), m.config().scale.get()),
    };
    let manifest = InferManifest {
        kind,
        classical: config.classical,
        checkpoint: config.checkpoint.clone(),
        scale,
        sequences: done,
    };
    let text = serde_json::to_string_pretty(&manifest).map_err(uvsr_core::Error::from)?;
    write_text(&out, MANIFEST_FILE, &(text + "\n"))?;
    write_resolved(&out, &config)
}
