use std::fs;
use std::path::Path;

use safetensors::{serialize_to_file, Dtype, SafeTensors, View};
use serde::{Deserialize, Serialize};

use super::{count_parameters, ModelKind, Networks, ParamStore};
use crate::degradation::SigmaSampler;
use crate::error::{Error, Result};
use crate::tensor::Tensor;
use crate::unrolled::UnrolledConfig;

pub const CHECKPOINT_FORMAT: u32 = 1;
const PARAMS_FILE: &str = "params.safetensors";
const MANIFEST_FILE: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub format: u32,
    pub kind: ModelKind,
    pub config: UnrolledConfig,
    pub sigma: SigmaSampler,
    pub step: u64,
    pub parameter_count: usize,
}

/// Parameters plus manifest, stored as a directory holding
/// `params.safetensors` and `manifest.json`.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub manifest: CheckpointManifest,
    pub params: ParamStore<f32>,
}

struct F32View<'a>(&'a Tensor<f32>);

impl View for F32View<'_> {
    fn dtype(&self) -> Dtype {
        Dtype::F32
    }

    fn shape(&self) -> &[usize] {
        self.0.shape_ref()
    }

    fn data(&self) -> std::borrow::Cow<'_, [u8]> {
        self.0.data().iter().flat_map(|v| v.to_le_bytes()).collect()
    }

    fn data_len(&self) -> usize {
        self.0.len() * 4
    }
}

fn ckpt_err(e: impl std::fmt::Display) -> Error {
    Error::Checkpoint(e.to_string())
}

impl Checkpoint {
    pub fn new(
        nets: &Networks,
        params: ParamStore<f32>,
        sigma: SigmaSampler,
        step: u64,
    ) -> Result<Self> {
        nets.check_params(&params)?;
        Ok(Checkpoint {
            manifest: CheckpointManifest {
                format: CHECKPOINT_FORMAT,
                kind: nets.kind(),
                config: nets.config().clone(),
                sigma,
                step,
                parameter_count: count_parameters(nets),
            },
            params,
        })
    }

    pub fn networks(&self) -> Result<Networks> {
        Networks::new(self.manifest.kind, &self.manifest.config)
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let views: Vec<(String, F32View)> = self
            .params
            .iter()
            .map(|(n, t)| (n.to_string(), F32View(t)))
            .collect();
        serialize_to_file(views, None, &dir.join(PARAMS_FILE)).map_err(ckpt_err)?;
        let manifest = serde_json::to_string_pretty(&self.manifest)?;
        let path = dir.join(MANIFEST_FILE);
        fs::write(&path, manifest).map_err(|e| Error::io(path, e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST_FILE);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let manifest: CheckpointManifest = serde_json::from_str(&text)?;
        if manifest.format != CHECKPOINT_FORMAT {
            return Err(ckpt_err(format!("unsupported format {}", manifest.format)));
        }
        let path = dir.join(PARAMS_FILE);
        let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        let tensors = SafeTensors::deserialize(&bytes).map_err(ckpt_err)?;
        let nets = Networks::new(manifest.kind, &manifest.config)?;
        let mut params = ParamStore::new();
        for (name, _) in nets.expected_shapes() {
            let view = tensors.tensor(&name).map_err(ckpt_err)?;
            if view.dtype() != Dtype::F32 || view.shape().len() != 4 {
                return Err(ckpt_err(format!("`{name}` is not a rank-4 f32 tensor")));
            }
            let shape = [view.shape()[0], view.shape()[1], view.shape()[2], view.shape()[3]];
            let data = view
                .data()
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
                .collect();
            params.insert(name, Tensor::from_vec(shape, data)?);
        }
        if tensors.len() != params.len() {
            return Err(ckpt_err("unexpected extra tensors"));
        }
        nets.check_params(&params).map_err(ckpt_err)?;
        Ok(Checkpoint { manifest, params })
    }
}
