use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use uvsr_core::degradation::{center_crop_to_multiple, degrade_sequence, sample_sigma, DegradationSpec, SigmaSampler};
use uvsr_core::io::{find_sequences, read_sequence, write_sequence};
use uvsr_core::operators::{ScaleFactor, Space};

use crate::{load_toml, required, scale_arg, write_resolved, write_text, CliError, CliResult, DegradeArgs};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DegradeConfig {
    pub input: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub seed: u64,
    pub scale: ScaleFactor,
    pub sigma: SigmaSampler,
}

impl Default for DegradeConfig {
    fn default() -> Self {
        DegradeConfig {
            input: None,
            out: None,
            seed: 0,
            scale: ScaleFactor::new(4).expect("valid scale"),
            sigma: SigmaSampler::default(),
        }
    }
}

/// What was done to each sequence.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    /// Path relative to the input root; also the output subdirectory.
    pub name: String,
    pub source: PathBuf,
    pub sigma: f64,
    pub frames: usize,
    /// HR `[height, width]` after cropping to a multiple of the scale.
    pub hr_size: [usize; 2],
    pub lr_size: [usize; 2],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DegradeManifest {
    pub scale: usize,
    pub seed: u64,
    pub sigma: SigmaSampler,
    pub sequences: Vec<ManifestEntry>,
}

impl DegradeManifest {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| uvsr_core::Error::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        Ok(serde_json::from_str(&text).map_err(uvsr_core::Error::from)?)
    }

    pub fn entry(&self, name: &str) -> Option<&ManifestEntry> {
        self.sequences.iter().find(|e| e.name == name)
    }
}

/// Name of sequence directory `dir` under `root`.
pub(crate) fn sequence_name(root: &Path, dir: &Path) -> String {
    match dir.strip_prefix(root) {
        Ok(rel) if !rel.as_os_str().is_empty() => rel
            .components()
            .map(|c| c.as_os_str().to_string_lossy())
            .collect::<Vec<_>>()
            .join("/"),
        _ => root
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| "sequence".to_string()),
    }
}

pub(crate) fn sequences_under(root: &Path) -> CliResult<Vec<(String, PathBuf)>> {
    let dirs = find_sequences(root)?;
    if dirs.is_empty() {
        return Err(CliError::Usage(format!("no PNG frame directories under {}", root.display())));
    }
    Ok(dirs.into_iter().map(|d| (sequence_name(root, &d), d)).collect())
}

pub fn resolve(args: &DegradeArgs) -> CliResult<DegradeConfig> {
    let mut c: DegradeConfig = match &args.config {
        Some(p) => load_toml(p)?,
        None => DegradeConfig::default(),
    };
    if args.input.is_some() {
        c.input = args.input.clone();
    }
    if args.out.is_some() {
        c.out = args.out.clone();
    }
    if let Some(seed) = args.seed {
        c.seed = seed;
    }
    if let Some(s) = args.scale {
        c.scale = scale_arg(s)?;
    }
    if let Some(sampler) = args.sigma.sampler()? {
        c.sigma = sampler;
    }
    c.sigma.validate()?;
    Ok(c)
}

/// Writes `lr/<name>` and the cropped ground truth `hr/<name>` for every
/// sequence, plus `manifest.json` and the resolved config.
pub fn run(args: &DegradeArgs) -> CliResult<()> {
    let config = resolve(args)?;
    let input = required(config.input.clone(), "input")?;
    let out = required(config.out.clone(), "out")?;
    let manifest = degrade_dataset(&input, &out, &config)?;
    for e in &manifest.sequences {
        println!("{}: {} frames, sigma {:.4}", e.name, e.frames, e.sigma);
    }
    write_resolved(&out, &config)
}

pub fn degrade_dataset(input: &Path, out: &Path, config: &DegradeConfig) -> CliResult<DegradeManifest> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut entries = Vec::new();
    for (name, dir) in sequences_under(input)? {
        let hr = read_sequence(&dir, Space::Hr)?
            .iter()
            .map(|f| center_crop_to_multiple(f, config.scale))
            .collect::<uvsr_core::Result<Vec<_>>>()?;
        let sigma = sample_sigma(&config.sigma, &mut rng);
        let lr = degrade_sequence(&hr, &DegradationSpec::new(sigma, config.scale)?)?;
        write_sequence(&out.join("lr").join(&name), &lr)?;
        write_sequence(&out.join("hr").join(&name), &hr)?;
        entries.push(ManifestEntry {
            name,
            source: dir,
            sigma,
            frames: hr.len(),
            hr_size: [hr[0].height(), hr[0].width()],
            lr_size: [lr[0].height(), lr[0].width()],
        });
    }
    let manifest = DegradeManifest {
        scale: config.scale.get(),
        seed: config.seed,
        sigma: config.sigma,
        sequences: entries,
    };
    let text = serde_json::to_string_pretty(&manifest).map_err(uvsr_core::Error::from)?;
    write_text(out, MANIFEST_FILE, &(text + "\n"))?;
    Ok(manifest)
}
