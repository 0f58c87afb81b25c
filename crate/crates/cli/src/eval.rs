use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use uvsr_core::evaluation::{benchmark_runtime, temporal_profile, EvalReport, Protocol};
use uvsr_core::io::{read_sequence, write_frame};
use uvsr_core::networks::{count_parameters, Checkpoint, ModelKind};
use uvsr_core::operators::Space;
use uvsr_core::unrolled::{Model, UnrolledConfig};

use crate::degrade::sequences_under;
use crate::{load_toml, required, scale_arg, write_resolved, CliError, CliResult, EvalArgs};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub pred: Option<PathBuf>,
    pub gt: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub classical: bool,
    pub model: UnrolledConfig,
    pub protocol: Protocol,
    /// Timed runs of the benchmark; 0 skips it.
    pub runtime_runs: usize,
    /// LR `[height, width]` of the benchmark frame.
    pub runtime_size: [usize; 2],
    pub profile_row: Option<usize>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            pred: None,
            gt: None,
            out: None,
            checkpoint: None,
            classical: false,
            model: UnrolledConfig {
                classical: true,
                ..UnrolledConfig::default()
            },
            protocol: Protocol::default(),
            runtime_runs: 0,
            runtime_size: [270, 480],
            profile_row: None,
        }
    }
}

pub fn resolve(args: &EvalArgs) -> CliResult<EvalConfig> {
    let mut c: EvalConfig = match &args.config {
        Some(p) => load_toml(p)?,
        None => EvalConfig::default(),
    };
    if args.pred.is_some() {
        c.pred = args.pred.clone();
    }
    if args.gt.is_some() {
        c.gt = args.gt.clone();
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
    if let Some(s) = args.scale {
        c.model.scale = scale_arg(s)?;
    }
    if let Some(n) = args.runtime_runs {
        c.runtime_runs = n;
    }
    if args.profile_row.is_some() {
        c.profile_row = args.profile_row;
    }
    c.model.classical = true;
    Ok(c)
}

pub fn run(args: &EvalArgs) -> CliResult<()> {
    let config = resolve(args)?;
    let pred_root = required(config.pred.clone(), "pred")?;
    let gt_root = required(config.gt.clone(), "gt")?;
    let out = required(config.out.clone(), "out")?;
    let preds = sequences_under(&pred_root)?;
    let mut items = Vec::new();
    for (name, gt_dir) in sequences_under(&gt_root)? {
        let pred_dir = preds
            .iter()
            .find(|(n, _)| *n == name)
            .map(|(_, d)| d.clone())
            .or_else(|| (preds.len() == 1).then(|| preds[0].1.clone()))
            .ok_or_else(|| CliError::Usage(format!("no prediction for sequence `{name}`")))?;
        items.push((name, read_sequence(&pred_dir, Space::Hr)?, read_sequence(&gt_dir, Space::Hr)?));
    }
    let mut report = EvalReport::evaluate(&items, &config.protocol)?;

    if let Some(row) = config.profile_row {
        let dir = out.join("profiles");
        std::fs::create_dir_all(&dir).map_err(|e| uvsr_core::Error::Io {
            path: dir.clone(),
            source: e,
        })?;
        for (name, pred, gt) in &items {
            let stem = name.replace('/', "_");
            write_frame(&dir.join(format!("{stem}_pred.png")), &temporal_profile(pred, row)?)?;
            write_frame(&dir.join(format!("{stem}_gt.png")), &temporal_profile(gt, row)?)?;
        }
    }

    let [h, w] = config.runtime_size;
    if let Some(path) = &config.checkpoint {
        let ckpt = Checkpoint::load(path)?;
        report.parameter_count = Some(ckpt.manifest.parameter_count);
        if config.runtime_runs > 0 {
            let model = Model::<f32>::from_checkpoint(&ckpt)?;
            report.runtime_ms_per_frame = Some(benchmark_runtime(&model, h, w, config.runtime_runs)?.median_ms);
        }
    } else if config.classical {
        let model = Model::<f32>::classical(ModelKind::Uvsr, &config.model)?;
        report.parameter_count = Some(count_parameters(model.nets()));
        if config.runtime_runs > 0 {
            report.runtime_ms_per_frame = Some(benchmark_runtime(&model, h, w, config.runtime_runs)?.median_ms);
        }
    }

    report.write(&out)?;
    print!("{}", report.summary());
    write_resolved(&out, &config)
}
