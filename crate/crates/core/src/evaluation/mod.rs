//! PSNR/SSIM on BT.601 luma with frame and border exclusion, runtime
//! benchmarking and temporal-profile strips.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::io::quantize_image;
use crate::operators::{make_gaussian_kernel, ImageTensor, RadiusPolicy, ScaleFactor, Space};
use crate::tensor::Real;
use crate::unrolled::{uvsr_frame, FrameFlows, Model, RecurrentState};

/// `Y = (65.481 R + 128.553 G + 24.966 B + 16) / 255`, studio swing.
pub fn rgb_to_y(x: &ImageTensor) -> Result<ImageTensor> {
    if x.channels() != 3 {
        return Err(invalid(format!("luma needs 3 channels, got {}", x.channels())));
    }
    Ok(ImageTensor::from_fn(1, x.height(), x.width(), x.space(), |_, i, j| {
        (65.481 * x.get(0, i, j) + 128.553 * x.get(1, i, j) + 24.966 * x.get(2, i, j) + 16.0) / 255.0
    }))
}

/// Luma of an RGB frame; single-channel frames are taken as luma already.
pub fn luma(x: &ImageTensor) -> Result<ImageTensor> {
    match x.channels() {
        1 => Ok(x.clone()),
        3 => rgb_to_y(x),
        c => Err(invalid(format!("cannot take luma of a {c}-channel frame"))),
    }
}

/// Which frames and pixels are scored.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Protocol {
    /// Frames dropped at each end of a sequence.
    pub skip_frames: usize,
    /// Pixels dropped at every edge.
    pub border: usize,
    /// Round inputs to 8 bits first.
    pub quantize: bool,
}

impl Default for Protocol {
    fn default() -> Self {
        Protocol {
            skip_frames: 2,
            border: 8,
            quantize: true,
        }
    }
}

impl Protocol {
    /// Luma planes on the 0–255 scale of the retained frames, cropped.
    fn retained(&self, frames: &[ImageTensor]) -> Result<Vec<ImageTensor>> {
        let keep = &frames[self.skip_frames..frames.len() - self.skip_frames];
        keep.iter()
            .map(|f| {
                let f = if self.quantize { quantize_image(f) } else { f.clone() };
                let y = luma(&f)?;
                let b = self.border;
                Ok(y.crop(b, b, y.height() - 2 * b, y.width() - 2 * b)?.scale(255.0))
            })
            .collect()
    }

    fn check(&self, pred: &[ImageTensor], gt: &[ImageTensor]) -> Result<()> {
        if pred.len() != gt.len() {
            return Err(invalid(format!("{} predicted frames vs {} ground-truth frames", pred.len(), gt.len())));
        }
        if pred.len() < 2 * self.skip_frames + 1 {
            return Err(invalid(format!(
                "sequence of {} frames is too short; need at least {}",
                pred.len(),
                2 * self.skip_frames + 1
            )));
        }
        for (t, (p, g)) in pred.iter().zip(gt).enumerate() {
            if p.channels() != g.channels() || p.height() != g.height() || p.width() != g.width() {
                return Err(invalid(format!("frame {t}: prediction and ground truth differ in size")));
            }
            if p.height() <= 2 * self.border || p.width() <= 2 * self.border {
                return Err(invalid(format!("frame {t} is smaller than the excluded border")));
            }
        }
        Ok(())
    }

    /// PSNR in dB from one MSE over every retained pixel; `inf` when equal.
    pub fn psnr(&self, pred: &[ImageTensor], gt: &[ImageTensor]) -> Result<f64> {
        self.check(pred, gt)?;
        let (p, g) = (self.retained(pred)?, self.retained(gt)?);
        let mut sum = 0.0;
        let mut count = 0usize;
        for (a, b) in p.iter().zip(&g) {
            sum += a.data().iter().zip(b.data()).map(|(x, y)| (x - y).powi(2)).sum::<f64>();
            count += a.data().len();
        }
        let mse = sum / count as f64;
        Ok(if mse == 0.0 {
            f64::INFINITY
        } else {
            10.0 * (255.0 * 255.0 / mse).log10()
        })
    }

    /// Mean over retained frames of the per-frame mean SSIM.
    pub fn ssim(&self, pred: &[ImageTensor], gt: &[ImageTensor]) -> Result<f64> {
        self.check(pred, gt)?;
        let (p, g) = (self.retained(pred)?, self.retained(gt)?);
        let scores = p.iter().zip(&g).map(|(a, b)| ssim_plane(a, b)).collect::<Result<Vec<_>>>()?;
        Ok(scores.iter().sum::<f64>() / scores.len() as f64)
    }
}

pub fn psnr_video(pred: &[ImageTensor], gt: &[ImageTensor]) -> Result<f64> {
    Protocol::default().psnr(pred, gt)
}

pub fn ssim_video(pred: &[ImageTensor], gt: &[ImageTensor]) -> Result<f64> {
    Protocol::default().ssim(pred, gt)
}

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;

/// Separable Gaussian filter over the fully covered ("valid") positions.
fn filter_valid(x: &[f64], h: usize, w: usize, g: &[f64]) -> (Vec<f64>, usize, usize) {
    let n = g.len();
    let (oh, ow) = (h + 1 - n, w + 1 - n);
    let mut rows = vec![0.0; h * ow];
    for i in 0..h {
        for j in 0..ow {
            rows[i * ow + j] = (0..n).map(|k| g[k] * x[i * w + j + k]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for i in 0..oh {
        for j in 0..ow {
            out[i * ow + j] = (0..n).map(|k| g[k] * rows[(i + k) * ow + j]).sum();
        }
    }
    (out, oh, ow)
}

/// Mean SSIM of two single-channel planes on the 0–255 scale.
pub fn ssim_plane(a: &ImageTensor, b: &ImageTensor) -> Result<f64> {
    if a.channels() != 1 || !a.same_dims(b) {
        return Err(invalid("SSIM needs two single-channel planes of equal size"));
    }
    let (h, w) = (a.height(), a.width());
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(invalid(format!("SSIM needs at least {SSIM_WINDOW}x{SSIM_WINDOW} pixels, got {h}x{w}")));
    }
    let kernel = make_gaussian_kernel(SSIM_SIGMA, RadiusPolicy::Fixed(SSIM_WINDOW / 2))?;
    let g = kernel.taps_1d();
    let c1 = (SSIM_K1 * 255.0).powi(2);
    let c2 = (SSIM_K2 * 255.0).powi(2);
    let (x, y) = (a.data(), b.data());
    let prod = |f: &dyn Fn(f64, f64) -> f64| x.iter().zip(y).map(|(&p, &q)| f(p, q)).collect::<Vec<_>>();
    let (mu_x, _, _) = filter_valid(x, h, w, g);
    let (mu_y, _, _) = filter_valid(y, h, w, g);
    let (xx, _, _) = filter_valid(&prod(&|p, _| p * p), h, w, g);
    let (yy, _, _) = filter_valid(&prod(&|_, q| q * q), h, w, g);
    let (xy, _, _) = filter_valid(&prod(&|p, q| p * q), h, w, g);
    let n = mu_x.len();
    let total: f64 = (0..n)
        .map(|k| {
            let (mx, my) = (mu_x[k], mu_y[k]);
            let vx = xx[k] - mx * mx;
            let vy = yy[k] - my * my;
            let cov = xy[k] - mx * my;
            ((2.0 * mx * my + c1) * (2.0 * cov + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2))
        })
        .sum();
    Ok(total / n as f64)
}

/// Scores of one sequence.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SequenceScore {
    pub sequence: String,
    pub frames: usize,
    pub psnr: f64,
    pub ssim: f64,
}

/// Per-sequence and average PSNR/SSIM plus optional runtime and size.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub sequences: Vec<SequenceScore>,
    pub runtime_ms_per_frame: Option<f64>,
    pub parameter_count: Option<usize>,
}

fn fmt_db(v: f64) -> String {
    if v.is_infinite() {
        "inf".to_string()
    } else {
        format!("{v:.4}")
    }
}

impl EvalReport {
    /// Scores `(name, predicted, ground truth)` triples.
    pub fn evaluate(items: &[(String, Vec<ImageTensor>, Vec<ImageTensor>)], protocol: &Protocol) -> Result<Self> {
        let sequences = items
            .iter()
            .map(|(name, pred, gt)| {
                let named = |e: Error| match e {
                    Error::InvalidArgument(m) => invalid(format!("{name}: {m}")),
                    other => other,
                };
                Ok(SequenceScore {
                    sequence: name.clone(),
                    frames: pred.len(),
                    psnr: protocol.psnr(pred, gt).map_err(named)?,
                    ssim: protocol.ssim(pred, gt).map_err(named)?,
                })
            })
            .collect::<Result<_>>()?;
        Ok(EvalReport {
            sequences,
            runtime_ms_per_frame: None,
            parameter_count: None,
        })
    }

    /// Mean of per-sequence PSNR; infinite if any sequence is.
    pub fn average_psnr(&self) -> f64 {
        self.sequences.iter().map(|s| s.psnr).sum::<f64>() / self.sequences.len() as f64
    }

    pub fn average_ssim(&self) -> f64 {
        self.sequences.iter().map(|s| s.ssim).sum::<f64>() / self.sequences.len() as f64
    }

    /// One row per sequence followed by an `average` row.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["sequence", "frames", "psnr_db", "ssim"])?;
        for s in &self.sequences {
            w.write_record([s.sequence.clone(), s.frames.to_string(), fmt_db(s.psnr), format!("{:.6}", s.ssim)])?;
        }
        let frames: usize = self.sequences.iter().map(|s| s.frames).sum();
        w.write_record([
            "average".to_string(),
            frames.to_string(),
            fmt_db(self.average_psnr()),
            format!("{:.6}", self.average_ssim()),
        ])?;
        let bytes = w.into_inner().map_err(|e| invalid(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    /// Table in the `PSNR/SSIM` row style.
    pub fn summary(&self) -> String {
        let width = self.sequences.iter().map(|s| s.sequence.len()).max().unwrap_or(0).max(7);
        let mut out = String::new();
        let _ = writeln!(out, "{:<width$}  PSNR(dB)/SSIM", "sequence");
        for s in &self.sequences {
            let _ = writeln!(out, "{:<width$}  {}/{:.4}", s.sequence, fmt_db(s.psnr), s.ssim);
        }
        let _ = writeln!(
            out,
            "{:<width$}  {}/{:.4}",
            "average",
            fmt_db(self.average_psnr()),
            self.average_ssim()
        );
        if let Some(ms) = self.runtime_ms_per_frame {
            let _ = writeln!(out, "runtime: {ms:.1} ms per frame");
        }
        if let Some(n) = self.parameter_count {
            let _ = writeln!(out, "parameters: {n}");
        }
        out
    }

    /// Writes `report.csv` and `summary.txt` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let csv_path = dir.join("report.csv");
        fs::write(&csv_path, self.to_csv()?).map_err(|e| Error::io(&csv_path, e))?;
        let txt = dir.join("summary.txt");
        fs::write(&txt, self.summary()).map_err(|e| Error::io(&txt, e))
    }
}

/// Wall-clock statistics of repeated single-frame inference.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RuntimeStats {
    pub median_ms: f64,
    pub min_ms: f64,
    pub max_ms: f64,
    pub runs: usize,
}

/// Median time to produce one HR frame of `lr_height × lr_width × s` from
/// an LR frame and its predecessor, after one warm-up run. The reference
/// setting is 270×480 LR at s = 4 with at least 20 runs.
pub fn benchmark_runtime<T: Real>(model: &Model<T>, lr_height: usize, lr_width: usize, runs: usize) -> Result<RuntimeStats> {
    if runs == 0 {
        return Err(invalid("need at least one run"));
    }
    let c = model.config();
    let s: ScaleFactor = c.scale;
    let y_prev = ImageTensor::from_fn(c.channels, lr_height, lr_width, Space::Lr, |ch, i, j| {
        0.5 + 0.25 * ((i * 7 + j * 3 + ch) as f64 * 0.1).sin()
    });
    let y_t = ImageTensor::from_fn(c.channels, lr_height, lr_width, Space::Lr, |ch, i, j| {
        0.5 + 0.25 * ((i * 7 + j * 3 + ch + 2) as f64 * 0.1).sin()
    });
    let h = make_gaussian_kernel(crate::degradation::FIXED_SIGMA, RadiusPolicy::ThreeSigma)?;
    let flows = || {
        if model.nets().fnet().is_some() {
            FrameFlows::Network
        } else {
            FrameFlows::Zero
        }
    };
    let run = || -> Result<f64> {
        let mut state = RecurrentState::first_frame(&y_prev, &h, s)?;
        let start = Instant::now();
        uvsr_frame(&y_t, &y_prev, &mut state, &h, s, model, flows())?;
        Ok(start.elapsed().as_secs_f64() * 1e3)
    };
    run()?;
    let mut times = (0..runs).map(|_| run()).collect::<Result<Vec<_>>>()?;
    times.sort_by(f64::total_cmp);
    let mid = times.len() / 2;
    let median = if times.len() % 2 == 1 {
        times[mid]
    } else {
        0.5 * (times[mid - 1] + times[mid])
    };
    Ok(RuntimeStats {
        median_ms: median,
        min_ms: times[0],
        max_ms: times[times.len() - 1],
        runs,
    })
}

/// Row `row` of every frame stacked top to bottom: a `T × W` image showing
/// how that line evolves over time.
pub fn temporal_profile(frames: &[ImageTensor], row: usize) -> Result<ImageTensor> {
    let first = frames.first().ok_or_else(|| invalid("no frames"))?;
    if row >= first.height() {
        return Err(invalid(format!("row {row} outside {}-pixel-high frames", first.height())));
    }
    if frames.iter().any(|f| !f.same_dims(first)) {
        return Err(invalid("frames differ in size"));
    }
    Ok(ImageTensor::from_fn(first.channels(), frames.len(), first.width(), first.space(), |c, t, j| {
        frames[t].get(c, row, j)
    }))
}
