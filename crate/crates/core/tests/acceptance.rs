//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any fails.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use uvsr_core::degradation::{degrade_sequence, DegradationSpec, SigmaSampler};
use uvsr_core::evaluation::{psnr_video, ssim_video, Protocol};
use uvsr_core::networks::{count_parameters, conv_param_count, ModelKind, Networks};
use uvsr_core::operators::{
    backproject, blur, depth_to_space, downsample, make_gaussian_kernel, space_to_depth, upsample_bilinear,
    upsample_zeros, warp, BlurKernel, FlowField, ImageTensor, Padding, RadiusPolicy, ScaleFactor, Space,
};
use uvsr_core::training::{SyntheticTextures, TrainConfig, Trainer};
use uvsr_core::unrolled::{
    data_residuals, data_step_gradient_check, sisr_solve, uvsr_data_step, uvsr_frame, uvsr_sequence, AdjointMode,
    FrameFlows, Model, RecurrentState, SequenceFlows, StepSizes, UnrolledConfig,
};

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: String) -> Outcome {
    Outcome { passed, detail }
}

fn scale(s: usize) -> ScaleFactor {
    ScaleFactor::new(s).unwrap()
}

fn kernel(sigma: f64) -> BlurKernel {
    make_gaussian_kernel(sigma, RadiusPolicy::ThreeSigma).unwrap()
}

fn noise(rng: &mut ChaCha8Rng, c: usize, h: usize, w: usize, space: Space) -> ImageTensor {
    ImageTensor::from_fn(c, h, w, space, |_, _, _| rng.random_range(-1.0..1.0))
}

fn dot(a: &ImageTensor, b: &ImageTensor) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
}

fn rel(a: f64, b: f64) -> f64 {
    let d = (a - b).abs();
    if d == 0.0 {
        0.0
    } else {
        d / a.abs().max(b.abs())
    }
}

fn rel_img(a: &ImageTensor, b: &ImageTensor) -> f64 {
    let diff = a.data().iter().zip(b.data()).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let n = a.norm().max(b.norm());
    if n == 0.0 {
        diff
    } else {
        diff / n
    }
}

/// MSE over pixels at least `border` from every edge.
fn interior_mse(a: &ImageTensor, b: &ImageTensor, border: usize) -> f64 {
    let (mut sum, mut n) = (0.0, 0usize);
    for c in 0..a.channels() {
        for i in border..a.height() - border {
            for j in border..a.width() - border {
                sum += (a.get(c, i, j) - b.get(c, i, j)).powi(2);
                n += 1;
            }
        }
    }
    sum / n as f64
}

fn psnr_unit(mse: f64) -> f64 {
    -10.0 * mse.log10()
}

fn hr_flow(u: &FlowField, s: ScaleFactor) -> FlowField {
    let img = upsample_bilinear(&u.as_image(), s).unwrap().scale(s.get() as f64);
    FlowField::from_image(&img).unwrap()
}

fn operator_exactness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (mut adj, mut d_oracle, mut s2d) = (0.0f64, true, true);
    let mut cases = 0;
    for s in [2usize, 4] {
        for _ in 0..100 {
            let (c, lh, lw) = (rng.random_range(1..=4), rng.random_range(1..=16), rng.random_range(1..=16));
            let x = noise(&mut rng, c, lh * s, lw * s, Space::Hr);
            let y = noise(&mut rng, c, lh, lw, Space::Lr);
            let dx = downsample(&x, scale(s)).unwrap();
            let uy = upsample_zeros(&y, scale(s)).unwrap();
            adj = adj.max(rel(dot(&dx, &y), dot(&x, &uy)));
            for k in 0..c {
                for i in 0..lh {
                    for j in 0..lw {
                        d_oracle &= dx.get(k, i, j) == x.get(k, i * s, j * s);
                    }
                }
            }
            let back = depth_to_space(&space_to_depth(&x, scale(s)).unwrap(), scale(s)).unwrap();
            s2d &= back.data() == x.data() && back.channels() == c;
            cases += 1;
        }
    }
    outcome(
        adj <= 1e-12 && d_oracle && s2d,
        format!("{cases} cases, s in {{2,4}}: <Dx,y> vs <x,Uy> worst rel {adj:.1e}, D_s matches strided read {d_oracle}, d2s(s2d(x)) bitwise {s2d}"),
    )
}

/// Direct periodic convolution.
fn periodic_blur_oracle(x: &ImageTensor, h: &BlurKernel) -> ImageTensor {
    let r = h.radius() as isize;
    let (hh, w) = (x.height() as isize, x.width() as isize);
    ImageTensor::from_fn(x.channels(), x.height(), x.width(), x.space(), |c, i, j| {
        let mut acc = 0.0;
        for a in -r..=r {
            for b in -r..=r {
                let ii = (i as isize - a).rem_euclid(hh) as usize;
                let jj = (j as isize - b).rem_euclid(w) as usize;
                acc += h.tap((a + r) as usize, (b + r) as usize) * x.get(c, ii, jj);
            }
        }
        acc
    })
}

fn blur_properties() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (mut adj, mut dc, mut oracle) = (0.0f64, 0.0f64, 0.0f64);
    for _ in 0..100 {
        let (hh, w) = (rng.random_range(16..=64), rng.random_range(16..=64));
        let max_sigma = ((hh.min(w) - 1) / 2) as f64 / 3.0;
        let h = kernel(rng.random_range(0.3..max_sigma.min(3.0)));
        let c = rng.random_range(1..=3);
        let x = ImageTensor::from_fn(c, hh, w, Space::Hr, |_, _, _| rng.random());
        let y = ImageTensor::from_fn(c, hh, w, Space::Hr, |_, _, _| rng.random());
        let hx = blur(&x, &h, Padding::Periodic).unwrap();
        let hy = blur(&y, &h, Padding::Periodic).unwrap();
        adj = adj.max(rel(dot(&hx, &y), dot(&x, &hy)));
        oracle = oracle.max(rel_img(&hx, &periodic_blur_oracle(&x, &h)));
        let v = rng.random_range(-2.0..2.0);
        let k = ImageTensor::constant(c, hh, w, v, Space::Hr);
        for padding in [Padding::Periodic, Padding::Replicate] {
            let out = blur(&k, &h, padding).unwrap();
            dc = dc.max(out.data().iter().map(|o| rel(*o, v)).fold(0.0, f64::max));
        }
    }
    outcome(
        adj <= 1e-12 && dc <= 1e-12 && oracle <= 1e-12,
        format!("100 images 16-64 px: <Hx,y> vs <x,Hy> worst rel {adj:.1e}, DC worst rel {dc:.1e}, vs direct convolution {oracle:.1e}"),
    )
}

fn gradient_fidelity() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let s = scale(2);
    let mut worst = 0.0f64;
    let cases = 10;
    for _ in 0..cases {
        let h = kernel(rng.random_range(0.5..1.0));
        let x = noise(&mut rng, 1, 8, 8, Space::Hr);
        let y_t = noise(&mut rng, 1, 4, 4, Space::Lr);
        let y_prev = noise(&mut rng, 1, 4, 4, Space::Lr);
        let u = FlowField::new(8, 8, (0..128).map(|_| rng.random_range(-2.0..2.0)).collect(), Space::Hr).unwrap();
        let v = FlowField::new(8, 8, (0..128).map(|_| rng.random_range(-2.0..2.0)).collect(), Space::Hr).unwrap();
        let r = data_step_gradient_check(&x, &y_t, &y_prev, &u, &v, &h, s, AdjointMode::Exact).unwrap();
        worst = worst.max(r.current_term).max(r.previous_term);
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        worst <= 1e-5 && secs < 60.0,
        format!("{cases} cases 8x8 HR, s=2: worst rel deviation {worst:.1e}, {secs:.2} s"),
    )
}

/// Zero-prior frame written with the primitive operators.
fn composed_frame(
    y_t: &ImageTensor,
    y_prev: &ImageTensor,
    u_t_prev: &FlowField,
    u_prev_t: &FlowField,
    steps: &StepSizes,
    h: &BlurKernel,
    s: ScaleFactor,
) -> ImageTensor {
    let p = Padding::Replicate;
    let back = |r: &ImageTensor| blur(&upsample_bilinear(r, s).unwrap(), h, p).unwrap();
    let fwd = |v: &ImageTensor| downsample(&blur(v, h, p).unwrap(), s).unwrap();
    let (f_t_prev, f_prev_t) = (hr_flow(u_t_prev, s), hr_flow(u_prev_t, s));
    let mut x = back(y_t);
    for k in 0..steps.blocks() {
        let g_t = back(&fwd(&x).sub(y_t).unwrap());
        let r_prev = fwd(&warp(&x, &f_t_prev).unwrap()).sub(y_prev).unwrap();
        let g_prev = warp(&back(&r_prev), &f_prev_t).unwrap();
        x = x.sub(&g_t.scale(steps.alpha[k])).unwrap().sub(&g_prev.scale(steps.beta[k])).unwrap();
    }
    x
}

fn algorithm_fidelity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst = 0.0f64;
    for case in 0..6 {
        let s = scale([2, 4][case % 2]);
        let blocks = rng.random_range(1..=4);
        let c = [1, 3][case % 2];
        let (lh, lw) = (rng.random_range(5..=10), rng.random_range(5..=10));
        let h = kernel(rng.random_range(0.5..1.8));
        let y_t = noise(&mut rng, c, lh, lw, Space::Lr);
        let y_prev = noise(&mut rng, c, lh, lw, Space::Lr);
        let x_prev = noise(&mut rng, c, lh * s.get(), lw * s.get(), Space::Hr);
        let flow = |rng: &mut ChaCha8Rng| {
            FlowField::new(lh, lw, (0..2 * lh * lw).map(|_| rng.random_range(-1.5..1.5)).collect(), Space::Lr).unwrap()
        };
        let (u1, u2) = (flow(&mut rng), flow(&mut rng));
        let steps = StepSizes {
            alpha: (0..blocks).map(|_| rng.random_range(0.0..1.0)).collect(),
            beta: (0..blocks).map(|_| rng.random_range(-0.5..1.0)).collect(),
        };
        let config = UnrolledConfig {
            blocks,
            depth: 3,
            filters: 8,
            channels: c,
            scale: s,
            ..UnrolledConfig::default()
        };
        let mut learned = Model::<f64>::init(Networks::uvsr(&config).unwrap(), &mut rng);
        learned.set_steps(&steps).unwrap();
        let mut classical = Model::<f64>::classical(
            ModelKind::Uvsr,
            &UnrolledConfig {
                classical: true,
                ..config.clone()
            },
        )
        .unwrap();
        classical.set_steps(&steps).unwrap();
        let expect = composed_frame(&y_t, &y_prev, &u1, &u2, &steps, &h, s);
        for model in [&learned, &classical] {
            let mut state = RecurrentState {
                prev_hr_estimate: Some(x_prev.clone()),
            };
            let flows = FrameFlows::Given {
                t_to_prev: u1.clone(),
                prev_to_t: u2.clone(),
            };
            let out = uvsr_frame(&y_t, &y_prev, &mut state, &h, s, model, flows).unwrap();
            worst = worst.max(rel_img(&out.x, &expect));
        }
    }

    let mut powers = true;
    for blocks in 1..=10 {
        let expect: Vec<f64> = (0..blocks).map(|k| 1.0 / (1u64 << k) as f64).collect();
        let config = UnrolledConfig {
            blocks,
            depth: 2,
            filters: 2,
            channels: 1,
            ..UnrolledConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(blocks as u64);
        let f32_model = Model::<f32>::init(Networks::uvsr(&config).unwrap(), &mut rng);
        let f64_model = Model::<f64>::init(Networks::sisr(&config).unwrap(), &mut rng);
        let classical = Model::<f64>::classical(
            ModelKind::Uvsr,
            &UnrolledConfig {
                classical: true,
                ..config.clone()
            },
        )
        .unwrap();
        powers &= f32_model.steps().alpha == expect && f32_model.steps().beta == expect;
        powers &= f64_model.steps().alpha == expect;
        powers &= classical.steps().alpha == expect && classical.steps().beta == expect;
    }
    outcome(
        worst <= 1e-12 && powers,
        format!("6 random frames, zero-prior learned and classical models: worst rel {worst:.1e}; initial steps exactly 2^-k for K=1..10: {powers}"),
    )
}

fn fixed_point() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut exact = true;
    for case in 0..20 {
        let s = scale([2, 4][case % 2]);
        let lo = 20 / s.get();
        let (lh, lw) = (rng.random_range(lo..=lo + 8), rng.random_range(lo..=lo + 8));
        let h = kernel(rng.random_range(0.4..2.8));
        let gt = noise(&mut rng, 3, lh * s.get(), lw * s.get(), Space::Hr);
        let y = downsample(&blur(&gt, &h, Padding::Replicate).unwrap(), s).unwrap();
        let zero = FlowField::zeros(gt.height(), gt.width(), Space::Hr);
        let (r_t, r_prev) = data_residuals(&gt, &y, &y, &zero, &h, s).unwrap();
        exact &= r_t.data().iter().chain(r_prev.data()).all(|v| *v == 0.0);
        let z = ImageTensor::zeros(3, gt.height(), gt.width(), Space::Hr);
        exact &= uvsr_data_step(&gt, &z, &y, &y, &zero, &zero, 0.9, 0.7, &h, s).unwrap() == gt;
    }
    outcome(exact, format!("20 random ground truths: residuals and data step exactly zero/unchanged: {exact}"))
}

/// White noise blurred to a band-limited texture in `[0, 1]`.
fn texture(rng: &mut ChaCha8Rng, h: usize, w: usize) -> ImageTensor {
    let white = ImageTensor::from_fn(1, h, w, Space::Hr, |_, _, _| rng.random_range(0.0..1.0));
    let smooth = blur(&white, &kernel(1.2), Padding::Replicate).unwrap();
    let n = smooth.data().len() as f64;
    let mean = smooth.data().iter().sum::<f64>() / n;
    let std = (smooth.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
    ImageTensor::from_fn(1, h, w, Space::Hr, |c, i, j| (0.5 + 0.15 * (smooth.get(c, i, j) - mean) / std).clamp(0.0, 1.0))
}

fn fusion_gain() -> Outcome {
    let s = scale(4);
    let h = kernel(1.6);
    let spec = DegradationSpec::new(1.6, s).unwrap();
    let (vx, vy) = (2usize, 1usize);
    let blocks = 10;
    let config = UnrolledConfig {
        blocks,
        channels: 1,
        scale: s,
        classical: true,
        ..UnrolledConfig::default()
    };
    let mut uvsr = Model::<f64>::classical(ModelKind::Uvsr, &config).unwrap();
    uvsr.set_steps(&StepSizes::constant(blocks, 1.0, 1.0)).unwrap();
    let mut sisr = Model::<f64>::classical(ModelKind::Sisr, &config).unwrap();
    sisr.set_steps(&StepSizes::constant(blocks, 1.0, 0.0)).unwrap();
    let (n, margin) = (64usize, 4usize);
    let mut gains = Vec::new();
    for seed in 0..4u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(600 + seed);
        let base = texture(&mut rng, n + 2 * margin, n + 2 * margin);
        let f0 = base.crop(margin, margin, n, n).unwrap();
        let f1 = base.crop(margin - vy, margin - vx, n, n).unwrap();
        let y = degrade_sequence(&[f0, f1.clone()], &spec).unwrap();
        let sg = s.get() as f64;
        let (lh, lw) = (y[0].height(), y[0].width());
        let t_to_prev = FlowField::constant(lh, lw, vx as f64 / sg, vy as f64 / sg, Space::Lr);
        let prev_to_t = FlowField::constant(lh, lw, -(vx as f64) / sg, -(vy as f64) / sg, Space::Lr);
        let fused = uvsr_sequence(&y, &h, s, &uvsr, &SequenceFlows::Given(vec![(t_to_prev, prev_to_t)])).unwrap();
        let single = sisr_solve(&y[1], &h, s, &sisr).unwrap();
        let gain = psnr_unit(interior_mse(&fused[1].x, &f1, 8)) - psnr_unit(interior_mse(&single, &f1, 8));
        gains.push(gain);
    }
    let min = gains.iter().copied().fold(f64::INFINITY, f64::min);
    outcome(
        min >= 0.5,
        format!(
            "translation ({vx},{vy}) HR px, s=4, sigma 1.6, K={blocks}: two-frame minus single-frame PSNR per seed {:?} dB",
            gains.iter().map(|g| (g * 100.0).round() / 100.0).collect::<Vec<_>>()
        ),
    )
}

fn desk_scale_learning() -> Outcome {
    let start = Instant::now();
    let steps = 150;
    let c = TrainConfig {
        model: UnrolledConfig {
            blocks: 2,
            depth: 5,
            filters: 32,
            channels: 3,
            ..UnrolledConfig::default()
        },
        sigma: SigmaSampler::fixed(1.6).unwrap(),
        frames: 3,
        batch_size: 2,
        crop: 32,
        learning_rate: 1e-3,
        steps,
        ..TrainConfig::default()
    };

    let s = c.model.scale;
    let spec = DegradationSpec::new(1.6, s).unwrap();
    let h = spec.kernel().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(999);
    let (hr, _) = SyntheticTextures::new(3).sample_with_velocity(&mut rng, 8, 128, 128).unwrap();
    let y = degrade_sequence(&hr, &spec).unwrap();
    let scored = 2..6;
    let mean_mse = |xs: &[ImageTensor]| {
        scored.clone().map(|t| interior_mse(&xs[t], &hr[t], 8)).sum::<f64>() / scored.len() as f64
    };
    let bp: Vec<ImageTensor> = y.iter().map(|f| backproject(f, &h, s).unwrap()).collect();
    let bp_psnr = psnr_unit(mean_mse(&bp));
    let model_psnr = |m: &Model<f32>| {
        let out: Vec<ImageTensor> = uvsr_sequence(&y, &h, s, m, &SequenceFlows::Network)
            .unwrap()
            .into_iter()
            .map(|r| r.x)
            .collect();
        psnr_unit(mean_mse(&out))
    };

    let mut trainer = Trainer::from_config(c).unwrap();
    let untrained = model_psnr(&trainer.model());
    for _ in 0..steps {
        trainer.step().unwrap();
    }
    let trained = model_psnr(&trainer.model());
    let gain = trained - bp_psnr;
    outcome(
        gain >= 1.0,
        format!(
            "K=2 d=5 f=32, {steps} steps: held-out {trained:.2} dB vs backprojection {bp_psnr:.2} dB, gain {gain:+.2} dB (untrained {:+.2} dB), {:.0} s",
            untrained - bp_psnr,
            start.elapsed().as_secs_f64()
        ),
    )
}

fn nonblindness() -> Outcome {
    let s = scale(4);
    let spec = DegradationSpec::new(1.6, s).unwrap();
    let (truth, wrong) = (kernel(1.6), kernel(2.6));
    let src = SyntheticTextures::new(3);
    let config = UnrolledConfig {
        blocks: 3,
        channels: 3,
        scale: s,
        classical: true,
        ..UnrolledConfig::default()
    };
    let sisr = Model::<f64>::classical(ModelKind::Sisr, &config).unwrap();
    let uvsr = Model::<f64>::classical(ModelKind::Uvsr, &config).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let (mut wins, mut total, mut margin) = (0, 0, f64::INFINITY);
    for _ in 0..8 {
        let (hr, (vx, vy)) = src.sample_with_velocity(&mut rng, 2, 64, 64).unwrap();
        let y = degrade_sequence(&hr, &spec).unwrap();
        let sg = s.get() as f64;
        let flows = SequenceFlows::Given(vec![(
            FlowField::constant(16, 16, vx as f64 / sg, vy as f64 / sg, Space::Lr),
            FlowField::constant(16, 16, -vx as f64 / sg, -vy as f64 / sg, Space::Lr),
        )]);
        let run = |h: &BlurKernel| {
            let single = interior_mse(&sisr_solve(&y[1], h, s, &sisr).unwrap(), &hr[1], 8);
            let video = interior_mse(&uvsr_sequence(&y, h, s, &uvsr, &flows).unwrap()[1].x, &hr[1], 8);
            [single, video]
        };
        for (t, w) in run(&truth).into_iter().zip(run(&wrong)) {
            total += 1;
            wins += usize::from(t < w);
            margin = margin.min(psnr_unit(t) - psnr_unit(w));
        }
    }
    outcome(
        wins == total,
        format!("true kernel lower error in {wins}/{total} runs (8 images, single- and two-frame), smallest margin {margin:.2} dB"),
    )
}

fn metric_protocol() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let gt: Vec<ImageTensor> = (0..7)
        .map(|_| ImageTensor::from_fn(1, 40, 48, Space::Hr, |_, _, _| rng.random_range(0..=254) as f64 / 255.0))
        .collect();
    let plus: Vec<ImageTensor> = gt
        .iter()
        .map(|f| ImageTensor::from_fn(1, 40, 48, Space::Hr, |c, i, j| f.get(c, i, j) + 1.0 / 255.0))
        .collect();
    let psnr = psnr_video(&plus, &gt).unwrap();
    let expect = 20.0 * 255f64.log10();
    let psnr_ok = (psnr - expect).abs() <= 0.01;

    let rgb: Vec<ImageTensor> = (0..6).map(|_| ImageTensor::from_fn(3, 32, 32, Space::Hr, |_, _, _| rng.random())).collect();
    let self_ssim = ssim_video(&rgb, &rgb).unwrap();
    let ssim_ok = (self_ssim - 1.0).abs() <= 1e-12;

    let protocol = Protocol::default();
    let (b, k) = (protocol.border, protocol.skip_frames);
    let pred: Vec<ImageTensor> = rgb
        .iter()
        .map(|f| ImageTensor::from_fn(3, 32, 32, Space::Hr, |c, i, j| (f.get(c, i, j) + 0.05).min(1.0)))
        .collect();
    let mut damaged = pred.clone();
    let t_max = damaged.len();
    for (t, f) in damaged.iter_mut().enumerate() {
        for c in 0..3 {
            for i in 0..32 {
                for j in 0..32 {
                    let excluded_frame = t < k || t >= t_max - k;
                    let in_border = i < b || j < b || i >= 32 - b || j >= 32 - b;
                    if excluded_frame || in_border {
                        f.set(c, i, j, rng.random());
                    }
                }
            }
        }
    }
    let base = (psnr_video(&pred, &rgb).unwrap(), ssim_video(&pred, &rgb).unwrap());
    let after = (psnr_video(&damaged, &rgb).unwrap(), ssim_video(&damaged, &rgb).unwrap());
    let mut probe = pred.clone();
    let v = probe[k].get(0, b, b);
    probe[k].set(0, b, b, 1.0 - v);
    let sensitive = psnr_video(&probe, &rgb).unwrap() != base.0;
    let exclusion_ok = base == after && sensitive;
    outcome(
        psnr_ok && ssim_ok && exclusion_ok,
        format!(
            "+1/255: {psnr:.4} dB (expect {expect:.4}); SSIM(x,x) = {self_ssim}; excluded frames/border ignored {}, first retained pixel counted {sensitive}",
            base == after
        ),
    )
}

fn parameter_count() -> Outcome {
    let full = UnrolledConfig::default();
    let nets = Networks::uvsr(&full).unwrap();
    let total = count_parameters(&nets);
    let within = (total as f64 - 4.624e6).abs() / 4.624e6 <= 0.10;

    let k = full.blocks;
    let lr_channels = full.channels * full.scale.get() * full.scale.get();
    let f = full.filters;
    let per_block = conv_param_count(2 * lr_channels, f) + (full.depth - 2) * conv_param_count(f, f) + conv_param_count(f, lr_channels);
    let oracle_per_block = (9 * 96 + 1) * 128 + 5 * (9 * 128 + 1) * 128 + (9 * 128 + 1) * 48;
    let prior_blocks: usize = nets.priors().iter().map(|p| p.param_count()).sum::<usize>()
        + nets.step_params::<f64>().scalar_count();
    let closed = 903_984 * k + 2 * k;
    let exact = prior_blocks == closed && per_block == 903_984 && oracle_per_block == 903_984;
    outcome(
        within && exact,
        format!(
            "d=7 K=3 f=128 with FNet: {total} parameters ({:+.1}% vs 4.624M); prior blocks {prior_blocks} vs 903984*K+2K = {closed}",
            100.0 * (total as f64 / 4.624e6 - 1.0)
        ),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("operator exactness", operator_exactness),
        ("blur self-adjointness and DC", blur_properties),
        ("gradient fidelity", gradient_fidelity),
        ("algorithm fidelity", algorithm_fidelity),
        ("fixed point", fixed_point),
        ("classical fusion gain", fusion_gain),
        ("desk-scale learning", desk_scale_learning),
        ("multiple-degradation nonblindness", nonblindness),
        ("metric protocol", metric_protocol),
        ("parameter count", parameter_count),
    ];
    let only: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let n = i + 1;
        if !only.is_empty() && !only.contains(&n) {
            continue;
        }
        let start = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            outcome(false, format!("panicked: {msg}"))
        });
        let verdict = if result.passed { "PASS" } else { "FAIL" };
        failed += usize::from(!result.passed);
        println!(
            "criterion {n:>2} {verdict} {name} [{:.2} s]: {}",
            start.elapsed().as_secs_f64(),
            result.detail
        );
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
    println!("all criteria passed");
}
