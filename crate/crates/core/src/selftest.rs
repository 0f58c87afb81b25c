//! Operator, adjoint and gradient property suites runnable from a binary.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::networks::ModelKind;
use crate::operators::{
    blur, blur_adjoint, depth_to_space, downsample, make_gaussian_kernel, space_to_depth, upsample_zeros, warp,
    warp_adjoint, FlowField, ImageTensor, Padding, RadiusPolicy, ScaleFactor, Space,
};
use crate::unrolled::{data_residuals, data_step_gradient_check, AdjointMode, StepSizes, UnrolledConfig};

#[derive(Clone, Debug, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    /// Worst observed error.
    pub worst: f64,
    pub tolerance: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SelftestReport {
    pub checks: Vec<CheckResult>,
}

impl SelftestReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

impl fmt::Display for SelftestReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.checks {
            let tag = if c.passed { "PASS" } else { "FAIL" };
            writeln!(f, "{tag} {:<34} worst {:.3e} (tol {:.0e})", c.name, c.worst, c.tolerance)?;
        }
        let passed = self.checks.iter().filter(|c| c.passed).count();
        write!(f, "{passed}/{} checks passed", self.checks.len())
    }
}

fn random_image(rng: &mut ChaCha8Rng, c: usize, h: usize, w: usize, space: Space) -> ImageTensor {
    ImageTensor::from_fn(c, h, w, space, |_, _, _| rng.random_range(-1.0..1.0))
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-300)
}

fn check(name: &'static str, worst: f64, tolerance: f64) -> CheckResult {
    CheckResult {
        name,
        passed: worst <= tolerance,
        worst,
        tolerance,
    }
}

/// Runs every suite with `cases` random draws each.
pub fn run(seed: u64, cases: usize) -> Result<SelftestReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut checks = Vec::new();

    let mut adj = 0.0f64;
    let mut s2d = 0.0f64;
    for case in 0..cases {
        let s = ScaleFactor::new(if case % 2 == 0 { 2 } else { 4 })?;
        let (c, lh, lw) = (rng.random_range(1..=3), rng.random_range(2..=9), rng.random_range(2..=9));
        let x = random_image(&mut rng, c, lh * s.get(), lw * s.get(), Space::Hr);
        let y = random_image(&mut rng, c, lh, lw, Space::Lr);
        adj = adj.max(rel(downsample(&x, s)?.inner(&y)?, x.inner(&upsample_zeros(&y, s)?)?));
        let back = depth_to_space(&space_to_depth(&x, s)?, s)?;
        s2d = s2d.max(back.sub(&x)?.norm());
    }
    checks.push(check("downsample/upsample adjoint", adj, 1e-12));
    checks.push(check("depth_to_space inverts space_to_depth", s2d, 0.0));

    let mut sym = 0.0f64;
    let mut dc = 0.0f64;
    for _ in 0..cases {
        let (h, w) = (rng.random_range(16..=64), rng.random_range(16..=64));
        let k = make_gaussian_kernel(rng.random_range(0.3..2.3), RadiusPolicy::ThreeSigma)?;
        let a = random_image(&mut rng, 1, h, w, Space::Hr);
        let b = random_image(&mut rng, 1, h, w, Space::Hr);
        sym = sym.max(rel(
            blur(&a, &k, Padding::Periodic)?.inner(&b)?,
            a.inner(&blur(&b, &k, Padding::Periodic)?)?,
        ));
        let level = rng.random_range(0.1..1.0);
        let flat = ImageTensor::constant(1, h, w, level, Space::Hr);
        for padding in [Padding::Periodic, Padding::Replicate] {
            let out = blur(&flat, &k, padding)?;
            dc = dc.max(out.data().iter().map(|v| rel(*v, level)).fold(0.0, f64::max));
        }
        let adjoint = blur_adjoint(&a, &k, Padding::Periodic)?;
        sym = sym.max(adjoint.sub(&blur(&a, &k, Padding::Periodic)?)?.norm() / a.norm());
    }
    checks.push(check("periodic blur self-adjoint", sym, 1e-12));
    checks.push(check("blur preserves constants", dc, 1e-12));

    let mut warp_adj = 0.0f64;
    for _ in 0..cases {
        let (h, w) = (rng.random_range(4..=12), rng.random_range(4..=12));
        let data = (0..2 * h * w).map(|_| rng.random_range(-2.0..2.0)).collect();
        let u = FlowField::new(h, w, data, Space::Hr)?;
        let a = random_image(&mut rng, 2, h, w, Space::Hr);
        let b = random_image(&mut rng, 2, h, w, Space::Hr);
        warp_adj = warp_adj.max(rel(warp(&a, &u)?.inner(&b)?, a.inner(&warp_adjoint(&b, &u)?)?));
    }
    checks.push(check("warp adjoint", warp_adj, 1e-12));

    let mut grad = 0.0f64;
    for _ in 0..cases.clamp(1, 4) {
        let s = ScaleFactor::new(2)?;
        let k = make_gaussian_kernel(rng.random_range(0.5..1.0), RadiusPolicy::ThreeSigma)?;
        let x = random_image(&mut rng, 1, 8, 8, Space::Hr);
        let y_t = random_image(&mut rng, 1, 4, 4, Space::Lr);
        let y_prev = random_image(&mut rng, 1, 4, 4, Space::Lr);
        let d: Vec<f64> = (0..128).map(|_| rng.random_range(-1.5..1.5)).collect();
        let t_to_prev = FlowField::new(8, 8, d, Space::Hr)?;
        let prev_to_t = FlowField::zeros(8, 8, Space::Hr);
        let r = data_step_gradient_check(&x, &y_t, &y_prev, &t_to_prev, &prev_to_t, &k, s, AdjointMode::Exact)?;
        grad = grad.max(r.current_term).max(r.previous_term);
    }
    checks.push(check("data-step gradients vs finite diff", grad, 1e-5));

    let mut fixed = 0.0f64;
    for _ in 0..cases.clamp(1, 8) {
        let s = ScaleFactor::new(4)?;
        let k = make_gaussian_kernel(1.6, RadiusPolicy::ThreeSigma)?;
        let x = random_image(&mut rng, 3, 32, 32, Space::Hr);
        let y = downsample(&blur(&x, &k, Padding::Replicate)?, s)?;
        let (a, b) = data_residuals(&x, &y, &y, &FlowField::zeros(32, 32, Space::Hr), &k, s)?;
        fixed = fixed.max(a.norm()).max(b.norm());
    }
    checks.push(check("fixed point has zero residual", fixed, 0.0));

    let mut steps = 0.0f64;
    for k in 0..6 {
        let st = StepSizes::initial(k + 1);
        for (i, (a, b)) in st.alpha.iter().zip(&st.beta).enumerate() {
            let want = 0.5f64.powi(i as i32);
            steps = steps.max((a - want).abs()).max((b - want).abs());
        }
    }
    let classical = crate::unrolled::Model::<f64>::classical(ModelKind::Uvsr, &UnrolledConfig::default())?;
    let fresh = classical.steps();
    steps = steps.max((fresh.alpha[1] - 0.5).abs());
    checks.push(check("step sizes start at powers of 1/2", steps, 0.0));

    Ok(SelftestReport { checks })
}
