//! Finite-difference verification of the data-step directions.

use crate::error::{invalid, Result};
use crate::operators::{
    blur, blur_adjoint, downsample, upsample_bilinear, upsample_zeros, warp, warp_adjoint, BlurKernel,
    FlowField, ImageTensor, Padding, ScaleFactor,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AdjointMode {
    /// `H^T D_s^T` and `F^T` computed exactly (periodic blur, zero
    /// insertion, transposed warp).
    Exact,
    /// The approximations used inside the network: `H B U_s` and warping by
    /// the reverse flow.
    Approximate,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradientCheckReport {
    /// `max |g − g_fd| / max |g_fd|` for `½‖D_s H x − y_t‖²`.
    pub current_term: f64,
    /// Same for `½‖D_s H F_{u_{t→t−1}} x − y_{t−1}‖²`.
    pub previous_term: f64,
    pub current_grad_max: f64,
    pub previous_grad_max: f64,
}

fn dh(x: &ImageTensor, h: &BlurKernel, s: ScaleFactor) -> Result<ImageTensor> {
    downsample(&blur(x, h, Padding::Periodic)?, s)
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn deviation(analytic: &ImageTensor, numeric: &[f64]) -> f64 {
    let diff: Vec<f64> = analytic.data().iter().zip(numeric).map(|(a, b)| a - b).collect();
    let scale = max_abs(numeric).max(max_abs(analytic.data()));
    if scale == 0.0 {
        0.0
    } else {
        max_abs(&diff) / scale
    }
}

fn central_differences(x: &ImageTensor, f: impl Fn(&ImageTensor) -> Result<f64>) -> Result<Vec<f64>> {
    let step = 1e-6;
    let mut out = Vec::with_capacity(x.data().len());
    let (hh, w) = (x.height(), x.width());
    for idx in 0..x.data().len() {
        let (ch, i, j) = (idx / (hh * w), idx / w % hh, idx % w);
        let mut plus = x.clone();
        plus.set(ch, i, j, x.get(ch, i, j) + step);
        let mut minus = x.clone();
        minus.set(ch, i, j, x.get(ch, i, j) - step);
        out.push((f(&plus)? - f(&minus)?) / (2.0 * step));
    }
    Ok(out)
}

/// Compares the two data-step directions at `x` with central differences
/// of their quadratic objectives. Blur is periodic throughout; flows are HR.
pub fn data_step_gradient_check(
    x: &ImageTensor,
    y_t: &ImageTensor,
    y_prev: &ImageTensor,
    t_to_prev: &FlowField,
    prev_to_t: &FlowField,
    h: &BlurKernel,
    s: ScaleFactor,
    mode: AdjointMode,
) -> Result<GradientCheckReport> {
    if !y_t.same_dims(y_prev) {
        return Err(invalid("y_t and y_prev differ in shape"));
    }
    let back = |r: &ImageTensor| -> Result<ImageTensor> {
        match mode {
            AdjointMode::Exact => blur_adjoint(&upsample_zeros(r, s)?, h, Padding::Periodic),
            AdjointMode::Approximate => blur(&upsample_bilinear(r, s)?, h, Padding::Periodic),
        }
    };
    let g_current = back(&dh(x, h, s)?.sub(y_t)?)?;
    let r_prev = back(&dh(&warp(x, t_to_prev)?, h, s)?.sub(y_prev)?)?;
    let g_previous = match mode {
        AdjointMode::Exact => warp_adjoint(&r_prev, t_to_prev)?,
        AdjointMode::Approximate => warp(&r_prev, prev_to_t)?,
    };
    let fd_current = central_differences(x, |v| {
        let r = dh(v, h, s)?.sub(y_t)?;
        Ok(0.5 * r.inner(&r)?)
    })?;
    let fd_previous = central_differences(x, |v| {
        let r = dh(&warp(v, t_to_prev)?, h, s)?.sub(y_prev)?;
        Ok(0.5 * r.inner(&r)?)
    })?;
    Ok(GradientCheckReport {
        current_term: deviation(&g_current, &fd_current),
        previous_term: deviation(&g_previous, &fd_previous),
        current_grad_max: max_abs(g_current.data()),
        previous_grad_max: max_abs(g_previous.data()),
    })
}
