//! Slice-level kernels behind the imaging operators and their adjoints.
//!
//! Every routine works on one image stored channel-major (`[c, h, w]`), is
//! generic over the element type, and writes into a caller-provided buffer.
//! The autodiff engine calls the adjoint routines as backward passes, so each
//! forward kernel here has its transpose next to it.

use serde::{Deserialize, Serialize};

use crate::tensor::Real;

/// Boundary handling for the blur operator.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Padding {
    /// Wrap around; the blur is then exactly self-adjoint.
    Periodic,
    /// Clamp to the nearest edge pixel.
    #[default]
    Replicate,
}

#[inline]
fn pad_index(i: isize, n: usize, padding: Padding) -> usize {
    match padding {
        Padding::Periodic => i.rem_euclid(n as isize) as usize,
        Padding::Replicate => i.clamp(0, n as isize - 1) as usize,
    }
}

/// Separable correlation of each `h x w` plane with `taps` (length `2r + 1`)
/// along rows, then columns.
pub fn blur<T: Real>(
    src: &[T],
    dst: &mut [T],
    channels: usize,
    h: usize,
    w: usize,
    taps: &[T],
    padding: Padding,
) {
    let r = (taps.len() / 2) as isize;
    let plane = h * w;
    let mut tmp = vec![T::zero(); plane];
    for c in 0..channels {
        let src = &src[c * plane..(c + 1) * plane];
        let dst = &mut dst[c * plane..(c + 1) * plane];
        for i in 0..h {
            let row = &src[i * w..(i + 1) * w];
            for j in 0..w {
                let mut acc = T::zero();
                for (a, &t) in taps.iter().enumerate() {
                    acc += t * row[pad_index(j as isize + a as isize - r, w, padding)];
                }
                tmp[i * w + j] = acc;
            }
        }
        for i in 0..h {
            let out = &mut dst[i * w..(i + 1) * w];
            out.fill(T::zero());
            for (a, &t) in taps.iter().enumerate() {
                let si = pad_index(i as isize + a as isize - r, h, padding);
                let row = &tmp[si * w..(si + 1) * w];
                for (o, &v) in out.iter_mut().zip(row) {
                    *o += t * v;
                }
            }
        }
    }
}

/// Exact transpose of [`blur`] for the same taps and padding.
pub fn blur_adjoint<T: Real>(
    src: &[T],
    dst: &mut [T],
    channels: usize,
    h: usize,
    w: usize,
    taps: &[T],
    padding: Padding,
) {
    let r = (taps.len() / 2) as isize;
    let plane = h * w;
    let mut tmp = vec![T::zero(); plane];
    for c in 0..channels {
        let src = &src[c * plane..(c + 1) * plane];
        let dst = &mut dst[c * plane..(c + 1) * plane];
        tmp.fill(T::zero());
        for i in 0..h {
            let row = &src[i * w..(i + 1) * w];
            for (a, &t) in taps.iter().enumerate() {
                let ti = pad_index(i as isize + a as isize - r, h, padding);
                let out = &mut tmp[ti * w..(ti + 1) * w];
                for (o, &v) in out.iter_mut().zip(row) {
                    *o += t * v;
                }
            }
        }
        dst.fill(T::zero());
        for i in 0..h {
            let row = &tmp[i * w..(i + 1) * w];
            let out = &mut dst[i * w..(i + 1) * w];
            for (j, &v) in row.iter().enumerate() {
                for (a, &t) in taps.iter().enumerate() {
                    out[pad_index(j as isize + a as isize - r, w, padding)] += t * v;
                }
            }
        }
    }
}

/// Keeps every `s`-th pixel starting at index 0 in each dimension.
pub fn downsample<T: Real>(src: &[T], dst: &mut [T], channels: usize, h: usize, w: usize, s: usize) {
    let (lh, lw) = (h / s, w / s);
    for c in 0..channels {
        for i in 0..lh {
            for j in 0..lw {
                dst[(c * lh + i) * lw + j] = src[(c * h + i * s) * w + j * s];
            }
        }
    }
}

/// Places each low-resolution sample at `(s*i, s*j)` and zeros elsewhere;
/// `h`, `w` are the low-resolution dims.
pub fn upsample_zeros<T: Real>(
    src: &[T],
    dst: &mut [T],
    channels: usize,
    h: usize,
    w: usize,
    s: usize,
) {
    let (hh, hw) = (h * s, w * s);
    dst.fill(T::zero());
    for c in 0..channels {
        for i in 0..h {
            for j in 0..w {
                dst[(c * hh + i * s) * hw + j * s] = src[(c * h + i) * w + j];
            }
        }
    }
}

/// Interpolation taps of one high-resolution coordinate: the retained sample
/// to its left with weight `1 - f` and the next one (held at the last
/// sample) with weight `f`.
#[inline]
fn lattice_taps<T: Real>(p: usize, n: usize, s: usize) -> (usize, usize, T) {
    let i = p / s;
    let j = (i + 1).min(n - 1);
    let f = T::from_usize(p % s).unwrap() / T::from_usize(s).unwrap();
    (i, j, f)
}

/// Bilinear interpolation of a low-resolution image (`h x w`) onto the
/// `s`-times denser grid whose retained lattice sits at multiples of `s`.
/// Beyond the last retained sample the value is held.
pub fn upsample_bilinear<T: Real>(
    src: &[T],
    dst: &mut [T],
    channels: usize,
    h: usize,
    w: usize,
    s: usize,
) {
    let (hh, hw) = (h * s, w * s);
    let mut tmp = vec![T::zero(); h * hw];
    for c in 0..channels {
        let src = &src[c * h * w..(c + 1) * h * w];
        let dst = &mut dst[c * hh * hw..(c + 1) * hh * hw];
        for i in 0..h {
            let row = &src[i * w..(i + 1) * w];
            for p in 0..hw {
                let (a, b, f) = lattice_taps::<T>(p, w, s);
                tmp[i * hw + p] = (T::one() - f) * row[a] + f * row[b];
            }
        }
        for p in 0..hh {
            let (a, b, f) = lattice_taps::<T>(p, h, s);
            let ra = &tmp[a * hw..(a + 1) * hw];
            let rb = &tmp[b * hw..(b + 1) * hw];
            let out = &mut dst[p * hw..(p + 1) * hw];
            for ((o, &va), &vb) in out.iter_mut().zip(ra).zip(rb) {
                *o = (T::one() - f) * va + f * vb;
            }
        }
    }
}

/// Exact transpose of [`upsample_bilinear`]; `h`, `w` are the
/// low-resolution dims.
pub fn upsample_bilinear_adjoint<T: Real>(
    src: &[T],
    dst: &mut [T],
    channels: usize,
    h: usize,
    w: usize,
    s: usize,
) {
    let (hh, hw) = (h * s, w * s);
    let mut tmp = vec![T::zero(); h * hw];
    for c in 0..channels {
        let src = &src[c * hh * hw..(c + 1) * hh * hw];
        let dst = &mut dst[c * h * w..(c + 1) * h * w];
        tmp.fill(T::zero());
        for p in 0..hh {
            let (a, b, f) = lattice_taps::<T>(p, h, s);
            let row = &src[p * hw..(p + 1) * hw];
            for (q, &g) in row.iter().enumerate() {
                tmp[a * hw + q] += (T::one() - f) * g;
                tmp[b * hw + q] += f * g;
            }
        }
        dst.fill(T::zero());
        for i in 0..h {
            let row = &tmp[i * hw..(i + 1) * hw];
            let out = &mut dst[i * w..(i + 1) * w];
            for (p, &g) in row.iter().enumerate() {
                let (a, b, f) = lattice_taps::<T>(p, w, s);
                out[a] += (T::one() - f) * g;
                out[b] += f * g;
            }
        }
    }
}

/// Bilinear sampling position of one output pixel after clamping.
struct Sample<T> {
    x0: usize,
    x1: usize,
    y0: usize,
    y1: usize,
    fx: T,
    fy: T,
    /// Whether the unclamped coordinate lies inside the image; the flow
    /// derivative vanishes along a clamped axis.
    inside_x: bool,
    inside_y: bool,
}

#[inline]
fn sample_at<T: Real>(i: usize, j: usize, du: T, dv: T, h: usize, w: usize) -> Sample<T> {
    let xmax = T::from_usize(w - 1).unwrap();
    let ymax = T::from_usize(h - 1).unwrap();
    let xr = T::from_usize(j).unwrap() + du;
    let yr = T::from_usize(i).unwrap() + dv;
    let inside_x = xr >= T::zero() && xr <= xmax;
    let inside_y = yr >= T::zero() && yr <= ymax;
    let xc = xr.max(T::zero()).min(xmax);
    let yc = yr.max(T::zero()).min(ymax);
    let x0f = xc.floor();
    let y0f = yc.floor();
    let x0 = x0f.to_usize().unwrap();
    let y0 = y0f.to_usize().unwrap();
    Sample {
        x0,
        x1: (x0 + 1).min(w - 1),
        y0,
        y1: (y0 + 1).min(h - 1),
        fx: xc - x0f,
        fy: yc - y0f,
        inside_x,
        inside_y,
    }
}

/// `dst(p) = src(p + u(p))` with bilinear interpolation and clamp-to-border.
/// `flow` is `[2, h, w]` holding horizontal then vertical displacements.
pub fn warp<T: Real>(src: &[T], flow: &[T], dst: &mut [T], channels: usize, h: usize, w: usize) {
    let plane = h * w;
    for i in 0..h {
        for j in 0..w {
            let p = i * w + j;
            let sm = sample_at(i, j, flow[p], flow[plane + p], h, w);
            let (w00, w01) = ((T::one() - sm.fy) * (T::one() - sm.fx), (T::one() - sm.fy) * sm.fx);
            let (w10, w11) = (sm.fy * (T::one() - sm.fx), sm.fy * sm.fx);
            for c in 0..channels {
                let img = &src[c * plane..(c + 1) * plane];
                dst[c * plane + p] = w00 * img[sm.y0 * w + sm.x0]
                    + w01 * img[sm.y0 * w + sm.x1]
                    + w10 * img[sm.y1 * w + sm.x0]
                    + w11 * img[sm.y1 * w + sm.x1];
            }
        }
    }
}

/// Transpose of [`warp`] in its image argument (flow held fixed).
pub fn warp_adjoint<T: Real>(
    grad: &[T],
    flow: &[T],
    dst: &mut [T],
    channels: usize,
    h: usize,
    w: usize,
) {
    let plane = h * w;
    dst.fill(T::zero());
    for i in 0..h {
        for j in 0..w {
            let p = i * w + j;
            let sm = sample_at(i, j, flow[p], flow[plane + p], h, w);
            let (w00, w01) = ((T::one() - sm.fy) * (T::one() - sm.fx), (T::one() - sm.fy) * sm.fx);
            let (w10, w11) = (sm.fy * (T::one() - sm.fx), sm.fy * sm.fx);
            for c in 0..channels {
                let g = grad[c * plane + p];
                let out = &mut dst[c * plane..(c + 1) * plane];
                out[sm.y0 * w + sm.x0] += w00 * g;
                out[sm.y0 * w + sm.x1] += w01 * g;
                out[sm.y1 * w + sm.x0] += w10 * g;
                out[sm.y1 * w + sm.x1] += w11 * g;
            }
        }
    }
}

/// Derivative of `<grad, warp(src, flow)>` with respect to the flow.
pub fn warp_flow_grad<T: Real>(
    src: &[T],
    flow: &[T],
    grad: &[T],
    dst: &mut [T],
    channels: usize,
    h: usize,
    w: usize,
) {
    let plane = h * w;
    for i in 0..h {
        for j in 0..w {
            let p = i * w + j;
            let sm = sample_at(i, j, flow[p], flow[plane + p], h, w);
            let mut gx = T::zero();
            let mut gy = T::zero();
            for c in 0..channels {
                let img = &src[c * plane..(c + 1) * plane];
                let v00 = img[sm.y0 * w + sm.x0];
                let v01 = img[sm.y0 * w + sm.x1];
                let v10 = img[sm.y1 * w + sm.x0];
                let v11 = img[sm.y1 * w + sm.x1];
                let g = grad[c * plane + p];
                gx += g * ((T::one() - sm.fy) * (v01 - v00) + sm.fy * (v11 - v10));
                gy += g * ((T::one() - sm.fx) * (v10 - v00) + sm.fx * (v11 - v01));
            }
            dst[p] = if sm.inside_x { gx } else { T::zero() };
            dst[plane + p] = if sm.inside_y { gy } else { T::zero() };
        }
    }
}

/// `[c, h, w] -> [c*s*s, h/s, w/s]`; output channel `c*s*s + dy*s + dx`
/// holds the pixels at offset `(dy, dx)` of every `s x s` cell.
pub fn space_to_depth<T: Real>(src: &[T], dst: &mut [T], channels: usize, h: usize, w: usize, s: usize) {
    let (lh, lw) = (h / s, w / s);
    for c in 0..channels {
        for dy in 0..s {
            for dx in 0..s {
                let oc = (c * s + dy) * s + dx;
                for i in 0..lh {
                    for j in 0..lw {
                        dst[(oc * lh + i) * lw + j] = src[(c * h + i * s + dy) * w + j * s + dx];
                    }
                }
            }
        }
    }
}

/// Inverse of [`space_to_depth`]; `channels`, `h`, `w` describe the
/// high-resolution result.
pub fn depth_to_space<T: Real>(src: &[T], dst: &mut [T], channels: usize, h: usize, w: usize, s: usize) {
    let (lh, lw) = (h / s, w / s);
    for c in 0..channels {
        for dy in 0..s {
            for dx in 0..s {
                let oc = (c * s + dy) * s + dx;
                for i in 0..lh {
                    for j in 0..lw {
                        dst[(c * h + i * s + dy) * w + j * s + dx] = src[(oc * lh + i) * lw + j];
                    }
                }
            }
        }
    }
}
