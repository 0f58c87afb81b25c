//! Stride-1 "same" convolution through im2col + GEMM, processed in row bands
//! so the column buffer stays bounded on large frames.

use crate::tensor::Real;

/// Pixels per im2col band.
const BAND_PIXELS: usize = 16 * 1024;

pub(crate) struct ConvGeom {
    pub cin: usize,
    pub cout: usize,
    pub k: usize,
    pub h: usize,
    pub w: usize,
}

impl ConvGeom {
    fn rows_per_band(&self) -> usize {
        (BAND_PIXELS / self.w).max(1)
    }

    fn patch(&self) -> usize {
        self.cin * self.k * self.k
    }
}

/// Fills `cols` (`[cin*k*k, rows*w]`) for image rows `[r0, r0 + rows)`.
fn im2col<T: Real>(g: &ConvGeom, src: &[T], r0: usize, rows: usize, cols: &mut [T]) {
    let pad = (g.k / 2) as isize;
    let n = rows * g.w;
    for c in 0..g.cin {
        let plane = &src[c * g.h * g.w..(c + 1) * g.h * g.w];
        for a in 0..g.k {
            for b in 0..g.k {
                let row_out = &mut cols[((c * g.k + a) * g.k + b) * n..][..n];
                for r in 0..rows {
                    let si = (r0 + r) as isize + a as isize - pad;
                    let out = &mut row_out[r * g.w..(r + 1) * g.w];
                    if si < 0 || si >= g.h as isize {
                        out.fill(T::zero());
                        continue;
                    }
                    let line = &plane[si as usize * g.w..(si as usize + 1) * g.w];
                    let shift = b as isize - pad;
                    for (j, o) in out.iter_mut().enumerate() {
                        let sj = j as isize + shift;
                        *o = if sj < 0 || sj >= g.w as isize {
                            T::zero()
                        } else {
                            line[sj as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Scatter-adds `cols` back into the image gradient; transpose of [`im2col`].
fn col2im<T: Real>(g: &ConvGeom, cols: &[T], r0: usize, rows: usize, dst: &mut [T]) {
    let pad = (g.k / 2) as isize;
    let n = rows * g.w;
    for c in 0..g.cin {
        let plane = &mut dst[c * g.h * g.w..(c + 1) * g.h * g.w];
        for a in 0..g.k {
            for b in 0..g.k {
                let row_in = &cols[((c * g.k + a) * g.k + b) * n..][..n];
                for r in 0..rows {
                    let si = (r0 + r) as isize + a as isize - pad;
                    if si < 0 || si >= g.h as isize {
                        continue;
                    }
                    let line = &mut plane[si as usize * g.w..(si as usize + 1) * g.w];
                    let shift = b as isize - pad;
                    for (j, &v) in row_in[r * g.w..(r + 1) * g.w].iter().enumerate() {
                        let sj = j as isize + shift;
                        if sj >= 0 && sj < g.w as isize {
                            line[sj as usize] += v;
                        }
                    }
                }
            }
        }
    }
}

/// One image: `dst[cout, h*w] = weight[cout, patch] * cols + bias`.
pub(crate) fn forward<T: Real>(g: &ConvGeom, src: &[T], weight: &[T], bias: &[T], dst: &mut [T]) {
    let hw = g.h * g.w;
    for (o, &b) in bias.iter().enumerate() {
        dst[o * hw..(o + 1) * hw].fill(b);
    }
    let band = g.rows_per_band();
    let mut cols = vec![T::zero(); g.patch() * band * g.w];
    let mut r0 = 0;
    while r0 < g.h {
        let rows = band.min(g.h - r0);
        let n = rows * g.w;
        im2col(g, src, r0, rows, &mut cols[..g.patch() * n]);
        T::gemm(
            g.cout,
            g.patch(),
            n,
            T::one(),
            weight,
            g.patch() as isize,
            1,
            &cols,
            n as isize,
            1,
            T::one(),
            &mut dst[r0 * g.w..],
            hw as isize,
            1,
        );
        r0 += rows;
    }
}

/// Accumulates weight, bias and (optionally) input gradients of one image.
pub(crate) fn backward<T: Real>(
    g: &ConvGeom,
    src: &[T],
    weight: &[T],
    grad_out: &[T],
    grad_weight: &mut [T],
    grad_bias: &mut [T],
    mut grad_src: Option<&mut [T]>,
) {
    let hw = g.h * g.w;
    for (o, gb) in grad_bias.iter_mut().enumerate() {
        *gb += grad_out[o * hw..(o + 1) * hw].iter().copied().sum::<T>();
    }
    let band = g.rows_per_band();
    let mut cols = vec![T::zero(); g.patch() * band * g.w];
    let mut r0 = 0;
    while r0 < g.h {
        let rows = band.min(g.h - r0);
        let n = rows * g.w;
        let gout = &grad_out[r0 * g.w..];
        im2col(g, src, r0, rows, &mut cols[..g.patch() * n]);
        // grad_weight[cout, patch] += grad_out[cout, n] * cols[patch, n]^T
        T::gemm(
            g.cout,
            n,
            g.patch(),
            T::one(),
            gout,
            hw as isize,
            1,
            &cols,
            1,
            n as isize,
            T::one(),
            grad_weight,
            g.patch() as isize,
            1,
        );
        if let Some(gs) = grad_src.as_deref_mut() {
            // cols = weight^T * grad_out
            T::gemm(
                g.patch(),
                g.cout,
                n,
                T::one(),
                weight,
                1,
                g.patch() as isize,
                gout,
                hw as isize,
                1,
                T::zero(),
                &mut cols,
                n as isize,
                1,
            );
            col2im(g, &cols[..g.patch() * n], r0, rows, gs);
        }
        r0 += rows;
    }
}
