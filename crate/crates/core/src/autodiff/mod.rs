//! Minimal define-by-run reverse-mode differentiation over [`Tensor`]s.
//!
//! A [`Var`] owns its value and, when any input requires a gradient, the
//! closure mapping the output gradient to input gradients. Graphs built only
//! from constants record nothing, so inference keeps no intermediates alive.
//! The imaging operators reuse the adjoint kernels of
//! [`crate::operators::kernels`] as their backward passes.

mod conv;

use std::collections::{HashMap, HashSet};
use std::rc::Rc;
use std::sync::atomic::{AtomicUsize, Ordering};

use crate::error::{invalid, Result};
use crate::operators::kernels::{self, Padding};
use crate::tensor::{Real, Shape, Tensor};

type BackwardFn<T> = Box<dyn Fn(&Tensor<T>) -> Vec<Option<Tensor<T>>>>;

struct Node<T: Real> {
    id: usize,
    value: Tensor<T>,
    requires_grad: bool,
    parents: Vec<Var<T>>,
    backward: Option<BackwardFn<T>>,
}

/// A tensor participating in a differentiable computation.
#[derive(Clone)]
pub struct Var<T: Real>(Rc<Node<T>>);

static NEXT_ID: AtomicUsize = AtomicUsize::new(0);

fn next_id() -> usize {
    NEXT_ID.fetch_add(1, Ordering::Relaxed)
}

/// Gradients of one backward pass, keyed by leaf variable.
pub struct Gradients<T: Real> {
    grads: HashMap<usize, Tensor<T>>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, v: &Var<T>) -> Option<&Tensor<T>> {
        self.grads.get(&v.0.id)
    }

    pub fn remove(&mut self, v: &Var<T>) -> Option<Tensor<T>> {
        self.grads.remove(&v.0.id)
    }
}

/// Applies `f` to every batch item, producing items of `item_shape`.
fn per_item<T: Real>(x: &Tensor<T>, out: [usize; 3], f: impl Fn(&[T], &mut [T])) -> Tensor<T> {
    let mut y = Tensor::zeros([x.batch(), out[0], out[1], out[2]]);
    for n in 0..x.batch() {
        f(x.item(n), y.item_mut(n));
    }
    y
}

impl<T: Real> std::fmt::Debug for Var<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Var")
            .field("shape", &self.shape())
            .field("requires_grad", &self.requires_grad())
            .finish()
    }
}

impl<T: Real> Var<T> {
    fn from_node(value: Tensor<T>, requires_grad: bool) -> Self {
        Var(Rc::new(Node {
            id: next_id(),
            value,
            requires_grad,
            parents: Vec::new(),
            backward: None,
        }))
    }

    /// A value that receives no gradient.
    pub fn constant(value: Tensor<T>) -> Self {
        Self::from_node(value, false)
    }

    /// A leaf whose gradient is collected by [`Var::backward`].
    pub fn leaf(value: Tensor<T>) -> Self {
        Self::from_node(value, true)
    }

    fn op(
        value: Tensor<T>,
        parents: Vec<Var<T>>,
        backward: impl Fn(&Tensor<T>) -> Vec<Option<Tensor<T>>> + 'static,
    ) -> Self {
        if parents.iter().any(|p| p.requires_grad()) {
            Var(Rc::new(Node {
                id: next_id(),
                value,
                requires_grad: true,
                parents,
                backward: Some(Box::new(backward)),
            }))
        } else {
            Self::constant(value)
        }
    }

    pub fn value(&self) -> &Tensor<T> {
        &self.0.value
    }

    pub fn shape(&self) -> Shape {
        self.0.value.shape()
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    /// Same value, cut from the graph.
    pub fn detach(&self) -> Self {
        Self::constant(self.0.value.clone())
    }

    /// Gradients of this (usually scalar) variable with respect to every
    /// reachable leaf, seeded with ones.
    pub fn backward(&self) -> Gradients<T> {
        let mut order = Vec::new();
        let mut seen = HashSet::new();
        let mut stack = vec![(self.clone(), false)];
        while let Some((v, expanded)) = stack.pop() {
            if expanded {
                order.push(v);
                continue;
            }
            if !v.requires_grad() || !seen.insert(v.0.id) {
                continue;
            }
            stack.push((v.clone(), true));
            for p in &v.0.parents {
                if p.requires_grad() && !seen.contains(&p.0.id) {
                    stack.push((p.clone(), false));
                }
            }
        }

        let mut pending: HashMap<usize, Tensor<T>> = HashMap::new();
        let mut leaves = HashMap::new();
        pending.insert(self.0.id, Tensor::full(self.shape(), T::one()));
        for v in order.iter().rev() {
            let Some(grad) = pending.remove(&v.0.id) else {
                continue;
            };
            match &v.0.backward {
                None => {
                    leaves.insert(v.0.id, grad);
                }
                Some(f) => {
                    for (p, g) in v.0.parents.iter().zip(f(&grad)) {
                        let Some(g) = g else { continue };
                        if !p.requires_grad() {
                            continue;
                        }
                        debug_assert_eq!(g.shape(), p.shape());
                        match pending.get_mut(&p.0.id) {
                            Some(acc) => acc.add_assign(&g),
                            None => {
                                pending.insert(p.0.id, g);
                            }
                        }
                    }
                }
            }
        }
        Gradients { grads: leaves }
    }

    fn check_same_shape(&self, other: &Var<T>, what: &str) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(invalid(format!(
                "{what}: shape {:?} vs {:?}",
                self.shape(),
                other.shape()
            )));
        }
        Ok(())
    }

    pub fn add(&self, other: &Var<T>) -> Result<Var<T>> {
        self.check_same_shape(other, "add")?;
        let value = self.value().zip_map(other.value(), |a, b| a + b);
        Ok(Self::op(value, vec![self.clone(), other.clone()], |g| {
            vec![Some(g.clone()), Some(g.clone())]
        }))
    }

    pub fn sub(&self, other: &Var<T>) -> Result<Var<T>> {
        self.check_same_shape(other, "sub")?;
        let value = self.value().zip_map(other.value(), |a, b| a - b);
        Ok(Self::op(value, vec![self.clone(), other.clone()], |g| {
            vec![Some(g.clone()), Some(g.map(|v| -v))]
        }))
    }

    pub fn scale(&self, k: f64) -> Var<T> {
        let k = T::from_f64_lossy(k);
        Self::op(self.value().map(|v| k * v), vec![self.clone()], move |g| {
            vec![Some(g.map(|v| k * v))]
        })
    }

    /// Multiplication by a `[1, 1, 1, 1]` variable.
    pub fn mul_scalar(&self, alpha: &Var<T>) -> Result<Var<T>> {
        if alpha.shape() != [1, 1, 1, 1] {
            return Err(invalid("mul_scalar expects a [1,1,1,1] factor"));
        }
        let a = alpha.value().data()[0];
        let (x, al) = (self.clone(), alpha.clone());
        Ok(Self::op(
            self.value().map(|v| a * v),
            vec![self.clone(), alpha.clone()],
            move |g| {
                let a = al.value().data()[0];
                vec![
                    Some(g.map(|v| a * v)),
                    Some(Tensor::scalar(g.dot(x.value()))),
                ]
            },
        ))
    }

    pub fn sum(&self) -> Var<T> {
        let shape = self.shape();
        Self::op(
            Tensor::scalar(self.value().sum()),
            vec![self.clone()],
            move |g| vec![Some(Tensor::full(shape, g.data()[0]))],
        )
    }

    /// Mean of `(self - target)^2` over every element.
    pub fn mse(&self, target: &Var<T>) -> Result<Var<T>> {
        self.check_same_shape(target, "mse")?;
        let diff = self.value().zip_map(target.value(), |a, b| a - b);
        let n = T::from_usize(diff.len()).unwrap();
        let value = Tensor::scalar(diff.data().iter().map(|&d| d * d).sum::<T>() / n);
        Ok(Self::op(
            value,
            vec![self.clone(), target.clone()],
            move |g| {
                let k = g.data()[0] * (T::one() + T::one()) / n;
                let ga = diff.map(|d| k * d);
                let gb = ga.map(|v| -v);
                vec![Some(ga), Some(gb)]
            },
        ))
    }

    pub fn relu(&self) -> Var<T> {
        self.leaky_relu(0.0)
    }

    pub fn leaky_relu(&self, slope: f64) -> Var<T> {
        let slope = T::from_f64_lossy(slope);
        let x = self.clone();
        Self::op(
            self.value().map(|v| if v > T::zero() { v } else { slope * v }),
            vec![self.clone()],
            move |g| {
                vec![Some(g.zip_map(x.value(), |gv, xv| {
                    if xv > T::zero() {
                        gv
                    } else {
                        slope * gv
                    }
                }))]
            },
        )
    }

    pub fn tanh(&self) -> Var<T> {
        let y = self.value().map(|v| v.tanh());
        let out = y.clone();
        Self::op(y, vec![self.clone()], move |g| {
            vec![Some(g.zip_map(&out, |gv, yv| gv * (T::one() - yv * yv)))]
        })
    }

    /// Same-padded stride-1 convolution; `weight` is `[cout, cin, k, k]`
    /// with odd `k`, `bias` is `[1, cout, 1, 1]`.
    pub fn conv2d(&self, weight: &Var<T>, bias: &Var<T>) -> Result<Var<T>> {
        let [n, cin, h, w] = self.shape();
        let [cout, wcin, k, k2] = weight.shape();
        if wcin != cin || k != k2 || k % 2 == 0 {
            return Err(invalid(format!(
                "conv2d: weight {:?} incompatible with input {:?}",
                weight.shape(),
                self.shape()
            )));
        }
        if bias.shape() != [1, cout, 1, 1] {
            return Err(invalid(format!("conv2d: bias shape {:?}", bias.shape())));
        }
        let geom = conv::ConvGeom { cin, cout, k, h, w };
        let mut out = Tensor::zeros([n, cout, h, w]);
        for b in 0..n {
            conv::forward(
                &geom,
                self.value().item(b),
                weight.value().data(),
                bias.value().data(),
                out.item_mut(b),
            );
        }
        let (x, wt) = (self.clone(), weight.clone());
        let need_x = self.requires_grad();
        Ok(Self::op(
            out,
            vec![self.clone(), weight.clone(), bias.clone()],
            move |g| {
                let geom = conv::ConvGeom { cin, cout, k, h, w };
                let mut gw = Tensor::zeros(wt.shape());
                let mut gb = Tensor::zeros([1, cout, 1, 1]);
                let mut gx = need_x.then(|| Tensor::zeros(x.shape()));
                for b in 0..n {
                    conv::backward(
                        &geom,
                        x.value().item(b),
                        wt.value().data(),
                        g.item(b),
                        gw.data_mut(),
                        gb.data_mut(),
                        gx.as_mut().map(|t| t.item_mut(b)),
                    );
                }
                vec![gx, Some(gw), Some(gb)]
            },
        ))
    }

    /// Concatenation along the channel axis.
    pub fn concat_channels(parts: &[&Var<T>]) -> Result<Var<T>> {
        let first = parts
            .first()
            .ok_or_else(|| invalid("concat of zero tensors"))?;
        let [n, _, h, w] = first.shape();
        let mut splits = Vec::with_capacity(parts.len());
        for p in parts {
            let [pn, c, ph, pw] = p.shape();
            if (pn, ph, pw) != (n, h, w) {
                return Err(invalid(format!(
                    "concat: {:?} vs {:?}",
                    p.shape(),
                    first.shape()
                )));
            }
            splits.push(c);
        }
        let total: usize = splits.iter().sum();
        let plane = h * w;
        let mut out = Tensor::zeros([n, total, h, w]);
        for b in 0..n {
            let mut off = 0;
            let dst = out.item_mut(b);
            for (p, &c) in parts.iter().zip(&splits) {
                dst[off * plane..(off + c) * plane].copy_from_slice(p.value().item(b));
                off += c;
            }
        }
        Ok(Self::op(
            out,
            parts.iter().map(|&p| p.clone()).collect(),
            move |g| {
                let mut grads: Vec<Tensor<T>> =
                    splits.iter().map(|&c| Tensor::zeros([n, c, h, w])).collect();
                for b in 0..n {
                    let src = g.item(b);
                    let mut off = 0;
                    for (gt, &c) in grads.iter_mut().zip(&splits) {
                        gt.item_mut(b)
                            .copy_from_slice(&src[off * plane..(off + c) * plane]);
                        off += c;
                    }
                }
                grads.into_iter().map(Some).collect()
            },
        ))
    }

    /// 2x2 max pooling; dims must be even.
    pub fn maxpool2(&self) -> Result<Var<T>> {
        let [n, c, h, w] = self.shape();
        if h % 2 != 0 || w % 2 != 0 {
            return Err(invalid(format!("maxpool2 needs even dims, got {h}x{w}")));
        }
        let (oh, ow) = (h / 2, w / 2);
        let mut out = Tensor::zeros([n, c, oh, ow]);
        let mut argmax = vec![0usize; n * c * oh * ow];
        for b in 0..n {
            let src = self.value().item(b);
            let dst = out.item_mut(b);
            for ch in 0..c {
                for i in 0..oh {
                    for j in 0..ow {
                        let mut best = (2 * i) * w + 2 * j;
                        for (di, dj) in [(0, 1), (1, 0), (1, 1)] {
                            let q = (2 * i + di) * w + 2 * j + dj;
                            if src[ch * h * w + q] > src[ch * h * w + best] {
                                best = q;
                            }
                        }
                        let o = (ch * oh + i) * ow + j;
                        dst[o] = src[ch * h * w + best];
                        argmax[(b * c * oh * ow) + o] = ch * h * w + best;
                    }
                }
            }
        }
        Ok(Self::op(out, vec![self.clone()], move |g| {
            let mut gx = Tensor::zeros([n, c, h, w]);
            let per = c * oh * ow;
            for b in 0..n {
                let gi = g.item(b);
                let dst = gx.item_mut(b);
                for (o, &gv) in gi.iter().enumerate() {
                    dst[argmax[b * per + o]] += gv;
                }
            }
            vec![Some(gx)]
        }))
    }

    /// `B U_s`: bilinear interpolation onto the `s`-times denser grid.
    pub fn upsample_bilinear(&self, s: usize) -> Var<T> {
        let [_, c, h, w] = self.shape();
        let out = per_item(self.value(), [c, h * s, w * s], |src, dst| {
            kernels::upsample_bilinear(src, dst, c, h, w, s)
        });
        Self::op(out, vec![self.clone()], move |g| {
            vec![Some(per_item(g, [c, h, w], |src, dst| {
                kernels::upsample_bilinear_adjoint(src, dst, c, h, w, s)
            }))]
        })
    }

    /// Gaussian blur with one separable tap vector per batch item (or one
    /// shared by all items).
    pub fn blur(&self, taps: &Rc<Vec<Vec<T>>>, padding: Padding) -> Result<Var<T>> {
        let [n, c, h, w] = self.shape();
        if taps.len() != 1 && taps.len() != n {
            return Err(invalid(format!(
                "blur: {} kernels for a batch of {n}",
                taps.len()
            )));
        }
        let pick = |b: usize, taps: &Vec<Vec<T>>| if taps.len() == 1 { 0 } else { b };
        let mut out = Tensor::zeros(self.shape());
        for b in 0..n {
            kernels::blur(
                self.value().item(b),
                out.item_mut(b),
                c,
                h,
                w,
                &taps[pick(b, taps)],
                padding,
            );
        }
        let taps = taps.clone();
        Ok(Self::op(out, vec![self.clone()], move |g| {
            let mut gx = Tensor::zeros([n, c, h, w]);
            for b in 0..n {
                kernels::blur_adjoint(
                    g.item(b),
                    gx.item_mut(b),
                    c,
                    h,
                    w,
                    &taps[pick(b, &taps)],
                    padding,
                );
            }
            vec![Some(gx)]
        }))
    }

    /// `D_s`.
    pub fn downsample(&self, s: usize) -> Result<Var<T>> {
        let [_, c, h, w] = self.shape();
        if h % s != 0 || w % s != 0 {
            return Err(invalid(format!("downsample: {h}x{w} not divisible by {s}")));
        }
        let out = per_item(self.value(), [c, h / s, w / s], |src, dst| {
            kernels::downsample(src, dst, c, h, w, s)
        });
        Ok(Self::op(out, vec![self.clone()], move |g| {
            vec![Some(per_item(g, [c, h, w], |src, dst| {
                kernels::upsample_zeros(src, dst, c, h / s, w / s, s)
            }))]
        }))
    }

    /// `U_s`.
    pub fn upsample_zeros(&self, s: usize) -> Var<T> {
        let [_, c, h, w] = self.shape();
        let out = per_item(self.value(), [c, h * s, w * s], |src, dst| {
            kernels::upsample_zeros(src, dst, c, h, w, s)
        });
        Self::op(out, vec![self.clone()], move |g| {
            vec![Some(per_item(g, [c, h, w], |src, dst| {
                kernels::downsample(src, dst, c, h * s, w * s, s)
            }))]
        })
    }

    pub fn space_to_depth(&self, s: usize) -> Result<Var<T>> {
        let [_, c, h, w] = self.shape();
        if h % s != 0 || w % s != 0 {
            return Err(invalid(format!(
                "space_to_depth: {h}x{w} not divisible by {s}"
            )));
        }
        let out = per_item(self.value(), [c * s * s, h / s, w / s], |src, dst| {
            kernels::space_to_depth(src, dst, c, h, w, s)
        });
        Ok(Self::op(out, vec![self.clone()], move |g| {
            vec![Some(per_item(g, [c, h, w], |src, dst| {
                kernels::depth_to_space(src, dst, c, h, w, s)
            }))]
        }))
    }

    pub fn depth_to_space(&self, s: usize) -> Result<Var<T>> {
        let [_, cs, lh, lw] = self.shape();
        if cs % (s * s) != 0 {
            return Err(invalid(format!(
                "depth_to_space: {cs} channels not divisible by {}",
                s * s
            )));
        }
        let (c, h, w) = (cs / (s * s), lh * s, lw * s);
        let out = per_item(self.value(), [c, h, w], |src, dst| {
            kernels::depth_to_space(src, dst, c, h, w, s)
        });
        Ok(Self::op(out, vec![self.clone()], move |g| {
            vec![Some(per_item(g, [cs, lh, lw], |src, dst| {
                kernels::space_to_depth(src, dst, c, h, w, s)
            }))]
        }))
    }

    /// `F_u x`, differentiable in both the image and the `[n, 2, h, w]` flow.
    pub fn warp(&self, flow: &Var<T>) -> Result<Var<T>> {
        let [n, c, h, w] = self.shape();
        if flow.shape() != [n, 2, h, w] {
            return Err(invalid(format!(
                "warp: flow {:?} does not match image {:?}",
                flow.shape(),
                self.shape()
            )));
        }
        let mut out = Tensor::zeros(self.shape());
        for b in 0..n {
            kernels::warp(
                self.value().item(b),
                flow.value().item(b),
                out.item_mut(b),
                c,
                h,
                w,
            );
        }
        let (x, u) = (self.clone(), flow.clone());
        Ok(Self::op(
            out,
            vec![self.clone(), flow.clone()],
            move |g| {
                let gx = x.requires_grad().then(|| {
                    let mut t = Tensor::zeros([n, c, h, w]);
                    for b in 0..n {
                        kernels::warp_adjoint(g.item(b), u.value().item(b), t.item_mut(b), c, h, w);
                    }
                    t
                });
                let gu = u.requires_grad().then(|| {
                    let mut t = Tensor::zeros([n, 2, h, w]);
                    for b in 0..n {
                        kernels::warp_flow_grad(
                            x.value().item(b),
                            u.value().item(b),
                            g.item(b),
                            t.item_mut(b),
                            c,
                            h,
                            w,
                        );
                    }
                    t
                });
                vec![gx, gu]
            },
        ))
    }

    /// Extends the bottom and right edges by replication to `h x w`.
    pub fn pad_replicate(&self, h: usize, w: usize) -> Result<Var<T>> {
        let [_, c, ih, iw] = self.shape();
        if h < ih || w < iw {
            return Err(invalid("pad_replicate cannot shrink"));
        }
        if (h, w) == (ih, iw) {
            return Ok(self.clone());
        }
        let src_index = move |i: usize, j: usize| i.min(ih - 1) * iw + j.min(iw - 1);
        let out = per_item(self.value(), [c, h, w], |src, dst| {
            for ch in 0..c {
                for i in 0..h {
                    for j in 0..w {
                        dst[(ch * h + i) * w + j] = src[ch * ih * iw + src_index(i, j)];
                    }
                }
            }
        });
        Ok(Self::op(out, vec![self.clone()], move |g| {
            vec![Some(per_item(g, [c, ih, iw], |src, dst| {
                dst.fill(T::zero());
                for ch in 0..c {
                    for i in 0..h {
                        for j in 0..w {
                            dst[ch * ih * iw + src_index(i, j)] += src[(ch * h + i) * w + j];
                        }
                    }
                }
            }))]
        }))
    }

    /// Keeps the top-left `h x w` window.
    pub fn crop(&self, h: usize, w: usize) -> Result<Var<T>> {
        let [_, c, ih, iw] = self.shape();
        if h > ih || w > iw {
            return Err(invalid("crop larger than input"));
        }
        if (h, w) == (ih, iw) {
            return Ok(self.clone());
        }
        let out = per_item(self.value(), [c, h, w], |src, dst| {
            for ch in 0..c {
                for i in 0..h {
                    dst[(ch * h + i) * w..(ch * h + i + 1) * w]
                        .copy_from_slice(&src[(ch * ih + i) * iw..(ch * ih + i) * iw + w]);
                }
            }
        });
        Ok(Self::op(out, vec![self.clone()], move |g| {
            vec![Some(per_item(g, [c, ih, iw], |src, dst| {
                dst.fill(T::zero());
                for ch in 0..c {
                    for i in 0..h {
                        dst[(ch * ih + i) * iw..(ch * ih + i) * iw + w]
                            .copy_from_slice(&src[(ch * h + i) * w..(ch * h + i + 1) * w]);
                    }
                }
            }))]
        }))
    }
}
