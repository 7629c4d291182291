//! Channels-first (N, C, H, W) convolution and transposed convolution.

use rayon::prelude::*;

use crate::error::{arg_err, shape_err, Result};
use crate::float::Float;
use crate::mode::PAR_THRESHOLD;
use crate::tensor::{BackwardCtx, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Conv2dParams {
    pub stride: usize,
    pub padding: usize,
}

impl Default for Conv2dParams {
    fn default() -> Self {
        Self { stride: 1, padding: 0 }
    }
}

#[derive(Clone, Copy, Debug)]
struct Geom {
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    oh: usize,
    ow: usize,
    stride: usize,
    pad: usize,
}

impl Geom {
    fn col_rows(&self) -> usize {
        self.c * self.kh * self.kw
    }
    fn col_cols(&self) -> usize {
        self.oh * self.ow
    }
}

/// Output columns `ox` whose input column `ox * stride + k - pad` lies in `0..w`.
fn valid_range(k: usize, g: &Geom) -> (usize, usize) {
    let lo = if k >= g.pad { 0 } else { (g.pad - k).div_ceil(g.stride) };
    let hi = if g.w + g.pad <= k { 0 } else { ((g.w + g.pad - k - 1) / g.stride + 1).min(g.ow) };
    (lo.min(hi), hi)
}

/// Unfold one image `[c, h, w]` into `[c*kh*kw, oh*ow]`.
fn im2col<F: Float>(x: &[F], g: &Geom, cols: &mut [F]) {
    let ncols = g.col_cols();
    for ch in 0..g.c {
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let (lo, hi) = valid_range(kj, g);
                let row = (ch * g.kh + ki) * g.kw + kj;
                let dst = &mut cols[row * ncols..(row + 1) * ncols];
                for oy in 0..g.oh {
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    let line = &mut dst[oy * g.ow..(oy + 1) * g.ow];
                    if iy < 0 || iy >= g.h as isize {
                        line.fill(F::zero());
                        continue;
                    }
                    line[..lo].fill(F::zero());
                    line[hi..].fill(F::zero());
                    let src = &x[(ch * g.h + iy as usize) * g.w..][..g.w];
                    let start = lo * g.stride + kj - g.pad;
                    if g.stride == 1 {
                        line[lo..hi].copy_from_slice(&src[start..start + hi - lo]);
                    } else {
                        for (j, v) in line[lo..hi].iter_mut().enumerate() {
                            *v = src[start + j * g.stride];
                        }
                    }
                }
            }
        }
    }
}

/// Fold `[c*kh*kw, oh*ow]` back onto `[c, h, w]`, summing overlaps.
fn col2im<F: Float>(cols: &[F], g: &Geom, x: &mut [F]) {
    let ncols = g.col_cols();
    for ch in 0..g.c {
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let (lo, hi) = valid_range(kj, g);
                let row = (ch * g.kh + ki) * g.kw + kj;
                let src = &cols[row * ncols..(row + 1) * ncols];
                for oy in 0..g.oh {
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize || lo >= hi {
                        continue;
                    }
                    let dst = &mut x[(ch * g.h + iy as usize) * g.w..][..g.w];
                    let line = &src[oy * g.ow + lo..oy * g.ow + hi];
                    let start = lo * g.stride + kj - g.pad;
                    if g.stride == 1 {
                        dst[start..start + line.len()].iter_mut().zip(line).for_each(|(d, &v)| *d += v);
                    } else {
                        for (j, &v) in line.iter().enumerate() {
                            dst[start + j * g.stride] += v;
                        }
                    }
                }
            }
        }
    }
}

fn gemm_nn<F: Float>(m: usize, k: usize, n: usize, a: &[F], b: &[F], c: &mut [F], beta: F) {
    F::gemm(m, k, n, F::one(), a, k as isize, 1, b, n as isize, 1, beta, c, n as isize, 1);
}

/// `a^T @ b` with `a` stored `[k, m]`.
fn gemm_tn<F: Float>(m: usize, k: usize, n: usize, a: &[F], b: &[F], c: &mut [F], beta: F) {
    F::gemm(m, k, n, F::one(), a, 1, m as isize, b, n as isize, 1, beta, c, n as isize, 1);
}

/// `a @ b^T` with `b` stored `[n, k]`.
fn gemm_nt<F: Float>(m: usize, k: usize, n: usize, a: &[F], b: &[F], c: &mut [F], beta: F) {
    F::gemm(m, k, n, F::one(), a, k as isize, 1, b, 1, k as isize, beta, c, n as isize, 1);
}

fn check4<F: Float>(op: &'static str, t: &Tensor<F>) -> Result<[usize; 4]> {
    match *t.shape() {
        [a, b, c, d] => Ok([a, b, c, d]),
        _ => Err(shape_err(op, format!("expected rank-4 tensor, got {:?}", t.shape()))),
    }
}

fn add_bias<F: Float>(out: &mut [F], bias: &[F], plane: usize) {
    for img in out.chunks_mut(bias.len() * plane) {
        for (ch, &b) in img.chunks_mut(plane).zip(bias) {
            ch.iter_mut().for_each(|v| *v += b);
        }
    }
}

fn bias_grad<F: Float>(g: &[F], ch: usize, plane: usize) -> Vec<F> {
    let mut gb = vec![F::zero(); ch];
    for img in g.chunks(ch * plane) {
        for (acc, p) in gb.iter_mut().zip(img.chunks(plane)) {
            for &v in p {
                *acc += v;
            }
        }
    }
    gb
}

fn per_image<F: Float>(out: &mut [F], chunk: usize, work: usize, f: impl Fn(usize, &mut [F]) + Sync + Send) {
    if out.len() / chunk.max(1) > 1 && work >= PAR_THRESHOLD {
        out.par_chunks_mut(chunk).enumerate().for_each(|(i, o)| f(i, o));
    } else {
        out.chunks_mut(chunk).enumerate().for_each(|(i, o)| f(i, o));
    }
}

/// Sum of per-image weight gradients, reduced in image order.
fn weight_grad<F: Float>(n: usize, len: usize, f: impl Fn(usize, &mut [F]) + Sync + Send) -> Vec<F> {
    let mut parts = vec![F::zero(); n * len];
    per_image(&mut parts, len, n * len * 64, f);
    let mut gw = vec![F::zero(); len];
    for p in parts.chunks(len) {
        gw.iter_mut().zip(p).for_each(|(a, &b)| *a += b);
    }
    gw
}

impl<F: Float> Tensor<F> {
    /// 2D convolution. `weight` is `[out_c, in_c, kh, kw]`, `bias` is `[out_c]`.
    pub fn conv2d(&self, weight: &Tensor<F>, bias: Option<&Tensor<F>>, p: Conv2dParams) -> Result<Tensor<F>> {
        let [n, c, h, w] = check4("conv2d", self)?;
        let [oc, ic, kh, kw] = check4("conv2d", weight)?;
        if ic != c {
            return Err(shape_err("conv2d", format!("input has {c} channels, weight expects {ic}")));
        }
        if p.stride == 0 {
            return Err(arg_err("conv2d", "stride must be positive"));
        }
        if h + 2 * p.padding < kh || w + 2 * p.padding < kw {
            return Err(shape_err("conv2d", "kernel larger than padded input"));
        }
        if let Some(b) = bias {
            if b.shape() != [oc] {
                return Err(shape_err("conv2d", format!("bias shape {:?}, expected [{oc}]", b.shape())));
            }
        }
        let g = Geom {
            c,
            h,
            w,
            kh,
            kw,
            oh: (h + 2 * p.padding - kh) / p.stride + 1,
            ow: (w + 2 * p.padding - kw) / p.stride + 1,
            stride: p.stride,
            pad: p.padding,
        };
        let (rows, ncols) = (g.col_rows(), g.col_cols());
        let mut out = vec![F::zero(); n * oc * ncols];
        let x = self.data();
        let wt = weight.data();
        per_image(&mut out, oc * ncols, n * oc * ncols * rows, |i, o| {
            let mut cols = vec![F::zero(); rows * ncols];
            im2col(&x[i * c * h * w..(i + 1) * c * h * w], &g, &mut cols);
            gemm_nn(oc, rows, ncols, wt, &cols, o, F::zero());
        });
        if let Some(b) = bias {
            add_bias(&mut out, b.data(), ncols);
        }
        let mut inputs = vec![self.clone(), weight.clone()];
        inputs.extend(bias.cloned());
        Tensor::from_op(
            "conv2d",
            vec![n, oc, g.oh, g.ow],
            out,
            inputs,
            Box::new(move |ctx: &BackwardCtx<'_, F>| {
                let (x, wt, gr) = (ctx.inputs[0].data(), ctx.inputs[1].data(), ctx.grad);
                let img = c * h * w;
                let gx = ctx.needs[0].then(|| {
                    let mut gx = vec![F::zero(); n * img];
                    per_image(&mut gx, img, n * img * oc, |i, o| {
                        let mut cols = vec![F::zero(); rows * ncols];
                        gemm_tn(rows, oc, ncols, wt, &gr[i * oc * ncols..(i + 1) * oc * ncols], &mut cols, F::zero());
                        col2im(&cols, &g, o);
                    });
                    gx
                });
                let gw = ctx.needs[1].then(|| {
                    weight_grad(n, oc * rows, |i, o| {
                        let mut cols = vec![F::zero(); rows * ncols];
                        im2col(&x[i * img..(i + 1) * img], &g, &mut cols);
                        gemm_nt(oc, ncols, rows, &gr[i * oc * ncols..(i + 1) * oc * ncols], &cols, o, F::zero());
                    })
                });
                let mut res = vec![gx, gw];
                if ctx.inputs.len() == 3 {
                    res.push(ctx.needs[2].then(|| bias_grad(gr, oc, ncols)));
                }
                res
            }),
        )
    }

    /// 2D transposed convolution. `weight` is `[in_c, out_c, kh, kw]`; the
    /// output extent is `(h - 1) * stride - 2 * padding + kh`.
    pub fn conv_transpose2d(&self, weight: &Tensor<F>, bias: Option<&Tensor<F>>, p: Conv2dParams) -> Result<Tensor<F>> {
        let [n, c, h, w] = check4("conv_transpose2d", self)?;
        let [ic, oc, kh, kw] = check4("conv_transpose2d", weight)?;
        if ic != c {
            return Err(shape_err("conv_transpose2d", format!("input has {c} channels, weight expects {ic}")));
        }
        if p.stride == 0 {
            return Err(arg_err("conv_transpose2d", "stride must be positive"));
        }
        let full_h = (h - 1) * p.stride + kh;
        let full_w = (w - 1) * p.stride + kw;
        if full_h <= 2 * p.padding || full_w <= 2 * p.padding {
            return Err(shape_err("conv_transpose2d", "padding consumes the whole output"));
        }
        if let Some(b) = bias {
            if b.shape() != [oc] {
                return Err(shape_err("conv_transpose2d", format!("bias shape {:?}, expected [{oc}]", b.shape())));
            }
        }
        let (oh, ow) = (full_h - 2 * p.padding, full_w - 2 * p.padding);
        // Geometry of the equivalent forward convolution from the output back to the input.
        let g = Geom {
            c: oc,
            h: oh,
            w: ow,
            kh,
            kw,
            oh: h,
            ow: w,
            stride: p.stride,
            pad: p.padding,
        };
        let (rows, ncols) = (g.col_rows(), g.col_cols());
        let x = self.data();
        let wt = weight.data();
        let plane = oh * ow;
        let mut out = vec![F::zero(); n * oc * plane];
        per_image(&mut out, oc * plane, n * c * rows * ncols, |i, o| {
            let mut cols = vec![F::zero(); rows * ncols];
            gemm_tn(rows, c, ncols, wt, &x[i * c * ncols..(i + 1) * c * ncols], &mut cols, F::zero());
            col2im(&cols, &g, o);
        });
        if let Some(b) = bias {
            add_bias(&mut out, b.data(), plane);
        }
        let mut inputs = vec![self.clone(), weight.clone()];
        inputs.extend(bias.cloned());
        Tensor::from_op(
            "conv_transpose2d",
            vec![n, oc, oh, ow],
            out,
            inputs,
            Box::new(move |ctx: &BackwardCtx<'_, F>| {
                let (x, wt, gr) = (ctx.inputs[0].data(), ctx.inputs[1].data(), ctx.grad);
                let gx = ctx.needs[0].then(|| {
                    let mut gx = vec![F::zero(); n * c * ncols];
                    per_image(&mut gx, c * ncols, n * c * rows * ncols, |i, o| {
                        let mut cols = vec![F::zero(); rows * ncols];
                        im2col(&gr[i * oc * plane..(i + 1) * oc * plane], &g, &mut cols);
                        gemm_nn(c, rows, ncols, wt, &cols, o, F::zero());
                    });
                    gx
                });
                let gw = ctx.needs[1].then(|| {
                    weight_grad(n, c * rows, |i, o| {
                        let mut cols = vec![F::zero(); rows * ncols];
                        im2col(&gr[i * oc * plane..(i + 1) * oc * plane], &g, &mut cols);
                        gemm_nt(c, ncols, rows, &x[i * c * ncols..(i + 1) * c * ncols], &cols, o, F::zero());
                    })
                });
                let mut res = vec![gx, gw];
                if ctx.inputs.len() == 3 {
                    res.push(ctx.needs[2].then(|| bias_grad(gr, oc, plane)));
                }
                res
            }),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Direct nested-loop reference.
    fn conv_ref(x: &[f64], n: usize, c: usize, h: usize, w: usize, wt: &[f64], oc: usize, k: usize, s: usize, p: usize) -> Vec<f64> {
        let oh = (h + 2 * p - k) / s + 1;
        let ow = (w + 2 * p - k) / s + 1;
        let mut out = vec![0.0; n * oc * oh * ow];
        for b in 0..n {
            for o in 0..oc {
                for y in 0..oh {
                    for xo in 0..ow {
                        let mut acc = 0.0;
                        for ch in 0..c {
                            for i in 0..k {
                                for j in 0..k {
                                    let iy = (y * s + i) as isize - p as isize;
                                    let ix = (xo * s + j) as isize - p as isize;
                                    if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < w {
                                        acc += x[((b * c + ch) * h + iy as usize) * w + ix as usize]
                                            * wt[((o * c + ch) * k + i) * k + j];
                                    }
                                }
                            }
                        }
                        out[((b * oc + o) * oh + y) * ow + xo] = acc;
                    }
                }
            }
        }
        out
    }

    #[test]
    fn ones_kernel_gives_local_sums() {
        let x = Tensor::<f64>::from_fn(&[1, 1, 5, 5], |i| i as f64);
        let k = Tensor::<f64>::ones(&[1, 1, 3, 3]);
        let y = x.conv2d(&k, None, Conv2dParams::default()).unwrap();
        assert_eq!(y.shape(), &[1, 1, 3, 3]);
        let r = conv_ref(x.data(), 1, 1, 5, 5, k.data(), 1, 3, 1, 0);
        assert_eq!(y.to_vec(), r);
        // top-left window: 0+1+2+5+6+7+10+11+12
        assert_eq!(y.data()[0], 54.0);
    }

    #[test]
    fn strided_padded_matches_reference() {
        let x = Tensor::<f64>::from_fn(&[2, 3, 7, 6], |i| ((i * 7919) % 23) as f64 - 11.0);
        let k = Tensor::<f64>::from_fn(&[4, 3, 3, 3], |i| ((i * 31) % 7) as f64 - 3.0);
        let y = x.conv2d(&k, None, Conv2dParams { stride: 2, padding: 1 }).unwrap();
        let r = conv_ref(x.data(), 2, 3, 7, 6, k.data(), 4, 3, 2, 1);
        assert_eq!(y.to_vec(), r);
    }

    #[test]
    fn transposed_output_extent() {
        let x = Tensor::<f32>::zeros(&[1, 4, 8, 6]);
        let k = Tensor::<f32>::zeros(&[4, 2, 4, 4]);
        let y = x.conv_transpose2d(&k, None, Conv2dParams { stride: 2, padding: 1 }).unwrap();
        assert_eq!(y.shape(), &[1, 2, 16, 12]);
    }

    #[test]
    fn transposed_is_adjoint_of_conv() {
        // <conv(x), y> == <x, conv_t(y)> with the same kernel.
        let x = Tensor::<f64>::from_fn(&[1, 2, 6, 6], |i| (i as f64 * 0.7).sin());
        let k = Tensor::<f64>::from_fn(&[3, 2, 4, 4], |i| (i as f64 * 0.3).cos());
        let p = Conv2dParams { stride: 2, padding: 1 };
        let y = x.conv2d(&k, None, p).unwrap();
        let z = Tensor::<f64>::from_fn(y.shape(), |i| (i as f64 * 1.1).sin());
        let lhs: f64 = y.data().iter().zip(z.data()).map(|(a, b)| a * b).sum();
        let xt = z.conv_transpose2d(&k, None, p).unwrap();
        assert_eq!(xt.shape(), x.shape());
        let rhs: f64 = x.data().iter().zip(xt.data()).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-9);
    }
}
