use crate::error::{shape_err, Result};
use crate::float::{c, Float};
use crate::tensor::{BackwardCtx, Tensor};

/// Source taps for one output coordinate under half-pixel alignment.
#[derive(Clone, Copy, Debug)]
struct Tap<F> {
    i0: usize,
    i1: usize,
    w1: F,
}

fn taps<F: Float>(src: usize, dst: usize) -> Vec<Tap<F>> {
    let scale = src as f64 / dst as f64;
    (0..dst)
        .map(|o| {
            let pos = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
            let i0 = (pos.floor() as usize).min(src - 1);
            let i1 = (i0 + 1).min(src - 1);
            let w1 = if i1 == i0 { 0.0 } else { pos - i0 as f64 };
            Tap { i0, i1, w1: c(w1) }
        })
        .collect()
}

impl<F: Float> Tensor<F> {
    /// Bilinear resize of the two trailing axes of an `[n, c, h, w]` tensor
    /// (half-pixel centers, edge clamped). Equal sizes copy the input.
    pub fn resize_bilinear(&self, out_h: usize, out_w: usize) -> Result<Tensor<F>> {
        let [n, ch, h, w] = match *self.shape() {
            [a, b, c, d] => [a, b, c, d],
            _ => return Err(shape_err("resize_bilinear", format!("expected rank 4, got {:?}", self.shape()))),
        };
        if h == 0 || w == 0 || out_h == 0 || out_w == 0 {
            return Err(shape_err("resize_bilinear", "zero spatial extent"));
        }
        let shape = vec![n, ch, out_h, out_w];
        if (h, w) == (out_h, out_w) {
            return self.reshape(&shape);
        }
        let ty: Vec<Tap<F>> = taps(h, out_h);
        let tx: Vec<Tap<F>> = taps(w, out_w);
        let planes = n * ch;
        let mut out = Vec::with_capacity(planes * out_h * out_w);
        for p in self.data().chunks(h * w) {
            for y in &ty {
                let r0 = &p[y.i0 * w..(y.i0 + 1) * w];
                let r1 = &p[y.i1 * w..(y.i1 + 1) * w];
                let wy0 = F::one() - y.w1;
                for x in &tx {
                    let wx0 = F::one() - x.w1;
                    let top = r0[x.i0] * wx0 + r0[x.i1] * x.w1;
                    let bot = r1[x.i0] * wx0 + r1[x.i1] * x.w1;
                    out.push(top * wy0 + bot * y.w1);
                }
            }
        }
        Tensor::from_op(
            "resize_bilinear",
            shape,
            out,
            vec![self.clone()],
            Box::new(move |ctx: &BackwardCtx<'_, F>| {
                let mut g = vec![F::zero(); planes * h * w];
                for (gp, op) in g.chunks_mut(h * w).zip(ctx.grad.chunks(out_h * out_w)) {
                    for (yi, y) in ty.iter().enumerate() {
                        let wy0 = F::one() - y.w1;
                        for (xi, x) in tx.iter().enumerate() {
                            let v = op[yi * out_w + xi];
                            let wx0 = F::one() - x.w1;
                            gp[y.i0 * w + x.i0] += v * wy0 * wx0;
                            gp[y.i0 * w + x.i1] += v * wy0 * x.w1;
                            gp[y.i1 * w + x.i0] += v * y.w1 * wx0;
                            gp[y.i1 * w + x.i1] += v * y.w1 * x.w1;
                        }
                    }
                }
                vec![Some(g)]
            }),
        )
    }
}

#[cfg(test)]
mod tests {
    use crate::Tensor;

    #[test]
    fn identity_size_is_bitwise() {
        let t = Tensor::<f32>::from_fn(&[1, 2, 3, 4], |i| (i as f32 * 0.77).sin());
        assert_eq!(t.resize_bilinear(3, 4).unwrap().data(), t.data());
    }

    #[test]
    fn constant_is_preserved() {
        let t = Tensor::<f64>::full(&[1, 3, 8, 8], 0.25);
        let r = t.resize_bilinear(5, 11).unwrap();
        assert!(r.data().iter().all(|&v| (v - 0.25).abs() < 1e-15));
    }

    #[test]
    fn upsample_two_pixels() {
        let t = Tensor::<f64>::from_f64(&[0.0, 1.0], &[1, 1, 1, 2]).unwrap();
        let r = t.resize_bilinear(1, 4).unwrap().to_vec();
        assert_eq!(r, vec![0.0, 0.25, 0.75, 1.0]);
    }
}
